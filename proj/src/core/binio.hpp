#pragma once

// Little-endian primitive IO for the cache and checkpoint containers.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "common.hpp"

namespace digpt::binio {

template <class T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) throw FormatError("unexpected end of file");
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

inline void write_bytes(std::ostream& os, const void* data, size_t len) {
    os.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

inline void read_bytes(std::istream& is, void* data, size_t len) {
    is.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (is.gcount() != static_cast<std::streamsize>(len)) throw FormatError("unexpected end of file");
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_le<uint64_t>(os, s.size());
    write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, uint64_t max_len = (1ull << 32)) {
    const uint64_t len = read_le<uint64_t>(is);
    if (len > max_len) throw FormatError("string length out of range");
    std::string s(static_cast<size_t>(len), '\0');
    if (len > 0) read_bytes(is, s.data(), static_cast<size_t>(len));
    return s;
}

template <class T>
void write_f32_array(std::ostream& os, const std::vector<T>& v) {
    for (const T x : v) write_le<float>(os, static_cast<float>(x));
}

template <class T>
void read_f32_array(std::istream& is, std::vector<T>& v) {
    for (auto& x : v) x = static_cast<T>(read_le<float>(is));
}

}  // namespace digpt::binio
