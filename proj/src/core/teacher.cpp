#include "teacher.hpp"

#include <fstream>

#include "binio.hpp"

namespace digpt {

namespace {
constexpr char kMagic[4] = {'D', 'G', 'P', 'T'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;
}  // namespace

TeacherKind parse_teacher_kind(const std::string& s) {
    if (s == "pixel") return TeacherKind::pixel;
    if (s == "frozen") return TeacherKind::frozen;
    if (s == "cache") return TeacherKind::cache;
    throw ConfigError("teacher.kind must be one of pixel|frozen|cache, got '" + s + "'");
}

const char* teacher_kind_name(TeacherKind k) {
    switch (k) {
        case TeacherKind::pixel: return "pixel";
        case TeacherKind::frozen: return "frozen";
        case TeacherKind::cache: return "cache";
    }
    return "?";
}

void cache_write(const std::string& path, int grid_h, int grid_w, int dim,
                 const std::vector<TeacherCacheEntry>& entries) {
    const size_t per_entry = static_cast<size_t>(grid_h) * grid_w * static_cast<size_t>(dim);
    for (const auto& e : entries) {
        if (e.tokens.size() != per_entry)
            throw ConfigError("cache_write: entry " + std::to_string(e.image_id) +
                              " does not match the declared grid/dim");
        if (!e.tokens.all_finite()) throw ConfigError("cache_write: non-finite teacher features");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open cache file for writing: " + path);
    binio::write_bytes(os, kMagic, 4);
    binio::write_le<uint32_t>(os, kVersion);
    binio::write_le<uint8_t>(os, kDtypeF32);
    binio::write_le<uint16_t>(os, static_cast<uint16_t>(grid_h));
    binio::write_le<uint16_t>(os, static_cast<uint16_t>(grid_w));
    binio::write_le<uint32_t>(os, static_cast<uint32_t>(dim));
    binio::write_le<uint64_t>(os, entries.size());
    for (const auto& e : entries) {
        binio::write_le<uint64_t>(os, e.image_id);
        binio::write_f32_array(os, e.tokens.v);
    }
    if (!os) throw IoError("write failed: " + path);
}

TeacherCache TeacherCache::read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open cache file: " + path);
    char magic[4];
    binio::read_bytes(is, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad cache magic in " + path);
    const uint32_t version = binio::read_le<uint32_t>(is);
    if (version != kVersion)
        throw FormatError("unsupported cache version " + std::to_string(version) + " in " + path);
    const uint8_t dtype = binio::read_le<uint8_t>(is);
    if (dtype != kDtypeF32) throw FormatError("unsupported cache dtype code " + std::to_string(dtype));

    TeacherCache c;
    c.grid_h_ = binio::read_le<uint16_t>(is);
    c.grid_w_ = binio::read_le<uint16_t>(is);
    c.dim_ = static_cast<int>(binio::read_le<uint32_t>(is));
    const uint64_t count = binio::read_le<uint64_t>(is);
    c.entries_.resize(static_cast<size_t>(count));
    for (auto& e : c.entries_) {
        e.image_id = binio::read_le<uint64_t>(is);
        e.tokens.resize(c.grid_h_ * c.grid_w_, c.dim_);
        binio::read_f32_array(is, e.tokens.v);
    }
    c.index_.reserve(c.entries_.size());
    for (size_t i = 0; i < c.entries_.size(); ++i) c.index_[c.entries_[i].image_id] = i;
    return c;
}

const Tensor<float>& TeacherCache::lookup(uint64_t image_id) const {
    const auto it = index_.find(image_id);
    if (it == index_.end()) throw KeyError("image id " + std::to_string(image_id) + " not present in teacher cache");
    return entries_[it->second].tokens;
}

}  // namespace digpt
