#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "data.hpp"

namespace digpt {

namespace {

float srgb_from_byte(unsigned char b) { return static_cast<float>(b) / 255.0f; }

unsigned char byte_from_float(float v) {
    const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw FormatError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw FormatError("corrupt png: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_expand(png);  // palette/gray/low-bit-depth -> 8-bit
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    Image img(h, w);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            float* dst = img.px(y, x);
            dst[0] = srgb_from_byte(row[static_cast<size_t>(x) * 3 + 0]);
            dst[1] = srgb_from_byte(row[static_cast<size_t>(x) * 3 + 1]);
            dst[2] = srgb_from_byte(row[static_cast<size_t>(x) * 3 + 2]);
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

Image load_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6" && magic != "P5") throw FormatError("unsupported pnm magic '" + magic + "' in " + path);
    auto next_int = [&]() {
        // skip whitespace and '#' comments
        for (;;) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        int v;
        is >> v;
        return v;
    };
    const int w = next_int();
    const int h = next_int();
    const int maxv = next_int();
    is.get();  // single whitespace before raster
    if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 255) throw FormatError("bad pnm header in " + path);

    const int channels = magic == "P6" ? 3 : 1;
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (is.gcount() != static_cast<std::streamsize>(raw.size())) throw FormatError("truncated pnm raster in " + path);

    Image img(h, w);
    const float scale = 1.0f / static_cast<float>(maxv);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float* dst = img.px(y, x);
            const unsigned char* src = raw.data() + (static_cast<size_t>(y) * w + x) * channels;
            if (channels == 3) {
                dst[0] = src[0] * scale;
                dst[1] = src[1] * scale;
                dst[2] = src[2] * scale;
            } else {
                dst[0] = dst[1] = dst[2] = src[0] * scale;
            }
        }
    return img;
}

}  // namespace

Image load_image_file(const std::string& path) {
    const size_t dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "png" || ext == "PNG") return load_png(path);
    if (ext == "ppm" || ext == "pgm") return load_pnm(path);
    throw FormatError("unsupported image extension '" + ext + "' for " + path + " (png/ppm/pgm)");
}

void save_ppm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image: " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<size_t>(img.w) * img.h * 3);
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = byte_from_float(img.rgb[i]);
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void save_png(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const float* src = img.px(y, x);
            row[static_cast<size_t>(x) * 3 + 0] = byte_from_float(src[0]);
            row[static_cast<size_t>(x) * 3 + 1] = byte_from_float(src[1]);
            row[static_cast<size_t>(x) * 3 + 2] = byte_from_float(src[2]);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image bilinear_resize(const Image& src, int out_h, int out_w) {
    if (src.h == out_h && src.w == out_w) return src;
    Image dst(out_h, out_w);
    const float sy = static_cast<float>(src.h) / static_cast<float>(out_h);
    const float sx = static_cast<float>(src.w) / static_cast<float>(out_w);
    for (int y = 0; y < out_h; ++y) {
        const float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
        const int y0 = std::max(0, static_cast<int>(std::floor(fy)));
        const int y1 = std::min(src.h - 1, y0 + 1);
        const float wy = std::min(1.0f, std::max(0.0f, fy - static_cast<float>(y0)));
        for (int x = 0; x < out_w; ++x) {
            const float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            const int x0 = std::max(0, static_cast<int>(std::floor(fx)));
            const int x1 = std::min(src.w - 1, x0 + 1);
            const float wx = std::min(1.0f, std::max(0.0f, fx - static_cast<float>(x0)));
            float* d = dst.px(y, x);
            for (int c = 0; c < 3; ++c) {
                const float top = src.px(y0, x0)[c] * (1 - wx) + src.px(y0, x1)[c] * wx;
                const float bot = src.px(y1, x0)[c] * (1 - wx) + src.px(y1, x1)[c] * wx;
                d[c] = top * (1 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

}  // namespace digpt
