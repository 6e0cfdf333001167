#pragma once

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// Images move through the library as [H, W, C] tensors with values in [0,1],
// C == 1 (gray) or 3 (RGB). Files are 8-bit PNG / PGM / PPM.

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline unsigned char to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

} // namespace detail

inline void write_png(const std::string& path, const DTensor& img) {
    if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
        throw std::invalid_argument("write_png: expected [H,W,1] or [H,W,3]");
    const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("write_png: init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("write_png: init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: encode failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < c; ++k)
                row[static_cast<std::size_t>(j) * c + k] = detail::to_byte(img(i, j, k));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline DTensor read_png(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("read_png: init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("read_png: init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: decode failed for " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int c = static_cast<int>(png_get_channels(png, info));
    if (c != 1 && c != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: unsupported channel count in " + path);
    }
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * c);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) rows[static_cast<std::size_t>(i)] = raw.data() + static_cast<std::size_t>(i) * w * c;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    DTensor img({h, w, c});
    for (std::size_t i = 0; i < img.numel(); ++i) img.at(i) = raw[i] / 255.0;
    return img;
}

// Binary PGM (P5) / PPM (P6).
inline void write_pnm(const std::string& path, const DTensor& img) {
    if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
        throw std::invalid_argument("write_pnm: expected [H,W,1] or [H,W,3]");
    const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_pnm: cannot open " + path);
    std::string header = (c == 1 ? std::string("P5\n") : std::string("P6\n")) +
                         std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::fwrite(header.data(), 1, header.size(), fp.get());
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * c);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = detail::to_byte(img.at(i));
    std::fwrite(raw.data(), 1, raw.size(), fp.get());
}

inline DTensor read_pnm(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_pnm: cannot open " + path);
    char magic[3] = {};
    if (std::fscanf(fp.get(), "%2s", magic) != 1)
        throw std::runtime_error("read_pnm: bad header in " + path);
    int c = 0;
    if (std::string(magic) == "P5") c = 1;
    else if (std::string(magic) == "P6") c = 3;
    else throw std::runtime_error("read_pnm: unsupported magic in " + path);
    int w = 0, h = 0, maxv = 0;
    if (std::fscanf(fp.get(), "%d %d %d", &w, &h, &maxv) != 3 || w <= 0 || h <= 0 || maxv != 255)
        throw std::runtime_error("read_pnm: bad header in " + path);
    std::fgetc(fp.get()); // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * c);
    if (std::fread(raw.data(), 1, raw.size(), fp.get()) != raw.size())
        throw std::runtime_error("read_pnm: truncated payload in " + path);
    DTensor img({h, w, c});
    for (std::size_t i = 0; i < img.numel(); ++i) img.at(i) = raw[i] / 255.0;
    return img;
}

inline DTensor read_image(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "png") return read_png(path);
    if (ext == "pgm" || ext == "ppm" || ext == "pnm") return read_pnm(path);
    throw std::runtime_error("read_image: unsupported extension in " + path);
}

// [H,W,C] -> [H,W,3]
inline DTensor to_rgb(const DTensor& img) {
    if (img.rank() != 3) throw std::invalid_argument("to_rgb: expected [H,W,C]");
    if (img.dim(2) == 3) return img;
    DTensor out({img.dim(0), img.dim(1), 3});
    for (int i = 0; i < img.dim(0); ++i)
        for (int j = 0; j < img.dim(1); ++j)
            for (int k = 0; k < 3; ++k) out(i, j, k) = img(i, j, 0);
    return out;
}

} // namespace sketchfuse
