#pragma once

// 8-bit grayscale / RGB PNG read and write via libpng. 16-bit sources are
// rescaled to 8-bit on ingest; palette and alpha are expanded/stripped.

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "fcey/data.hpp"

namespace fcey {

inline void write_png(const std::string& path, const Image& im) {
    if (im.channels != 1 && im.channels != 3)
        throw std::invalid_argument("write_png: only gray or RGB supported");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(im.w), png_uint_32(im.h), 8,
                 im.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(size_t(im.h));
    for (int y = 0; y < im.h; ++y)
        rows[size_t(y)] = const_cast<png_bytep>(im.pixels.data() + size_t(y) * im.w * im.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open for read: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("png read failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_scale_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    Image im;
    im.w = int(png_get_image_width(png, info));
    im.h = int(png_get_image_height(png, info));
    im.channels = int(png_get_channels(png, info));
    if (im.channels != 1 && im.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("unsupported png channel count in " + path);
    }
    im.pixels.resize(size_t(std::int64_t(im.w) * im.h * im.channels));
    std::vector<png_bytep> rows(size_t(im.h));
    for (int y = 0; y < im.h; ++y)
        rows[size_t(y)] = im.pixels.data() + size_t(y) * im.w * im.channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return im;
}

}  // namespace fcey
