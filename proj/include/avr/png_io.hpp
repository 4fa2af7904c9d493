#pragma once

// 8-bit PNG frames through libpng's simplified API. Any colour type or bit
// depth is converted to RGB on read.

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avr/error.hpp"
#include "avr/optical_flow.hpp"

namespace avr {

/// Decodes a PNG into [0,1] channels. Unreadable or corrupt files raise an
/// io error naming the file.
inline RgbImage read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    auto fail = [&](const char* what) {
        std::string msg = path.string() + ": " + what + " (" + img.message + ")";
        png_image_free(&img);
        return Error(ErrorKind::io, msg);
    };
    if (!png_image_begin_read_from_file(&img, path.c_str())) throw fail("cannot read PNG header");
    img.format = PNG_FORMAT_RGB;
    if (img.width == 0 || img.height == 0) throw fail("empty image");
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) throw fail("corrupt PNG data");
    const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
    RgbImage out{Plane<float>(w, h), Plane<float>(w, h), Plane<float>(w, h)};
    for (std::size_t i = 0; i < out.r.size(); ++i) {
        out.r.data[i] = buf[3 * i] / 255.0f;
        out.g.data[i] = buf[3 * i + 1] / 255.0f;
        out.b.data[i] = buf[3 * i + 2] / 255.0f;
    }
    return out;
}

/// Writes an 8-bit grayscale PNG; values are clamped to [0,1] and rounded.
inline void write_png_gray(const std::filesystem::path& path, const GrayImage& gray) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::vector<std::uint8_t> buf(gray.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(gray.data[i], 0.0f, 1.0f) * 255.0f));
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(gray.width);
    img.height = static_cast<png_uint_32>(gray.height);
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
        throw Error(ErrorKind::io, path.string() + ": cannot write PNG (" + img.message + ")");
}

}  // namespace avr
