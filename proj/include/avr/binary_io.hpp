#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avr/error.hpp"

namespace avr {

using Bytes = std::vector<std::uint8_t>;

/// Append-only little-endian encoder.
class ByteWriter {
public:
    void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

    void u32(std::uint32_t value) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }

    void u64(std::uint64_t value) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }

    void f32(float value) { u32(std::bit_cast<std::uint32_t>(value)); }
    void f64(double value) { u64(std::bit_cast<std::uint64_t>(value)); }

    void raw(std::string_view text) { bytes_.insert(bytes_.end(), text.begin(), text.end()); }

    const Bytes& bytes() const& { return bytes_; }
    Bytes&& bytes() && { return std::move(bytes_); }

private:
    Bytes bytes_;
};

/// Bounds-checked little-endian decoder; truncation raises a parse error.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    void expect_magic(std::string_view tag) {
        need(tag.size(), "magic");
        if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0)
            throw Error(ErrorKind::parse, "bad magic, expected \"" + std::string(tag) + "\"");
        pos_ += tag.size();
    }

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t value = 0;
        for (int i = 0; i < 4; ++i) value |= std::uint32_t{data_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return value;
    }

    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t value = 0;
        for (int i = 0; i < 8; ++i) value |= std::uint64_t{data_[pos_ + i]} << (8 * i);
        pos_ += 8;
        return value;
    }

    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string text(std::size_t n) {
        need(n, "text block");
        std::string out(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return out;
    }

    std::size_t remaining() const { return data_.size() - pos_; }

    void expect_end() const {
        if (remaining() != 0)
            throw Error(ErrorKind::parse, std::to_string(remaining()) + " trailing bytes");
    }

private:
    void need(std::size_t n, const char* what) const {
        if (data_.size() - pos_ < n)
            throw Error(ErrorKind::parse, std::string("truncated input while reading ") + what);
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error(ErrorKind::io, "short write to " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

/// Shortest decimal text that parses back to exactly `value`.
inline std::string format_number(double value) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, end);
}

}  // namespace avr
