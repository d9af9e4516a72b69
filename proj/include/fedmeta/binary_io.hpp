#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "fedmeta/error.hpp"

namespace fedmeta::io {

/// Little-endian writer over a byte buffer.
class ByteWriter {
public:
    void bytes(std::string_view raw) { buffer_.insert(buffer_.end(), raw.begin(), raw.end()); }
    void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put(bits, 4);
    }
    const std::string& buffer() const { return buffer_; }

private:
    void put(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buffer_;
};

/// Little-endian reader that reports truncation with the number of missing bytes.
class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::string_view bytes(std::size_t n, const char* what) {
        need(n, what);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get(1, what)); }
    std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
    float f32(const char* what) {
        auto bits = static_cast<std::uint32_t>(get(4, what));
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n) {
            fail(ErrorKind::CorruptData, std::string("truncated payload reading ") + what + ": missing " +
                                             std::to_string(n - remaining()) + " bytes");
        }
    }
    std::uint64_t get(int width, const char* what) {
        need(static_cast<std::size_t>(width), what);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace fedmeta::io
