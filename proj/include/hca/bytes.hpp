#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hca {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

inline std::string to_hex(ByteView data) {
    static const char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

inline Bytes from_hex(const std::string& hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (hex.size() % 2 != 0) throw std::invalid_argument("odd hex length");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2) {
        int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) throw std::invalid_argument("bad hex digit");
        out.push_back(static_cast<uint8_t>(hi << 4 | lo));
    }
    return out;
}

inline Bytes to_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

// Appends big-endian fixed-width integers.
class ByteWriter {
public:
    explicit ByteWriter(Bytes& out) : out_(out) {}

    void u8(uint8_t v) { out_.push_back(v); }
    void be(uint64_t v, int width) {
        for (int i = width - 1; i >= 0; --i)
            out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void raw(ByteView data) { out_.insert(out_.end(), data.begin(), data.end()); }

private:
    Bytes& out_;
};

// Cursor over an immutable byte view; throws TruncatedError past the end.
class TruncatedError : public std::runtime_error {
public:
    TruncatedError() : std::runtime_error("truncated input") {}
};

class ByteReader {
public:
    explicit ByteReader(ByteView data) : data_(data) {}

    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    uint64_t be(int width) {
        need(static_cast<size_t>(width));
        uint64_t v = 0;
        for (int i = 0; i < width; ++i) v = v << 8 | data_[pos_++];
        return v;
    }
    ByteView raw(size_t n) {
        need(n);
        ByteView v = data_.subspan(pos_, n);
        pos_ += n;
        return v;
    }

private:
    void need(size_t n) const {
        if (data_.size() - pos_ < n) throw TruncatedError{};
    }
    ByteView data_;
    size_t pos_ = 0;
};

}  // namespace hca
