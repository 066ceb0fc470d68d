#pragma once
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "clab/errors.hpp"

namespace clab::binio {

// Little-endian primitives for the GLD1/CLNN formats. The host is assumed
// little-endian or the bytes are assembled explicitly, so files are
// byte-identical across platforms.

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u32(out, static_cast<std::uint32_t>(bits));
    put_u32(out, static_cast<std::uint32_t>(bits >> 32));
}

// Cursor over an in-memory file image; throws FormatError with byte offsets.
class Reader {
public:
    Reader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string& name() const { return name_; }

    void need(std::size_t n, const char* what) const {
        if (pos_ + n > bytes_.size())
            throw FormatError(name_ + ": truncated " + what + " at byte offset " + std::to_string(pos_) +
                              " (need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
    }

    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    std::uint32_t u32_le(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + i]);
        pos_ += 4;
        return v;
    }

    std::uint32_t u32_be(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + i]);
        pos_ += 4;
        return v;
    }

    std::uint16_t u16_le(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_]) |
                                                     (static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8));
        pos_ += 2;
        return v;
    }

    float f32_le(const char* what) {
        const std::uint32_t bits = u32_le(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64_le(const char* what) {
        const std::uint64_t lo = u32_le(what);
        const std::uint64_t hi = u32_le(what);
        const std::uint64_t bits = lo | (hi << 32);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string raw(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open file");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(path + ": cannot open file for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(path + ": write failed");
}

// FNV-1a 64-bit content hash (not cryptographic; guards the run manifest
// against accidental corruption).
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string fnv1a64_hex(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

}  // namespace clab::binio
