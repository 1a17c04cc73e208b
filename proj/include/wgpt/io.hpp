#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wgpt/common.hpp"

namespace wgpt {

// Little-endian binary readers/writers for the WGM1/WGS1/WGT1/WGC1/WGP1 file
// formats, plus CRC32.

inline std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(data);
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

class ByteWriter {
public:
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }

    void magic(const char m[5]) { bytes_.insert(bytes_.end(), m, m + 4); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }

    std::uint32_t crc() const { return crc32(bytes_.data(), bytes_.size()); }
    const std::vector<unsigned char>& bytes() const { return bytes_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) fail_parse("cannot open for writing: ", path.string());
        f.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        if (!f) fail_parse("write failed: ", path.string());
    }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> bytes, std::string name = "")
        : bytes_(std::move(bytes)), name_(std::move(name)) {}

    static ByteReader from_file(const std::filesystem::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) fail_parse("cannot open: ", path.string());
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(bytes), path.string());
    }

    std::uint16_t u16() { return read_pod<std::uint16_t>(); }
    std::uint32_t u32() { return read_pod<std::uint32_t>(); }
    std::uint64_t u64() { return read_pod<std::uint64_t>(); }
    float f32() { return read_pod<float>(); }
    double f64() { return read_pod<double>(); }

    void expect_magic(const char m[5]) {
        if (remaining() < 4) err("truncated before magic");
        if (std::memcmp(bytes_.data() + pos_, m, 4) != 0)
            err(std::string("bad magic, expected '") + m + "'");
        pos_ += 4;
    }

    std::string str() {
        const std::uint32_t n = u32();
        if (remaining() < n) err("truncated string payload");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void raw(void* p, std::size_t n) {
        if (remaining() < n) err("truncated payload");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t size() const { return bytes_.size(); }
    const unsigned char* data() const { return bytes_.data(); }

    [[noreturn]] void err(const std::string& what) const {
        fail_parse(name_.empty() ? "<buffer>" : name_, ": ", what, " at byte offset ", pos_);
    }

private:
    template <typename T>
    T read_pod() {
        T v{};
        raw(&v, sizeof(T));
        return v;
    }

    std::vector<unsigned char> bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

} // namespace wgpt
