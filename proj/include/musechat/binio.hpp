#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "musechat/errors.hpp"

namespace musechat {

// Little-endian binary writer/reader for the .mckp / .mceb containers.
// Multi-byte values are serialized byte by byte so the on-disk layout does
// not depend on host endianness.

class BinWriter {
  public:
    explicit BinWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw DataError("cannot open for writing: " + path);
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void str(const std::string& s) { bytes(s.data(), s.size()); }

    void close() {
        out_.close();
        if (!out_) throw DataError("write failed: " + path_);
    }

  private:
    void put_le(std::uint64_t v, int n) {
        char buf[8];
        for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        bytes(buf, static_cast<std::size_t>(n));
    }

    std::string path_;
    std::ofstream out_;
};

class BinReader {
  public:
    explicit BinReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw DataError("cannot open for reading: " + path);
    }

    std::size_t offset() const { return offset_; }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError(path_ + ": truncated at byte " + std::to_string(offset_));
        }
        offset_ += n;
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    double f64() { return std::bit_cast<double>(get_le(8)); }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

    // magic check reports the offset where the mismatch was found
    void expect_magic(const char (&magic)[5]) {
        std::size_t at = offset_;
        std::string got = str(4);
        if (got != std::string(magic, 4)) {
            throw FormatError(path_ + ": bad magic at byte " + std::to_string(at) + " (expected " +
                              std::string(magic, 4) + ", got \"" + got + "\")");
        }
    }
    void expect_version(std::uint32_t want) {
        std::size_t at = offset_;
        std::uint32_t got = u32();
        if (got != want) {
            throw FormatError(path_ + ": unsupported version " + std::to_string(got) + " at byte " +
                              std::to_string(at));
        }
    }

  private:
    std::uint64_t get_le(int n) {
        unsigned char buf[8] = {0};
        bytes(buf, static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }

    std::string path_;
    std::ifstream in_;
    std::size_t offset_ = 0;
};

}  // namespace musechat
