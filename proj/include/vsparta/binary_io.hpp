#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "vsparta/error.hpp"

namespace vsparta {

using Bytes = std::vector<std::uint8_t>;

/// Little-endian encoder appending to an in-memory buffer.
class ByteWriter {
public:
    void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    /// u16 length prefix followed by raw bytes.
    void str16(std::string_view s)
    {
        if (s.size() > 0xFFFF) {
            throw FormatError("string too long for u16 length prefix");
        }
        u16(static_cast<std::uint16_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    [[nodiscard]] const Bytes& bytes() const& noexcept { return bytes_; }
    [[nodiscard]] Bytes bytes() && noexcept { return std::move(bytes_); }

private:
    void put(std::uint64_t v, int width)
    {
        for (int i = 0; i < width; ++i) {
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }

    Bytes bytes_;
};

/// Bounds-checked little-endian decoder. Running past the end raises CorruptDataError.
class ByteReader {
public:
    explicit ByteReader(const Bytes& bytes)
        : data_(bytes.data()), size_(bytes.size())
    {}

    /// Reads only the first `limit` bytes (clamped to the buffer).
    ByteReader(const Bytes& bytes, std::size_t limit)
        : data_(bytes.data()), size_(limit < bytes.size() ? limit : bytes.size())
    {}

    [[nodiscard]] bool at_end() const noexcept { return pos_ == size_; }
    [[nodiscard]] std::size_t remaining() const noexcept { return size_ - pos_; }
    [[nodiscard]] std::size_t position() const noexcept { return pos_; }

    /// Reads the tag; mismatch is a FormatError rather than corruption.
    void expect_magic(std::string_view tag)
    {
        if (remaining() < tag.size()
            || std::memcmp(data_ + pos_, tag.data(), tag.size()) != 0) {
            throw FormatError("bad magic: expected \"" + std::string(tag) + "\"");
        }
        pos_ += tag.size();
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }

    std::string str16()
    {
        const std::size_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    /// Guards a count-prefixed allocation: `count` items of `item_bytes` must fit.
    void need_items(std::uint64_t count, std::uint64_t item_bytes) const
    {
        if (item_bytes != 0 && count > remaining() / item_bytes) {
            throw CorruptDataError("truncated data: " + std::to_string(count)
                                   + " items declared, " + std::to_string(remaining())
                                   + " bytes left");
        }
    }

private:
    void need(std::size_t n) const
    {
        if (remaining() < n) {
            throw CorruptDataError("truncated data at offset " + std::to_string(pos_));
        }
    }

    std::uint64_t get(int width)
    {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline Bytes read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path);
    }
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const Bytes& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("short write to " + path);
    }
}

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL)
{
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

// Every file ends in an FNV-1a 64 digest of all preceding bytes. Each FNV step
// is a bijection on the state, so any single changed byte changes the digest.
inline constexpr std::size_t kChecksumBytes = 8;

inline std::uint64_t checksum_of(const std::uint8_t* data, std::size_t n)
{
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(data), n));
}

/// Appends the digest footer.
inline Bytes seal(Bytes bytes)
{
    const std::uint64_t h = checksum_of(bytes.data(), bytes.size());
    for (int i = 0; i < 8; ++i) {
        bytes.push_back(static_cast<std::uint8_t>(h >> (8 * i)));
    }
    return bytes;
}

/// Length of the body in front of the footer. Files too short to carry one are
/// parsed whole and fail structurally or in verify_seal.
inline std::size_t sealed_body_size(const Bytes& bytes) noexcept
{
    return bytes.size() >= kChecksumBytes ? bytes.size() - kChecksumBytes : bytes.size();
}

/// Call after structural parsing so that targeted errors win over a bare mismatch.
inline void verify_seal(const Bytes& bytes)
{
    if (bytes.size() < kChecksumBytes) {
        throw CorruptDataError("file too short for its checksum");
    }
    const std::size_t body = bytes.size() - kChecksumBytes;
    std::uint64_t stored = 0;
    for (std::size_t i = 0; i < kChecksumBytes; ++i) {
        stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
    }
    if (stored != checksum_of(bytes.data(), body)) {
        throw CorruptDataError("checksum mismatch");
    }
}

}  // namespace vsparta
