#pragma once

// Little-endian byte buffer helpers shared by the checkpoint, corpus and
// model sidecar formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "lanse/common.hpp"

namespace lanse::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

    template <typename T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    void put_f32(double value) { put(static_cast<float>(value)); }

    void put_string16(std::string_view s) {
        if (s.size() > 0xFFFF) throw Error(ErrorCode::Format, "string longer than 65535 bytes");
        put(static_cast<std::uint16_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    /// Appends the SHA-256 of everything written so far (32 raw bytes).
    void seal();

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
            throw Error(ErrorCode::Format, "bad magic, expected \"" + std::string(m) + "\"");
        pos_ += m.size();
    }

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    double get_f32() { return static_cast<double>(get<float>()); }

    std::string get_string16() {
        auto n = get<std::uint16_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw Error(ErrorCode::Format, "truncated binary file");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

/// Checks the trailing 32-byte SHA-256 and returns the payload without it.
std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace lanse::detail
