#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "eiarag/error.hpp"

namespace eiarag::io {

/// Little-endian byte sink for the binary artifact formats.
class ByteWriter {
public:
    void magic(std::string_view four) { bytes_.insert(bytes_.end(), four.begin(), four.end()); }

    template <typename T>
    void put(T value) {
        static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        static_assert(sizeof(T) == sizeof(U));
        const auto raw = std::bit_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            bytes_.push_back(static_cast<char>((raw >> (8 * i)) & 0xFF));
        }
    }

    void str(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    const std::vector<char>& bytes() const { return bytes_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("io", "cannot open '" + path + "' for writing");
        out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw Error("io", "write failed for '" + path + "'");
    }

private:
    std::vector<char> bytes_;
};

/// Bounds-checked little-endian reader. Reading past the end throws
/// CorruptionError, or FormatError when constructed with `truncation_is_format`.
class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes, bool truncation_is_format = false)
        : bytes_(std::move(bytes)), truncation_is_format_(truncation_is_format) {}

    static ByteReader from_file(const std::string& path, bool truncation_is_format = false) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("io", "cannot open '" + path + "'");
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(bytes), truncation_is_format);
    }

    bool magic_matches(std::string_view four) {
        need(four.size());
        const bool ok = std::memcmp(bytes_.data() + pos_, four.data(), four.size()) == 0;
        pos_ += four.size();
        return ok;
    }

    template <typename T>
    T get() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        need(sizeof(U));
        U raw = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            raw |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return std::bit_cast<T>(raw);
    }

    std::string str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t size() const { return bytes_.size(); }

    void fail(const std::string& what) const {
        if (truncation_is_format_) throw FormatError(what);
        throw CorruptionError(what);
    }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            fail("unexpected end of data at byte " + std::to_string(pos_) + " (needed " +
                 std::to_string(n) + ", have " + std::to_string(bytes_.size() - pos_) + ")");
        }
    }

    std::vector<char> bytes_;
    std::size_t pos_ = 0;
    bool truncation_is_format_;
};

}  // namespace eiarag::io
