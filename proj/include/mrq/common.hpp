// Shared error types, parameter checksums and little-endian byte IO.
#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>

namespace mrq {

// Bad dimensions, rates or option values. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// An operation received a zero-length input it cannot act on.
struct EmptyInputError : ConfigError {
    explicit EmptyInputError(const std::string& what) : ConfigError(what) {}
};

// Corrupt tokens, malformed files, bad magic/version. Exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Not enough samples to initialize (e.g. k-means with n < V).
struct InsufficientDataError : DataError {
    explicit InsufficientDataError(const std::string& what) : DataError(what) {}
};

// Non-finite loss or gradient during training. Exit code 4.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// FNV-1a over raw bytes; used to assert parameter immutability.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    return fnv1a(values.data(), values.size() * sizeof(double), seed);
}

// Little-endian writers/readers. Checkpoints and token streams are defined
// byte-for-byte, independent of host endianness.
namespace io {

inline void put_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(os, bits);
}

inline std::uint8_t get_u8(std::istream& is) {
    int c = is.get();
    if (c == EOF) throw DataError("unexpected end of stream");
    return static_cast<std::uint8_t>(c);
}

inline std::uint16_t get_u16(std::istream& is) {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(get_u8(is)) << (8 * i);
    return v;
}

inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(is)) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(get_u8(is)) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    std::uint64_t bits = get_u64(is);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace io

}  // namespace mrq
