#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtc {

// ---- error types ----------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BadMagic : Error { using Error::Error; };
struct TruncatedRecord : Error { using Error::Error; };
struct MalformedHeader : Error { using Error::Error; };
struct UnsupportedProtocol : Error { using Error::Error; };
struct EmptyAfterCleaning : Error { using Error::Error; };
struct EmptySession : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct StaleCache : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct ClassTooSmall : Error { using Error::Error; };
struct CollapsedWidth : Error { using Error::Error; };
struct InfeasibleStart : Error { using Error::Error; };
struct UnsupportedTopology : Error { using Error::Error; };
struct EmptyCalibrationSet : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct VersionUnsupported : Error { using Error::Error; };
struct ChecksumMismatch : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };

// ---- byte-order helpers (values on disk are little-endian unless noted) ----

inline std::uint16_t read_u16le(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t read_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16be(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}
inline std::uint32_t read_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline std::uint64_t read_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

inline void append_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

// CRC-32 (IEEE 802.3 polynomial, reflected).
inline std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t seed = 0) {
    static const auto table = [] {
        std::vector<std::uint32_t> t(256);
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    for (std::uint8_t b : data) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

// FNV-1a, used for config fingerprints in checkpoints.
inline std::uint64_t fnv1a(std::span<const std::uint8_t> data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}
inline std::uint64_t fnv1a(const std::string& s) {
    return fnv1a(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace mtc
