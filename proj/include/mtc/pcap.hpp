#pragma once

// Classic pcap container: global header + per-record headers, both endiannesses.
// Link types handled downstream: Ethernet (1) and raw IPv4 (101).

#include <cstdint>
#include <span>
#include <vector>

#include "mtc/common.hpp"

namespace mtc {

enum class LinkType : std::uint8_t { ethernet, raw_ip };

struct RawPacket {
    std::int64_t timestamp_us = 0;  // microseconds since epoch
    LinkType link_type = LinkType::ethernet;
    std::vector<std::uint8_t> bytes;  // full frame as captured
    std::size_t orig_index = 0;       // ordinal position in capture
};

namespace pcap {

constexpr std::uint32_t kMagicLE = 0xA1B2C3D4u;
constexpr std::uint32_t kMagicBE = 0xD4C3B2A1u;  // as read on a little-endian host
constexpr std::uint32_t kLinkEthernet = 1;
constexpr std::uint32_t kLinkRawIp = 101;

inline std::vector<RawPacket> parse_capture(std::span<const std::uint8_t> stream) {
    if (stream.size() < 24) throw BadMagic("pcap: stream shorter than global header");
    const std::uint8_t* p = stream.data();
    std::uint32_t magic = read_u32le(p);
    bool swapped;
    if (magic == kMagicLE)
        swapped = false;
    else if (magic == kMagicBE)
        swapped = true;
    else
        throw BadMagic("pcap: bad magic");

    auto u32 = [&](const std::uint8_t* q) { return swapped ? read_u32be(q) : read_u32le(q); };

    std::uint32_t network = u32(p + 20);
    LinkType link;
    if (network == kLinkEthernet)
        link = LinkType::ethernet;
    else if (network == kLinkRawIp)
        link = LinkType::raw_ip;
    else
        throw BadMagic("pcap: unsupported link type " + std::to_string(network));

    std::vector<RawPacket> out;
    std::size_t off = 24;
    std::size_t index = 0;
    while (off < stream.size()) {
        if (stream.size() - off < 16) throw TruncatedRecord("pcap: truncated record header");
        std::uint32_t ts_sec = u32(p + off);
        std::uint32_t ts_usec = u32(p + off + 4);
        std::uint32_t incl_len = u32(p + off + 8);
        off += 16;
        if (stream.size() - off < incl_len) throw TruncatedRecord("pcap: record data exceeds stream");
        RawPacket pkt;
        pkt.timestamp_us = static_cast<std::int64_t>(ts_sec) * 1000000 + ts_usec;
        pkt.link_type = link;
        pkt.bytes.assign(p + off, p + off + incl_len);
        pkt.orig_index = index++;
        out.push_back(std::move(pkt));
        off += incl_len;
    }
    return out;
}

// Writer used by the synthetic corpus generator and test fixtures.
class Writer {
  public:
    explicit Writer(std::uint32_t link = kLinkEthernet, bool big_endian = false)
        : big_endian_(big_endian) {
        put_u32(kMagicLE);  // byte order of the write encodes the endianness
        // version 2.4, thiszone 0, sigfigs 0, snaplen 65535, network
        if (big_endian_) {
            bytes_.push_back(0); bytes_.push_back(2); bytes_.push_back(0); bytes_.push_back(4);
        } else {
            bytes_.push_back(2); bytes_.push_back(0); bytes_.push_back(4); bytes_.push_back(0);
        }
        put_u32(0);
        put_u32(0);
        put_u32(65535);
        put_u32(link);
    }

    void add(std::int64_t timestamp_us, std::span<const std::uint8_t> frame) {
        put_u32(static_cast<std::uint32_t>(timestamp_us / 1000000));
        put_u32(static_cast<std::uint32_t>(timestamp_us % 1000000));
        put_u32(static_cast<std::uint32_t>(frame.size()));
        put_u32(static_cast<std::uint32_t>(frame.size()));
        bytes_.insert(bytes_.end(), frame.begin(), frame.end());
    }

    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  private:
    void put_u32(std::uint32_t v) {
        if (big_endian_) {
            for (int i = 3; i >= 0; --i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
        } else {
            append_u32le(bytes_, v);
        }
    }

    bool big_endian_;
    std::vector<std::uint8_t> bytes_;
};

}  // namespace pcap
}  // namespace mtc
