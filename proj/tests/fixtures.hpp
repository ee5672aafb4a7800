#pragma once

// Hand-built packet fixtures for ingest tests. Frames are constructed field
// by field here, independently of the library's synthetic generator, so the
// two act as cross-checks.

#include <array>
#include <cstdint>
#include <vector>

namespace fixtures {

using Bytes = std::vector<std::uint8_t>;
using Ip = std::array<std::uint8_t, 4>;

inline void put_u16be(Bytes& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 8));
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline Bytes eth_header(std::uint16_t ethertype = 0x0800) {
    Bytes b = {0xaa, 0, 0, 0, 0, 1, 0xbb, 0, 0, 0, 0, 2};
    put_u16be(b, ethertype);
    return b;
}

inline Bytes ipv4_header(const Ip& src, const Ip& dst, std::uint8_t proto,
                         std::size_t payload_len) {
    Bytes b;
    b.push_back(0x45);
    b.push_back(0);
    put_u16be(b, static_cast<std::uint16_t>(20 + payload_len));
    b.insert(b.end(), {0, 0, 0x40, 0, 64, proto, 0, 0});
    b.insert(b.end(), src.begin(), src.end());
    b.insert(b.end(), dst.begin(), dst.end());
    return b;
}

inline Bytes make_tcp_frame(const Ip& src, const Ip& dst, std::uint16_t sport,
                            std::uint16_t dport, std::uint8_t flags, const Bytes& payload) {
    Bytes b = eth_header();
    Bytes ip = ipv4_header(src, dst, 6, 20 + payload.size());
    b.insert(b.end(), ip.begin(), ip.end());
    put_u16be(b, sport);
    put_u16be(b, dport);
    b.insert(b.end(), {0, 0, 0, 1, 0, 0, 0, 0});  // seq, ack
    b.push_back(0x50);                            // data offset 5
    b.push_back(flags);
    b.insert(b.end(), {0x10, 0, 0, 0, 0, 0});     // window, checksum, urgent
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
}

inline Bytes make_udp_frame(const Ip& src, const Ip& dst, std::uint16_t sport,
                            std::uint16_t dport, const Bytes& payload) {
    Bytes b = eth_header();
    Bytes ip = ipv4_header(src, dst, 17, 8 + payload.size());
    b.insert(b.end(), ip.begin(), ip.end());
    put_u16be(b, sport);
    put_u16be(b, dport);
    put_u16be(b, static_cast<std::uint16_t>(8 + payload.size()));
    put_u16be(b, 0);
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
}

// minimal DNS message: id, flags (QR in the high bit of byte 2), zero counts
inline Bytes dns_payload(bool response, std::uint16_t id = 0x1234) {
    Bytes b;
    put_u16be(b, id);
    b.push_back(response ? 0x80 : 0x00);
    b.push_back(0);
    for (int i = 0; i < 8; ++i) b.push_back(0);
    return b;
}

inline Bytes make_arp_frame() {
    Bytes b = eth_header(0x0806);
    b.resize(b.size() + 28, 0);
    return b;
}

constexpr std::uint8_t kSyn = 0x02, kAck = 0x10, kFin = 0x01, kPshAck = 0x18, kSynAck = 0x12,
                       kFinAck = 0x11;

}  // namespace fixtures
