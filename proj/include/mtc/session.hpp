#pragma once

// Session reassembly and cleaning: canonical 5-tuple keys over bidirectional
// traffic, link-layer strip, IP anonymization, handshake/DNS filtering, and
// the fixed 784-byte record representation.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mtc/common.hpp"
#include "mtc/pcap.hpp"

namespace mtc {

constexpr std::size_t kRecordLen = 784;

enum class Transport : std::uint8_t { tcp = 6, udp = 17 };

struct Endpoint {
    std::array<std::uint8_t, 4> ip{};
    std::uint16_t port = 0;

    auto tie() const { return std::tie(ip, port); }
    bool operator==(const Endpoint&) const = default;
    bool operator<(const Endpoint& o) const { return tie() < o.tie(); }
};

struct SessionKey {
    Endpoint endpoint_lo;  // canonical: endpoint_lo <= endpoint_hi
    Endpoint endpoint_hi;
    Transport protocol = Transport::tcp;

    auto tie() const { return std::tie(endpoint_lo, endpoint_hi, protocol); }
    bool operator==(const SessionKey&) const = default;
    bool operator<(const SessionKey& o) const { return tie() < o.tie(); }
};

struct Session {
    SessionKey key;
    std::vector<RawPacket> packets;  // capture order
    std::optional<std::uint16_t> label;
};

struct SessionRecord {
    std::array<std::uint8_t, kRecordLen> bytes{};  // raw; scale by /255.0 at load
    std::uint16_t label = 0;
    SessionKey source_key;

    float value(std::size_t i) const { return static_cast<float>(bytes[i]) / 255.0f; }
};

struct IngestDiagnostics {
    std::size_t frames_total = 0;
    std::size_t frames_skipped = 0;  // unparseable / non-TCP-UDP / non-IPv4
    std::size_t sessions_assembled = 0;
    std::size_t sessions_empty_after_cleaning = 0;
    std::size_t packets_filtered_handshake = 0;
    std::size_t packets_filtered_dns = 0;

    void merge(const IngestDiagnostics& o) {
        frames_total += o.frames_total;
        frames_skipped += o.frames_skipped;
        sessions_assembled += o.sessions_assembled;
        sessions_empty_after_cleaning += o.sessions_empty_after_cleaning;
        packets_filtered_handshake += o.packets_filtered_handshake;
        packets_filtered_dns += o.packets_filtered_dns;
    }
};

namespace detail {

struct ParsedHeaders {
    std::size_t ip_off = 0;    // offset of the IPv4 header within the frame
    std::size_t ihl = 0;       // IPv4 header length in bytes
    Transport proto = Transport::tcp;
    Endpoint src, dst;
    std::size_t l4_off = 0;    // transport header offset
};

inline ParsedHeaders parse_headers(const RawPacket& pkt) {
    const auto& b = pkt.bytes;
    ParsedHeaders h;
    if (pkt.link_type == LinkType::ethernet) {
        if (b.size() < 14) throw MalformedHeader("frame shorter than Ethernet header");
        std::uint16_t ethertype = read_u16be(b.data() + 12);
        if (ethertype != 0x0800) throw UnsupportedProtocol("non-IPv4 ethertype");
        h.ip_off = 14;
    } else {
        h.ip_off = 0;
    }
    if (b.size() < h.ip_off + 20) throw MalformedHeader("truncated IPv4 header");
    const std::uint8_t* ip = b.data() + h.ip_off;
    if ((ip[0] >> 4) != 4) throw UnsupportedProtocol("not IPv4");
    h.ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
    if (h.ihl < 20 || b.size() < h.ip_off + h.ihl) throw MalformedHeader("bad IHL");
    std::uint8_t proto = ip[9];
    if (proto != 6 && proto != 17) throw UnsupportedProtocol("not TCP/UDP");
    h.proto = static_cast<Transport>(proto);
    std::copy(ip + 12, ip + 16, h.src.ip.begin());
    std::copy(ip + 16, ip + 20, h.dst.ip.begin());
    h.l4_off = h.ip_off + h.ihl;
    if (b.size() < h.l4_off + (h.proto == Transport::tcp ? 20u : 8u))
        throw MalformedHeader("truncated transport header");
    h.src.port = read_u16be(b.data() + h.l4_off);
    h.dst.port = read_u16be(b.data() + h.l4_off + 2);
    return h;
}

}  // namespace detail

inline SessionKey session_key(const RawPacket& pkt) {
    auto h = detail::parse_headers(pkt);
    SessionKey key;
    key.protocol = h.proto;
    if (h.src < h.dst) {
        key.endpoint_lo = h.src;
        key.endpoint_hi = h.dst;
    } else {
        key.endpoint_lo = h.dst;
        key.endpoint_hi = h.src;
    }
    return key;
}

inline std::vector<Session> assemble_sessions(const std::vector<RawPacket>& packets,
                                              IngestDiagnostics* diag = nullptr) {
    std::map<SessionKey, std::size_t> index;  // key -> slot in out
    std::vector<Session> out;
    for (const auto& pkt : packets) {
        if (diag) ++diag->frames_total;
        SessionKey key;
        try {
            key = session_key(pkt);
        } catch (const Error&) {
            if (diag) ++diag->frames_skipped;
            continue;
        }
        auto [it, inserted] = index.try_emplace(key, out.size());
        if (inserted) out.push_back(Session{key, {}, std::nullopt});
        out[it->second].packets.push_back(pkt);
    }
    if (diag) diag->sessions_assembled += out.size();
    return out;
}

// Cleaning per packet: strip the data-link header, zero IPv4 src/dst, drop
// zero-payload SYN/FIN/pure-ACK TCP packets, and keep only the first DNS
// query and first DNS response per session.
inline Session clean_session(const Session& session, IngestDiagnostics* diag = nullptr) {
    Session out;
    out.key = session.key;
    out.label = session.label;
    bool dns_query_kept = false, dns_response_kept = false;
    for (const auto& pkt : session.packets) {
        detail::ParsedHeaders h;
        try {
            h = detail::parse_headers(pkt);
        } catch (const Error&) {
            continue;  // already counted during assembly
        }
        const auto& b = pkt.bytes;
        if (h.proto == Transport::tcp) {
            std::size_t doff = static_cast<std::size_t>(b[h.l4_off + 12] >> 4) * 4;
            std::uint8_t flags = b[h.l4_off + 13];
            std::uint16_t total_len = read_u16be(b.data() + h.ip_off + 2);
            std::size_t payload = 0;
            if (total_len > h.ihl + doff) payload = total_len - h.ihl - doff;
            constexpr std::uint8_t kSyn = 0x02, kFin = 0x01, kAck = 0x10;
            bool handshake = (flags & (kSyn | kFin)) != 0 || (flags & kAck) != 0;
            if (payload == 0 && handshake) {
                if (diag) ++diag->packets_filtered_handshake;
                continue;
            }
        } else {
            bool is_dns = h.src.port == 53 || h.dst.port == 53;
            if (is_dns) {
                std::size_t dns_off = h.l4_off + 8;
                bool response = b.size() > dns_off + 2 && (b[dns_off + 2] & 0x80) != 0;
                bool& kept = response ? dns_response_kept : dns_query_kept;
                if (kept) {
                    if (diag) ++diag->packets_filtered_dns;
                    continue;
                }
                kept = true;
            }
        }
        RawPacket cleaned;
        cleaned.timestamp_us = pkt.timestamp_us;
        cleaned.link_type = LinkType::raw_ip;
        cleaned.orig_index = pkt.orig_index;
        cleaned.bytes.assign(b.begin() + static_cast<std::ptrdiff_t>(h.ip_off), b.end());
        std::fill(cleaned.bytes.begin() + 12, cleaned.bytes.begin() + 20, 0);  // src/dst IP
        out.packets.push_back(std::move(cleaned));
    }
    if (out.packets.empty()) {
        if (diag) ++diag->sessions_empty_after_cleaning;
        throw EmptyAfterCleaning("session empty after cleaning");
    }
    return out;
}

inline SessionRecord to_record(const Session& session, std::uint16_t label) {
    if (session.packets.empty()) throw EmptySession("cannot form record from empty session");
    SessionRecord rec;
    rec.label = label;
    rec.source_key = session.key;
    std::size_t n = 0;
    for (const auto& pkt : session.packets) {
        for (std::uint8_t byte : pkt.bytes) {
            if (n >= kRecordLen) return rec;
            rec.bytes[n++] = byte;
        }
    }
    return rec;  // remainder stays zero-padded
}

// ---- record file (magic "MTCR") -------------------------------------------

inline std::vector<std::uint8_t> serialize_records(const std::vector<SessionRecord>& records) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'C', 'R'});
    append_u32le(out, 1);  // version
    append_u32le(out, static_cast<std::uint32_t>(records.size()));
    append_u32le(out, static_cast<std::uint32_t>(kRecordLen));
    for (const auto& r : records) {
        append_u16le(out, r.label);
        out.insert(out.end(), r.bytes.begin(), r.bytes.end());
    }
    return out;
}

inline std::vector<SessionRecord> deserialize_records(std::span<const std::uint8_t> data) {
    if (data.size() < 16 || std::memcmp(data.data(), "MTCR", 4) != 0)
        throw BadMagic("record file: bad magic");
    std::uint32_t version = read_u32le(data.data() + 4);
    if (version != 1) throw VersionUnsupported("record file: version " + std::to_string(version));
    std::uint32_t count = read_u32le(data.data() + 8);
    std::uint32_t reclen = read_u32le(data.data() + 12);
    if (reclen != kRecordLen) throw MalformedHeader("record file: unexpected record length");
    if (data.size() != 16 + static_cast<std::size_t>(count) * (2 + kRecordLen))
        throw TruncatedRecord("record file: size mismatch");
    std::vector<SessionRecord> out(count);
    std::size_t off = 16;
    for (auto& r : out) {
        r.label = read_u16le(data.data() + off);
        std::copy(data.begin() + static_cast<std::ptrdiff_t>(off + 2),
                  data.begin() + static_cast<std::ptrdiff_t>(off + 2 + kRecordLen),
                  r.bytes.begin());
        off += 2 + kRecordLen;
    }
    return out;
}

// ---- label map: one "index<TAB>name" per line ------------------------------

inline std::string serialize_label_map(const std::vector<std::string>& names) {
    std::string out;
    for (std::size_t i = 0; i < names.size(); ++i)
        out += std::to_string(i) + "\t" + names[i] + "\n";
    return out;
}

inline std::vector<std::string> parse_label_map(const std::string& text) {
    std::vector<std::string> names;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw MalformedHeader("label map: missing tab in line");
        std::size_t idx = std::stoul(line.substr(0, tab));
        if (names.size() <= idx) names.resize(idx + 1);
        names[idx] = line.substr(tab + 1);
    }
    return names;
}

// ---- whole-file helpers ----------------------------------------------------

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> data) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot open " + tmp + " for writing");
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
        if (!out) throw IoFailure("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoFailure("rename failed for " + path);
}

inline void write_file(const std::string& path, const std::string& text) {
    write_file(path, std::span<const std::uint8_t>(
                         reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace mtc
