#pragma once

// Deterministic synthetic pcap corpus: per-class captures whose payload byte
// histograms are separable, with realistic TCP handshakes and occasional DNS
// chatter so the cleaning pipeline has something to filter.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtc/common.hpp"
#include "mtc/pcap.hpp"
#include "mtc/session.hpp"

namespace mtc {

struct CorpusSpec {
    int n_classes = 4;           // 2..16
    int sessions_per_class = 50;
    int min_payload_packets = 2;
    int max_payload_packets = 6;
    int min_payload_bytes = 80;   // per packet
    int max_payload_bytes = 400;
    bool big_endian_pcap = false;
};

struct SynthCorpus {
    std::vector<std::vector<std::uint8_t>> captures;  // one pcap per class
    std::vector<std::string> label_names;             // index == class
};

namespace synth_detail {

inline std::vector<std::uint8_t> make_frame(const std::array<std::uint8_t, 4>& src_ip,
                                            const std::array<std::uint8_t, 4>& dst_ip,
                                            std::uint16_t src_port, std::uint16_t dst_port,
                                            std::uint8_t tcp_flags, std::uint32_t seq,
                                            const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> f;
    // Ethernet
    const std::uint8_t eth[14] = {0x02, 0, 0, 0, 0, 1, 0x02, 0, 0, 0, 0, 2, 0x08, 0x00};
    f.insert(f.end(), eth, eth + 14);
    // IPv4, no options
    std::size_t total = 20 + 20 + payload.size();
    f.push_back(0x45);
    f.push_back(0);
    f.push_back(static_cast<std::uint8_t>(total >> 8));
    f.push_back(static_cast<std::uint8_t>(total & 0xff));
    f.insert(f.end(), {0, 0, 0x40, 0, 64, 6, 0, 0});  // id, DF, ttl, proto=TCP, checksum 0
    f.insert(f.end(), src_ip.begin(), src_ip.end());
    f.insert(f.end(), dst_ip.begin(), dst_ip.end());
    // TCP, 20-byte header
    f.push_back(static_cast<std::uint8_t>(src_port >> 8));
    f.push_back(static_cast<std::uint8_t>(src_port & 0xff));
    f.push_back(static_cast<std::uint8_t>(dst_port >> 8));
    f.push_back(static_cast<std::uint8_t>(dst_port & 0xff));
    for (int i = 3; i >= 0; --i) f.push_back(static_cast<std::uint8_t>((seq >> (8 * i)) & 0xff));
    f.insert(f.end(), {0, 0, 0, 0});  // ack number
    f.push_back(0x50);                // data offset 5
    f.push_back(tcp_flags);
    f.insert(f.end(), {0xff, 0xff, 0, 0, 0, 0});  // window, checksum 0, urgent 0
    f.insert(f.end(), payload.begin(), payload.end());
    return f;
}

}  // namespace synth_detail

inline SynthCorpus generate_synthetic_corpus(const CorpusSpec& spec, std::uint64_t seed) {
    if (spec.n_classes < 2 || spec.n_classes > 16)
        throw InvalidSpec("corpus: class count must be in [2,16]");
    if (spec.sessions_per_class < 1) throw InvalidSpec("corpus: sessions per class must be >= 1");
    if (spec.min_payload_packets < 1 || spec.max_payload_packets < spec.min_payload_packets ||
        spec.min_payload_bytes < 1 || spec.max_payload_bytes < spec.min_payload_bytes)
        throw InvalidSpec("corpus: bad payload ranges");

    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ 0x9E3779B9u));
    SynthCorpus corpus;
    std::int64_t ts = 1700000000LL * 1000000;  // fixed base so output is reproducible

    for (int c = 0; c < spec.n_classes; ++c) {
        pcap::Writer w(pcap::kLinkEthernet, spec.big_endian_pcap);
        // Byte-histogram signature: payload bytes cluster in a per-class band.
        int center = 24 + c * (208 / std::max(1, spec.n_classes - 1));
        for (int s = 0; s < spec.sessions_per_class; ++s) {
            std::array<std::uint8_t, 4> client{10, 0, static_cast<std::uint8_t>(c), 1};
            std::array<std::uint8_t, 4> server{10, 0, static_cast<std::uint8_t>(c), 2};
            auto client_port = static_cast<std::uint16_t>(20000 + s);
            std::uint16_t server_port = 443;
            std::uint32_t seq = rng();

            auto emit = [&](std::uint8_t flags, const std::vector<std::uint8_t>& payload,
                            bool from_client) {
                auto frame = from_client
                                 ? synth_detail::make_frame(client, server, client_port,
                                                            server_port, flags, seq, payload)
                                 : synth_detail::make_frame(server, client, server_port,
                                                            client_port, flags, seq, payload);
                w.add(ts, frame);
                ts += 1000 + static_cast<std::int64_t>(rng() % 500);
            };

            emit(0x02, {}, true);          // SYN
            emit(0x12, {}, false);         // SYN-ACK
            emit(0x10, {}, true);          // ACK

            int npkts = spec.min_payload_packets +
                        static_cast<int>(rng() % static_cast<std::uint32_t>(
                                             spec.max_payload_packets - spec.min_payload_packets + 1));
            for (int p = 0; p < npkts; ++p) {
                int nbytes = spec.min_payload_bytes +
                             static_cast<int>(rng() % static_cast<std::uint32_t>(
                                                  spec.max_payload_bytes - spec.min_payload_bytes + 1));
                std::vector<std::uint8_t> payload(static_cast<std::size_t>(nbytes));
                for (auto& b : payload) {
                    int v = center + static_cast<int>(rng() % 33) - 16;
                    b = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
                }
                emit(0x18, payload, p % 2 == 0);  // PSH-ACK, alternating directions
            }

            emit(0x11, {}, true);          // FIN-ACK
            emit(0x11, {}, false);
        }
        corpus.captures.push_back(w.bytes());
        corpus.label_names.push_back("class_" + std::to_string(c));
    }
    return corpus;
}

// Full pipeline over one capture: parse, assemble, clean, fix length.
inline std::vector<SessionRecord> ingest_capture(std::span<const std::uint8_t> capture,
                                                 std::uint16_t label,
                                                 IngestDiagnostics* diag = nullptr) {
    auto packets = pcap::parse_capture(capture);
    auto sessions = assemble_sessions(packets, diag);
    std::vector<SessionRecord> out;
    for (const auto& s : sessions) {
        try {
            out.push_back(to_record(clean_session(s, diag), label));
        } catch (const EmptyAfterCleaning&) {
            // counted in diagnostics; session dropped
        }
    }
    return out;
}

}  // namespace mtc
