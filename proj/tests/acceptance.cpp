// Acceptance gate: one pass/fail line per criterion, exit 0 only when all
// eleven pass. Heavy artifacts (the smoke searches and the trained model) are
// produced once and shared between criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtc/arch.hpp"
#include "mtc/model_io.hpp"
#include "mtc/nas.hpp"
#include "mtc/nn.hpp"
#include "mtc/quant.hpp"
#include "mtc/session.hpp"
#include "mtc/synth.hpp"
#include "mtc/train.hpp"

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace mtc;

namespace {

int failures = 0;

double run_criterion(int number, const std::string& title, bool (*body)(std::string&)) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2d. %s — %s (%.1fs)\n", ok ? "PASS" : "FAIL", number, title.c_str(),
                detail.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++failures;
    return secs;
}

bool within(double value, double target, double rel) {
    return std::abs(value - target) / target <= rel;
}

// ---- shared artifacts -------------------------------------------------------

std::vector<SessionRecord> corpus() {
    static std::vector<SessionRecord> records = [] {
        auto c = generate_synthetic_corpus({.n_classes = 4, .sessions_per_class = 50}, 7);
        std::vector<SessionRecord> out;
        for (std::size_t cls = 0; cls < c.captures.size(); ++cls)
            for (auto& r : ingest_capture(c.captures[cls], static_cast<std::uint16_t>(cls)))
                out.push_back(r);
        return out;
    }();
    return records;
}

SearchConfig smoke_config() {
    SearchConfig cfg;
    cfg.generations = 5;
    cfg.children_per_generation = 4;
    cfg.runs = 1;
    cfg.seed = 42;
    cfg.train.max_epochs = 20;
    cfg.train.batch = 16;
    return cfg;
}

SearchResult& smoke_result() {
    static SearchResult result = run_search(smoke_config(), corpus(), default_initial_parent(4));
    return result;
}

struct TrainedArtifacts {
    Model<float> model;
    Model<float> folded;
    QuantModel qmodel;
    std::vector<SessionRecord> train_set, val_set;
};

TrainedArtifacts& trained() {
    static TrainedArtifacts a = [] {
        TrainedArtifacts art{Model<float>{}, Model<float>{}, QuantModel{}, {}, {}};
        std::tie(art.train_set, art.val_set) = holdout_split(corpus(), 0.2, 3);
        ArchGenome g;
        g.blocks = {{24, 5, 3, Padding::valid, PoolKind::max, 2, 0.1},
                    {32, 3, 2, Padding::valid, PoolKind::none, 2, 0.1}};
        g.n_classes = 4;
        art.model = instantiate<float>(g, 11);
        TrainConfig tc;
        tc.max_epochs = 30;
        tc.batch = 16;
        tc.seed = 5;
        train(art.model, art.train_set, art.val_set, tc);
        art.folded = fold_batchnorm(art.model);
        art.qmodel = quantize_model(art.folded, calibrate(art.folded, art.train_set));
        return art;
    }();
    return a;
}

// strip the ethernet header and zero the IPv4 addresses, as the cleaner does
fixtures::Bytes cleaned(const fixtures::Bytes& frame) {
    fixtures::Bytes b(frame.begin() + 14, frame.end());
    for (int i = 12; i < 20; ++i) b[i] = 0;
    return b;
}

std::array<std::uint8_t, kRecordLen> expected_record(const std::vector<fixtures::Bytes>& frames) {
    std::array<std::uint8_t, kRecordLen> out{};
    std::size_t n = 0;
    for (const auto& f : frames) {
        auto c = cleaned(f);
        for (std::uint8_t byte : c) {
            if (n >= kRecordLen) return out;
            out[n++] = byte;
        }
    }
    return out;
}

// ---- criteria ---------------------------------------------------------------

bool crit1_params(std::string& detail) {
    auto p = static_cast<double>(count_params(paper_architecture()));
    std::ostringstream s;
    s << "count_params = " << p << " vs 88260";
    detail = s.str();
    return within(p, 88260.0, 0.005);
}

bool crit2_ram(std::string& detail) {
    auto t = max_tensor(paper_architecture());
    std::ostringstream s;
    s << "max_tensor = " << t << " elements, " << t * 4 << " bytes vs 80500";
    detail = s.str();
    return t == 20124 && within(static_cast<double>(t) * 4, 80500.0, 0.01);
}

bool crit3_flops(std::string& detail) {
    auto f = static_cast<double>(count_flops(paper_architecture()));
    std::ostringstream s;
    s << "count_flops = " << f << " vs 10.08M";
    detail = s.str();
    return within(f, 10'080'000.0, 0.20);
}

bool crit4_cost_oracles(std::string& detail) {
    std::mt19937 rng(404);
    for (int i = 0; i < 1000; ++i) {
        auto g = testing::random_valid_genome(rng);
        if (count_params(g) != testing::measured_params(g) ||
            max_tensor(g) != testing::measured_max_tensor(g) ||
            count_flops(g) != testing::measured_flops(g)) {
            detail = "mismatch on genome " + std::to_string(i) + ":\n" + format_genome(g);
            return false;
        }
    }
    detail = "1000 genomes, exact match on params/max_tensor/flops";
    return true;
}

bool crit5_gradients(std::string& detail) {
    std::mt19937 rng(505);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        ArchGenome g;
        g.n_classes = 2 + static_cast<int>(rng() % 4);
        int depth = 1 + static_cast<int>(rng() % 2);
        for (int b = 0; b < depth; ++b) {
            BlockGene gene;
            gene.filters = 2 + static_cast<int>(rng() % 4);
            gene.kernel = 3 + static_cast<int>(rng() % 3);
            gene.stride = 1 + static_cast<int>(rng() % 2);
            gene.padding = rng() % 2 ? Padding::same : Padding::valid;
            gene.pool = static_cast<PoolKind>(rng() % 3);
            gene.dropout = 0.1 + 0.1 * (rng() % 3);
            g.blocks.push_back(gene);
        }
        auto model = instantiate<double>(g, 900 + trial, 32);
        worst = std::max(worst, testing::max_gradient_error(model, 3, 32, 700 + trial));
    }
    std::ostringstream s;
    s << "20 micro-models, max relative error " << worst << " (threshold 1e-3)";
    detail = s.str();
    return worst < 1e-3;
}

bool crit6_search(std::string& detail) {
    const auto& result = smoke_result();
    const auto cfg = smoke_config();
    for (const auto& c : result.log.candidates)
        if (!check_constraints(c.genome, cfg.budget).empty()) {
            detail = "logged candidate violates the budget";
            return false;
        }
    for (std::size_t i = 1; i < result.log.generations.size(); ++i)
        if (result.log.generations[i].best_fitness <
            result.log.generations[i - 1].best_fitness) {
            detail = "best fitness decreased";
            return false;
        }
    std::ostringstream s;
    s << result.log.candidates.size() << " feasible candidates, non-decreasing trajectory, "
      << "best val accuracy " << result.best_fitness;
    detail = s.str();
    return result.best_fitness >= 0.90;
}

bool crit7_determinism(std::string& detail) {
    const auto& a = smoke_result();
    const auto cfg = smoke_config();
    auto b = run_search(cfg, corpus(), default_initial_parent(4));
    if (a.log.to_ndjson() != b.log.to_ndjson() ||
        format_genome(a.best) != format_genome(b.best)) {
        detail = "equal-seed reruns differ";
        return false;
    }
    auto ckpt = (std::filesystem::temp_directory_path() / "mtc_acceptance_ckpt.bin").string();
    run_search(cfg, corpus(), default_initial_parent(4), ckpt, nullptr,
               /*stop_after_generation=*/2);
    auto state = deserialize_checkpoint(read_file(ckpt), cfg);
    auto c = run_search(cfg, corpus(), default_initial_parent(4), ckpt, &state);
    std::filesystem::remove(ckpt);
    if (a.log.to_ndjson() != c.log.to_ndjson() ||
        format_genome(a.best) != format_genome(c.best)) {
        detail = "resumed trajectory differs from the uninterrupted run";
        return false;
    }
    detail = "rerun byte-identical; checkpoint/resume at generation 2 reproduces the trajectory";
    return true;
}

bool crit8_quant_quality(std::string& detail) {
    auto& art = trained();
    auto rep = compare(art.model, art.qmodel, art.val_set);
    std::ostringstream s;
    s << "float acc " << rep.float_metrics.accuracy << ", int8 acc "
      << rep.int8_metrics.accuracy << ", agreement " << rep.argmax_agreement;
    detail = s.str();
    return rep.float_metrics.accuracy - rep.int8_metrics.accuracy <= 0.03 &&
           rep.argmax_agreement >= 0.95;
}

bool crit9_quant_roundtrip(std::string& detail) {
    std::mt19937_64 rng(909);
    std::uniform_real_distribution<double> lo_d(-8.0, 0.0), hi_d(0.1, 8.0);
    double worst_ratio = 0.0;  // |error| / (scale/2)
    for (int block = 0; block < 10; ++block) {
        double lo = lo_d(rng), hi = hi_d(rng);
        auto qp = activation_qparams(lo, hi);
        std::uniform_real_distribution<double> dist(lo, hi);
        for (int i = 0; i < 100000; ++i) {
            double x = dist(rng);
            double err = std::abs(qp.dequantize_u8(qp.quantize_u8(x)) - x);
            worst_ratio = std::max(worst_ratio, err / (qp.scale / 2));
        }
    }
    if (worst_ratio > 1.0 + 1e-9) {
        detail = "round-trip error exceeded scale/2";
        return false;
    }
    // BN-fold equivalence on real data
    auto& art = trained();
    double worst_fold = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < art.val_set.size(); ++i) idx.push_back(i);
    auto batch = records_to_batch<float>(art.val_set, idx);
    auto ref = art.model.forward(batch, RunMode::infer);
    auto out = art.folded.forward(batch, RunMode::infer);
    for (std::size_t i = 0; i < ref.v.size(); ++i)
        worst_fold = std::max(worst_fold, std::abs(static_cast<double>(ref.v[i]) - out.v[i]));
    std::ostringstream s;
    s << "10^6 values within scale/2 (worst ratio " << worst_ratio << "); fold deviation "
      << worst_fold;
    detail = s.str();
    return worst_fold <= 1e-5;
}

bool crit10_ingest(std::string& detail) {
    using namespace fixtures;
    const Ip a{10, 0, 0, 1}, b{10, 0, 0, 2};

    // fixture 1: handshake-only TCP session -> no record, 4 filtered packets
    {
        pcap::Writer w;
        w.add(1, make_tcp_frame(a, b, 1000, 80, kSyn, {}));
        w.add(2, make_tcp_frame(b, a, 80, 1000, kSynAck, {}));
        w.add(3, make_tcp_frame(a, b, 1000, 80, kAck, {}));
        w.add(4, make_tcp_frame(a, b, 1000, 80, kFinAck, {}));
        IngestDiagnostics d;
        auto recs = ingest_capture(w.bytes(), 0, &d);
        if (!recs.empty() || d.packets_filtered_handshake != 4 ||
            d.sessions_empty_after_cleaning != 1) {
            detail = "handshake-only fixture: wrong records or filter counts";
            return false;
        }
    }
    // fixture 2: DNS session with duplicates -> first query + first response
    {
        auto q1 = make_udp_frame(a, b, 5353, 53, dns_payload(false, 0x1111));
        auto r1 = make_udp_frame(b, a, 53, 5353, dns_payload(true, 0x1111));
        auto q2 = make_udp_frame(a, b, 5353, 53, dns_payload(false, 0x2222));
        auto r2 = make_udp_frame(b, a, 53, 5353, dns_payload(true, 0x2222));
        pcap::Writer w;
        for (auto* f : {&q1, &r1, &q2, &r2}) w.add(1, *f);
        IngestDiagnostics d;
        auto recs = ingest_capture(w.bytes(), 3, &d);
        if (recs.size() != 1 || d.packets_filtered_dns != 2 ||
            recs[0].bytes != expected_record({q1, r1}) || recs[0].label != 3) {
            detail = "DNS fixture: wrong record bytes or dedup count";
            return false;
        }
    }
    // fixture 3: oversized session truncates at 784
    {
        Bytes payload(900);
        for (std::size_t i = 0; i < payload.size(); ++i)
            payload[i] = static_cast<std::uint8_t>(i * 7 + 1);
        auto f = make_tcp_frame(a, b, 2000, 443, kPshAck, payload);
        pcap::Writer w;
        w.add(1, f);
        auto recs = ingest_capture(w.bytes(), 1);
        if (recs.size() != 1 || recs[0].bytes != expected_record({f})) {
            detail = "oversized fixture: truncation mismatch";
            return false;
        }
    }
    // fixture 4: undersized session zero-pads to 784
    {
        Bytes payload(100, 0xEE);
        auto f = make_tcp_frame(a, b, 2001, 443, kPshAck, payload);
        pcap::Writer w;
        w.add(1, f);
        auto recs = ingest_capture(w.bytes(), 1);
        auto want = expected_record({f});
        bool tail_zero = true;
        for (std::size_t i = 140; i < kRecordLen; ++i) tail_zero &= want[i] == 0;
        if (recs.size() != 1 || recs[0].bytes != want || !tail_zero) {
            detail = "undersized fixture: padding mismatch";
            return false;
        }
    }
    // fixture 5: bidirectional interleaving keeps capture order in one record
    {
        auto f1 = make_tcp_frame(a, b, 3000, 443, kPshAck, Bytes(40, 0x11));
        auto f2 = make_tcp_frame(b, a, 443, 3000, kPshAck, Bytes(40, 0x22));
        auto f3 = make_tcp_frame(a, b, 3000, 443, kPshAck, Bytes(40, 0x33));
        auto f4 = make_tcp_frame(b, a, 443, 3000, kPshAck, Bytes(40, 0x44));
        pcap::Writer w;
        int t = 0;
        for (auto* f : {&f1, &f2, &f3, &f4}) w.add(++t, *f);
        auto recs = ingest_capture(w.bytes(), 2);
        if (recs.size() != 1 || recs[0].bytes != expected_record({f1, f2, f3, f4})) {
            detail = "interleaving fixture: record mismatch";
            return false;
        }
    }
    detail = "5 golden fixtures reproduce expected records and filter counts";
    return true;
}

bool crit11_serialization(std::string& detail) {
    auto& art = trained();
    // f32 round trip: bit-identical bytes and outputs
    auto fbytes = serialize_model(art.model);
    auto floaded = deserialize_model(fbytes);
    auto& fback = std::get<Model<float>>(floaded);
    if (serialize_model(fback) != fbytes) {
        detail = "f32 serialize(deserialize(x)) != x";
        return false;
    }
    std::vector<std::size_t> idx{0, 1, 2};
    auto batch = records_to_batch<float>(art.val_set, idx);
    if (art.model.forward(batch, RunMode::infer).v != fback.forward(batch, RunMode::infer).v) {
        detail = "f32 round trip changed outputs";
        return false;
    }
    // int8 round trip: identical predictions
    auto qbytes = serialize_model(art.qmodel);
    auto qloaded = deserialize_model(qbytes);
    auto& qback = std::get<QuantModel>(qloaded);
    if (serialize_model(qback) != qbytes) {
        detail = "int8 serialize(deserialize(x)) != x";
        return false;
    }
    for (const auto& r : art.val_set)
        if (quantized_forward(qback, r) != quantized_forward(art.qmodel, r)) {
            detail = "int8 round trip changed outputs";
            return false;
        }
    // size accounting: 4 bytes per stored scalar (weights + BN running stats)
    // plus a bounded header
    std::size_t scalars = 0;
    for (const auto& set : art.model.params)
        for (const auto& t : set) scalars += t.v.size();
    for (const auto& bn : art.model.bn_stats)
        scalars += bn.running_mean.v.size() + bn.running_var.v.size();
    if (fbytes.size() < 4 * scalars || fbytes.size() > 4 * scalars + 1024) {
        detail = "f32 file size does not equal 4*scalars + bounded overhead";
        return false;
    }
    auto paper_model = instantiate<float>(paper_architecture(), 1);
    auto paper_size = static_cast<double>(serialize_model(paper_model).size());
    std::ostringstream s;
    s << "round trips bit-identical; reference f32 file " << paper_size << " B vs 353000";
    detail = s.str();
    return within(paper_size, 353'000.0, 0.05);
}

}  // namespace

int main() {
    double t67 = 0.0;
    run_criterion(1, "footprint: parameters within 0.5% of 88.26K", crit1_params);
    run_criterion(2, "footprint: peak tensor 20124 elements (80.5KB RAM)", crit2_ram);
    run_criterion(3, "footprint: FLOPs within 20% of 10.08M", crit3_flops);
    run_criterion(4, "cost counters match instantiate-and-measure oracles", crit4_cost_oracles);
    run_criterion(5, "backward matches f64 central finite differences", crit5_gradients);
    t67 += run_criterion(6, "smoke search: feasible, monotone, accuracy >= 0.90", crit6_search);
    t67 += run_criterion(7, "determinism: rerun and checkpoint/resume byte-identical",
                         crit7_determinism);
    run_criterion(8, "quantization: <= 3-point drop, >= 95% agreement", crit8_quant_quality);
    run_criterion(9, "quantization round trip and BN-fold equivalence", crit9_quant_roundtrip);
    run_criterion(10, "ingest conformance on golden pcap fixtures", crit10_ingest);
    run_criterion(11, "model files: bit-exact round trips and size accounting",
                  crit11_serialization);

    std::printf("%s (%d/11 passed; search criteria %.0fs combined)\n",
                failures == 0 ? "ACCEPTED" : "REJECTED", 11 - failures, t67);
    return failures == 0 ? 0 : 1;
}
