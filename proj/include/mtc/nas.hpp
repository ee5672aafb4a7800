#pragma once

// (1+lambda) evolutionary search over the genome space with the hardware
// budget as a hard admission filter, deterministic under (seed, data, config),
// with generation-boundary checkpointing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <mutex>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtc/arch.hpp"
#include "mtc/common.hpp"
#include "mtc/session.hpp"
#include "mtc/train.hpp"

namespace mtc {

enum class FitnessAggregation : std::uint8_t { best, mean };

struct SearchConfig {
    int generations = 100;
    int children_per_generation = 10;
    int runs = 3;  // multi-start trainings per candidate
    double holdout_fraction = 0.2;
    HardwareBudget budget;
    std::uint64_t seed = 0;
    TrainConfig train;  // epoch cap 100 during search
    int max_mutation_attempts = 200;
    bool elitist = true;  // parent competes with children
    FitnessAggregation aggregation = FitnessAggregation::best;
    GeneRanges ranges;
    int workers = 1;

    std::string fingerprint() const {
        std::ostringstream s;
        s << generations << '|' << children_per_generation << '|' << runs << '|'
          << holdout_fraction << '|' << budget.param_limit << '|' << budget.tensor_limit << '|'
          << budget.flop_limit << '|' << seed << '|' << train.lr0 << '|' << train.batch << '|'
          << train.max_epochs << '|' << train.plateau_patience << '|' << train.plateau_factor
          << '|' << train.early_stop_patience << '|' << max_mutation_attempts << '|'
          << (elitist ? 1 : 0) << '|' << (aggregation == FitnessAggregation::best ? "best" : "mean")
          << '|' << ranges.depth_limit;
        return s.str();
    }
};

struct Candidate {
    ArchGenome genome;
    std::vector<double> run_accuracies;
    double fitness = 0.0;
    CostReport cost;
    int generation = 0;
    int child_index = 0;  // -1 for the initial parent
    std::string status = "trained";
};

struct GenerationStats {
    int generation = 0;
    std::size_t rejected_mutations = 0;
    bool starved = false;
    double best_fitness = 0.0;  // best-so-far after this generation
};

struct SearchLog {
    std::vector<Candidate> candidates;
    std::vector<GenerationStats> generations;

    // Newline-delimited candidate records; timestamps deliberately excluded so
    // equal-seed runs compare byte-identical.
    std::string to_ndjson() const {
        std::string out;
        for (const auto& c : candidates) {
            nlohmann::ordered_json j;
            j["generation"] = c.generation;
            j["child"] = c.child_index;
            j["genome"] = format_genome(c.genome);
            j["params"] = c.cost.params;
            j["max_tensor"] = c.cost.max_tensor;
            j["flops"] = c.cost.flops;
            j["run_accuracies"] = c.run_accuracies;
            j["fitness"] = c.fitness;
            j["status"] = c.status;
            out += j.dump() + "\n";
        }
        return out;
    }
};

// ---- stratified holdout ----------------------------------------------------

inline std::pair<std::vector<SessionRecord>, std::vector<SessionRecord>> holdout_split(
    const std::vector<SessionRecord>& records, double fraction, std::uint64_t seed) {
    if (records.empty()) throw EmptyDataset("holdout_split: no records");
    if (fraction <= 0.0 || fraction >= 1.0) throw InvalidSpec("holdout_split: bad fraction");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ 0x51B7A9ull));
    std::vector<std::size_t> val_idx, train_idx;
    for (auto& [label, idx] : by_class) {
        if (idx.size() < 2)
            throw ClassTooSmall("holdout_split: class " + std::to_string(label) +
                                " has fewer than 2 records");
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_val = static_cast<std::size_t>(std::llround(idx.size() * fraction));
        n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
        val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                         idx.end());
    }
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::pair<std::vector<SessionRecord>, std::vector<SessionRecord>> out;
    for (std::size_t i : train_idx) out.first.push_back(records[i]);
    for (std::size_t i : val_idx) out.second.push_back(records[i]);
    return out;
}

// ---- candidate evaluation --------------------------------------------------

inline Candidate evaluate_candidate(const ArchGenome& genome,
                                    const std::vector<SessionRecord>& train_set,
                                    const std::vector<SessionRecord>& val_set,
                                    const SearchConfig& cfg, std::uint64_t candidate_seed) {
    Candidate cand;
    cand.genome = genome;
    cand.cost = cost_report(genome);
    for (int run = 0; run < cfg.runs; ++run) {
        auto model = instantiate<float>(genome, candidate_seed + static_cast<std::uint64_t>(run));
        TrainConfig tc = cfg.train;
        tc.seed = candidate_seed + static_cast<std::uint64_t>(run);
        train(model, train_set, val_set, tc);
        cand.run_accuracies.push_back(evaluate(model, val_set).accuracy);
    }
    if (cfg.aggregation == FitnessAggregation::best) {
        cand.fitness = *std::max_element(cand.run_accuracies.begin(), cand.run_accuracies.end());
    } else {
        double sum = 0.0;
        for (double a : cand.run_accuracies) sum += a;
        cand.fitness = sum / cand.run_accuracies.size();
    }
    return cand;
}

// ---- checkpoint ------------------------------------------------------------

struct SearchState {
    int next_generation = 1;
    std::string rng_state;  // mt19937 text serialization
    ArchGenome parent;
    double parent_fitness = 0.0;
    SearchLog log;
};

inline std::vector<std::uint8_t> serialize_checkpoint(const SearchState& state,
                                                      const SearchConfig& cfg) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'C', 'K'});
    append_u16le(out, 1);  // version
    append_u64le(out, fnv1a(cfg.fingerprint()));
    append_u32le(out, static_cast<std::uint32_t>(state.next_generation));
    auto put_string = [&](const std::string& s) {
        append_u32le(out, static_cast<std::uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    };
    put_string(state.rng_state);
    put_string(format_genome(state.parent));
    std::uint64_t fit_bits;
    static_assert(sizeof(fit_bits) == sizeof(state.parent_fitness));
    std::memcpy(&fit_bits, &state.parent_fitness, 8);
    append_u64le(out, fit_bits);
    put_string(state.log.to_ndjson());
    // generation stats
    append_u32le(out, static_cast<std::uint32_t>(state.log.generations.size()));
    for (const auto& g : state.log.generations) {
        append_u32le(out, static_cast<std::uint32_t>(g.generation));
        append_u64le(out, g.rejected_mutations);
        out.push_back(g.starved ? 1 : 0);
        std::uint64_t bits;
        std::memcpy(&bits, &g.best_fitness, 8);
        append_u64le(out, bits);
    }
    append_u32le(out, crc32(out));
    return out;
}

inline Candidate candidate_from_ndjson_line(const std::string& line) {
    auto j = nlohmann::json::parse(line);
    Candidate c;
    c.generation = j["generation"];
    c.child_index = j["child"];
    c.genome = parse_genome(j["genome"]);
    c.run_accuracies = j["run_accuracies"].get<std::vector<double>>();
    c.fitness = j["fitness"];
    c.status = j["status"];
    c.cost = cost_report(c.genome);
    return c;
}

inline SearchState deserialize_checkpoint(std::span<const std::uint8_t> data,
                                          const SearchConfig& cfg) {
    if (data.size() < 22 || std::memcmp(data.data(), "MTCK", 4) != 0)
        throw CorruptCheckpoint("checkpoint: bad magic");
    if (crc32(data.subspan(0, data.size() - 4)) != read_u32le(data.data() + data.size() - 4))
        throw CorruptCheckpoint("checkpoint: CRC mismatch");
    if (read_u16le(data.data() + 4) != 1) throw CorruptCheckpoint("checkpoint: bad version");
    if (read_u64le(data.data() + 6) != fnv1a(cfg.fingerprint()))
        throw CorruptCheckpoint("checkpoint: config fingerprint mismatch");
    std::size_t off = 14;
    auto need = [&](std::size_t n) {
        if (data.size() - 4 < off + n) throw CorruptCheckpoint("checkpoint: truncated");
    };
    need(4);
    SearchState state;
    state.next_generation = static_cast<int>(read_u32le(data.data() + off));
    off += 4;
    auto get_string = [&] {
        need(4);
        std::uint32_t n = read_u32le(data.data() + off);
        off += 4;
        need(n);
        std::string s(reinterpret_cast<const char*>(data.data() + off), n);
        off += n;
        return s;
    };
    state.rng_state = get_string();
    state.parent = parse_genome(get_string());
    need(8);
    std::uint64_t bits = read_u64le(data.data() + off);
    off += 8;
    std::memcpy(&state.parent_fitness, &bits, 8);
    std::istringstream log_in(get_string());
    std::string line;
    while (std::getline(log_in, line))
        if (!line.empty()) state.log.candidates.push_back(candidate_from_ndjson_line(line));
    need(4);
    std::uint32_t ngens = read_u32le(data.data() + off);
    off += 4;
    for (std::uint32_t i = 0; i < ngens; ++i) {
        need(21);
        GenerationStats g;
        g.generation = static_cast<int>(read_u32le(data.data() + off));
        g.rejected_mutations = read_u64le(data.data() + off + 4);
        g.starved = data[off + 12] != 0;
        std::uint64_t fb = read_u64le(data.data() + off + 13);
        std::memcpy(&g.best_fitness, &fb, 8);
        off += 21;
        state.log.generations.push_back(g);
    }
    return state;
}

// ---- search loop -----------------------------------------------------------

struct SearchResult {
    ArchGenome best;
    double best_fitness = 0.0;
    SearchLog log;
};

namespace nas_detail {

inline std::uint64_t candidate_seed(const SearchConfig& cfg, int generation, int child) {
    std::uint64_t slot = static_cast<std::uint64_t>(generation) *
                             static_cast<std::uint64_t>(cfg.children_per_generation) +
                         static_cast<std::uint64_t>(child + 1);
    return cfg.seed ^ (slot * 0x9E3779B97F4A7C15ull);
}

// Deterministic preference: higher fitness, then lower FLOPs, then lower
// params, then earlier creation. The incumbent parent has creation order -1.
inline bool better(const Candidate& a, long a_order, const Candidate& b, long b_order) {
    if (a.fitness != b.fitness) return a.fitness > b.fitness;
    if (a.cost.flops != b.cost.flops) return a.cost.flops < b.cost.flops;
    if (a.cost.params != b.cost.params) return a.cost.params < b.cost.params;
    return a_order < b_order;
}

}  // namespace nas_detail

inline ArchGenome default_initial_parent(int n_classes) {
    ArchGenome g;
    g.blocks = {{32, 5, 2, Padding::valid, PoolKind::max, 2, 0.2}};
    g.n_classes = n_classes;
    return g;
}

// Runs (or resumes) the search. When checkpoint_path is non-empty a
// checkpoint is written after every generation. A positive
// stop_after_generation returns at that generation boundary (after the
// checkpoint write), so a later call can resume the identical trajectory.
inline SearchResult run_search(const SearchConfig& cfg,
                               const std::vector<SessionRecord>& records,
                               const ArchGenome& initial_parent,
                               const std::string& checkpoint_path = "",
                               const SearchState* resume_state = nullptr,
                               int stop_after_generation = 0) {
    auto [train_set, val_set] = holdout_split(records, cfg.holdout_fraction, cfg.seed);

    std::mt19937 mutation_rng(static_cast<std::uint32_t>(cfg.seed));
    SearchState state;
    if (resume_state) {
        state = *resume_state;
        std::istringstream rs(state.rng_state);
        rs >> mutation_rng;
    } else {
        if (!check_constraints(initial_parent, cfg.budget).empty())
            throw InfeasibleStart("initial parent violates the hardware budget");
        state.parent = initial_parent;
        Candidate parent_cand = evaluate_candidate(
            initial_parent, train_set, val_set, cfg, nas_detail::candidate_seed(cfg, 0, -1));
        parent_cand.generation = 0;
        parent_cand.child_index = -1;
        state.parent_fitness = parent_cand.fitness;
        state.log.candidates.push_back(parent_cand);
        state.log.generations.push_back({0, 0, false, parent_cand.fitness});
        state.next_generation = 1;
    }

    for (int gen = state.next_generation; gen <= cfg.generations; ++gen) {
        GenerationStats gstats;
        gstats.generation = gen;

        std::vector<ArchGenome> children;
        while (static_cast<int>(children.size()) < cfg.children_per_generation) {
            bool found = false;
            for (int attempt = 0; attempt < cfg.max_mutation_attempts; ++attempt) {
                ArchGenome child = mutate(state.parent, mutation_rng, cfg.ranges);
                if (check_constraints(child, cfg.budget).empty()) {
                    children.push_back(std::move(child));
                    found = true;
                    break;
                }
                ++gstats.rejected_mutations;
            }
            if (!found) {
                gstats.starved = true;
                break;
            }
        }

        std::vector<Candidate> evaluated(children.size());
        auto eval_one = [&](std::size_t c) {
            evaluated[c] = evaluate_candidate(children[c], train_set, val_set, cfg,
                                              nas_detail::candidate_seed(cfg, gen,
                                                                         static_cast<int>(c)));
            evaluated[c].generation = gen;
            evaluated[c].child_index = static_cast<int>(c);
        };
        if (cfg.workers > 1 && children.size() > 1) {
            std::vector<std::thread> pool;
            std::size_t next = 0;
            std::mutex mu;
            int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), children.size()));
            for (int t = 0; t < n_threads; ++t)
                pool.emplace_back([&] {
                    for (;;) {
                        std::size_t c;
                        {
                            std::lock_guard<std::mutex> lk(mu);
                            if (next >= children.size()) return;
                            c = next++;
                        }
                        eval_one(c);
                    }
                });
            for (auto& th : pool) th.join();
        } else {
            for (std::size_t c = 0; c < children.size(); ++c) eval_one(c);
        }

        // selection
        long best_order = -1;
        Candidate best_cand;
        bool have_best = false;
        if (cfg.elitist) {
            best_cand.genome = state.parent;
            best_cand.fitness = state.parent_fitness;
            best_cand.cost = cost_report(state.parent);
            have_best = true;
        }
        for (std::size_t c = 0; c < evaluated.size(); ++c) {
            if (!have_best ||
                nas_detail::better(evaluated[c], static_cast<long>(c), best_cand, best_order)) {
                best_cand = evaluated[c];
                best_order = static_cast<long>(c);
                have_best = true;
            }
        }
        for (auto& cand : evaluated) state.log.candidates.push_back(cand);
        if (have_best) {
            state.parent = best_cand.genome;
            state.parent_fitness = best_cand.fitness;
        }
        gstats.best_fitness = state.parent_fitness;
        state.log.generations.push_back(gstats);
        state.next_generation = gen + 1;

        if (!checkpoint_path.empty()) {
            std::ostringstream rs;
            rs << mutation_rng;
            state.rng_state = rs.str();
            write_file(checkpoint_path, serialize_checkpoint(state, cfg));
        }
        if (stop_after_generation > 0 && gen >= stop_after_generation) break;
    }

    return {state.parent, state.parent_fitness, state.log};
}

}  // namespace mtc
