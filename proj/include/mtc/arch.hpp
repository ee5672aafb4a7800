#pragma once

// Searchable architecture genome: sequential conv blocks with a fixed
// GAP + dense + softmax head, the three hardware cost models, the mutation
// operator, and the text format for genomes.

#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtc/common.hpp"
#include "mtc/nn.hpp"

namespace mtc {

enum class PoolKind : std::uint8_t { none, max, avg };

struct BlockGene {
    int filters = 32;      // 16..140
    int kernel = 5;        // 3..7
    int stride = 2;        // 1..6
    Padding padding = Padding::valid;
    PoolKind pool = PoolKind::none;
    int pool_size = 2;     // 2..3, meaningful when pool != none
    double dropout = 0.2;  // 0.1..0.5

    bool operator==(const BlockGene&) const = default;
};

struct GeneRanges {
    int filters_min = 16, filters_max = 140;
    int kernel_min = 3, kernel_max = 7;
    int stride_min = 1, stride_max = 6;
    int pool_size_min = 2, pool_size_max = 3;
    double dropout_min = 0.1, dropout_max = 0.5;
    int depth_limit = 6;
};

inline bool gene_in_ranges(const BlockGene& g, const GeneRanges& r = {}) {
    return g.filters >= r.filters_min && g.filters <= r.filters_max &&
           g.kernel >= r.kernel_min && g.kernel <= r.kernel_max &&
           g.stride >= r.stride_min && g.stride <= r.stride_max &&
           g.pool_size >= r.pool_size_min && g.pool_size <= r.pool_size_max &&
           g.dropout >= r.dropout_min && g.dropout <= r.dropout_max + 1e-12;
}

struct ArchGenome {
    std::vector<BlockGene> blocks;  // 1..depth_limit
    int n_classes = 2;

    bool operator==(const ArchGenome&) const = default;
};

struct HardwareBudget {
    // Defaults sized for a 512KB-flash / 96KB-RAM class device, with FLOP
    // headroom above the reference model.
    std::size_t param_limit = 128 * 1024;
    std::size_t tensor_limit = 24 * 1024;
    std::size_t flop_limit = 12'000'000;
};

constexpr int kInputLen = 784;

// ---- instantiation ---------------------------------------------------------

// Per block: Conv1D -> BatchNorm -> ReLU -> (pool) -> Dropout; head:
// GlobalAvgPool -> Dense -> Softmax. Throws CollapsedWidth when the spatial
// length would reach zero.
inline std::vector<LayerSpec> genome_layers(const ArchGenome& genome, int input_len = kInputLen) {
    if (genome.blocks.empty()) throw InvalidSpec("genome: needs at least one block");
    std::vector<LayerSpec> layers;
    Shape1D shape{1, input_len};
    for (const auto& b : genome.blocks) {
        Conv1DSpec conv{shape.channels, b.filters, b.kernel, b.stride, b.padding};
        shape = layer_out_shape(conv, shape);
        layers.push_back(conv);
        layers.push_back(BatchNormSpec{b.filters});
        layers.push_back(ReLUSpec{});
        if (b.pool == PoolKind::max) {
            MaxPool1DSpec pool{b.pool_size};
            shape = layer_out_shape(pool, shape);
            layers.push_back(pool);
        } else if (b.pool == PoolKind::avg) {
            AvgPool1DSpec pool{b.pool_size};
            shape = layer_out_shape(pool, shape);
            layers.push_back(pool);
        }
        layers.push_back(DropoutSpec{b.dropout});
    }
    layers.push_back(GlobalAvgPoolSpec{});
    layers.push_back(DenseSpec{shape.channels, genome.n_classes});
    layers.push_back(SoftmaxSpec{});
    return layers;
}

template <typename T = float>
Model<T> instantiate(const ArchGenome& genome, std::uint64_t seed, int input_len = kInputLen) {
    return Model<T>::build(genome_layers(genome, input_len), seed);
}

// ---- cost models -----------------------------------------------------------

struct LayerCost {
    std::string name;
    std::size_t params = 0;
    std::size_t out_elements = 0;  // per sample
    std::size_t flops = 0;
};

struct CostReport {
    std::vector<LayerCost> per_layer;
    std::size_t params = 0;
    std::size_t max_tensor = 0;  // includes the input tensor
    std::size_t flops = 0;

    std::size_t params_flash_bytes_f32() const { return params * 4; }
    std::size_t params_flash_bytes_int8() const { return params; }
    std::size_t max_tensor_ram_bytes_f32() const { return max_tensor * 4; }
    std::size_t max_tensor_ram_bytes_int8() const { return max_tensor; }
};

// FLOP convention: 1 MAC = 2 FLOPs; biases and elementwise ops counted; BN
// taken as a folded inference-time affine (2 ops/element); dropout free at
// inference; softmax 3 ops/class.
inline CostReport cost_report(const ArchGenome& genome, int input_len = kInputLen) {
    CostReport r;
    Shape1D shape{1, input_len};
    r.max_tensor = shape.elements();
    auto add = [&](const std::string& name, std::size_t params, Shape1D out, std::size_t flops) {
        r.per_layer.push_back({name, params, out.elements(), flops});
        r.params += params;
        r.flops += flops;
        r.max_tensor = std::max(r.max_tensor, out.elements());
    };
    int bi = 0;
    for (const auto& b : genome.blocks) {
        ++bi;
        Conv1DSpec conv{shape.channels, b.filters, b.kernel, b.stride, b.padding};
        Shape1D out = layer_out_shape(conv, shape);
        std::size_t conv_params =
            static_cast<std::size_t>(conv.in_ch) * conv.kernel * conv.out_ch + conv.out_ch;
        std::size_t conv_flops =
            out.elements() * (2u * static_cast<std::size_t>(conv.kernel) * conv.in_ch) +
            out.elements();
        add("conv" + std::to_string(bi), conv_params, out, conv_flops);
        shape = out;
        add("bn" + std::to_string(bi), 2u * static_cast<std::size_t>(b.filters), shape,
            2 * shape.elements());
        add("relu" + std::to_string(bi), 0, shape, shape.elements());
        if (b.pool != PoolKind::none) {
            Shape1D pooled{shape.channels, pool_out_len(shape.length, b.pool_size)};
            add(std::string(b.pool == PoolKind::max ? "maxpool" : "avgpool") + std::to_string(bi),
                0, pooled, pooled.elements());
            shape = pooled;
        }
        add("dropout" + std::to_string(bi), 0, shape, 0);
    }
    std::size_t gap_in = shape.elements();
    shape = {shape.channels, 1};
    add("gap", 0, shape, gap_in);
    std::size_t dense_in = shape.elements();
    Shape1D logits{genome.n_classes, 1};
    add("dense", dense_in * genome.n_classes + genome.n_classes, logits,
        2 * dense_in * genome.n_classes + genome.n_classes);
    add("softmax", 0, logits, 3u * static_cast<std::size_t>(genome.n_classes));
    return r;
}

inline std::size_t count_params(const ArchGenome& genome) {
    // parameter count needs no shape propagation except validity; reuse the
    // report so totals always agree with it
    return cost_report(genome).params;
}

inline std::size_t max_tensor(const ArchGenome& genome, int input_len = kInputLen) {
    return cost_report(genome, input_len).max_tensor;
}

inline std::size_t count_flops(const ArchGenome& genome, int input_len = kInputLen) {
    return cost_report(genome, input_len).flops;
}

// ---- constraint check ------------------------------------------------------

struct Violation {
    std::string metric;
    std::size_t value = 0;
    std::size_t limit = 0;
};

// Evaluates the three strict inequalities. A genome whose spatial width
// collapses is reported as a violation rather than an exception so the
// search loop can treat both uniformly.
inline std::vector<Violation> check_constraints(const ArchGenome& genome,
                                                const HardwareBudget& budget,
                                                int input_len = kInputLen) {
    std::vector<Violation> v;
    CostReport r;
    try {
        r = cost_report(genome, input_len);
    } catch (const CollapsedWidth&) {
        v.push_back({"collapsed_width", 0, 0});
        return v;
    }
    if (r.params >= budget.param_limit) v.push_back({"params", r.params, budget.param_limit});
    if (r.max_tensor >= budget.tensor_limit)
        v.push_back({"max_tensor", r.max_tensor, budget.tensor_limit});
    if (r.flops >= budget.flop_limit) v.push_back({"flops", r.flops, budget.flop_limit});
    return v;
}

// ---- mutation --------------------------------------------------------------

// One mutation kind per call, uniformly drawn; structurally impossible draws
// (remove from a 1-block genome, add at the depth limit) are redirected by
// resampling. The result respects field ranges and the depth limit but may
// violate the budget; the caller filters.
inline ArchGenome mutate(const ArchGenome& parent, std::mt19937& rng,
                         const GeneRanges& ranges = {}) {
    auto rand_int = [&](int lo, int hi) {
        return lo + static_cast<int>(rng() % static_cast<std::uint32_t>(hi - lo + 1));
    };
    // dropout drawn in hundredths so the genome text format round-trips exactly
    auto rand_dropout = [&] {
        return rand_int(static_cast<int>(ranges.dropout_min * 100 + 0.5),
                        static_cast<int>(ranges.dropout_max * 100 + 0.5)) /
               100.0;
    };
    auto random_gene = [&] {
        BlockGene g;
        g.filters = rand_int(ranges.filters_min, ranges.filters_max);
        g.kernel = rand_int(ranges.kernel_min, ranges.kernel_max);
        g.stride = rand_int(ranges.stride_min, ranges.stride_max);
        g.padding = rng() % 2 ? Padding::same : Padding::valid;
        g.pool = static_cast<PoolKind>(rng() % 3);
        g.pool_size = rand_int(ranges.pool_size_min, ranges.pool_size_max);
        g.dropout = rand_dropout();
        return g;
    };

    // pool_size is not part of the text format when pool == none; pin it to
    // the default there so text round-trips reproduce the genome exactly
    auto finish = [](ArchGenome g) {
        for (auto& b : g.blocks)
            if (b.pool == PoolKind::none) b.pool_size = 2;
        return g;
    };

    ArchGenome child = parent;
    for (;;) {
        int kind = rand_int(0, 3);  // add, remove, perturb, toggle
        if (kind == 0) {
            if (static_cast<int>(child.blocks.size()) >= ranges.depth_limit) continue;
            std::size_t pos = rng() % (child.blocks.size() + 1);
            child.blocks.insert(child.blocks.begin() + static_cast<std::ptrdiff_t>(pos),
                                random_gene());
            return finish(child);
        }
        if (kind == 1) {
            if (child.blocks.size() <= 1) continue;
            child.blocks.erase(child.blocks.begin() +
                               static_cast<std::ptrdiff_t>(rng() % child.blocks.size()));
            return finish(child);
        }
        BlockGene& g = child.blocks[rng() % child.blocks.size()];
        if (kind == 2) {  // perturb one numeric hyperparameter
            switch (rng() % 4) {
                case 0: g.filters = rand_int(ranges.filters_min, ranges.filters_max); break;
                case 1: g.kernel = rand_int(ranges.kernel_min, ranges.kernel_max); break;
                case 2: g.stride = rand_int(ranges.stride_min, ranges.stride_max); break;
                default: g.dropout = rand_dropout();
            }
        } else {  // toggle pool / padding kind
            switch (rng() % 3) {
                case 0: g.padding = g.padding == Padding::same ? Padding::valid : Padding::same; break;
                case 1: g.pool = static_cast<PoolKind>((static_cast<int>(g.pool) + 1 + rng() % 2) % 3); break;
                default: g.pool_size = g.pool_size == ranges.pool_size_min ? ranges.pool_size_max
                                                                           : ranges.pool_size_min;
            }
        }
        return finish(child);
    }
}

// ---- reference architecture ------------------------------------------------

// Fixed 3-block reconstruction used by the footprint acceptance checks. Pool
// placement is chosen to keep the layer-2/3 shapes consistent.
inline ArchGenome paper_architecture() {
    ArchGenome g;
    g.blocks = {
        {129, 7, 5, Padding::valid, PoolKind::none, 2, 0.1},
        {110, 4, 2, Padding::valid, PoolKind::avg, 2, 0.1},
        {38, 7, 2, Padding::valid, PoolKind::max, 2, 0.1},
    };
    g.n_classes = 11;
    return g;
}

// ---- text format -----------------------------------------------------------

inline std::string format_genome(const ArchGenome& genome) {
    std::ostringstream out;
    out << "classes=" << genome.n_classes << "\n";
    for (const auto& b : genome.blocks) {
        out << "conv f=" << b.filters << " k=" << b.kernel << " s=" << b.stride
            << " pad=" << (b.padding == Padding::same ? "same" : "valid") << " pool=";
        if (b.pool == PoolKind::none)
            out << "none";
        else
            out << (b.pool == PoolKind::max ? "max" : "avg") << b.pool_size;
        out << " drop=" << std::fixed << std::setprecision(2) << b.dropout << "\n";
        out.unsetf(std::ios::fixed);
    }
    return out.str();
}

inline ArchGenome parse_genome(const std::string& text) {
    ArchGenome g;
    std::istringstream in(text);
    std::string line;
    bool have_classes = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("classes=", 0) == 0) {
            g.n_classes = std::stoi(line.substr(8));
            have_classes = true;
            continue;
        }
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok != "conv") throw MalformedHeader("genome: unexpected line: " + line);
        BlockGene b;
        while (ls >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) throw MalformedHeader("genome: bad token " + tok);
            std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "f") b.filters = std::stoi(val);
            else if (key == "k") b.kernel = std::stoi(val);
            else if (key == "s") b.stride = std::stoi(val);
            else if (key == "pad") b.padding = val == "same" ? Padding::same : Padding::valid;
            else if (key == "pool") {
                if (val == "none") b.pool = PoolKind::none;
                else {
                    b.pool = val.rfind("max", 0) == 0 ? PoolKind::max : PoolKind::avg;
                    b.pool_size = std::stoi(val.substr(3));
                }
            } else if (key == "drop") b.dropout = std::stod(val);
            else throw MalformedHeader("genome: unknown key " + key);
        }
        g.blocks.push_back(b);
    }
    if (!have_classes || g.blocks.empty()) throw MalformedHeader("genome: incomplete");
    return g;
}

}  // namespace mtc
