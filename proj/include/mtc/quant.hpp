#pragma once

// Post-training INT8 quantization: BN folding, min/max calibration,
// per-tensor symmetric int8 weights with asymmetric uint8 activations, and an
// integer inference path with fixed-point requantization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include "mtc/arch.hpp"
#include "mtc/nn.hpp"
#include "mtc/session.hpp"
#include "mtc/train.hpp"

namespace mtc {

constexpr double kMinScale = 1e-8;

struct QuantParams {
    double scale = 1.0;
    int zero_point = 0;  // 0 for symmetric int8 weights

    std::uint8_t quantize_u8(double x) const {
        long q = std::lround(x / scale) + zero_point;
        return static_cast<std::uint8_t>(std::clamp(q, 0l, 255l));
    }
    double dequantize_u8(std::uint8_t q) const {
        return (static_cast<int>(q) - zero_point) * scale;
    }
};

inline QuantParams weight_qparams(const std::vector<float>& w) {
    double amax = 0.0;
    for (float x : w) amax = std::max(amax, std::abs(static_cast<double>(x)));
    return {std::max(amax / 127.0, kMinScale), 0};
}

inline QuantParams activation_qparams(double lo, double hi) {
    double scale = std::max((hi - lo) / 255.0, kMinScale);
    int zp = static_cast<int>(std::clamp(std::lround(-lo / scale), 0l, 255l));
    return {scale, zp};
}

inline std::int8_t quantize_weight(float w, double scale) {
    return static_cast<std::int8_t>(std::clamp(std::lround(w / scale), -127l, 127l));
}

// ---- BN folding ------------------------------------------------------------

// Absorbs each BatchNorm's frozen running stats into the preceding conv's
// weights and bias, preserving infer-mode outputs.
template <typename T>
Model<T> fold_batchnorm(const Model<T>& model) {
    Model<T> out;
    out.rng_seed = model.rng_seed;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (const auto* bn = std::get_if<BatchNormSpec>(&model.layers[i])) {
            if (out.layers.empty() || !std::holds_alternative<Conv1DSpec>(out.layers.back()))
                throw UnsupportedTopology("fold: batchnorm without preceding conv");
            auto& conv_params = out.params.back();
            const auto& conv = std::get<Conv1DSpec>(out.layers.back());
            const auto& gamma = model.params[i][0];
            const auto& beta = model.params[i][1];
            const auto& mean = model.bn_stats[i].running_mean;
            const auto& var = model.bn_stats[i].running_var;
            for (int oc = 0; oc < conv.out_ch; ++oc) {
                T scale = static_cast<T>(
                    static_cast<double>(gamma.v[oc]) /
                    std::sqrt(static_cast<double>(var.v[oc]) + bn->epsilon));
                std::size_t row = static_cast<std::size_t>(oc) * conv.in_ch * conv.kernel;
                for (int j = 0; j < conv.in_ch * conv.kernel; ++j)
                    conv_params[0].v[row + j] *= scale;
                conv_params[1].v[oc] =
                    (conv_params[1].v[oc] - mean.v[oc]) * scale + beta.v[oc];
            }
            continue;
        }
        out.layers.push_back(model.layers[i]);
        out.params.push_back(model.params[i]);
        out.bn_stats.push_back({});
    }
    return out;
}

// ---- calibration -----------------------------------------------------------

struct CalibrationStats {
    // min/max per activation edge: index 0 = model input, index i+1 = output
    // of layer i of the (folded) float model
    std::vector<std::pair<double, double>> edges;

    void merge(const CalibrationStats& o) {
        if (edges.empty()) {
            edges = o.edges;
            return;
        }
        for (std::size_t i = 0; i < edges.size(); ++i) {
            edges[i].first = std::min(edges[i].first, o.edges[i].first);
            edges[i].second = std::max(edges[i].second, o.edges[i].second);
        }
    }
};

template <typename T>
CalibrationStats calibrate(Model<T>& model, const std::vector<SessionRecord>& records) {
    if (records.empty()) throw EmptyCalibrationSet("calibrate: no records");
    CalibrationStats stats;
    stats.edges.assign(model.layers.size() + 1,
                       {std::numeric_limits<double>::infinity(),
                        -std::numeric_limits<double>::infinity()});
    for (std::size_t r = 0; r < records.size(); ++r) {
        std::vector<std::size_t> idx{r};
        Tensor<T> x = records_to_batch<T>(records, idx);
        auto track = [&](std::size_t edge, const Tensor<T>& t) {
            for (T v : t.v) {
                stats.edges[edge].first = std::min(stats.edges[edge].first, static_cast<double>(v));
                stats.edges[edge].second =
                    std::max(stats.edges[edge].second, static_cast<double>(v));
            }
        };
        track(0, x);
        for (std::size_t i = 0; i < model.layers.size(); ++i) {
            Model<T> probe;  // single-layer model reuses the forward kernels
            probe.layers = {model.layers[i]};
            probe.params = {model.params[i]};
            probe.bn_stats = {model.bn_stats[i]};
            x = probe.forward(x, RunMode::infer);
            if (x.shape.size() == 2) x.shape = {x.shape[0], x.shape[1], 1};
            track(i + 1, x);
        }
    }
    return stats;
}

// ---- quantized model -------------------------------------------------------

// Fixed-point requantization multiplier: real_mult ~= mult * 2^-shift with
// mult in [2^30, 2^31). Rounding is half away from zero.
struct Requant {
    std::int32_t mult = 0;
    int shift = 0;

    static Requant from_double(double real_mult) {
        if (real_mult <= 0) return {0, 0};
        int exp = 0;
        double m = std::frexp(real_mult, &exp);  // m in [0.5, 1)
        auto q = static_cast<std::int64_t>(std::llround(m * (1ll << 31)));
        if (q == (1ll << 31)) {
            q /= 2;
            ++exp;
        }
        Requant r;
        r.mult = static_cast<std::int32_t>(q);
        r.shift = 31 - exp;
        return r;
    }

    std::int32_t apply(std::int64_t acc) const {
        std::int64_t prod = acc * mult;
        std::int64_t half = 1ll << (shift - 1);
        std::int64_t rounded = prod >= 0 ? (prod + half) >> shift : -((-prod + half) >> shift);
        return static_cast<std::int32_t>(rounded);
    }
};

struct QConv {
    Conv1DSpec spec;
    std::vector<std::int8_t> weights;  // [out_ch][in_ch][k]
    std::vector<std::int32_t> bias;    // at scale in_scale * w_scale
    QuantParams w_qp;
    QuantParams in_qp, out_qp;
    Requant requant;
    bool relu = false;
};
struct QPool {
    PoolKind kind = PoolKind::max;
    int size = 2;
};
struct QGap {};
struct QDense {
    int in = 0, out = 0;
    std::vector<std::int8_t> weights;  // [out][in]
    std::vector<std::int32_t> bias;
    QuantParams w_qp;
    QuantParams in_qp, out_qp;
    Requant requant;
};
using QOp = std::variant<QConv, QPool, QGap, QDense>;

struct QuantModel {
    QuantParams input_qp;
    std::vector<QOp> ops;  // terminated by float softmax over the dense edge
    int n_classes = 0;
};

// Builds the integer model from a BN-folded float model and calibration
// stats gathered on that same model. ReLU is fused into the preceding conv
// by requantizing straight to the post-ReLU edge.
template <typename T>
QuantModel quantize_model(const Model<T>& folded, const CalibrationStats& stats) {
    for (const auto& l : folded.layers)
        if (std::holds_alternative<BatchNormSpec>(l))
            throw UnsupportedTopology("quantize: fold batchnorm first");
    if (stats.edges.size() != folded.layers.size() + 1)
        throw ShapeMismatch("quantize: stats do not cover all edges");

    QuantModel qm;
    qm.input_qp = activation_qparams(stats.edges[0].first, stats.edges[0].second);
    QuantParams cur = qm.input_qp;

    for (std::size_t i = 0; i < folded.layers.size(); ++i) {
        const auto& layer = folded.layers[i];
        if (const auto* conv = std::get_if<Conv1DSpec>(&layer)) {
            QConv op;
            op.spec = *conv;
            std::vector<float> wf;
            wf.reserve(folded.params[i][0].v.size());
            for (T w : folded.params[i][0].v) wf.push_back(static_cast<float>(w));
            op.w_qp = weight_qparams(wf);
            op.weights.reserve(wf.size());
            for (float w : wf) op.weights.push_back(quantize_weight(w, op.w_qp.scale));
            double bias_scale = cur.scale * op.w_qp.scale;
            for (T b : folded.params[i][1].v)
                op.bias.push_back(static_cast<std::int32_t>(
                    std::llround(static_cast<double>(b) / bias_scale)));
            // fuse a following ReLU: requantize to the post-ReLU edge
            std::size_t out_edge = i + 1;
            if (i + 1 < folded.layers.size() &&
                std::holds_alternative<ReLUSpec>(folded.layers[i + 1])) {
                op.relu = true;
                out_edge = i + 2;
            }
            op.in_qp = cur;
            op.out_qp = activation_qparams(stats.edges[out_edge].first,
                                           stats.edges[out_edge].second);
            op.requant = Requant::from_double(bias_scale / op.out_qp.scale);
            cur = op.out_qp;
            qm.ops.push_back(std::move(op));
        } else if (const auto* mp = std::get_if<MaxPool1DSpec>(&layer)) {
            qm.ops.push_back(QPool{PoolKind::max, mp->size});
        } else if (const auto* ap = std::get_if<AvgPool1DSpec>(&layer)) {
            qm.ops.push_back(QPool{PoolKind::avg, ap->size});
        } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
            qm.ops.push_back(QGap{});
        } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
            QDense op;
            op.in = dense->in;
            op.out = dense->out;
            std::vector<float> wf;
            wf.reserve(folded.params[i][0].v.size());
            for (T w : folded.params[i][0].v) wf.push_back(static_cast<float>(w));
            op.w_qp = weight_qparams(wf);
            for (float w : wf) op.weights.push_back(quantize_weight(w, op.w_qp.scale));
            double bias_scale = cur.scale * op.w_qp.scale;
            for (T b : folded.params[i][1].v)
                op.bias.push_back(static_cast<std::int32_t>(
                    std::llround(static_cast<double>(b) / bias_scale)));
            op.in_qp = cur;
            op.out_qp = activation_qparams(stats.edges[i + 1].first, stats.edges[i + 1].second);
            op.requant = Requant::from_double(bias_scale / op.out_qp.scale);
            cur = op.out_qp;
            qm.n_classes = dense->out;
            qm.ops.push_back(std::move(op));
        }
        // ReLU (fused), Dropout and Softmax carry no integer op
    }
    return qm;
}

// ---- integer inference -----------------------------------------------------

struct QTensor {
    int channels = 1, length = 0;
    std::vector<std::uint8_t> v;  // row-major C x L
};

inline std::vector<float> quantized_forward(const QuantModel& qm, const SessionRecord& record) {
    QTensor x;
    x.channels = 1;
    x.length = static_cast<int>(kRecordLen);
    x.v.resize(kRecordLen);
    for (std::size_t i = 0; i < kRecordLen; ++i)
        x.v[i] = qm.input_qp.quantize_u8(record.value(i));

    std::vector<std::int32_t> logits_q;
    QuantParams logits_qp;

    for (const auto& op : qm.ops) {
        if (const auto* conv = std::get_if<QConv>(&op)) {
            const auto& s = conv->spec;
            int Lo = conv_out_len(x.length, s.kernel, s.stride, s.padding);
            int pad_left = 0;
            if (s.padding == Padding::same)
                pad_left = std::max((Lo - 1) * s.stride + s.kernel - x.length, 0) / 2;
            QTensor y;
            y.channels = s.out_ch;
            y.length = Lo;
            y.v.resize(static_cast<std::size_t>(s.out_ch) * Lo);
            int zp_in = conv->in_qp.zero_point;
            for (int oc = 0; oc < s.out_ch; ++oc)
                for (int o = 0; o < Lo; ++o) {
                    std::int64_t acc = conv->bias[oc];
                    int start = o * s.stride - pad_left;
                    for (int ic = 0; ic < s.in_ch; ++ic) {
                        const std::uint8_t* xrow =
                            x.v.data() + static_cast<std::size_t>(ic) * x.length;
                        const std::int8_t* wrow =
                            conv->weights.data() +
                            (static_cast<std::size_t>(oc) * s.in_ch + ic) * s.kernel;
                        for (int k = 0; k < s.kernel; ++k) {
                            int pos = start + k;
                            // padding is a real zero, which cancels the zero point
                            int xv = (pos >= 0 && pos < x.length)
                                         ? static_cast<int>(xrow[pos]) - zp_in
                                         : 0;
                            acc += static_cast<std::int64_t>(wrow[k]) * xv;
                        }
                    }
                    std::int32_t q = conv->requant.apply(acc) + conv->out_qp.zero_point;
                    if (conv->relu) q = std::max(q, conv->out_qp.zero_point);
                    y.v[static_cast<std::size_t>(oc) * Lo + o] =
                        static_cast<std::uint8_t>(std::clamp(q, 0, 255));
                }
            x = std::move(y);
        } else if (const auto* pool = std::get_if<QPool>(&op)) {
            int Lo = pool_out_len(x.length, pool->size);
            QTensor y;
            y.channels = x.channels;
            y.length = Lo;
            y.v.resize(static_cast<std::size_t>(x.channels) * Lo);
            for (int c = 0; c < x.channels; ++c)
                for (int o = 0; o < Lo; ++o) {
                    const std::uint8_t* row = x.v.data() + static_cast<std::size_t>(c) * x.length;
                    if (pool->kind == PoolKind::max) {
                        std::uint8_t best = 0;
                        for (int k = 0; k < pool->size; ++k)
                            best = std::max(best, row[o * pool->size + k]);
                        y.v[static_cast<std::size_t>(c) * Lo + o] = best;
                    } else {
                        int sum = 0;
                        for (int k = 0; k < pool->size; ++k) sum += row[o * pool->size + k];
                        y.v[static_cast<std::size_t>(c) * Lo + o] = static_cast<std::uint8_t>(
                            (sum + pool->size / 2) / pool->size);
                    }
                }
            x = std::move(y);
        } else if (std::holds_alternative<QGap>(op)) {
            QTensor y;
            y.channels = x.channels;
            y.length = 1;
            y.v.resize(x.channels);
            for (int c = 0; c < x.channels; ++c) {
                long sum = 0;
                const std::uint8_t* row = x.v.data() + static_cast<std::size_t>(c) * x.length;
                for (int l = 0; l < x.length; ++l) sum += row[l];
                y.v[c] = static_cast<std::uint8_t>((sum + x.length / 2) / x.length);
            }
            x = std::move(y);
        } else if (const auto* dense = std::get_if<QDense>(&op)) {
            logits_q.resize(dense->out);
            int zp_in = dense->in_qp.zero_point;
            for (int o = 0; o < dense->out; ++o) {
                std::int64_t acc = dense->bias[o];
                const std::int8_t* wrow =
                    dense->weights.data() + static_cast<std::size_t>(o) * dense->in;
                for (int j = 0; j < dense->in; ++j)
                    acc += static_cast<std::int64_t>(wrow[j]) *
                           (static_cast<int>(x.v[j]) - zp_in);
                logits_q[o] = dense->requant.apply(acc) + dense->out_qp.zero_point;
            }
            logits_qp = dense->out_qp;
        }
    }

    // final softmax on dequantized logits in float
    std::vector<float> probs(logits_q.size());
    float zmax = -std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i < logits_q.size(); ++i) {
        probs[i] = static_cast<float>((logits_q[i] - logits_qp.zero_point) * logits_qp.scale);
        zmax = std::max(zmax, probs[i]);
    }
    float sum = 0.0f;
    for (auto& p : probs) {
        p = std::exp(p - zmax);
        sum += p;
    }
    for (auto& p : probs) p /= sum;
    return probs;
}

inline std::vector<int> quant_predict(const QuantModel& qm,
                                      const std::vector<SessionRecord>& data) {
    std::vector<int> preds;
    preds.reserve(data.size());
    for (const auto& r : data) {
        auto probs = quantized_forward(qm, r);
        preds.push_back(static_cast<int>(
            std::max_element(probs.begin(), probs.end()) - probs.begin()));
    }
    return preds;
}

// ---- float vs quantized comparison -----------------------------------------

struct DeltaReport {
    Metrics float_metrics, int8_metrics;
    double delta_acc = 0.0, delta_f1 = 0.0;
    double argmax_agreement = 0.0;
    std::vector<std::pair<double, double>> per_class_acc;  // (float, int8) recall per class

    std::string to_csv(const std::string& task = "synthetic") const {
        std::ostringstream out;
        out << "task,float_acc,float_f1,int8_acc,int8_f1,delta_acc,delta_f1\n";
        out << task << ',' << float_metrics.accuracy << ',' << float_metrics.macro_f1 << ','
            << int8_metrics.accuracy << ',' << int8_metrics.macro_f1 << ',' << delta_acc << ','
            << delta_f1 << '\n';
        return out.str();
    }
};

template <typename T>
DeltaReport compare(Model<T>& model, const QuantModel& qm,
                    const std::vector<SessionRecord>& data) {
    if (data.empty()) throw EmptyDataset("compare: empty dataset");
    std::vector<int> truth;
    truth.reserve(data.size());
    for (const auto& r : data) truth.push_back(r.label);
    auto float_preds = predict(model, data);
    auto int8_preds = quant_predict(qm, data);
    DeltaReport rep;
    rep.float_metrics = metrics_from_predictions(truth, float_preds, qm.n_classes);
    rep.int8_metrics = metrics_from_predictions(truth, int8_preds, qm.n_classes);
    rep.delta_acc = rep.int8_metrics.accuracy - rep.float_metrics.accuracy;
    rep.delta_f1 = rep.int8_metrics.macro_f1 - rep.float_metrics.macro_f1;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (float_preds[i] == int8_preds[i]) ++agree;
    rep.argmax_agreement = static_cast<double>(agree) / data.size();
    for (int c = 0; c < qm.n_classes; ++c) {
        auto recall = [&](const Metrics& m) {
            std::size_t total = 0;
            for (int o = 0; o < qm.n_classes; ++o) total += m.confusion[c][o];
            return total ? static_cast<double>(m.confusion[c][c]) / total : 0.0;
        };
        rep.per_class_acc.emplace_back(recall(rep.float_metrics), recall(rep.int8_metrics));
    }
    return rep;
}

}  // namespace mtc
