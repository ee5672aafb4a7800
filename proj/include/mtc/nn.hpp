#pragma once

// Minimal 1D-CNN engine: layer specs, shape algebra, forward/backward with
// exact gradients, and categorical cross-entropy. Scalar type is templated so
// the finite-difference oracle can run the same graph in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "mtc/common.hpp"
#include "mtc/tensor.hpp"

namespace mtc {

enum class Padding : std::uint8_t { same, valid };

struct Conv1DSpec {
    int in_ch, out_ch, kernel, stride;
    Padding padding = Padding::valid;
};
struct BatchNormSpec {
    int channels;
    double epsilon = 1e-3;
    double momentum = 0.99;
};
struct ReLUSpec {};
struct MaxPool1DSpec { int size; };
struct AvgPool1DSpec { int size; };
struct DropoutSpec { double rate; };
struct GlobalAvgPoolSpec {};
struct DenseSpec { int in, out; };
struct SoftmaxSpec {};

using LayerSpec = std::variant<Conv1DSpec, BatchNormSpec, ReLUSpec, MaxPool1DSpec, AvgPool1DSpec,
                               DropoutSpec, GlobalAvgPoolSpec, DenseSpec, SoftmaxSpec>;

// ---- shape algebra ---------------------------------------------------------

inline int conv_out_len(int len, int kernel, int stride, Padding padding) {
    if (padding == Padding::valid) {
        if (len < kernel) throw CollapsedWidth("conv: input shorter than kernel");
        return (len - kernel) / stride + 1;
    }
    return (len + stride - 1) / stride;  // ceil(len / stride)
}

inline int pool_out_len(int len, int size) {
    if (len < size) throw CollapsedWidth("pool: input shorter than pool size");
    return len / size;  // stride == size, valid boundary
}

struct Shape1D {
    int channels, length;
    std::size_t elements() const { return static_cast<std::size_t>(channels) * length; }
};

// Output shape of one layer. Throws CollapsedWidth when the spatial length
// would reach zero.
inline Shape1D layer_out_shape(const LayerSpec& spec, Shape1D in) {
    return std::visit(
        [&](const auto& s) -> Shape1D {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Conv1DSpec>) {
                if (in.channels != s.in_ch) throw ShapeMismatch("conv: channel mismatch");
                return {s.out_ch, conv_out_len(in.length, s.kernel, s.stride, s.padding)};
            } else if constexpr (std::is_same_v<S, MaxPool1DSpec>) {
                return {in.channels, pool_out_len(in.length, s.size)};
            } else if constexpr (std::is_same_v<S, AvgPool1DSpec>) {
                return {in.channels, pool_out_len(in.length, s.size)};
            } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) {
                return {in.channels, 1};
            } else if constexpr (std::is_same_v<S, DenseSpec>) {
                if (in.channels * in.length != s.in) throw ShapeMismatch("dense: input mismatch");
                return {s.out, 1};
            } else {
                return in;
            }
        },
        spec);
}

// ---- parameters ------------------------------------------------------------

// Trainable tensors of one layer, in a fixed order:
//   Conv1D: weights [out_ch][in_ch][k], bias [out_ch]
//   BatchNorm: gamma [ch], beta [ch]
//   Dense: weights [out][in], bias [out]
template <typename T>
using ParamSet = std::vector<Tensor<T>>;

template <typename T>
struct BnStats {
    Tensor<T> running_mean, running_var;
};

enum class RunMode : std::uint8_t { train, infer };

template <typename T>
struct ForwardCache {
    std::vector<Tensor<T>> inputs;   // per-layer input activations
    std::vector<Tensor<T>> outputs;  // per-layer outputs (last one = probs)
    // per-layer auxiliaries (empty when unused)
    std::vector<Tensor<T>> bn_xhat;
    std::vector<Tensor<T>> bn_istd;      // per-channel 1/sqrt(var+eps)
    std::vector<std::vector<int>> pool_argmax;
    std::vector<Tensor<T>> dropout_mask;
    bool valid = false;
};

template <typename T>
class Model {
  public:
    std::vector<LayerSpec> layers;
    std::vector<ParamSet<T>> params;      // indexed by layer
    std::vector<BnStats<T>> bn_stats;     // indexed by layer (empty for non-BN)
    std::uint64_t rng_seed = 0;

    void reseed(std::uint64_t seed) {
        rng_seed = seed;
        rng_.seed(static_cast<std::uint32_t>(seed));
    }

    static Model build(std::vector<LayerSpec> specs, std::uint64_t seed) {
        Model m;
        m.layers = std::move(specs);
        m.reseed(seed);
        m.params.resize(m.layers.size());
        m.bn_stats.resize(m.layers.size());
        for (std::size_t i = 0; i < m.layers.size(); ++i) m.init_layer(i);
        return m;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& set : params)
            for (const auto& t : set) n += t.count();
        return n;
    }

    // He-uniform init for conv/dense; gamma=1, beta=0; running stats (0, 1).
    void init_layer(std::size_t i) {
        std::visit(
            [&](const auto& s) {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, Conv1DSpec>) {
                    Tensor<T> w({s.out_ch, s.in_ch, s.kernel});
                    he_uniform(w, s.in_ch * s.kernel);
                    params[i] = {std::move(w), Tensor<T>({s.out_ch})};
                } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
                    Tensor<T> gamma({s.channels});
                    std::fill(gamma.v.begin(), gamma.v.end(), T{1});
                    params[i] = {std::move(gamma), Tensor<T>({s.channels})};
                    bn_stats[i].running_mean = Tensor<T>({s.channels});
                    bn_stats[i].running_var = Tensor<T>({s.channels});
                    std::fill(bn_stats[i].running_var.v.begin(), bn_stats[i].running_var.v.end(),
                              T{1});
                } else if constexpr (std::is_same_v<S, DenseSpec>) {
                    Tensor<T> w({s.out, s.in});
                    he_uniform(w, s.in);
                    params[i] = {std::move(w), Tensor<T>({s.out})};
                }
            },
            layers[i]);
    }

    // Forward pass over a B x C x L batch. Returns B x classes probabilities.
    // In train mode, activations and masks are cached for backward().
    Tensor<T> forward(const Tensor<T>& batch, RunMode mode, ForwardCache<T>* cache = nullptr) {
        if (batch.shape.size() != 3) throw ShapeMismatch("forward: batch must be rank 3");
        if (cache) {
            *cache = ForwardCache<T>{};
            cache->inputs.resize(layers.size());
            cache->outputs.resize(layers.size());
            cache->bn_xhat.resize(layers.size());
            cache->bn_istd.resize(layers.size());
            cache->pool_argmax.resize(layers.size());
            cache->dropout_mask.resize(layers.size());
        }
        Tensor<T> x = batch;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (cache) cache->inputs[i] = x;
            x = apply_layer(i, x, mode, cache);
            if (cache) cache->outputs[i] = x;
        }
        if (cache) cache->valid = true;
        return x;
    }

    // Gradients of the mean cross-entropy loss over the cached forward pass.
    // Layout mirrors `params`. Terminal softmax + cross-entropy are fused.
    std::vector<ParamSet<T>> backward(const ForwardCache<T>& cache,
                                      const std::vector<int>& labels) {
        if (!cache.valid || cache.outputs.empty())
            throw StaleCache("backward: no cached forward pass");
        if (!std::holds_alternative<SoftmaxSpec>(layers.back()))
            throw ShapeMismatch("backward: model must end with softmax");
        const Tensor<T>& probs = cache.outputs.back();
        int batch = probs.shape[0];
        int classes = probs.shape[1];
        if (static_cast<int>(labels.size()) != batch)
            throw ShapeMismatch("backward: label count != batch");

        std::vector<ParamSet<T>> grads(layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            grads[i].reserve(params[i].size());
            for (const auto& t : params[i]) grads[i].push_back(Tensor<T>(t.shape));
        }

        // dL/dlogits for softmax + mean cross-entropy
        Tensor<T> delta = probs;
        for (int b = 0; b < batch; ++b) delta.v[static_cast<std::size_t>(b) * classes + labels[b]] -= T{1};
        for (auto& g : delta.v) g /= static_cast<T>(batch);
        delta.shape = {batch, classes, 1};

        for (std::size_t i = layers.size() - 1; i-- > 0;) {  // skip terminal softmax
            delta = backprop_layer(i, cache, delta, grads[i]);
        }
        return grads;
    }

    std::mt19937& rng() { return rng_; }

  private:
    std::mt19937 rng_;

    void he_uniform(Tensor<T>& w, int fan_in) {
        T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
        std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                                    static_cast<double>(bound));
        for (auto& x : w.v) x = static_cast<T>(dist(rng_));
    }

    Tensor<T> apply_layer(std::size_t i, const Tensor<T>& x, RunMode mode,
                          ForwardCache<T>* cache) {
        const int B = x.shape[0], C = x.shape[1], L = x.shape[2];
        return std::visit(
            [&](const auto& s) -> Tensor<T> {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, Conv1DSpec>) {
                    return conv_forward(s, params[i][0], params[i][1], x);
                } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
                    return bn_forward(i, s, x, mode, cache);
                } else if constexpr (std::is_same_v<S, ReLUSpec>) {
                    Tensor<T> y = x;
                    for (auto& v : y.v) v = std::max(v, T{0});
                    return y;
                } else if constexpr (std::is_same_v<S, MaxPool1DSpec>) {
                    int Lo = pool_out_len(L, s.size);
                    Tensor<T> y({B, C, Lo});
                    std::vector<int> argmax(y.count());
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c)
                            for (int o = 0; o < Lo; ++o) {
                                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                                int best = o * s.size;
                                for (int k = 1; k < s.size; ++k)
                                    if (x.v[base + o * s.size + k] > x.v[base + best]) best = o * s.size + k;
                                std::size_t oi = (static_cast<std::size_t>(b) * C + c) * Lo + o;
                                y.v[oi] = x.v[base + best];
                                argmax[oi] = best;
                            }
                    if (cache) cache->pool_argmax[i] = std::move(argmax);
                    return y;
                } else if constexpr (std::is_same_v<S, AvgPool1DSpec>) {
                    int Lo = pool_out_len(L, s.size);
                    Tensor<T> y({B, C, Lo});
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c)
                            for (int o = 0; o < Lo; ++o) {
                                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                                T sum{};
                                for (int k = 0; k < s.size; ++k) sum += x.v[base + o * s.size + k];
                                y.v[(static_cast<std::size_t>(b) * C + c) * Lo + o] =
                                    sum / static_cast<T>(s.size);
                            }
                    return y;
                } else if constexpr (std::is_same_v<S, DropoutSpec>) {
                    if (mode == RunMode::infer || s.rate <= 0.0) return x;
                    Tensor<T> mask(x.shape);
                    std::bernoulli_distribution keep(1.0 - s.rate);
                    T scale = static_cast<T>(1.0 / (1.0 - s.rate));
                    for (auto& m : mask.v) m = keep(rng_) ? scale : T{0};
                    Tensor<T> y = x;
                    for (std::size_t j = 0; j < y.v.size(); ++j) y.v[j] *= mask.v[j];
                    if (cache) cache->dropout_mask[i] = std::move(mask);
                    return y;
                } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) {
                    Tensor<T> y({B, C, 1});
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c) {
                            std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                            T sum{};
                            for (int l = 0; l < L; ++l) sum += x.v[base + l];
                            y.v[static_cast<std::size_t>(b) * C + c] = sum / static_cast<T>(L);
                        }
                    return y;
                } else if constexpr (std::is_same_v<S, DenseSpec>) {
                    if (C * L != s.in) throw ShapeMismatch("dense: input size mismatch");
                    const auto& w = params[i][0];
                    const auto& bias = params[i][1];
                    Tensor<T> y({B, s.out, 1});
                    for (int b = 0; b < B; ++b) {
                        const T* xin = x.v.data() + static_cast<std::size_t>(b) * s.in;
                        T* yout = y.v.data() + static_cast<std::size_t>(b) * s.out;
                        for (int o = 0; o < s.out; ++o) {
                            T acc = bias.v[o];
                            const T* wrow = w.v.data() + static_cast<std::size_t>(o) * s.in;
                            for (int j = 0; j < s.in; ++j) acc += wrow[j] * xin[j];
                            yout[o] = acc;
                        }
                    }
                    return y;
                } else {  // Softmax over channel dim; emits rank-2 B x classes
                    Tensor<T> y({B, C});
                    for (int b = 0; b < B; ++b) {
                        const T* z = x.v.data() + static_cast<std::size_t>(b) * C;
                        T zmax = *std::max_element(z, z + C);
                        T sum{};
                        for (int c = 0; c < C; ++c) {
                            T e = std::exp(z[c] - zmax);
                            y.v[static_cast<std::size_t>(b) * C + c] = e;
                            sum += e;
                        }
                        for (int c = 0; c < C; ++c) y.v[static_cast<std::size_t>(b) * C + c] /= sum;
                    }
                    return y;
                }
            },
            layers[i]);
    }

    Tensor<T> conv_forward(const Conv1DSpec& s, const Tensor<T>& w, const Tensor<T>& bias,
                           const Tensor<T>& x) {
        const int B = x.shape[0], C = x.shape[1], L = x.shape[2];
        if (C != s.in_ch) throw ShapeMismatch("conv: channel mismatch");
        int Lo = conv_out_len(L, s.kernel, s.stride, s.padding);
        int pad_left = 0;
        if (s.padding == Padding::same) {
            int pad_total = std::max((Lo - 1) * s.stride + s.kernel - L, 0);
            pad_left = pad_total / 2;
        }
        Tensor<T> y({B, s.out_ch, Lo});
        for (int b = 0; b < B; ++b)
            for (int oc = 0; oc < s.out_ch; ++oc) {
                T* yrow = y.v.data() + (static_cast<std::size_t>(b) * s.out_ch + oc) * Lo;
                for (int o = 0; o < Lo; ++o) yrow[o] = bias.v[oc];
                for (int ic = 0; ic < C; ++ic) {
                    const T* xrow = x.v.data() + (static_cast<std::size_t>(b) * C + ic) * L;
                    const T* wrow =
                        w.v.data() + (static_cast<std::size_t>(oc) * C + ic) * s.kernel;
                    for (int o = 0; o < Lo; ++o) {
                        int start = o * s.stride - pad_left;
                        T acc{};
                        for (int k = 0; k < s.kernel; ++k) {
                            int pos = start + k;
                            if (pos >= 0 && pos < L) acc += wrow[k] * xrow[pos];
                        }
                        yrow[o] += acc;
                    }
                }
            }
        return y;
    }

    Tensor<T> bn_forward(std::size_t i, const BatchNormSpec& s, const Tensor<T>& x, RunMode mode,
                         ForwardCache<T>* cache) {
        const int B = x.shape[0], C = x.shape[1], L = x.shape[2];
        if (C != s.channels) throw ShapeMismatch("batchnorm: channel mismatch");
        const auto& gamma = params[i][0];
        const auto& beta = params[i][1];
        Tensor<T> y(x.shape);
        if (mode == RunMode::infer) {
            for (int c = 0; c < C; ++c) {
                T istd = static_cast<T>(
                    1.0 / std::sqrt(static_cast<double>(bn_stats[i].running_var.v[c]) + s.epsilon));
                T mean = bn_stats[i].running_mean.v[c];
                for (int b = 0; b < B; ++b) {
                    std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                    for (int l = 0; l < L; ++l)
                        y.v[base + l] = gamma.v[c] * (x.v[base + l] - mean) * istd + beta.v[c];
                }
            }
            return y;
        }
        // train mode: batch statistics per channel over B*L
        Tensor<T> xhat(x.shape);
        Tensor<T> istd_t({C});
        const T n = static_cast<T>(B * L);
        for (int c = 0; c < C; ++c) {
            T mean{}, var{};
            for (int b = 0; b < B; ++b) {
                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) mean += x.v[base + l];
            }
            mean /= n;
            for (int b = 0; b < B; ++b) {
                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) {
                    T d = x.v[base + l] - mean;
                    var += d * d;
                }
            }
            var /= n;  // biased
            T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + s.epsilon));
            istd_t.v[c] = istd;
            for (int b = 0; b < B; ++b) {
                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) {
                    xhat.v[base + l] = (x.v[base + l] - mean) * istd;
                    y.v[base + l] = gamma.v[c] * xhat.v[base + l] + beta.v[c];
                }
            }
            auto m = static_cast<T>(s.momentum);
            bn_stats[i].running_mean.v[c] = m * bn_stats[i].running_mean.v[c] + (T{1} - m) * mean;
            bn_stats[i].running_var.v[c] = m * bn_stats[i].running_var.v[c] + (T{1} - m) * var;
        }
        if (cache) {
            cache->bn_xhat[i] = std::move(xhat);
            cache->bn_istd[i] = std::move(istd_t);
        }
        return y;
    }

    // Propagates delta (gradient w.r.t. this layer's output) to its input and
    // accumulates parameter gradients.
    Tensor<T> backprop_layer(std::size_t i, const ForwardCache<T>& cache, const Tensor<T>& delta,
                             ParamSet<T>& grad) {
        const Tensor<T>& x = cache.inputs[i];
        const int B = x.shape[0], C = x.shape[1], L = x.shape[2];
        return std::visit(
            [&](const auto& s) -> Tensor<T> {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, Conv1DSpec>) {
                    return conv_backward(s, params[i][0], x, delta, grad);
                } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
                    return bn_backward(i, s, cache, delta, grad);
                } else if constexpr (std::is_same_v<S, ReLUSpec>) {
                    Tensor<T> dx = delta;
                    for (std::size_t j = 0; j < dx.v.size(); ++j)
                        if (x.v[j] <= T{0}) dx.v[j] = T{0};
                    return dx;
                } else if constexpr (std::is_same_v<S, MaxPool1DSpec>) {
                    Tensor<T> dx(x.shape);
                    int Lo = delta.shape[2];
                    const auto& argmax = cache.pool_argmax[i];
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c)
                            for (int o = 0; o < Lo; ++o) {
                                std::size_t oi = (static_cast<std::size_t>(b) * C + c) * Lo + o;
                                dx.v[(static_cast<std::size_t>(b) * C + c) * L + argmax[oi]] +=
                                    delta.v[oi];
                            }
                    return dx;
                } else if constexpr (std::is_same_v<S, AvgPool1DSpec>) {
                    Tensor<T> dx(x.shape);
                    int Lo = delta.shape[2];
                    T inv = T{1} / static_cast<T>(s.size);
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c)
                            for (int o = 0; o < Lo; ++o) {
                                T g = delta.v[(static_cast<std::size_t>(b) * C + c) * Lo + o] * inv;
                                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                                for (int k = 0; k < s.size; ++k) dx.v[base + o * s.size + k] += g;
                            }
                    return dx;
                } else if constexpr (std::is_same_v<S, DropoutSpec>) {
                    if (cache.dropout_mask[i].v.empty()) return delta;  // rate 0 / infer identity
                    Tensor<T> dx = delta;
                    for (std::size_t j = 0; j < dx.v.size(); ++j)
                        dx.v[j] *= cache.dropout_mask[i].v[j];
                    return dx;
                } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) {
                    Tensor<T> dx(x.shape);
                    T inv = T{1} / static_cast<T>(L);
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c) {
                            T g = delta.v[static_cast<std::size_t>(b) * C + c] * inv;
                            std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                            for (int l = 0; l < L; ++l) dx.v[base + l] = g;
                        }
                    return dx;
                } else if constexpr (std::is_same_v<S, DenseSpec>) {
                    const auto& w = params[i][0];
                    Tensor<T> dx(x.shape);
                    for (int b = 0; b < B; ++b) {
                        const T* xin = x.v.data() + static_cast<std::size_t>(b) * s.in;
                        const T* d = delta.v.data() + static_cast<std::size_t>(b) * s.out;
                        T* dxin = dx.v.data() + static_cast<std::size_t>(b) * s.in;
                        for (int o = 0; o < s.out; ++o) {
                            grad[1].v[o] += d[o];
                            T* gw = grad[0].v.data() + static_cast<std::size_t>(o) * s.in;
                            const T* wrow = w.v.data() + static_cast<std::size_t>(o) * s.in;
                            for (int j = 0; j < s.in; ++j) {
                                gw[j] += d[o] * xin[j];
                                dxin[j] += d[o] * wrow[j];
                            }
                        }
                    }
                    return dx;
                } else {
                    return delta;  // softmax handled jointly with the loss
                }
            },
            layers[i]);
    }

    Tensor<T> conv_backward(const Conv1DSpec& s, const Tensor<T>& w, const Tensor<T>& x,
                            const Tensor<T>& delta, ParamSet<T>& grad) {
        const int B = x.shape[0], C = x.shape[1], L = x.shape[2];
        int Lo = delta.shape[2];
        int pad_left = 0;
        if (s.padding == Padding::same) {
            int pad_total = std::max((Lo - 1) * s.stride + s.kernel - L, 0);
            pad_left = pad_total / 2;
        }
        Tensor<T> dx(x.shape);
        for (int b = 0; b < B; ++b)
            for (int oc = 0; oc < s.out_ch; ++oc) {
                const T* drow = delta.v.data() + (static_cast<std::size_t>(b) * s.out_ch + oc) * Lo;
                for (int o = 0; o < Lo; ++o) grad[1].v[oc] += drow[o];
                for (int ic = 0; ic < C; ++ic) {
                    const T* xrow = x.v.data() + (static_cast<std::size_t>(b) * C + ic) * L;
                    T* dxrow = dx.v.data() + (static_cast<std::size_t>(b) * C + ic) * L;
                    const T* wrow = w.v.data() + (static_cast<std::size_t>(oc) * C + ic) * s.kernel;
                    T* gwrow = grad[0].v.data() + (static_cast<std::size_t>(oc) * C + ic) * s.kernel;
                    for (int o = 0; o < Lo; ++o) {
                        int start = o * s.stride - pad_left;
                        T d = drow[o];
                        for (int k = 0; k < s.kernel; ++k) {
                            int pos = start + k;
                            if (pos >= 0 && pos < L) {
                                gwrow[k] += d * xrow[pos];
                                dxrow[pos] += d * wrow[k];
                            }
                        }
                    }
                }
            }
        return dx;
    }

    Tensor<T> bn_backward(std::size_t i, const BatchNormSpec& s, const ForwardCache<T>& cache,
                          const Tensor<T>& delta, ParamSet<T>& grad) {
        const Tensor<T>& xhat = cache.bn_xhat[i];
        const Tensor<T>& istd = cache.bn_istd[i];
        if (xhat.v.empty()) throw StaleCache("batchnorm backward without train-mode cache");
        const int B = delta.shape[0], C = delta.shape[1], L = delta.shape[2];
        const auto& gamma = params[i][0];
        Tensor<T> dx(delta.shape);
        const T n = static_cast<T>(B * L);
        for (int c = 0; c < C; ++c) {
            T sum_dy{}, sum_dy_xhat{};
            for (int b = 0; b < B; ++b) {
                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l) {
                    sum_dy += delta.v[base + l];
                    sum_dy_xhat += delta.v[base + l] * xhat.v[base + l];
                }
            }
            grad[0].v[c] += sum_dy_xhat;  // dgamma
            grad[1].v[c] += sum_dy;       // dbeta
            T scale = gamma.v[c] * istd.v[c] / n;
            for (int b = 0; b < B; ++b) {
                std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                for (int l = 0; l < L; ++l)
                    dx.v[base + l] = scale * (n * delta.v[base + l] - sum_dy -
                                              xhat.v[base + l] * sum_dy_xhat);
            }
        }
        return dx;
    }
};

// Mean of -log(prob[label]) with a probability floor before the log.
template <typename T>
T cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels) {
    if (probs.shape.size() != 2) throw ShapeMismatch("cross_entropy: probs must be rank 2");
    int batch = probs.shape[0], classes = probs.shape[1];
    if (static_cast<int>(labels.size()) != batch)
        throw ShapeMismatch("cross_entropy: label count != batch");
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
        if (labels[b] < 0 || labels[b] >= classes)
            throw ShapeMismatch("cross_entropy: label out of range");
        double p = static_cast<double>(probs.v[static_cast<std::size_t>(b) * classes + labels[b]]);
        loss -= std::log(std::max(p, 1e-12));
    }
    return static_cast<T>(loss / batch);
}

}  // namespace mtc
