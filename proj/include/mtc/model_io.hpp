#pragma once

// Portable fixed-layout model files (magic "MTCM"), little-endian with a
// trailing CRC-32, for both float and quantized models, plus cost report
// rendering.

#include <cstring>
#include <iomanip>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mtc/arch.hpp"
#include "mtc/common.hpp"
#include "mtc/nn.hpp"
#include "mtc/quant.hpp"

namespace mtc {

namespace io_detail {

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32le(out, bits);
}
inline void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_u64le(out, bits);
}

struct Reader {
    std::span<const std::uint8_t> data;
    std::size_t off = 0;

    void need(std::size_t n) const {
        if (data.size() < off + n) throw TruncatedRecord("model file: truncated");
    }
    std::uint8_t u8() { need(1); return data[off++]; }
    std::uint16_t u16() { need(2); auto v = read_u16le(data.data() + off); off += 2; return v; }
    std::uint32_t u32() { need(4); auto v = read_u32le(data.data() + off); off += 4; return v; }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = read_u64le(data.data() + off);
        off += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

enum : std::uint8_t {
    kTagConv = 1, kTagBn = 2, kTagRelu = 3, kTagMaxPool = 4, kTagAvgPool = 5,
    kTagDropout = 6, kTagGap = 7, kTagDense = 8, kTagSoftmax = 9,
};
enum : std::uint8_t { kTagQConv = 1, kTagQPool = 2, kTagQGap = 3, kTagQDense = 4 };

inline void put_qparams(std::vector<std::uint8_t>& out, const QuantParams& qp) {
    put_f64(out, qp.scale);
    append_u32le(out, static_cast<std::uint32_t>(qp.zero_point));
}
inline QuantParams get_qparams(Reader& r) {
    QuantParams qp;
    qp.scale = r.f64();
    qp.zero_point = r.i32();
    return qp;
}

}  // namespace io_detail

constexpr std::uint16_t kModelFileVersion = 1;

inline std::vector<std::uint8_t> serialize_model(const Model<float>& model) {
    using namespace io_detail;
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'C', 'M'});
    append_u16le(out, kModelFileVersion);
    out.push_back(0);  // precision f32
    append_u32le(out, static_cast<std::uint32_t>(model.layers.size()));
    for (const auto& layer : model.layers) {
        std::visit(
            [&](const auto& s) {
                using S = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<S, Conv1DSpec>) {
                    out.push_back(kTagConv);
                    append_u32le(out, static_cast<std::uint32_t>(s.in_ch));
                    append_u32le(out, static_cast<std::uint32_t>(s.out_ch));
                    append_u32le(out, static_cast<std::uint32_t>(s.kernel));
                    append_u32le(out, static_cast<std::uint32_t>(s.stride));
                    out.push_back(s.padding == Padding::same ? 1 : 0);
                } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
                    out.push_back(kTagBn);
                    append_u32le(out, static_cast<std::uint32_t>(s.channels));
                    put_f64(out, s.epsilon);
                    put_f64(out, s.momentum);
                } else if constexpr (std::is_same_v<S, ReLUSpec>) {
                    out.push_back(kTagRelu);
                } else if constexpr (std::is_same_v<S, MaxPool1DSpec>) {
                    out.push_back(kTagMaxPool);
                    append_u32le(out, static_cast<std::uint32_t>(s.size));
                } else if constexpr (std::is_same_v<S, AvgPool1DSpec>) {
                    out.push_back(kTagAvgPool);
                    append_u32le(out, static_cast<std::uint32_t>(s.size));
                } else if constexpr (std::is_same_v<S, DropoutSpec>) {
                    out.push_back(kTagDropout);
                    put_f64(out, s.rate);
                } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) {
                    out.push_back(kTagGap);
                } else if constexpr (std::is_same_v<S, DenseSpec>) {
                    out.push_back(kTagDense);
                    append_u32le(out, static_cast<std::uint32_t>(s.in));
                    append_u32le(out, static_cast<std::uint32_t>(s.out));
                } else {
                    out.push_back(kTagSoftmax);
                }
            },
            layer);
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        for (const auto& t : model.params[i])
            for (float v : t.v) put_f32(out, v);
        if (std::holds_alternative<BatchNormSpec>(model.layers[i])) {
            for (float v : model.bn_stats[i].running_mean.v) put_f32(out, v);
            for (float v : model.bn_stats[i].running_var.v) put_f32(out, v);
        }
    }
    append_u32le(out, crc32(out));
    return out;
}

inline std::vector<std::uint8_t> serialize_model(const QuantModel& qm) {
    using namespace io_detail;
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'C', 'M'});
    append_u16le(out, kModelFileVersion);
    out.push_back(1);  // precision int8
    put_qparams(out, qm.input_qp);
    append_u32le(out, static_cast<std::uint32_t>(qm.n_classes));
    append_u32le(out, static_cast<std::uint32_t>(qm.ops.size()));
    for (const auto& op : qm.ops) {
        if (const auto* conv = std::get_if<QConv>(&op)) {
            out.push_back(kTagQConv);
            append_u32le(out, static_cast<std::uint32_t>(conv->spec.in_ch));
            append_u32le(out, static_cast<std::uint32_t>(conv->spec.out_ch));
            append_u32le(out, static_cast<std::uint32_t>(conv->spec.kernel));
            append_u32le(out, static_cast<std::uint32_t>(conv->spec.stride));
            out.push_back(conv->spec.padding == Padding::same ? 1 : 0);
            out.push_back(conv->relu ? 1 : 0);
            put_qparams(out, conv->w_qp);
            put_qparams(out, conv->in_qp);
            put_qparams(out, conv->out_qp);
            append_u32le(out, static_cast<std::uint32_t>(conv->requant.mult));
            append_u32le(out, static_cast<std::uint32_t>(conv->requant.shift));
            for (std::int8_t w : conv->weights) out.push_back(static_cast<std::uint8_t>(w));
            for (std::int32_t b : conv->bias) append_u32le(out, static_cast<std::uint32_t>(b));
        } else if (const auto* pool = std::get_if<QPool>(&op)) {
            out.push_back(kTagQPool);
            out.push_back(pool->kind == PoolKind::max ? 0 : 1);
            append_u32le(out, static_cast<std::uint32_t>(pool->size));
        } else if (std::holds_alternative<QGap>(op)) {
            out.push_back(kTagQGap);
        } else if (const auto* dense = std::get_if<QDense>(&op)) {
            out.push_back(kTagQDense);
            append_u32le(out, static_cast<std::uint32_t>(dense->in));
            append_u32le(out, static_cast<std::uint32_t>(dense->out));
            put_qparams(out, dense->w_qp);
            put_qparams(out, dense->in_qp);
            put_qparams(out, dense->out_qp);
            append_u32le(out, static_cast<std::uint32_t>(dense->requant.mult));
            append_u32le(out, static_cast<std::uint32_t>(dense->requant.shift));
            for (std::int8_t w : dense->weights) out.push_back(static_cast<std::uint8_t>(w));
            for (std::int32_t b : dense->bias) append_u32le(out, static_cast<std::uint32_t>(b));
        }
    }
    append_u32le(out, crc32(out));
    return out;
}

using LoadedModel = std::variant<Model<float>, QuantModel>;

inline LoadedModel deserialize_model(std::span<const std::uint8_t> data) {
    using namespace io_detail;
    if (data.size() < 12 || std::memcmp(data.data(), "MTCM", 4) != 0)
        throw BadMagic("model file: bad magic");
    if (crc32(data.subspan(0, data.size() - 4)) != read_u32le(data.data() + data.size() - 4))
        throw ChecksumMismatch("model file: checksum mismatch");
    Reader r{data.subspan(0, data.size() - 4), 4};
    std::uint16_t version = r.u16();
    if (version != kModelFileVersion)
        throw VersionUnsupported("model file: version " + std::to_string(version));
    std::uint8_t precision = r.u8();
    if (precision == 0) {
        Model<float> m;
        std::uint32_t n_layers = r.u32();
        for (std::uint32_t i = 0; i < n_layers; ++i) {
            switch (r.u8()) {
                case kTagConv: {
                    Conv1DSpec s;
                    s.in_ch = static_cast<int>(r.u32());
                    s.out_ch = static_cast<int>(r.u32());
                    s.kernel = static_cast<int>(r.u32());
                    s.stride = static_cast<int>(r.u32());
                    s.padding = r.u8() ? Padding::same : Padding::valid;
                    m.layers.push_back(s);
                    break;
                }
                case kTagBn: {
                    BatchNormSpec s;
                    s.channels = static_cast<int>(r.u32());
                    s.epsilon = r.f64();
                    s.momentum = r.f64();
                    m.layers.push_back(s);
                    break;
                }
                case kTagRelu: m.layers.push_back(ReLUSpec{}); break;
                case kTagMaxPool: m.layers.push_back(MaxPool1DSpec{static_cast<int>(r.u32())}); break;
                case kTagAvgPool: m.layers.push_back(AvgPool1DSpec{static_cast<int>(r.u32())}); break;
                case kTagDropout: m.layers.push_back(DropoutSpec{r.f64()}); break;
                case kTagGap: m.layers.push_back(GlobalAvgPoolSpec{}); break;
                case kTagDense: {
                    DenseSpec s;
                    s.in = static_cast<int>(r.u32());
                    s.out = static_cast<int>(r.u32());
                    m.layers.push_back(s);
                    break;
                }
                case kTagSoftmax: m.layers.push_back(SoftmaxSpec{}); break;
                default: throw MalformedHeader("model file: unknown layer tag");
            }
        }
        m.params.resize(m.layers.size());
        m.bn_stats.resize(m.layers.size());
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            auto read_tensor = [&](std::vector<int> shape) {
                Tensor<float> t(std::move(shape));
                for (auto& v : t.v) v = r.f32();
                return t;
            };
            std::visit(
                [&](const auto& s) {
                    using S = std::decay_t<decltype(s)>;
                    if constexpr (std::is_same_v<S, Conv1DSpec>) {
                        m.params[i].push_back(read_tensor({s.out_ch, s.in_ch, s.kernel}));
                        m.params[i].push_back(read_tensor({s.out_ch}));
                    } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
                        m.params[i].push_back(read_tensor({s.channels}));
                        m.params[i].push_back(read_tensor({s.channels}));
                        m.bn_stats[i].running_mean = read_tensor({s.channels});
                        m.bn_stats[i].running_var = read_tensor({s.channels});
                    } else if constexpr (std::is_same_v<S, DenseSpec>) {
                        m.params[i].push_back(read_tensor({s.out, s.in}));
                        m.params[i].push_back(read_tensor({s.out}));
                    }
                },
                m.layers[i]);
        }
        return m;
    }
    if (precision != 1) throw MalformedHeader("model file: unknown precision flag");
    QuantModel qm;
    qm.input_qp = get_qparams(r);
    qm.n_classes = static_cast<int>(r.u32());
    std::uint32_t n_ops = r.u32();
    for (std::uint32_t i = 0; i < n_ops; ++i) {
        switch (r.u8()) {
            case kTagQConv: {
                QConv op;
                op.spec.in_ch = static_cast<int>(r.u32());
                op.spec.out_ch = static_cast<int>(r.u32());
                op.spec.kernel = static_cast<int>(r.u32());
                op.spec.stride = static_cast<int>(r.u32());
                op.spec.padding = r.u8() ? Padding::same : Padding::valid;
                op.relu = r.u8() != 0;
                op.w_qp = get_qparams(r);
                op.in_qp = get_qparams(r);
                op.out_qp = get_qparams(r);
                op.requant.mult = r.i32();
                op.requant.shift = r.i32();
                std::size_t nw = static_cast<std::size_t>(op.spec.out_ch) * op.spec.in_ch *
                                 op.spec.kernel;
                for (std::size_t j = 0; j < nw; ++j)
                    op.weights.push_back(static_cast<std::int8_t>(r.u8()));
                for (int j = 0; j < op.spec.out_ch; ++j) op.bias.push_back(r.i32());
                qm.ops.push_back(std::move(op));
                break;
            }
            case kTagQPool: {
                QPool op;
                op.kind = r.u8() == 0 ? PoolKind::max : PoolKind::avg;
                op.size = static_cast<int>(r.u32());
                qm.ops.push_back(op);
                break;
            }
            case kTagQGap: qm.ops.push_back(QGap{}); break;
            case kTagQDense: {
                QDense op;
                op.in = static_cast<int>(r.u32());
                op.out = static_cast<int>(r.u32());
                op.w_qp = get_qparams(r);
                op.in_qp = get_qparams(r);
                op.out_qp = get_qparams(r);
                op.requant.mult = r.i32();
                op.requant.shift = r.i32();
                std::size_t nw = static_cast<std::size_t>(op.out) * op.in;
                for (std::size_t j = 0; j < nw; ++j)
                    op.weights.push_back(static_cast<std::int8_t>(r.u8()));
                for (int j = 0; j < op.out; ++j) op.bias.push_back(r.i32());
                qm.ops.push_back(std::move(op));
                break;
            }
            default: throw MalformedHeader("model file: unknown op tag");
        }
    }
    return qm;
}

inline std::size_t save_model(const Model<float>& model, const std::string& path) {
    auto bytes = serialize_model(model);
    write_file(path, bytes);
    return bytes.size();
}
inline std::size_t save_model(const QuantModel& qm, const std::string& path) {
    auto bytes = serialize_model(qm);
    write_file(path, bytes);
    return bytes.size();
}
inline LoadedModel load_model(const std::string& path) {
    return deserialize_model(read_file(path));
}

// ---- cost report rendering -------------------------------------------------

enum class ReportFormat : std::uint8_t { text, csv };

inline std::string emit_cost_report(const ArchGenome& genome, ReportFormat format,
                                    int input_len = kInputLen) {
    CostReport r = cost_report(genome, input_len);
    std::ostringstream out;
    if (format == ReportFormat::csv) {
        out << "layer,params,out_elements,flops\n";
        for (const auto& l : r.per_layer)
            out << l.name << ',' << l.params << ',' << l.out_elements << ',' << l.flops << '\n';
        out << "total," << r.params << ',' << r.max_tensor << ',' << r.flops << '\n';
        return out.str();
    }
    out << std::left << std::setw(12) << "layer" << std::right << std::setw(10) << "params"
        << std::setw(12) << "out elems" << std::setw(14) << "flops" << '\n';
    for (const auto& l : r.per_layer)
        out << std::left << std::setw(12) << l.name << std::right << std::setw(10) << l.params
            << std::setw(12) << l.out_elements << std::setw(14) << l.flops << '\n';
    out << std::left << std::setw(12) << "total" << std::right << std::setw(10) << r.params
        << std::setw(12) << r.max_tensor << std::setw(14) << r.flops << '\n';
    out << '\n';
    out << "params:     " << r.params << "  (f32 flash " << r.params_flash_bytes_f32()
        << " B, int8 flash " << r.params_flash_bytes_int8() << " B)\n";
    out << "max tensor: " << r.max_tensor << "  (f32 ram " << r.max_tensor_ram_bytes_f32()
        << " B, int8 ram " << r.max_tensor_ram_bytes_int8() << " B)\n";
    out << "flops:      " << r.flops << '\n';
    return out.str();
}

}  // namespace mtc
