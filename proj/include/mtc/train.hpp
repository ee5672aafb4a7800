#pragma once

// Training schedule: Adam with bias correction, plateau learning-rate decay,
// early stopping with best-snapshot restore, and classification metrics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "mtc/nn.hpp"
#include "mtc/session.hpp"

namespace mtc {

struct TrainConfig {
    double lr0 = 1e-3;
    int batch = 128;
    int max_epochs = 100;        // 200 for final retraining
    int plateau_patience = 5;
    double plateau_factor = 0.5;
    double min_lr = 1e-5;
    int early_stop_patience = 10;
    std::uint64_t seed = 0;
};

template <typename T>
struct AdamState {
    std::vector<ParamSet<T>> m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    static AdamState init_like(const std::vector<ParamSet<T>>& params) {
        AdamState s;
        s.m.resize(params.size());
        s.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            for (const auto& p : params[i]) {
                s.m[i].push_back(Tensor<T>(p.shape));
                s.v[i].push_back(Tensor<T>(p.shape));
            }
        return s;
    }
};

template <typename T>
void adam_step(std::vector<ParamSet<T>>& params, const std::vector<ParamSet<T>>& grads,
               AdamState<T>& state, double lr) {
    if (params.size() != grads.size()) throw ShapeMismatch("adam: param/grad layer count differs");
    ++state.t;
    double bc1 = 1.0 - std::pow(state.beta1, state.t);
    double bc2 = 1.0 - std::pow(state.beta2, state.t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            auto& p = params[i][j];
            const auto& g = grads[i][j];
            auto& m = state.m[i][j];
            auto& v = state.v[i][j];
            if (p.v.size() != g.v.size()) throw ShapeMismatch("adam: tensor shape mismatch");
            for (std::size_t k = 0; k < p.v.size(); ++k) {
                double gk = static_cast<double>(g.v[k]);
                double mk = state.beta1 * m.v[k] + (1.0 - state.beta1) * gk;
                double vk = state.beta2 * v.v[k] + (1.0 - state.beta2) * gk * gk;
                m.v[k] = static_cast<T>(mk);
                v.v[k] = static_cast<T>(vk);
                double mhat = mk / bc1;
                double vhat = vk / bc2;
                p.v[k] = static_cast<T>(p.v[k] - lr * mhat / (std::sqrt(vhat) + state.eps));
            }
        }
    }
}

// Plateau decay + early stop bookkeeping, shared by the train loop and tested
// in isolation.
struct LrSchedule {
    double lr;
    double factor, min_lr;
    int plateau_patience, early_stop_patience;
    double best_loss = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;
    int epochs_since_decay_ref = 0;
    bool stop = false;

    LrSchedule(const TrainConfig& cfg)
        : lr(cfg.lr0), factor(cfg.plateau_factor), min_lr(cfg.min_lr),
          plateau_patience(cfg.plateau_patience), early_stop_patience(cfg.early_stop_patience) {}

    // Returns true when this epoch is a new best.
    bool observe(double val_loss) {
        if (val_loss < best_loss - 1e-9) {
            best_loss = val_loss;
            epochs_since_best = 0;
            epochs_since_decay_ref = 0;
            return true;
        }
        ++epochs_since_best;
        ++epochs_since_decay_ref;
        if (epochs_since_decay_ref >= plateau_patience) {
            lr = std::max(lr * factor, min_lr);
            epochs_since_decay_ref = 0;
        }
        if (epochs_since_best >= early_stop_patience) stop = true;
        return false;
    }
};

struct EpochStats {
    int epoch;
    double train_loss, val_loss, val_acc, lr;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;

    std::string to_csv() const {
        std::ostringstream out;
        out << "epoch,train_loss,val_loss,val_acc,lr\n";
        for (const auto& e : epochs)
            out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_acc << ','
                << e.lr << '\n';
        return out.str();
    }
};

template <typename T>
Tensor<T> records_to_batch(const std::vector<SessionRecord>& records,
                           const std::vector<std::size_t>& idx) {
    Tensor<T> batch({static_cast<int>(idx.size()), 1, static_cast<int>(kRecordLen)});
    for (std::size_t b = 0; b < idx.size(); ++b)
        for (std::size_t j = 0; j < kRecordLen; ++j)
            batch.v[b * kRecordLen + j] =
                static_cast<T>(records[idx[b]].bytes[j]) / static_cast<T>(255);
    return batch;
}

template <typename T>
std::vector<int> records_to_labels(const std::vector<SessionRecord>& records,
                                   const std::vector<std::size_t>& idx) {
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (std::size_t i : idx) labels.push_back(records[i].label);
    return labels;
}

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
};

template <typename T>
std::vector<int> predict(Model<T>& model, const std::vector<SessionRecord>& data,
                         int batch_size = 256) {
    std::vector<int> preds;
    preds.reserve(data.size());
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i)
            idx.push_back(i);
        auto probs = model.forward(records_to_batch<T>(data, idx), RunMode::infer);
        int classes = probs.shape[1];
        for (int b = 0; b < probs.shape[0]; ++b) {
            const T* row = probs.v.data() + static_cast<std::size_t>(b) * classes;
            preds.push_back(static_cast<int>(std::max_element(row, row + classes) - row));
        }
    }
    return preds;
}

inline Metrics metrics_from_predictions(const std::vector<int>& truth,
                                        const std::vector<int>& preds, int n_classes) {
    if (truth.empty()) throw EmptyDataset("metrics: empty dataset");
    Metrics m;
    m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        m.confusion[truth[i]][preds[i]]++;
        if (truth[i] == preds[i]) ++correct;
    }
    m.accuracy = static_cast<double>(correct) / truth.size();
    // macro F1 over classes that occur in truth or predictions; F1 = 0 when
    // precision + recall = 0
    double f1_sum = 0.0;
    int f1_classes = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::size_t tp = m.confusion[c][c], fp = 0, fn = 0;
        for (int o = 0; o < n_classes; ++o)
            if (o != c) {
                fp += m.confusion[o][c];
                fn += m.confusion[c][o];
            }
        if (tp + fp + fn == 0) continue;  // class absent from truth and predictions
        double f1 = (2 * tp + fp + fn) > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
        f1_sum += f1;
        ++f1_classes;
    }
    m.macro_f1 = f1_classes > 0 ? f1_sum / f1_classes : 0.0;
    return m;
}

template <typename T>
Metrics evaluate(Model<T>& model, const std::vector<SessionRecord>& data) {
    if (data.empty()) throw EmptyDataset("evaluate: empty dataset");
    int n_classes = 0;
    if (!model.layers.empty()) {
        for (const auto& l : model.layers)
            if (const auto* d = std::get_if<DenseSpec>(&l)) n_classes = d->out;
    }
    std::vector<int> truth;
    truth.reserve(data.size());
    for (const auto& r : data) truth.push_back(r.label);
    return metrics_from_predictions(truth, predict(model, data), n_classes);
}

template <typename T>
std::pair<double, double> eval_loss_acc(Model<T>& model, const std::vector<SessionRecord>& data,
                                        int batch_size = 256) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i)
            idx.push_back(i);
        auto probs = model.forward(records_to_batch<T>(data, idx), RunMode::infer);
        auto labels = records_to_labels<T>(data, idx);
        loss_sum += static_cast<double>(cross_entropy(probs, labels)) * idx.size();
        int classes = probs.shape[1];
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const T* row = probs.v.data() + b * classes;
            if (std::max_element(row, row + classes) - row == labels[b]) ++correct;
        }
    }
    return {loss_sum / data.size(), static_cast<double>(correct) / data.size()};
}

// Trains in place, then restores the snapshot with the best validation loss.
template <typename T>
TrainHistory train(Model<T>& model, const std::vector<SessionRecord>& train_set,
                   const std::vector<SessionRecord>& val_set, const TrainConfig& cfg) {
    if (train_set.empty() || val_set.empty()) throw EmptyDataset("train: empty dataset");
    auto adam = AdamState<T>::init_like(model.params);
    LrSchedule sched(cfg);
    TrainHistory history;
    std::vector<ParamSet<T>> best_params = model.params;
    std::vector<BnStats<T>> best_stats = model.bn_stats;

    std::mt19937 shuffle_rng(static_cast<std::uint32_t>(cfg.seed ^ 0xC0FFEEull));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double train_loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + std::min(order.size(),
                                                                  start + cfg.batch));
            auto batch = records_to_batch<T>(train_set, idx);
            auto labels = records_to_labels<T>(train_set, idx);
            ForwardCache<T> cache;
            auto probs = model.forward(batch, RunMode::train, &cache);
            train_loss_sum += static_cast<double>(cross_entropy(probs, labels)) * idx.size();
            seen += idx.size();
            auto grads = model.backward(cache, labels);
            adam_step(model.params, grads, adam, sched.lr);
        }
        auto [val_loss, val_acc] = eval_loss_acc(model, val_set);
        double lr_this_epoch = sched.lr;
        bool is_best = sched.observe(val_loss);
        if (is_best) {
            best_params = model.params;
            best_stats = model.bn_stats;
            history.best_epoch = epoch;
        }
        history.epochs.push_back({epoch, train_loss_sum / seen, val_loss, val_acc, lr_this_epoch});
        if (sched.stop) break;
    }
    model.params = std::move(best_params);
    model.bn_stats = std::move(best_stats);
    return history;
}

}  // namespace mtc
