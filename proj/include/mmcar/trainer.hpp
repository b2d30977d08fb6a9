#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmcar/fusion.hpp"
#include "mmcar/pairing.hpp"
#include "mmcar/parallel.hpp"
#include "mmcar/rng.hpp"
#include "mmcar/types.hpp"

namespace mmcar {

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    int batch_size = 64;
    double learning_rate = 1e-3;
    int max_epochs = 50;
    int patience = 5;
    std::uint64_t seed = 42;
    Optimizer optimizer = Optimizer::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int threads = 1;

    void validate() const {
        if (batch_size < 1) throw DataError("TrainConfig: batch_size must be >= 1");
        if (learning_rate < 0.0) throw DataError("TrainConfig: learning_rate must be >= 0");
        if (max_epochs < 1) throw DataError("TrainConfig: max_epochs must be >= 1");
        if (patience < 1 || patience > max_epochs)
            throw DataError("TrainConfig: need 1 <= patience <= max_epochs");
    }
};

struct TrainLog {
    struct Epoch {
        int epoch = 0;
        double train_loss = 0.0;
        double val_loss = 0.0;
        double seconds = 0.0;
    };
    std::vector<Epoch> epochs;
    int best_epoch = -1;
};

// Triplets resolved against the record tables, ready for forward passes.
struct ResolvedTriplet {
    const DesignRecord* design;
    const AudioRecord* audio;
    int label;
};

inline std::vector<ResolvedTriplet> resolve_triplets(const std::vector<Triplet>& ts,
                                                     const std::vector<DesignRecord>& designs,
                                                     const std::vector<AudioRecord>& audios) {
    std::unordered_map<std::string, const DesignRecord*> dmap;
    std::unordered_map<std::string, const AudioRecord*> amap;
    for (const auto& d : designs) dmap[d.id] = &d;
    for (const auto& a : audios) amap[a.id] = &a;
    std::vector<ResolvedTriplet> out;
    out.reserve(ts.size());
    for (const auto& t : ts) {
        auto di = dmap.find(t.design_id);
        if (di == dmap.end()) throw DataError("triplet references unknown design id: " + t.design_id);
        auto ai = amap.find(t.audio_id);
        if (ai == amap.end()) throw DataError("triplet references unknown audio id: " + t.audio_id);
        out.push_back({di->second, ai->second, t.label});
    }
    return out;
}

// Mean BCE over the set, fixed iteration order, no shuffling.
inline double evaluate_loss(const std::vector<ResolvedTriplet>& triplets, const ModelParams& params,
                            int threads = 1) {
    if (triplets.empty()) throw DataError("evaluate_loss: empty triplet set");
    Vec losses(triplets.size());
    parallel_for(triplets.size(), threads, [&](std::size_t k) {
        const auto& t = triplets[k];
        losses[k] = bce_single(
            forward(t.design->image_vec, t.design->text_vec, t.audio->vec, params).zhat, t.label);
    });
    double s = 0.0;
    for (double l : losses) s += l;
    return s / static_cast<double>(losses.size());
}

namespace detail {

struct AdamState {
    Vec m, v;
    long step = 0;
};

// One optimizer step on the flattened parameter vector.
inline void apply_update(ModelParams& params, const Gradients& grad, const TrainConfig& cfg,
                         AdamState& adam) {
    Vec theta = params.flatten();
    Vec g = grad.flatten();
    if (cfg.optimizer == Optimizer::Sgd) {
        for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= cfg.learning_rate * g[k];
    } else {
        if (adam.m.empty()) {
            adam.m.assign(theta.size(), 0.0);
            adam.v.assign(theta.size(), 0.0);
        }
        ++adam.step;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
        for (std::size_t k = 0; k < theta.size(); ++k) {
            adam.m[k] = cfg.beta1 * adam.m[k] + (1.0 - cfg.beta1) * g[k];
            adam.v[k] = cfg.beta2 * adam.v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            double mhat = adam.m[k] / bc1;
            double vhat = adam.v[k] / bc2;
            theta[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
    params.set_from_flat(theta);
}

}  // namespace detail

// Mean gradient over a batch; per-sample work may fan out across threads,
// the reduction always runs in sample index order.
inline Gradients batch_gradient(const std::vector<ResolvedTriplet>& batch, const ModelParams& params,
                                int threads, double* mean_loss_out = nullptr) {
    std::vector<Gradients> per_sample(batch.size());
    Vec losses(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t k) {
        const auto& t = batch[k];
        ForwardTrace tr = forward(t.design->image_vec, t.design->text_vec, t.audio->vec, params);
        losses[k] = bce_single(tr.zhat, t.label);
        per_sample[k] =
            backward(tr, t.design->image_vec, t.design->text_vec, t.audio->vec, t.label, params);
    });
    Gradients acc = Gradients::zeros_like(params);
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        acc.add(per_sample[k]);
        loss_sum += losses[k];
    }
    acc.scale(1.0 / static_cast<double>(batch.size()));
    if (mean_loss_out) *mean_loss_out = loss_sum / static_cast<double>(batch.size());
    return acc;
}

struct TrainResult {
    ModelParams best;
    ModelParams last;
    TrainLog log;
};

// Mini-batch training with early stopping on validation loss. Deterministic
// given (cfg, init, data); the last partial batch is kept and averaged over
// its true size.
inline TrainResult train(const std::vector<ResolvedTriplet>& train_set,
                         const std::vector<ResolvedTriplet>& val_set, const TrainConfig& cfg,
                         const ModelParams& init,
                         const std::function<void(const TrainLog::Epoch&)>& on_epoch = nullptr) {
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw DataError("train: train and val triplet sets must be nonempty");

    TrainResult res;
    res.last = init;
    res.best = init;
    double best_val = std::numeric_limits<double>::infinity();
    detail::AdamState adam;
    Rng shuffle_rng(hash64(cfg.seed, "train_shuffle"));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double epoch_loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<ResolvedTriplet> batch;
            batch.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) batch.push_back(train_set[order[k]]);
            double batch_loss = 0.0;
            Gradients g = batch_gradient(batch, res.last, cfg.threads, &batch_loss);
            if (!std::isfinite(batch_loss))
                throw InternalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(n_batches));
            detail::apply_update(res.last, g, cfg, adam);
            epoch_loss_sum += batch_loss;
            ++n_batches;
        }
        double val_loss = evaluate_loss(val_set, res.last, cfg.threads);
        auto t1 = std::chrono::steady_clock::now();

        TrainLog::Epoch e;
        e.epoch = epoch;
        e.train_loss = epoch_loss_sum / static_cast<double>(n_batches);
        e.val_loss = val_loss;
        e.seconds = std::chrono::duration<double>(t1 - t0).count();
        res.log.epochs.push_back(e);
        if (on_epoch) on_epoch(e);

        if (val_loss < best_val) {
            best_val = val_loss;
            res.best = res.last;
            res.log.best_epoch = epoch;
        } else if (epoch - res.log.best_epoch >= cfg.patience) {
            break;
        }
    }
    return res;
}

inline void save_trainlog(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write train log: " + path);
    for (const auto& e : log.epochs) {
        nlohmann::json j;
        j["epoch"] = e.epoch;
        j["train_loss"] = e.train_loss;
        j["val_loss"] = e.val_loss;
        j["seconds"] = e.seconds;
        out << j.dump() << "\n";
    }
}

}  // namespace mmcar
