#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "coroflow/icd/model.hpp"
#include "coroflow/nn/adamw.hpp"

namespace coroflow::icd {

struct TrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    nn::AdamWConfig adamw;
    double huber_delta = 1.0;
    /// ICD: independent (t, eps) draws per sample and step; the encoder runs
    /// once per sample and its gradient sums over the draws.
    std::size_t noise_draws = 1;
    /// Cosine decay of the learning rate to lr * final_lr_fraction over all steps (1 = constant).
    double final_lr_fraction = 1.0;
    std::uint64_t seed = 42;
};

struct TraceRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
};

/// Fit label and coordinate normalisation on the training samples.
template <class T>
void fit_normalisation(Model<T>& model, const std::vector<const Sample*>& train) {
    std::vector<double> labels;
    labels.reserve(train.size());
    for (const auto* s : train) labels.push_back(s->label_mmhg);
    model.label_norm = fit_norm(labels);
    model.coord_norm = fit_coord_norm(train);
}

/// Minibatch training. Batches are reshuffled every epoch; a trailing batch
/// of one sample is dropped because batch statistics need two.
template <class T>
std::vector<TraceRow> train_model(Model<T>& model, const std::vector<const Sample*>& train, const TrainOptions& opt,
                                  const std::function<void(const TraceRow&)>& on_step = {}) {
    if (train.size() < 2) throw DataError("training needs at least two samples");
    if (opt.batch_size < 2) throw UsageError("batch size must be at least 2");
    if (opt.noise_draws == 0) throw UsageError("noise draws must be positive");
    if (!(opt.final_lr_fraction > 0.0) || opt.final_lr_fraction > 1.0)
        throw UsageError("final learning-rate fraction must be in (0, 1]");

    std::mt19937_64 order_rng(derive_seed(opt.seed, 1));
    std::mt19937_64 noise_rng(derive_seed(opt.seed, 2));
    nn::AdamW<T> optimizer(opt.adamw);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    const std::size_t per_epoch = train.size() / opt.batch_size + (train.size() % opt.batch_size >= 2 ? 1 : 0);
    const std::size_t total = per_epoch * opt.epochs;
    std::vector<TraceRow> trace;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
            const std::size_t end = std::min(order.size(), begin + opt.batch_size);
            if (end - begin < 2) break;
            std::vector<const Sample*> chosen;
            for (std::size_t i = begin; i < end; ++i) chosen.push_back(train[order[i]]);
            const Batch<T> batch = model.make_batch(chosen);
            NoiseDraws draws;
            if (model.is_icd()) draws = model.draw_noise(batch.size() * opt.noise_draws, noise_rng);

            ModelGrads<T> grads = model.zero_grads();
            const double value = model.loss(batch, draws, opt.huber_delta, &grads);

            const double progress = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 0.0;
            optimizer.config.lr = opt.adamw.lr * (opt.final_lr_fraction +
                                                  (1.0 - opt.final_lr_fraction) * 0.5 * (1.0 + std::cos(M_PI * progress)));
            optimizer.step(model.parameter_ptrs(), Model<T>::flatten(std::move(grads)));

            ++step;
            TraceRow row{epoch, step, value};
            trace.push_back(row);
            if (on_step) on_step(row);
        }
    }
    return trace;
}

struct PredictionRecord {
    std::string case_id;
    std::size_t index = 0;
    WorldPoint world;
    double y_true = 0.0;
    double y_pred = 0.0;
};

/// Seed for one point: a function of the run seed, the case and the point
/// index only, never of its position in the request.
inline std::uint64_t point_seed(std::uint64_t seed, const std::string& case_id, std::size_t index) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : case_id) h = (h ^ c) * 1099511628211ULL;
    return derive_seed(seed ^ h, index);
}

/// Predict every sample. Each record depends only on its own sample, the
/// model and the seed, so any ordering or chunking gives identical values.
template <class T>
std::vector<PredictionRecord> predict_samples(const Model<T>& model, const std::vector<const Sample*>& samples,
                                              std::uint64_t seed, std::size_t chunk = 128) {
    std::vector<PredictionRecord> out;
    out.reserve(samples.size());
    for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
        const std::size_t end = std::min(samples.size(), begin + chunk);
        std::vector<const Sample*> part(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                        samples.begin() + static_cast<std::ptrdiff_t>(end));
        const Batch<T> batch = model.make_batch(part);
        std::vector<std::uint64_t> seeds;
        for (const auto* s : part) seeds.push_back(point_seed(seed, s->case_id, s->index));
        const std::vector<double> y = model.predict_normalized(batch, seeds);
        for (std::size_t n = 0; n < part.size(); ++n) {
            const double pred = invert_norm(y[n], model.label_norm);
            if (!std::isfinite(pred))
                throw NumericError("non-finite prediction for " + part[n]->case_id + "#" + std::to_string(part[n]->index));
            out.push_back({part[n]->case_id, part[n]->index, part[n]->world, part[n]->label_mmhg, pred});
        }
    }
    return out;
}

}  // namespace coroflow::icd
