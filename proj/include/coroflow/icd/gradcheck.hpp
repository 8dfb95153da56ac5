#pragma once

// Finite-difference check of a whole model's training loss: every parameter
// and the patch input, in double precision, with fixed noise draws.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "coroflow/icd/model.hpp"
#include "coroflow/nn/gradcheck.hpp"

namespace coroflow::icd {

/// Random samples matching `config.patch_shape`, spread around the origin.
inline std::vector<Sample> random_samples(const ModelConfig& config, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0), pos(-30.0, 30.0), label(80.0, 100.0);
    std::vector<Sample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample& s = out[i];
        s.case_id = "g" + std::to_string(i);
        s.index = i;
        s.world = {pos(rng), pos(rng), pos(rng), Frame::LPS};
        s.label_mmhg = label(rng);
        s.patch.resize(patch_size(config.patch_shape));
        for (auto& v : s.patch) v = static_cast<float>(unit(rng));
    }
    return out;
}

inline nn::GradCheckReport grad_check_model(Model<double> model, const std::vector<Sample>& samples,
                                            const nn::GradCheckOptions& opt = {}, std::size_t noise_draws = 1) {
    std::vector<const Sample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    model.label_norm = fit_norm([&] {
        std::vector<double> v;
        for (const auto& s : samples) v.push_back(s.label_mmhg);
        return v;
    }());
    model.coord_norm = fit_coord_norm(ptrs);
    Batch<double> batch = model.make_batch(ptrs);

    NoiseDraws draws;
    if (model.is_icd()) {
        std::mt19937_64 rng(opt.seed + 11);
        draws = model.draw_noise(batch.size() * noise_draws, rng);
    }
    const double delta = 1.0;
    ModelGrads<double> grads = model.zero_grads();
    nn::Tensor<double> d_patch;
    model.loss(batch, draws, delta, &grads, &d_patch);

    std::vector<nn::NamedTensor<double>> targets = model.parameters();
    targets.push_back({"input.patch", &batch.patches});
    std::vector<nn::Tensor<double>> analytic = Model<double>::flatten(std::move(grads));
    analytic.push_back(std::move(d_patch));
    auto objective = [&] { return model.loss(batch, draws, delta); };
    return nn::check_gradients(targets, analytic, objective, opt);
}

/// Reduced-size configuration with the full layer structure, for gradient checks.
inline ModelConfig small_config(ModelKind kind) {
    ModelConfig c = ModelConfig::defaults(kind);
    c.patch_shape = {8, 8, 12};
    c.channels = {2, 3, 2};
    c.image_embed = 6;
    c.coord_embed = 4;
    c.time_embed = 4;
    c.hidden = 5;
    c.schedule.steps = 20;
    return c;
}

}  // namespace coroflow::icd
