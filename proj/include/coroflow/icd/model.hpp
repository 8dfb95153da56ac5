#pragma once

// The two pressure regressors sharing one condition encoder:
//  - ICD: an eps-predicting denoiser over noised scalar labels, sampled in
//    reverse at inference;
//  - CNN-MLP: a deterministic head regressing the normalised label directly.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coroflow/error.hpp"
#include "coroflow/icd/schedule.hpp"
#include "coroflow/nn/loss.hpp"
#include "coroflow/nn/sequential.hpp"
#include "coroflow/norm.hpp"
#include "coroflow/sample.hpp"

namespace coroflow::icd {

enum class ModelKind { ICD, CnnMlp };

inline const char* to_string(ModelKind k) { return k == ModelKind::ICD ? "icd" : "cnn-mlp"; }

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "icd") return ModelKind::ICD;
    if (s == "cnn-mlp") return ModelKind::CnnMlp;
    throw UsageError("unknown model '" + s + "' (expected icd or cnn-mlp)");
}

struct ModelConfig {
    ModelKind kind = ModelKind::ICD;
    PatchShape patch_shape = kDefaultPatchShape;
    std::vector<std::size_t> channels{8, 16, 32};  ///< input has one channel
    std::size_t image_embed = 256;
    std::size_t coord_embed = 32;
    std::size_t time_embed = 32;  ///< ICD only
    std::size_t hidden = 128;     ///< denoiser width (ICD) or head width (CNN-MLP)
    ScheduleParams schedule;      ///< ICD only
    std::size_t inference_samples = 1;
    std::uint64_t seed = 42;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

    static ModelConfig icd() { return {}; }
    static ModelConfig cnn_mlp() {
        ModelConfig c;
        c.kind = ModelKind::CnnMlp;
        c.image_embed = 128;
        c.hidden = 64;
        return c;
    }
    static ModelConfig defaults(ModelKind k) { return k == ModelKind::ICD ? icd() : cnn_mlp(); }

    std::size_t condition_width() const { return image_embed + coord_embed; }
    std::size_t head_input_width() const {
        return kind == ModelKind::ICD ? 1 + condition_width() + time_embed : condition_width();
    }

    /// Spatial extent after the encoder's pooling blocks.
    std::array<std::size_t, 3> encoded_extent() const {
        std::array<std::size_t, 3> s{patch_shape[0], patch_shape[1], patch_shape[2]};
        for (std::size_t b = 0; b < channels.size(); ++b)
            for (auto& v : s) {
                if (v < 2) throw UsageError("patch too small for " + std::to_string(channels.size()) + " pooling blocks");
                v /= 2;
            }
        return s;
    }

    void validate() const {
        if (channels.empty()) throw UsageError("encoder needs at least one block");
        for (std::size_t c : channels)
            if (c == 0) throw UsageError("channel widths must be positive");
        if (image_embed == 0 || coord_embed == 0 || hidden == 0) throw UsageError("embedding widths must be positive");
        if (kind == ModelKind::ICD && (time_embed == 0 || time_embed % 2 != 0))
            throw UsageError("timestep embedding width must be even and positive");
        if (inference_samples == 0) throw UsageError("inference sample count must be positive");
        encoded_extent();
    }
};

inline std::vector<nn::LayerSpec> image_encoder_specs(const ModelConfig& c) {
    std::vector<nn::LayerSpec> s;
    std::size_t in = 1;
    for (std::size_t out : c.channels) {
        s.push_back(nn::Conv3DSpec{in, out});
        s.push_back(nn::BatchNormSpec{out});
        s.push_back(nn::ReLUSpec{});
        s.push_back(nn::MaxPool3DSpec{});
        in = out;
    }
    const auto e = c.encoded_extent();
    s.push_back(nn::FlattenSpec{});
    s.push_back(nn::DenseSpec{in * e[0] * e[1] * e[2], c.image_embed});
    return s;
}

inline std::vector<nn::LayerSpec> coord_encoder_specs(const ModelConfig& c) { return {nn::DenseSpec{3, c.coord_embed}}; }

inline std::vector<nn::LayerSpec> head_specs(const ModelConfig& c) {
    if (c.kind == ModelKind::ICD)
        return {nn::DenseSpec{c.head_input_width(), c.hidden}, nn::ReLUSpec{}, nn::DenseSpec{c.hidden, c.hidden},
                nn::ReLUSpec{}, nn::DenseSpec{c.hidden, 1}};
    return {nn::DenseSpec{c.head_input_width(), c.hidden}, nn::ReLUSpec{}, nn::DenseSpec{c.hidden, 1}};
}

/// Network inputs for a set of samples: patches [B,1,d,h,w], standardised
/// coordinates [B,3] and normalised labels.
template <class T>
struct Batch {
    nn::Tensor<T> patches;
    nn::Tensor<T> coords;
    std::vector<double> targets;

    std::size_t size() const { return targets.size(); }
};

/// Per-row timestep and noise draws for one ICD training step.
struct NoiseDraws {
    std::vector<int> steps;
    std::vector<double> eps;
};

template <class T>
using ModelGrads = std::array<nn::Gradients<T>, 3>;

template <class T>
class Model {
public:
    static constexpr std::size_t kStacks = 3;

    ModelConfig config;
    NoiseSchedule schedule;
    NormStats label_norm;
    CoordNorm coord_norm;
    nn::Sequential<T> image;
    nn::Sequential<T> coord;
    nn::Sequential<T> head;

    explicit Model(const ModelConfig& c) : config(c) {
        config.validate();
        std::mt19937_64 rng(config.seed);
        image = nn::Sequential<T>(image_encoder_specs(config), rng);
        coord = nn::Sequential<T>(coord_encoder_specs(config), rng);
        head = nn::Sequential<T>(head_specs(config), rng);
        if (config.kind == ModelKind::ICD) schedule = make_schedule(config.schedule);
    }

    bool is_icd() const { return config.kind == ModelKind::ICD; }

    std::array<nn::Sequential<T>*, kStacks> stacks() { return {&image, &coord, &head}; }
    std::array<const nn::Sequential<T>*, kStacks> stacks() const { return {&image, &coord, &head}; }
    std::string stack_name(std::size_t i) const {
        static const char* names[] = {"encoder.image", "encoder.coord", "head"};
        return i == 2 && is_icd() ? "denoiser" : names[i];
    }

    std::vector<nn::NamedTensor<T>> parameters() {
        std::vector<nn::NamedTensor<T>> out;
        auto st = stacks();
        for (std::size_t i = 0; i < kStacks; ++i)
            for (auto& p : st[i]->parameters()) out.push_back({stack_name(i) + "." + p.name, p.tensor});
        return out;
    }

    std::vector<nn::Tensor<T>*> parameter_ptrs() {
        std::vector<nn::Tensor<T>*> out;
        for (auto& p : parameters()) out.push_back(p.tensor);
        return out;
    }

    std::size_t parameter_values() const {
        std::size_t n = 0;
        for (const auto* s : stacks())
            for (const auto* p : s->parameter_tensors()) n += p->size();
        return n;
    }

    ModelGrads<T> zero_grads() const { return {image.zero_grads(), coord.zero_grads(), head.zero_grads()}; }

    static std::vector<nn::Tensor<T>> flatten(ModelGrads<T>&& g) {
        std::vector<nn::Tensor<T>> out;
        for (auto& part : g)
            for (auto& t : part) out.push_back(std::move(t));
        return out;
    }

    Batch<T> make_batch(std::span<const Sample* const> samples) const {
        const auto& ps = config.patch_shape;
        const std::size_t vol = patch_size(ps);
        Batch<T> b;
        b.patches = nn::Tensor<T>({samples.size(), 1, ps[0], ps[1], ps[2]});
        b.coords = nn::Tensor<T>({samples.size(), 3});
        b.targets.resize(samples.size());
        for (std::size_t n = 0; n < samples.size(); ++n) {
            const Sample& s = *samples[n];
            if (s.patch.size() != vol)
                throw DataError("sample " + s.case_id + "#" + std::to_string(s.index) + " has " +
                                std::to_string(s.patch.size()) + " patch values, model expects " + std::to_string(vol));
            std::copy(s.patch.begin(), s.patch.end(), b.patches.row(n));
            const auto c = coord_norm.apply(s.world);
            for (std::size_t a = 0; a < 3; ++a) b.coords.row(n)[a] = static_cast<T>(c[a]);
            b.targets[n] = apply_norm(s.label_mmhg, label_norm);
        }
        return b;
    }

    /// Eval-mode condition vectors [B, image_embed + coord_embed].
    nn::Tensor<T> encode(const nn::Tensor<T>& patches, const nn::Tensor<T>& coords) const {
        const nn::Tensor<T> a = image.infer(patches);
        const nn::Tensor<T> b = coord.infer(coords);
        return nn::concat<T>({&a, &b});
    }

    /// Eval-mode eps prediction for rows (y_t, t, c).
    nn::Tensor<T> eps_predict(std::span<const double> yt, std::span<const int> steps, const nn::Tensor<T>& cond) const {
        return head.infer(denoiser_input(yt, steps, cond));
    }

    nn::Tensor<T> denoiser_input(std::span<const double> yt, std::span<const int> steps, const nn::Tensor<T>& cond) const {
        if (!is_icd()) throw UsageError("denoiser input requested from a CNN-MLP model");
        if (yt.size() != cond.dim(0) || steps.size() != cond.dim(0))
            throw ShapeError(-1, "denoiser rows: y_t " + std::to_string(yt.size()) + ", t " +
                                     std::to_string(steps.size()) + ", condition " + std::to_string(cond.dim(0)));
        nn::Tensor<T> y({yt.size(), 1});
        for (std::size_t i = 0; i < yt.size(); ++i) y.data[i] = static_cast<T>(yt[i]);
        const nn::Tensor<T> temb = nn::sinusoidal_embedding<T>(steps, config.time_embed);
        return nn::concat<T>({&y, &cond, &temb});
    }

    /// Draw timesteps and noise for `rows` training rows.
    NoiseDraws draw_noise(std::size_t rows, std::mt19937_64& rng) const {
        NoiseDraws d;
        std::uniform_int_distribution<int> step(1, static_cast<int>(schedule.steps()));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t r = 0; r < rows; ++r) {
            d.steps.push_back(step(rng));
            normal.reset();
            d.eps.push_back(normal(rng));
        }
        return d;
    }

    /// Train-mode loss on a batch (Huber over eps for ICD, over labels for
    /// CNN-MLP). For ICD every sample contributes draws.steps.size() / B rows.
    /// With `grads`, gradients are accumulated into it; with `d_patches`, the
    /// gradient with respect to the patch input is written there.
    double loss(const Batch<T>& batch, const NoiseDraws& draws, double delta, ModelGrads<T>* grads = nullptr,
                nn::Tensor<T>* d_patches = nullptr) {
        const std::size_t B = batch.size();
        if (B == 0) throw DataError("empty training batch");
        nn::StackCache<T> ci, cc, ch;
        const bool keep = grads != nullptr;
        const nn::Tensor<T> a = image.forward(batch.patches, nn::Mode::Train, keep ? &ci : nullptr);
        const nn::Tensor<T> b = coord.forward(batch.coords, nn::Mode::Train, keep ? &cc : nullptr);
        const nn::Tensor<T> cond = nn::concat<T>({&a, &b});

        std::size_t K = 1;
        nn::Tensor<T> input;
        std::vector<T> target;
        if (is_icd()) {
            if (draws.steps.size() != draws.eps.size() || draws.steps.empty() || draws.steps.size() % B != 0)
                throw ShapeError(-1, "noise draws do not tile the batch");
            K = draws.steps.size() / B;
            nn::Tensor<T> rep({B * K, cond.dim(1)});
            std::vector<double> yt(B * K);
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t r = n * K + k;
                    std::copy(cond.row(n), cond.row(n) + cond.dim(1), rep.row(r));
                    yt[r] = q_sample(batch.targets[n], static_cast<std::size_t>(draws.steps[r]), draws.eps[r], schedule);
                }
            input = denoiser_input(yt, draws.steps, rep);
            target.assign(draws.eps.begin(), draws.eps.end());
        } else {
            input = cond;
            target.assign(batch.targets.begin(), batch.targets.end());
        }

        const nn::Tensor<T> out = head.forward(input, nn::Mode::Train, keep ? &ch : nullptr);
        const auto res = nn::huber_loss<T>(std::span<const T>(out.data), std::span<const T>(target), delta);
        if (!std::isfinite(res.value)) throw NumericError("non-finite training loss");
        if (!grads) return res.value;

        const nn::Tensor<T> dout(out.shape, res.grad);
        const nn::Tensor<T> din = head.backward(ch, dout, (*grads)[2], true);
        const std::size_t cw = config.condition_width();
        nn::Tensor<T> dcond({B, cw});
        const std::size_t off = is_icd() ? 1 : 0;
        for (std::size_t n = 0; n < B; ++n) {
            T* d = dcond.row(n);
            for (std::size_t k = 0; k < K; ++k) {
                const T* src = din.row(n * K + k) + off;
                for (std::size_t f = 0; f < cw; ++f) d[f] += src[f];
            }
        }
        const nn::Tensor<T> da = nn::slice_columns(dcond, 0, config.image_embed);
        const nn::Tensor<T> db = nn::slice_columns(dcond, config.image_embed, config.coord_embed);
        nn::Tensor<T> dp = image.backward(ci, da, (*grads)[0], d_patches != nullptr);
        coord.backward(cc, db, (*grads)[1], false);
        if (d_patches) *d_patches = std::move(dp);
        return res.value;
    }

    /// Normalised predictions. ICD runs `inference_samples` reverse chains per
    /// row, chain k of row n seeded by seeds[n] and k, and averages them.
    std::vector<double> predict_normalized(const Batch<T>& batch, std::span<const std::uint64_t> seeds) const {
        const std::size_t B = batch.size();
        if (seeds.size() != B) throw ShapeError(-1, "one seed per prediction row is required");
        if (B == 0) return {};
        const nn::Tensor<T> cond = encode(batch.patches, batch.coords);
        std::vector<double> out(B, 0.0);
        if (!is_icd()) {
            const nn::Tensor<T> y = head.infer(cond);
            for (std::size_t n = 0; n < B; ++n) out[n] = static_cast<double>(y.data[n]);
            return out;
        }
        const std::size_t K = config.inference_samples;
        nn::Tensor<T> rep({B * K, cond.dim(1)});
        std::vector<std::mt19937_64> rngs;
        rngs.reserve(B * K);
        for (std::size_t n = 0; n < B; ++n)
            for (std::size_t k = 0; k < K; ++k) {
                std::copy(cond.row(n), cond.row(n) + cond.dim(1), rep.row(n * K + k));
                rngs.emplace_back(derive_seed(seeds[n], 0, k));
            }
        std::vector<int> steps(B * K);
        auto eps_fn = [&](std::span<const double> yt, std::size_t t, std::span<double> eps) {
            std::fill(steps.begin(), steps.end(), static_cast<int>(t));
            const nn::Tensor<T> e = eps_predict(yt, steps, rep);
            for (std::size_t r = 0; r < eps.size(); ++r) eps[r] = static_cast<double>(e.data[r]);
        };
        const std::vector<double> y0 = reverse_chain(schedule, eps_fn, rngs);
        for (std::size_t n = 0; n < B; ++n) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += y0[n * K + k];
            out[n] = s / static_cast<double>(K);
        }
        return out;
    }

    template <class U>
    Model<U> cast() const {
        Model<U> m(config);
        m.label_norm = label_norm;
        m.coord_norm = coord_norm;
        m.image = image.template cast<U>();
        m.coord = coord.template cast<U>();
        m.head = head.template cast<U>();
        return m;
    }
};

}  // namespace coroflow::icd
