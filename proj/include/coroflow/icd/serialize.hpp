#pragma once

// Model file: the 8 bytes "COROMDL1", a single-line UTF-8 JSON header ending
// in '\n', then every parameter and then every BatchNorm buffer as
// little-endian float32, in the order listed under "tensors".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "coroflow/icd/model.hpp"

namespace coroflow::icd {

inline constexpr char kModelMagic[] = "COROMDL1";
inline constexpr int kModelFormat = 1;

namespace detail {

inline nlohmann::json spec_json(const nn::LayerSpec& spec) {
    return std::visit(
        [](const auto& s) -> nlohmann::json {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, nn::DenseSpec>) return {{"type", "dense"}, {"in", s.in}, {"out", s.out}};
            else if constexpr (std::is_same_v<S, nn::Conv3DSpec>)
                return {{"type", "conv3d"}, {"in", s.in_channels}, {"out", s.out_channels}, {"kernel", 3}, {"pad", 1}};
            else if constexpr (std::is_same_v<S, nn::BatchNormSpec>)
                return {{"type", "batchnorm"}, {"channels", s.channels}, {"momentum", s.momentum}, {"eps", s.eps}};
            else if constexpr (std::is_same_v<S, nn::ReLUSpec>) return {{"type", "relu"}};
            else if constexpr (std::is_same_v<S, nn::MaxPool3DSpec>) return {{"type", "maxpool3d"}, {"window", 2}};
            else return {{"type", "flatten"}};
        },
        spec);
}

inline void put_f32(std::string& out, float v) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xffu));
}

inline float get_f32(const unsigned char* p) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    return std::bit_cast<float>(u);
}

struct TensorSlot {
    std::string name;
    nn::Tensor<float>* tensor;
    bool buffer;
};

inline std::vector<TensorSlot> tensor_slots(Model<float>& m) {
    std::vector<TensorSlot> out;
    for (auto& p : m.parameters()) out.push_back({p.name, p.tensor, false});
    auto st = m.stacks();
    for (std::size_t i = 0; i < Model<float>::kStacks; ++i) {
        auto bufs = st[i]->buffers();
        for (std::size_t l = 0, b = 0; l < st[i]->layers.size(); ++l)
            if (std::holds_alternative<nn::BatchNorm<float>>(st[i]->layers[l])) {
                out.push_back({m.stack_name(i) + "." + std::to_string(l) + ".running_mean", bufs[b++], true});
                out.push_back({m.stack_name(i) + "." + std::to_string(l) + ".running_var", bufs[b++], true});
            }
    }
    return out;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"patch_shape", {c.patch_shape[0], c.patch_shape[1], c.patch_shape[2]}},
            {"channels", c.channels},
            {"image_embed", c.image_embed},
            {"coord_embed", c.coord_embed},
            {"time_embed", c.time_embed},
            {"hidden", c.hidden},
            {"schedule", {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
            {"inference_samples", c.inference_samples},
            {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    const auto& ps = j.at("patch_shape");
    if (!ps.is_array() || ps.size() != 3) throw DataError("patch_shape must have three entries");
    for (std::size_t a = 0; a < 3; ++a) c.patch_shape[a] = ps[a].get<std::size_t>();
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.image_embed = j.at("image_embed").get<std::size_t>();
    c.coord_embed = j.at("coord_embed").get<std::size_t>();
    c.time_embed = j.at("time_embed").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    const auto& s = j.at("schedule");
    c.schedule = {s.at("steps").get<std::size_t>(), s.at("beta_start").get<double>(), s.at("beta_end").get<double>()};
    c.inference_samples = j.at("inference_samples").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline std::string serialize_model(const Model<float>& model_in) {
    Model<float> model = model_in;
    auto slots = detail::tensor_slots(model);
    nlohmann::json h;
    h["format"] = kModelFormat;
    h["config"] = config_to_json(model.config);
    h["label_norm"] = {{"mean", model.label_norm.mean}, {"std", model.label_norm.std}};
    h["coord_norm"] = {{"mean", model.coord_norm.mean}, {"std", model.coord_norm.std}};
    nlohmann::json arch;
    auto st = model.stacks();
    for (std::size_t i = 0; i < Model<float>::kStacks; ++i) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& spec : st[i]->specs()) layers.push_back(detail::spec_json(spec));
        arch[model.stack_name(i)] = layers;
    }
    h["architecture"] = arch;
    h["tensors"] = nlohmann::json::array();
    std::size_t values = 0;
    for (const auto& s : slots) {
        h["tensors"].push_back({{"name", s.name}, {"shape", s.tensor->shape}, {"buffer", s.buffer}});
        values += s.tensor->size();
    }

    std::string out(kModelMagic, 8);
    out += h.dump();
    out += '\n';
    out.reserve(out.size() + 4 * values);
    for (const auto& s : slots)
        for (float v : s.tensor->data) detail::put_f32(out, v);
    return out;
}

inline Model<float> deserialize_model(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 8, kModelMagic) != 0)
        throw ParseError(ParseErrc::BadMagic, "not a model file (missing COROMDL1 magic)");
    const std::size_t nl = bytes.find('\n', 8);
    if (nl == std::string::npos) throw ParseError(ParseErrc::Truncated, "model header is not terminated");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(nl));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseErrc::Malformed, std::string("model header: ") + e.what());
    }
    try {
        if (h.at("format").get<int>() != kModelFormat)
            throw ParseError(ParseErrc::VersionMismatch, "model format " + h.at("format").dump());
        ModelConfig config = config_from_json(h.at("config"));
        Model<float> model(config);
        model.label_norm = {h.at("label_norm").at("mean").get<double>(), h.at("label_norm").at("std").get<double>()};
        model.coord_norm.mean = h.at("coord_norm").at("mean").get<std::array<double, 3>>();
        model.coord_norm.std = h.at("coord_norm").at("std").get<std::array<double, 3>>();

        auto slots = detail::tensor_slots(model);
        const auto& listed = h.at("tensors");
        if (listed.size() != slots.size())
            throw ParseError(ParseErrc::CountMismatch, "model lists " + std::to_string(listed.size()) +
                                                           " tensors, architecture has " + std::to_string(slots.size()));
        std::size_t values = 0;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (listed[i].at("name").get<std::string>() != slots[i].name ||
                listed[i].at("shape").get<nn::Shape>() != slots[i].tensor->shape)
                throw ParseError(ParseErrc::Malformed, "tensor " + std::to_string(i) + " (" +
                                                           listed[i].at("name").get<std::string>() +
                                                           ") does not match the architecture");
            values += slots[i].tensor->size();
        }
        const std::size_t payload = bytes.size() - nl - 1;
        if (payload != 4 * values)
            throw ParseError(ParseErrc::LengthMismatch, "model payload has " + std::to_string(payload) +
                                                            " bytes, expected " + std::to_string(4 * values));
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + nl + 1;
        for (auto& s : slots)
            for (float& v : s.tensor->data) {
                v = detail::get_f32(p);
                p += 4;
            }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseErrc::MissingElement, std::string("model header: ") + e.what());
    }
}

inline void save_model(const Model<float>& model, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError(ParseErrc::Io, "cannot write " + path.string());
    const std::string bytes = serialize_model(model);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ParseError(ParseErrc::Io, "write failed for " + path.string());
}

inline Model<float> load_model(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError(ParseErrc::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_model(ss.str());
}

}  // namespace coroflow::icd
