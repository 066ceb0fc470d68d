#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "clab/diffusion.hpp"
#include "clab/errors.hpp"

namespace clab {

using Json = nlohmann::json;

// Experiment configuration document: a flat JSON object with dotted keys.
// Unknown keys are rejected; every key has a default.
using FlatConfig = std::map<std::string, Json>;

inline FlatConfig default_config() {
    return {
        {"dataset.kind", "mixture"},      // mixture | glyphs | idx
        {"dataset.classes", 8},           // mixture components
        {"dataset.n_per_class", 250},
        {"dataset.sigma", 0.3},
        {"dataset.radius", 4.0},
        {"dataset.jitter", 0.1},          // glyph noise level
        {"dataset.translate", true},      // glyph +/-1 pixel shifts
        {"dataset.images", ""},           // idx image file
        {"dataset.labels", ""},           // idx label file
        {"model.hidden", Json::array({128, 128})},
        {"model.time_embed_dim", 16},
        {"model.class_embed_dim", 8},
        {"diffusion.T", 400},
        {"diffusion.beta_start", 1e-4},
        {"diffusion.beta_end", 0.02},
        {"train.epochs", 30},
        {"train.batch_size", 128},
        {"train.lr", 1e-3},
        {"guidance.enabled", true},       // conditional models when data is labeled
        {"guidance.scale", 1.0},
        {"guidance.p_uncond", 0.1},
        {"sampler.kind", "ddpm"},         // ddpm | ddim
        {"sampler.ddim_steps", 50},
        {"loop.generations", 9},
        {"loop.synthetic_fraction", 1.0},
        {"metrics.k", 3},
        {"metrics.featurizer", "auto"},   // auto | identity | classifier
        {"classifier.hidden", Json::array({64})},
        {"classifier.epochs", 30},
        {"classifier.lr", 1e-3},
        {"seed", 1},
        {"out", "run"},
        {"threads", 0},
    };
}

// Overlays `overrides` onto the defaults, rejecting unknown keys.
inline FlatConfig merge_config(const FlatConfig& overrides) {
    FlatConfig cfg = default_config();
    for (const auto& [key, value] : overrides) {
        auto it = cfg.find(key);
        if (it == cfg.end()) throw ConfigError("unknown config key \"" + key + "\"");
        it->second = value;
    }
    return cfg;
}

inline FlatConfig parse_config_text(const std::string& text, const std::string& origin) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError(origin + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");
    FlatConfig out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.value().is_object()) throw ConfigError(origin + ": key \"" + it.key() + "\" must be a flat value");
        out[it.key()] = it.value();
    }
    return out;
}

// Everything run_experiment needs, decoded from a flat config.
struct ExperimentConfig {
    std::string dataset_kind = "mixture";
    int dataset_classes = 8;
    int n_per_class = 250;
    double sigma = 0.3;
    double radius = 4.0;
    double jitter = 0.1;
    bool translate = true;
    std::string idx_images, idx_labels;

    std::vector<int> model_hidden{128, 128};
    int time_embed_dim = 16;
    int class_embed_dim = 8;

    int T = 400;
    double beta_start = 1e-4, beta_end = 0.02;
    TrainConfig train;

    bool guidance_enabled = true;
    GuidanceConfig guidance;
    SamplerConfig sampler;

    int generations = 9;
    double synthetic_fraction = 1.0;

    int metrics_k = 3;
    std::string featurizer = "auto";

    std::vector<int> classifier_hidden{64};
    int classifier_epochs = 30;
    double classifier_lr = 1e-3;

    std::uint64_t seed = 1;
    std::string out_dir = "run";
    int threads = 0;

    void validate() const {
        if (dataset_kind != "mixture" && dataset_kind != "glyphs" && dataset_kind != "idx")
            throw ConfigError("dataset.kind must be mixture, glyphs or idx");
        if (generations < 1) throw ConfigError("loop.generations must be >= 1");
        if (synthetic_fraction < 0.0 || synthetic_fraction > 1.0)
            throw ConfigError("loop.synthetic_fraction must be in [0, 1]");
        if (metrics_k < 1) throw ConfigError("metrics.k must be >= 1");
        if (featurizer != "auto" && featurizer != "identity" && featurizer != "classifier")
            throw ConfigError("metrics.featurizer must be auto, identity or classifier");
        if (dataset_kind == "idx" && (idx_images.empty() || idx_labels.empty()))
            throw ConfigError("dataset.images and dataset.labels are required for dataset.kind=idx");
        train.validate();
        guidance.validate();
    }
};

namespace detail {

template <typename T>
T config_get(const FlatConfig& cfg, const std::string& key) {
    try {
        return cfg.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError("config key \"" + key + "\" has the wrong type");
    }
}

inline std::vector<int> config_int_list(const FlatConfig& cfg, const std::string& key) {
    const Json& j = cfg.at(key);
    if (!j.is_array()) throw ConfigError("config key \"" + key + "\" must be an array of integers");
    std::vector<int> out;
    for (const auto& v : j) {
        if (!v.is_number_integer()) throw ConfigError("config key \"" + key + "\" must be an array of integers");
        out.push_back(v.get<int>());
    }
    return out;
}

}  // namespace detail

inline ExperimentConfig build_experiment_config(const FlatConfig& merged) {
    using detail::config_get;
    ExperimentConfig c;
    c.dataset_kind = config_get<std::string>(merged, "dataset.kind");
    c.dataset_classes = config_get<int>(merged, "dataset.classes");
    c.n_per_class = config_get<int>(merged, "dataset.n_per_class");
    c.sigma = config_get<double>(merged, "dataset.sigma");
    c.radius = config_get<double>(merged, "dataset.radius");
    c.jitter = config_get<double>(merged, "dataset.jitter");
    c.translate = config_get<bool>(merged, "dataset.translate");
    c.idx_images = config_get<std::string>(merged, "dataset.images");
    c.idx_labels = config_get<std::string>(merged, "dataset.labels");
    c.model_hidden = detail::config_int_list(merged, "model.hidden");
    c.time_embed_dim = config_get<int>(merged, "model.time_embed_dim");
    c.class_embed_dim = config_get<int>(merged, "model.class_embed_dim");
    c.T = config_get<int>(merged, "diffusion.T");
    c.beta_start = config_get<double>(merged, "diffusion.beta_start");
    c.beta_end = config_get<double>(merged, "diffusion.beta_end");
    c.train.epochs = config_get<int>(merged, "train.epochs");
    c.train.batch_size = config_get<int>(merged, "train.batch_size");
    c.train.lr = config_get<double>(merged, "train.lr");
    c.guidance_enabled = config_get<bool>(merged, "guidance.enabled");
    c.guidance.scale = config_get<double>(merged, "guidance.scale");
    c.guidance.p_uncond = config_get<double>(merged, "guidance.p_uncond");
    const auto sampler_kind = config_get<std::string>(merged, "sampler.kind");
    if (sampler_kind == "ddpm")
        c.sampler.kind = SamplerKind::Ddpm;
    else if (sampler_kind == "ddim")
        c.sampler.kind = SamplerKind::Ddim;
    else
        throw ConfigError("sampler.kind must be ddpm or ddim");
    c.sampler.ddim_steps = config_get<int>(merged, "sampler.ddim_steps");
    c.generations = config_get<int>(merged, "loop.generations");
    c.synthetic_fraction = config_get<double>(merged, "loop.synthetic_fraction");
    c.metrics_k = config_get<int>(merged, "metrics.k");
    c.featurizer = config_get<std::string>(merged, "metrics.featurizer");
    c.classifier_hidden = detail::config_int_list(merged, "classifier.hidden");
    c.classifier_epochs = config_get<int>(merged, "classifier.epochs");
    c.classifier_lr = config_get<double>(merged, "classifier.lr");
    c.seed = config_get<std::uint64_t>(merged, "seed");
    c.out_dir = config_get<std::string>(merged, "out");
    c.threads = config_get<int>(merged, "threads");
    c.validate();
    return c;
}

}  // namespace clab
