#pragma once
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clab/classifier.hpp"
#include "clab/config.hpp"
#include "clab/dataset.hpp"
#include "clab/diffusion.hpp"
#include "clab/metrics.hpp"
#include "clab/snapshot.hpp"

namespace clab {

// One completed loop iteration: where its artifacts live (relative to the
// output directory) and how the sampled set scored against the original.
struct GenerationRecord {
    int index = 0;
    std::string model_path;
    std::string data_path;
    MetricReport metrics;
    double final_loss = 0.0;
    double train_seconds = 0.0;
    double sample_seconds = 0.0;
};

struct RunHooks {
    std::function<void(const GenerationRecord&)> on_generation;
    // Stop once this many generations are complete; the run can be resumed
    // later. -1 runs to the configured end.
    int stop_after = -1;
};

// Builds the original dataset D0 from the config.
inline Dataset build_original_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset_kind == "mixture")
        return gaussian_mixture(cfg.dataset_classes, cfg.n_per_class, circle_means(cfg.dataset_classes, cfg.radius),
                                cfg.sigma, seed);
    if (cfg.dataset_kind == "glyphs") return glyph_dataset(cfg.n_per_class, cfg.jitter, seed, cfg.translate);
    return load_idx(cfg.idx_images, cfg.idx_labels);
}

// Training set for one generation: a lambda-mixture of the previous
// generation's samples and the original data, always |original| samples.
// lambda = 1 is pure feedback, lambda = 0 reduces to the original dataset.
inline Dataset make_training_set(const Dataset& original, const Dataset* prev, double lambda, std::uint64_t seed) {
    if (prev == nullptr || lambda == 0.0) {
        Dataset copy = original;
        return copy;
    }
    if (prev->dim != original.dim) throw ShapeError("training set: generation dimension mismatch");
    const std::int64_t n = original.n;
    std::int64_t n_synth = std::llround(lambda * static_cast<double>(n));
    n_synth = std::clamp<std::int64_t>(n_synth, 0, std::min(n, prev->n));
    const std::int64_t n_real = n - n_synth;

    const bool keep_labels = prev->labeled() && original.labeled();
    Dataset out;
    out.dim = original.dim;
    out.n = n;
    out.num_classes = keep_labels ? original.num_classes : 0;
    out.shift = original.shift;
    out.scale = original.scale;
    out.features.reserve(static_cast<std::size_t>(n) * original.dim);

    auto take = [&](const Dataset& src, std::int64_t count, Philox& rng) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(src.n));
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.next_below(i)]);
        for (std::int64_t j = 0; j < count; ++j) {
            const auto r = src.row(idx[static_cast<std::size_t>(j)]);
            out.features.insert(out.features.end(), r.begin(), r.end());
            if (keep_labels) out.labels.push_back(src.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])]);
        }
    };
    Philox rng_synth(seed, 0), rng_real(seed, 1);
    take(*prev, n_synth, rng_synth);
    take(original, n_real, rng_real);
    return out;
}

namespace detail {

namespace fs = std::filesystem;

inline Matrix featurize_dataset(const Dataset& ds, const Classifier* clf) {
    if (clf == nullptr) {
        Matrix out(static_cast<int>(ds.n), ds.dim);
        for (std::int64_t i = 0; i < ds.n; ++i) {
            const auto r = ds.row(i);
            for (int d = 0; d < ds.dim; ++d) out(static_cast<int>(i), d) = r[static_cast<std::size_t>(d)];
        }
        return out;
    }
    Matrix out(static_cast<int>(ds.n), clf->feature_dim());
    for (std::int64_t i = 0; i < ds.n; ++i) {
        const auto f = features(*clf, ds.row(i));
        for (int d = 0; d < out.cols; ++d) out(static_cast<int>(i), d) = f[static_cast<std::size_t>(d)];
    }
    return out;
}

inline Json metric_report_to_json(const MetricReport& r) {
    Json j;
    j["fid"] = r.fid;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["density"] = r.density;
    j["coverage"] = r.coverage;
    j["accuracy"] = r.accuracy ? Json(*r.accuracy) : Json(nullptr);
    j["cross_entropy"] = r.cross_entropy ? Json(*r.cross_entropy) : Json(nullptr);
    j["per_class_accuracy"] = r.per_class_accuracy;
    j["per_class_count"] = r.per_class_count;
    j["fid_regularized"] = r.fid_regularized;
    return j;
}

inline MetricReport metric_report_from_json(int generation, const Json& j) {
    MetricReport r;
    r.generation = generation;
    r.fid = j.at("fid").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.density = j.at("density").get<double>();
    r.coverage = j.at("coverage").get<double>();
    if (!j.at("accuracy").is_null()) r.accuracy = j.at("accuracy").get<double>();
    if (!j.at("cross_entropy").is_null()) r.cross_entropy = j.at("cross_entropy").get<double>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    r.per_class_count = j.at("per_class_count").get<std::vector<std::int64_t>>();
    r.fid_regularized = j.at("fid_regularized").get<bool>();
    return r;
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    binio::write_file(tmp.string(), text);
    fs::rename(tmp, path);
}

inline std::string hash_of_file(const fs::path& path) { return binio::fnv1a64_hex(binio::read_file(path.string())); }

// All state a running experiment carries between generations.
struct RunState {
    ExperimentConfig cfg;
    FlatConfig flat;
    fs::path dir;
    Schedule schedule;
    Dataset original;
    std::optional<Classifier> clf;
    bool conditional = false;
    bool classifier_features = false;
    Matrix real_feats;
    MomentSummary real_moments;
    ManifoldIndex real_manifold;
    Json manifest;
    std::vector<GenerationRecord> records;

    const Classifier* featurizer() const { return classifier_features ? &*clf : nullptr; }
};

inline void save_manifest(RunState& st) {
    write_text_atomic(st.dir / "manifest.json", st.manifest.dump(2) + "\n");
}

inline void write_reports(const RunState& st) {
    std::vector<MetricReport> reports;
    for (const auto& rec : st.records) reports.push_back(rec.metrics);
    write_text_atomic(st.dir / "metrics.csv", metrics_csv(reports));
    write_text_atomic(st.dir / "per_class.csv", per_class_csv(reports));
}

// Decides run-wide modes and computes the reference-side metric state.
inline void prepare_state(RunState& st) {
    st.schedule = make_schedule(st.cfg.T, st.cfg.beta_start, st.cfg.beta_end);
    st.conditional = st.cfg.guidance_enabled && st.original.labeled() && st.cfg.class_embed_dim > 0;
    if (st.cfg.featurizer == "classifier")
        st.classifier_features = true;
    else if (st.cfg.featurizer == "identity")
        st.classifier_features = false;
    else
        st.classifier_features = st.original.dim > 2 && st.original.labeled();
    if (st.classifier_features && !st.original.labeled())
        throw ConfigError("metrics.featurizer=classifier requires labeled data");
    st.real_feats = featurize_dataset(st.original, st.featurizer());
    st.real_moments = moments(st.real_feats);
    if (st.cfg.metrics_k >= st.original.n) throw ConfigError("metrics.k must be smaller than the dataset");
    st.real_manifold = build_manifold(st.real_feats, st.cfg.metrics_k);
}

inline GenerationRecord run_one_generation(RunState& st, int g, const Dataset* prev) {
    using clock = std::chrono::steady_clock;
    const ExperimentConfig& cfg = st.cfg;
    const std::uint64_t gen_seed = Philox::derive(cfg.seed, 2 + static_cast<std::uint64_t>(g));

    const Dataset train_set =
        make_training_set(st.original, g == 0 ? nullptr : prev, cfg.synthetic_fraction, Philox::derive(gen_seed, 3));

    NetworkSpec spec;
    spec.data_dim = st.original.dim;
    spec.hidden = cfg.model_hidden;
    spec.output_dim = st.original.dim;
    spec.time_embed_dim = cfg.time_embed_dim;
    spec.max_timestep = cfg.T;
    const bool train_conditional = st.conditional && train_set.labeled();
    if (train_conditional) {
        spec.class_embed_dim = cfg.class_embed_dim;
        spec.num_classes = st.original.num_classes;
    }
    Network net = init_network(spec, Philox::derive(gen_seed, 0));

    const auto t0 = clock::now();
    const auto stats = train_diffusion(net, train_set, st.schedule, cfg.guidance, cfg.train, Philox::derive(gen_seed, 1));
    const auto t1 = clock::now();

    const LabelPlan plan =
        train_conditional ? LabelPlan::balanced(st.original.num_classes) : LabelPlan::none();
    Dataset generated =
        sample(net, st.original.n, st.schedule, cfg.sampler, cfg.guidance, plan, Philox::derive(gen_seed, 2), cfg.threads);
    const auto t2 = clock::now();
    generated.generation = g;
    generated.shift = st.original.shift;
    generated.scale = st.original.scale;

    GenerationRecord rec;
    rec.index = g;
    rec.final_loss = stats.final_loss;
    rec.train_seconds = std::chrono::duration<double>(t1 - t0).count();
    rec.sample_seconds = std::chrono::duration<double>(t2 - t1).count();

    const Matrix gen_feats = featurize_dataset(generated, st.featurizer());
    MetricReport& rep = rec.metrics;
    rep.generation = g;
    bool regularized = false;
    rep.fid = frechet_from_moments(st.real_moments, moments(gen_feats), &regularized);
    rep.fid_regularized = regularized;
    rep.precision = precision(st.real_manifold, gen_feats);
    rep.recall = recall(build_manifold(gen_feats, cfg.metrics_k), st.real_feats);
    rep.density = density(st.real_manifold, gen_feats);
    rep.coverage = coverage(st.real_manifold, gen_feats);
    if (generated.labeled() && st.clf) {
        const auto fid_rep = classifier_fidelity(*st.clf, generated);
        rep.accuracy = fid_rep.accuracy;
        rep.cross_entropy = fid_rep.cross_entropy;
        rep.per_class_accuracy = fid_rep.per_class_accuracy;
        rep.per_class_count = fid_rep.per_class_count;
    }

    const std::string gen_dir = "gen_" + std::to_string(g);
    fs::create_directories(st.dir / gen_dir);
    rec.model_path = gen_dir + "/model.clnn";
    rec.data_path = gen_dir + "/data.gld1";
    Snapshot snap{"DIFF", std::move(net), {cfg.beta_start, cfg.beta_end}};
    const std::string model_bytes = encode_snapshot(snap);
    binio::write_file((st.dir / rec.model_path).string(), model_bytes);
    const std::string data_bytes = encode_gld1(generated);
    binio::write_file((st.dir / rec.data_path).string(), data_bytes);

    Json entry;
    entry["index"] = g;
    entry["model"] = rec.model_path;
    entry["model_hash"] = binio::fnv1a64_hex(model_bytes);
    entry["data"] = rec.data_path;
    entry["data_hash"] = binio::fnv1a64_hex(data_bytes);
    entry["completed"] = true;
    entry["final_loss"] = rec.final_loss;
    entry["train_seconds"] = rec.train_seconds;
    entry["sample_seconds"] = rec.sample_seconds;
    entry["metrics"] = metric_report_to_json(rec.metrics);
    st.manifest["generations"].push_back(entry);
    return rec;
}

inline std::vector<GenerationRecord> continue_run(RunState& st, const RunHooks& hooks) {
    const int done = static_cast<int>(st.records.size());
    Dataset prev;
    if (done > 0 && done < st.cfg.generations)
        prev = read_gld1((st.dir / st.records.back().data_path).string());
    for (int g = done; g < st.cfg.generations; ++g) {
        if (hooks.stop_after >= 0 && g >= hooks.stop_after) break;
        GenerationRecord rec = run_one_generation(st, g, g == 0 ? nullptr : &prev);
        prev = read_gld1((st.dir / rec.data_path).string());
        st.records.push_back(std::move(rec));
        save_manifest(st);
        write_reports(st);
        if (hooks.on_generation) hooks.on_generation(st.records.back());
    }
    return st.records;
}

// Rebuilds RunState from an existing manifest, verifying content hashes.
inline RunState load_state(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw IntegrityError(manifest_path.string() + ": no manifest found");
    Json manifest;
    try {
        manifest = Json::parse(binio::read_file(manifest_path.string()));
    } catch (const Json::exception& e) {
        throw IntegrityError(manifest_path.string() + ": corrupt manifest (" + std::string(e.what()) + ")");
    }

    RunState st;
    st.dir = dir;
    st.manifest = manifest;
    try {
        for (auto it = manifest.at("config").begin(); it != manifest.at("config").end(); ++it)
            st.flat[it.key()] = it.value();
        st.cfg = build_experiment_config(st.flat);

        const std::string d0_path = manifest.at("files").at("data").get<std::string>();
        const std::string d0_hash = manifest.at("files").at("data_hash").get<std::string>();
        const std::string d0_bytes = binio::read_file((dir / d0_path).string());
        if (binio::fnv1a64_hex(d0_bytes) != d0_hash)
            throw IntegrityError("manifest hash mismatch on " + d0_path);
        st.original = read_gld1((dir / d0_path).string());

        if (!manifest.at("files").at("classifier").is_null()) {
            const std::string clf_path = manifest.at("files").at("classifier").get<std::string>();
            const std::string clf_hash = manifest.at("files").at("classifier_hash").get<std::string>();
            const std::string clf_bytes = binio::read_file((dir / clf_path).string());
            if (binio::fnv1a64_hex(clf_bytes) != clf_hash)
                throw IntegrityError("manifest hash mismatch on " + clf_path);
            Snapshot snap = read_snapshot((dir / clf_path).string());
            if (snap.role != "CLSF") throw IntegrityError(clf_path + ": expected a CLSF snapshot");
            Classifier clf;
            clf.net = std::move(snap.net);
            clf.held_out_accuracy = snap.aux.empty() ? 0.0 : snap.aux[0];
            st.clf = std::move(clf);
        }

        for (const auto& entry : manifest.at("generations")) {
            GenerationRecord rec;
            rec.index = entry.at("index").get<int>();
            rec.model_path = entry.at("model").get<std::string>();
            rec.data_path = entry.at("data").get<std::string>();
            rec.final_loss = entry.at("final_loss").get<double>();
            rec.train_seconds = entry.at("train_seconds").get<double>();
            rec.sample_seconds = entry.at("sample_seconds").get<double>();
            rec.metrics = metric_report_from_json(rec.index, entry.at("metrics"));
            for (const auto& [path, hash] :
                 {std::pair{rec.model_path, entry.at("model_hash").get<std::string>()},
                  std::pair{rec.data_path, entry.at("data_hash").get<std::string>()}}) {
                if (!fs::exists(dir / path)) throw IntegrityError("manifest lists missing file " + path);
                if (hash_of_file(dir / path) != hash) throw IntegrityError("manifest hash mismatch on " + path);
            }
            if (rec.index != static_cast<int>(st.records.size()))
                throw IntegrityError("manifest generations are not a contiguous prefix");
            st.records.push_back(std::move(rec));
        }
    } catch (const Json::exception& e) {
        throw IntegrityError(manifest_path.string() + ": corrupt manifest (" + std::string(e.what()) + ")");
    }
    prepare_state(st);
    return st;
}

}  // namespace detail

// Runs the full feedback experiment: generation 0 trains on the original
// dataset, every later generation trains on a synthetic_fraction-mixture of
// its predecessor's samples, and every generation is measured against the
// original. If the output directory already holds a manifest for the same
// config, the run continues where it left off.
inline std::vector<GenerationRecord> run_experiment(const FlatConfig& config, const RunHooks& hooks = {}) {
    namespace fs = std::filesystem;
    const ExperimentConfig cfg = build_experiment_config(config);
    const fs::path dir = cfg.out_dir;

    if (fs::exists(dir / "manifest.json")) {
        detail::RunState st = detail::load_state(dir);
        if (st.flat != config)
            throw IntegrityError((dir / "manifest.json").string() + ": existing run uses a different config");
        return detail::continue_run(st, hooks);
    }

    fs::create_directories(dir);
    detail::RunState st;
    st.cfg = cfg;
    st.flat = config;
    st.dir = dir;

    st.original = build_original_dataset(cfg, Philox::derive(cfg.seed, 0));
    const std::string d0_bytes = encode_gld1(st.original);
    binio::write_file((dir / "d0.gld1").string(), d0_bytes);

    Json files;
    files["data"] = "d0.gld1";
    files["data_hash"] = binio::fnv1a64_hex(d0_bytes);
    files["classifier"] = nullptr;
    files["classifier_hash"] = nullptr;
    if (st.original.labeled() && st.original.num_classes >= 2) {
        st.clf = train_classifier(st.original, cfg.classifier_epochs, cfg.classifier_lr, Philox::derive(cfg.seed, 1),
                                  cfg.classifier_hidden);
        Snapshot snap{"CLSF", st.clf->net, {st.clf->held_out_accuracy}};
        const std::string clf_bytes = encode_snapshot(snap);
        binio::write_file((dir / "classifier.clnn").string(), clf_bytes);
        files["classifier"] = "classifier.clnn";
        files["classifier_hash"] = binio::fnv1a64_hex(clf_bytes);
    }

    st.manifest["format"] = 1;
    st.manifest["config"] = Json(config);
    st.manifest["files"] = files;
    st.manifest["generations"] = Json::array();
    detail::prepare_state(st);
    detail::save_manifest(st);
    return detail::continue_run(st, hooks);
}

// Continues an interrupted run from its output directory alone; a completed
// run is a no-op. Produces byte-identical results to an uninterrupted run.
inline std::vector<GenerationRecord> resume(const std::string& out_dir, const RunHooks& hooks = {}) {
    detail::RunState st = detail::load_state(out_dir);
    return detail::continue_run(st, hooks);
}

}  // namespace clab
