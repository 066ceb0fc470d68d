// collapse-lab: run self-consuming diffusion training loops and measure the
// degradation of fidelity and diversity across generations.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clab/clab.hpp"

namespace fs = std::filesystem;
using clab::FlatConfig;
using clab::Json;

namespace {

int env_threads_default() {
    if (const char* env = std::getenv("COLLAPSE_LAB_THREADS")) {
        try {
            return std::max(0, std::stoi(env));
        } catch (...) {
            throw clab::ConfigError("COLLAPSE_LAB_THREADS is not an integer");
        }
    }
    return 0;
}

Json parse_override_value(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const Json::exception&) {
        return Json(text);  // bare strings may appear unquoted on the command line
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<int> generations;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::vector<std::string> sets;
    int stop_after = -1;
};

int cmd_run(const RunArgs& args) {
    FlatConfig overrides;
    if (!args.config_path.empty())
        overrides = clab::parse_config_text(clab::binio::read_file(args.config_path), args.config_path);
    for (const auto& kv : args.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw clab::ConfigError("--set expects key=value, got \"" + kv + "\"");
        overrides[kv.substr(0, eq)] = parse_override_value(kv.substr(eq + 1));
    }
    if (!args.out_dir.empty()) overrides["out"] = args.out_dir;
    if (args.generations) overrides["loop.generations"] = *args.generations;
    if (args.seed) overrides["seed"] = *args.seed;
    if (args.threads)
        overrides["threads"] = *args.threads;
    else if (int t = env_threads_default(); t > 0 && overrides.find("threads") == overrides.end())
        overrides["threads"] = t;

    clab::RunHooks hooks;
    hooks.stop_after = args.stop_after;
    hooks.on_generation = [](const clab::GenerationRecord& rec) {
        std::printf("gen %d  loss %s  fid %s\n", rec.index, clab::format_g6(rec.final_loss).c_str(),
                    clab::format_g6(rec.metrics.fid).c_str());
        std::fflush(stdout);
    };

    // A bare `run --out DIR` on an existing run resumes from its manifest;
    // with explicit settings the config must match the recorded one.
    const bool bare_resume = args.config_path.empty() && args.sets.empty() && !args.generations && !args.seed;
    FlatConfig merged = clab::merge_config(overrides);
    if (bare_resume && fs::exists(fs::path(merged.at("out").get<std::string>()) / "manifest.json"))
        clab::resume(merged.at("out").get<std::string>(), hooks);
    else
        clab::run_experiment(merged, hooks);
    return 0;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

int cmd_metrics(const std::string& real_path, const std::string& gen_path, int k, const std::string& clf_path) {
    const clab::Dataset real = clab::read_gld1(real_path);
    const clab::Dataset gen = clab::read_gld1(gen_path);
    if (real.dim != gen.dim)
        throw clab::ShapeError("datasets have different dimensions (" + std::to_string(real.dim) + " vs " +
                               std::to_string(gen.dim) + ")");

    std::optional<clab::Classifier> clf;
    if (!clf_path.empty()) {
        clab::Snapshot snap = clab::read_snapshot(clf_path);
        if (snap.role != "CLSF") throw clab::ConfigError(clf_path + " is not a classifier snapshot");
        clf.emplace();
        clf->net = std::move(snap.net);
        clf->held_out_accuracy = snap.aux.empty() ? 0.0 : snap.aux[0];
    }

    const clab::Classifier* featurizer = clf ? &*clf : nullptr;
    const clab::Matrix real_feats = clab::detail::featurize_dataset(real, featurizer);
    const clab::Matrix gen_feats = clab::detail::featurize_dataset(gen, featurizer);

    clab::MetricReport rep;
    bool regularized = false;
    rep.fid = clab::frechet_distance(real_feats, gen_feats, &regularized);
    rep.fid_regularized = regularized;
    const auto real_manifold = clab::build_manifold(real_feats, k);
    rep.precision = clab::precision(real_manifold, gen_feats);
    rep.recall = clab::recall(clab::build_manifold(gen_feats, k), real_feats);
    rep.density = clab::density(real_manifold, gen_feats);
    rep.coverage = clab::coverage(real_manifold, gen_feats);
    if (clf && gen.labeled()) {
        const auto f = clab::classifier_fidelity(*clf, gen);
        rep.accuracy = f.accuracy;
        rep.cross_entropy = f.cross_entropy;
    }
    std::printf("fid,precision,recall,density,coverage,accuracy,cross_entropy\n");
    std::printf("%s\n", clab::metrics_csv_row(rep, false).c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string model_path;
    std::int64_t n = 100;
    std::string sampler = "ddpm";
    int ddim_steps = 50;
    std::optional<double> guidance;
    std::uint64_t seed = 1;
    std::string out_path;
    std::optional<int> threads;
};

int cmd_sample(const SampleArgs& args) {
    clab::Snapshot snap = clab::read_snapshot(args.model_path);
    if (snap.role != "DIFF") throw clab::ConfigError(args.model_path + " is not a diffusion model snapshot");
    if (snap.aux.size() < 2) throw clab::FormatError(args.model_path + ": snapshot lacks schedule parameters");
    const clab::Schedule schedule =
        clab::make_schedule(snap.net.spec.max_timestep, snap.aux[0], snap.aux[1]);

    clab::SamplerConfig sc;
    if (args.sampler == "ddpm")
        sc.kind = clab::SamplerKind::Ddpm;
    else if (args.sampler == "ddim")
        sc.kind = clab::SamplerKind::Ddim;
    else
        throw clab::ConfigError("--sampler must be ddpm or ddim");
    sc.ddim_steps = args.ddim_steps;

    const bool conditional = snap.net.spec.conditional();
    if (args.guidance && !conditional)
        throw clab::ConfigError("--guidance given, but this model is unconditional (it has no class embeddings)");
    clab::GuidanceConfig g;
    g.scale = args.guidance.value_or(1.0);
    const clab::LabelPlan plan =
        conditional ? clab::LabelPlan::balanced(snap.net.spec.num_classes) : clab::LabelPlan::none();

    const int threads = args.threads.value_or(env_threads_default());
    clab::Dataset ds = clab::sample(snap.net, args.n, schedule, sc, g, plan, args.seed, threads);
    clab::write_gld1(ds, args.out_path);
    std::printf("wrote %lld samples of dimension %d to %s\n", static_cast<long long>(ds.n), ds.dim,
                args.out_path.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

int cmd_plot(const std::string& csv_path, const std::string& out_dir) {
    const std::string text = clab::binio::read_file(csv_path);
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    if (lines.empty()) throw clab::ConfigError(csv_path + ": empty CSV");

    const auto header = split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "generation")
        throw clab::ConfigError(csv_path + ": expected a header starting with \"generation\"");
    if (lines.size() < 2) throw clab::ConfigError(csv_path + ": CSV has no data rows");

    std::vector<double> generations;
    std::vector<std::vector<std::optional<double>>> columns(header.size() - 1);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        if (lines[r].empty()) continue;
        const auto cells = split_csv_line(lines[r]);
        if (cells.size() != header.size())
            throw clab::ConfigError(csv_path + ": row " + std::to_string(r + 1) + " has " +
                                    std::to_string(cells.size()) + " cells, expected " +
                                    std::to_string(header.size()));
        try {
            generations.push_back(std::stod(cells[0]));
            for (std::size_t c = 1; c < cells.size(); ++c)
                columns[c - 1].push_back(cells[c].empty() ? std::nullopt : std::optional<double>(std::stod(cells[c])));
        } catch (const std::exception&) {
            throw clab::ConfigError(csv_path + ": non-numeric cell in row " + std::to_string(r + 1));
        }
    }

    fs::create_directories(out_dir);
    std::string tidy = "metric,generation,value\n";
    for (std::size_t c = 0; c < columns.size(); ++c) {
        std::vector<double> xs, ys;
        for (std::size_t r = 0; r < generations.size(); ++r)
            if (columns[c][r]) {
                xs.push_back(generations[r]);
                ys.push_back(*columns[c][r]);
                tidy += header[c + 1] + "," + clab::format_g6(generations[r]) + "," + clab::format_g6(*columns[c][r]) +
                        "\n";
            }
        if (xs.empty()) continue;
        const std::string svg = clab::svg_line_chart(header[c + 1], xs, ys);
        clab::binio::write_file((fs::path(out_dir) / (header[c + 1] + ".svg")).string(), svg);
    }
    clab::binio::write_file((fs::path(out_dir) / "plots.csv").string(), tidy);
    return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
    const std::string bytes = clab::binio::read_file(path);
    if (bytes.size() >= 4 && bytes.compare(0, 4, "GLD1") == 0) {
        const clab::Dataset ds = clab::read_gld1(path);
        std::printf("format: GLD1\nversion: 1\nsamples: %lld\ndimension: %d\nlabeled: %s\n",
                    static_cast<long long>(ds.n), ds.dim, ds.labeled() ? "yes" : "no");
        if (ds.labeled()) std::printf("classes: %d\n", ds.num_classes);
        return 0;
    }
    if (bytes.size() >= 4 && bytes.compare(0, 4, "CLNN") == 0) {
        const clab::Snapshot snap = clab::read_snapshot(path);
        const auto& spec = snap.net.spec;
        std::string hidden;
        for (int w : spec.hidden) hidden += (hidden.empty() ? "" : " ") + std::to_string(w);
        std::printf("format: CLNN\nversion: 1\nrole: %s\ndata_dim: %d\noutput_dim: %d\nhidden: %s\n",
                    snap.role.c_str(), spec.data_dim, spec.output_dim, hidden.c_str());
        std::printf("time_embed_dim: %d\nclass_embed_dim: %d\nnum_classes: %d\nmax_timestep: %d\n",
                    spec.time_embed_dim, spec.class_embed_dim, spec.num_classes, spec.max_timestep);
        std::printf("activation: %s\nparameters: %zu\n",
                    spec.hidden_activation == clab::Activation::Silu ? "silu" : "identity",
                    snap.net.parameter_count());
        std::string aux;
        for (double v : snap.aux) aux += (aux.empty() ? "" : " ") + clab::format_g6(v);
        if (!aux.empty()) std::printf("aux: %s\n", aux.c_str());
        return 0;
    }
    throw clab::FormatError(path + ": unrecognized file (expected GLD1 or CLNN magic)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"collapse-lab: generational diffusion feedback-loop simulator"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Run (or resume) a feedback-loop experiment");
    run->add_option("--config", run_args.config_path, "JSON config file (flat object with dotted keys)");
    run->add_option("--out", run_args.out_dir, "Output directory (overrides config key \"out\")");
    run->add_option("--generations", run_args.generations, "Number of generations (overrides loop.generations)");
    run->add_option("--seed", run_args.seed, "Master seed (overrides config key \"seed\")");
    run->add_option("--threads", run_args.threads, "Worker thread cap (0 = machine parallelism)");
    run->add_option("--set", run_args.sets, "Override any config key, e.g. --set diffusion.T=200")
        ->take_all();
    run->add_option("--stop-after", run_args.stop_after,
                    "Stop after this many completed generations (resume later with the same --out)");

    std::string m_real, m_gen, m_clf;
    int m_k = 3;
    auto* metrics = app.add_subcommand("metrics", "Compute the metric suite between two GLD1 files");
    metrics->add_option("real", m_real, "Reference GLD1 file")->required();
    metrics->add_option("generated", m_gen, "Generated GLD1 file")->required();
    metrics->add_option("--k", m_k, "Manifold neighbourhood size");
    metrics->add_option("--featurizer", m_clf, "CLSF snapshot used as feature extractor (default: raw coordinates)");

    SampleArgs s_args;
    auto* sample = app.add_subcommand("sample", "Draw samples from a DIFF snapshot into a GLD1 file");
    sample->add_option("model", s_args.model_path, "CLNN snapshot of a diffusion model")->required();
    sample->add_option("--n", s_args.n, "Number of samples");
    sample->add_option("--sampler", s_args.sampler, "ddpm or ddim");
    sample->add_option("--ddim-steps", s_args.ddim_steps, "DDIM step count");
    sample->add_option("--guidance", s_args.guidance, "Guidance scale (conditional models only)");
    sample->add_option("--seed", s_args.seed, "Sampling seed");
    sample->add_option("--out", s_args.out_path, "Output GLD1 path")->required();
    sample->add_option("--threads", s_args.threads, "Worker thread cap");

    std::string p_csv, p_out;
    auto* plot = app.add_subcommand("plot", "Render metrics.csv as SVG line charts plus tidy plots.csv");
    plot->add_option("csv", p_csv, "metrics.csv produced by run")->required();
    plot->add_option("--out", p_out, "Output directory")->required();

    std::string i_path;
    auto* inspect = app.add_subcommand("inspect", "Print the header of a GLD1 or CLNN file");
    inspect->add_option("file", i_path, "File to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cout << "error:config: " << e.what() << "\n";
        return 1;
    }

    try {
        if (run->parsed()) return cmd_run(run_args);
        if (metrics->parsed()) return cmd_metrics(m_real, m_gen, m_k, m_clf);
        if (sample->parsed()) return cmd_sample(s_args);
        if (plot->parsed()) return cmd_plot(p_csv, p_out);
        if (inspect->parsed()) return cmd_inspect(i_path);
    } catch (const clab::ConfigError& e) {
        std::cout << "error:config: " << e.what() << "\n";
        return 1;
    } catch (const clab::ShapeError& e) {
        std::cout << "error:config: " << e.what() << "\n";
        return 1;
    } catch (const clab::UsageError& e) {
        std::cout << "error:config: " << e.what() << "\n";
        return 1;
    } catch (const clab::FormatError& e) {
        std::cout << "error:integrity: " << e.what() << "\n";
        return 3;
    } catch (const clab::IntegrityError& e) {
        std::cout << "error:integrity: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cout << "error:runtime: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
