#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clab/dataset.hpp"
#include "clab/errors.hpp"
#include "clab/nn.hpp"
#include "clab/parallel.hpp"
#include "clab/prng.hpp"

namespace clab {

// Noise schedule, 1-indexed over t = 1..T. Index 0 is the data point
// itself: alpha_bar[0] = 1.
struct Schedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

// Linear beta schedule between beta_start and beta_end.
inline Schedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    Schedule s;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        s.beta[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

// Classifier-free guidance settings. `scale` interpolates between the
// unconditional (0) and conditional (1) noise predictions; `p_uncond` is the
// probability of replacing a training label with the null class.
struct GuidanceConfig {
    double scale = 1.0;
    double p_uncond = 0.1;

    void validate() const {
        if (scale < 0.0) throw ConfigError("guidance: scale must be >= 0");
        if (p_uncond < 0.0 || p_uncond > 1.0) throw ConfigError("guidance: p_uncond must be in [0, 1]");
    }
};

inline void check_timestep(const Schedule& s, int t) {
    if (t < 1 || t > s.T) throw UsageError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
}

// Closed-form jump to noise level t: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
inline std::vector<double> forward_sample(std::span<const double> x0, int t, std::span<const double> eps,
                                          const Schedule& s) {
    check_timestep(s, t);
    if (eps.size() != x0.size()) throw ShapeError("forward_sample: eps dimension mismatch");
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

// Literal t-step noising chain; distributionally equal to forward_sample.
inline std::vector<double> compose_forward_chain(std::span<const double> x0, int t, const Schedule& s, Philox& rng) {
    check_timestep(s, t);
    std::vector<double> x(x0.begin(), x0.end());
    for (int step = 1; step <= t; ++step) {
        const double keep = std::sqrt(1.0 - s.beta[step]);
        const double add = std::sqrt(s.beta[step]);
        for (double& v : x) v = keep * v + add * rng.gaussian();
    }
    return x;
}

// eps_hat = eps_uncond + s * (eps_cond - eps_uncond). The endpoints s = 1
// and s = 0 return the conditional/unconditional branch bitwise, with only
// one forward pass.
inline std::vector<double> guided_epsilon(const Network& net, std::span<const double> x_t, int t, int label,
                                          double scale) {
    if (!net.spec.conditional()) throw UsageError("guided_epsilon: network has no class conditioning");
    if (scale < 0.0) throw UsageError("guided_epsilon: scale must be >= 0");
    if (scale == 1.0) return forward(net, x_t, t, label);
    if (scale == 0.0) return forward(net, x_t, t, net.null_class());
    const auto cond = forward(net, x_t, t, label);
    auto out = forward(net, x_t, t, net.null_class());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * (cond[i] - out[i]);
    return out;
}

namespace detail {

inline std::vector<double> predict_epsilon(const Network& net, std::span<const double> x_t, int t,
                                           std::optional<int> label, double scale) {
    if (!net.spec.conditional()) return forward(net, x_t, t);
    if (!label) return forward(net, x_t, t, net.null_class());
    return guided_epsilon(net, x_t, t, *label, scale);
}

}  // namespace detail

// One ancestral (DDPM) reverse step. The final step (t = 1) is
// deterministic given the noise prediction.
inline std::vector<double> ddpm_step(const Network& net, std::span<const double> x_t, int t, const Schedule& s,
                                     const GuidanceConfig& g, std::optional<int> label, Philox& rng) {
    check_timestep(s, t);
    const auto eps = detail::predict_epsilon(net, x_t, t, label, g.scale);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
    const double eps_coef = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
    const double sigma = std::sqrt(s.beta[t]);
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double mu = inv_sqrt_alpha * (x_t[i] - eps_coef * eps[i]);
        out[i] = t > 1 ? mu + sigma * rng.gaussian() : mu;
    }
    return out;
}

// One deterministic (DDIM, eta = 0) step from t down to t_prev; t_prev = 0
// lands on the data estimate itself.
inline std::vector<double> ddim_step(const Network& net, std::span<const double> x_t, int t, int t_prev,
                                     const Schedule& s, const GuidanceConfig& g, std::optional<int> label) {
    check_timestep(s, t);
    if (t_prev < 0 || t_prev >= t) throw UsageError("ddim_step: need 0 <= t_prev < t");
    const auto eps = detail::predict_epsilon(net, x_t, t, label, g.scale);
    const double ab_t = s.alpha_bar[t];
    const double ab_p = s.alpha_bar[t_prev];
    const double c0 = std::sqrt(ab_p) / std::sqrt(ab_t);
    const double c1 = std::sqrt(1.0 - ab_p) - c0 * std::sqrt(1.0 - ab_t);
    std::vector<double> out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x_t[i] + c1 * eps[i];
    return out;
}

// Strictly decreasing timestep sequence T = t_0 > ... > t_S = 0 with about
// `steps` segments.
inline std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1) throw ConfigError("ddim: step count must be >= 1");
    steps = std::min(steps, T);
    std::vector<int> ts;
    for (int i = 0; i <= steps; ++i) {
        const int t = static_cast<int>(std::llround(static_cast<double>(T) * (steps - i) / steps));
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    return ts;
}

struct LossResult {
    double loss = 0.0;
    Gradients grads;
};

// Noise-prediction objective over a minibatch: t ~ U{1..T}, eps ~ N(0, I),
// loss = mean over the batch of |eps - eps_theta(x_t, t, c)|^2. For
// conditional networks each label is replaced by the null class with
// probability p_uncond. Gradients are accumulated in batch order.
inline LossResult training_loss(const Network& net, const Dataset& ds, std::span<const std::int64_t> indices,
                                const Schedule& s, const GuidanceConfig& g, Philox& rng) {
    if (indices.empty()) throw UsageError("training_loss: empty batch");
    if (ds.dim != net.spec.data_dim) throw ShapeError("training_loss: dataset dimension does not match network");
    const bool conditional = net.spec.conditional();
    if (conditional && !ds.labeled()) throw UsageError("training_loss: conditional network needs labeled data");
    g.validate();

    LossResult res;
    res.grads = Gradients::like(net);
    const int dim = ds.dim;
    const double inv_b = 1.0 / static_cast<double>(indices.size());
    std::vector<double> x0(static_cast<std::size_t>(dim)), eps(static_cast<std::size_t>(dim)),
        grad_out(static_cast<std::size_t>(dim));
    ForwardCache cache;
    for (const auto idx : indices) {
        const auto row = ds.row(idx);
        for (int d = 0; d < dim; ++d) x0[static_cast<std::size_t>(d)] = row[static_cast<std::size_t>(d)];
        const int t = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(s.T)));
        for (auto& e : eps) e = rng.gaussian();
        int label = 0;
        if (conditional) {
            label = ds.labels[static_cast<std::size_t>(idx)];
            if (rng.next_double() < g.p_uncond) label = net.null_class();
        }
        const auto x_t = forward_sample(x0, t, eps, s);
        const auto pred = forward(net, std::span<const double>(x_t), t, label, &cache);
        double sample_loss = 0.0;
        for (int d = 0; d < dim; ++d) {
            const double r = pred[static_cast<std::size_t>(d)] - eps[static_cast<std::size_t>(d)];
            sample_loss += r * r;
            grad_out[static_cast<std::size_t>(d)] = 2.0 * r * inv_b;
        }
        res.loss += sample_loss * inv_b;
        backward_accumulate(net, cache, grad_out, res.grads);
    }
    if (!std::isfinite(res.loss)) throw DivergenceError("training_loss: loss is not finite");
    return res;
}

struct TrainConfig {
    int epochs = 30;
    int batch_size = 128;
    double lr = 1e-3;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    }
};

struct TrainStats {
    double final_loss = 0.0;  // mean loss over the last epoch
};

// Full training loop: shuffled minibatches, Adam updates, deterministic
// under the seed.
inline TrainStats train_diffusion(Network& net, const Dataset& ds, const Schedule& s, const GuidanceConfig& g,
                                  const TrainConfig& tc, std::uint64_t seed) {
    tc.validate();
    ds.validate();
    Philox rng(seed);
    AdamState adam = AdamState::like(net, AdamConfig{.lr = tc.lr});
    std::vector<std::int64_t> order(static_cast<std::size_t>(ds.n));
    std::iota(order.begin(), order.end(), 0);
    TrainStats stats;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
        double epoch_loss = 0.0;
        std::int64_t batches = 0;
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t len = std::min<std::size_t>(tc.batch_size, order.size() - off);
            auto res = training_loss(net, ds, std::span<const std::int64_t>(order.data() + off, len), s, g, rng);
            adam_step(net, res.grads, adam);
            epoch_loss += res.loss;
            ++batches;
        }
        stats.final_loss = epoch_loss / static_cast<double>(batches);
    }
    return stats;
}

enum class SamplerKind { Ddpm, Ddim };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::Ddpm;
    int ddim_steps = 50;
};

// Conditioning labels for sample(): none, balanced across classes
// (label i = i mod K), or an explicit list.
struct LabelPlan {
    enum class Kind { None, Balanced, Explicit } kind = Kind::None;
    int num_classes = 0;
    std::vector<std::uint16_t> labels;

    static LabelPlan none() { return {}; }
    static LabelPlan balanced(int k) { return {Kind::Balanced, k, {}}; }
    static LabelPlan explicit_list(std::vector<std::uint16_t> l, int k) { return {Kind::Explicit, k, std::move(l)}; }
};

// Draws n samples by running the chosen sampler from pure noise down to the
// data estimate. Each sample consumes its own PRNG substream (seed, index),
// so serial and parallel execution produce identical bytes. Outputs are
// clamped to [-1, 1]; conditioned samples carry their conditioning label.
inline Dataset sample(const Network& net, std::int64_t n, const Schedule& s, const SamplerConfig& sc,
                      const GuidanceConfig& g, const LabelPlan& plan, std::uint64_t seed, int threads = 0) {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    g.validate();
    const bool conditioned = plan.kind != LabelPlan::Kind::None;
    if (conditioned && !net.spec.conditional())
        throw UsageError("sample: label conditioning requested on an unconditional model");
    if (plan.kind == LabelPlan::Kind::Balanced && plan.num_classes < 1)
        throw ConfigError("sample: balanced labels need num_classes >= 1");
    if (plan.kind == LabelPlan::Kind::Explicit && static_cast<std::int64_t>(plan.labels.size()) != n)
        throw ConfigError("sample: explicit label list must have n entries");

    const int dim = net.spec.data_dim;
    Dataset out;
    out.n = n;
    out.dim = dim;
    out.features.resize(static_cast<std::size_t>(n) * dim);
    if (conditioned) {
        out.labels.resize(static_cast<std::size_t>(n));
        out.num_classes = plan.num_classes;
    }

    const auto ddim_seq = sc.kind == SamplerKind::Ddim ? ddim_timesteps(s.T, sc.ddim_steps) : std::vector<int>{};

    parallel_for(n, threads, [&](std::int64_t i) {
        Philox rng(seed, static_cast<std::uint64_t>(i));
        std::optional<int> label;
        if (conditioned) {
            const std::uint16_t l = plan.kind == LabelPlan::Kind::Balanced
                                        ? static_cast<std::uint16_t>(i % plan.num_classes)
                                        : plan.labels[static_cast<std::size_t>(i)];
            out.labels[static_cast<std::size_t>(i)] = l;
            label = l;
        }
        std::vector<double> x(static_cast<std::size_t>(dim));
        for (auto& v : x) v = rng.gaussian();
        auto check = [&](int t) {
            if (!all_finite(x))
                throw DivergenceError("sample: non-finite state in sample " + std::to_string(i) + " at step t=" +
                                      std::to_string(t));
        };
        if (sc.kind == SamplerKind::Ddpm) {
            for (int t = s.T; t >= 1; --t) {
                x = ddpm_step(net, x, t, s, g, label, rng);
                check(t);
            }
        } else {
            for (std::size_t k = 0; k + 1 < ddim_seq.size(); ++k) {
                x = ddim_step(net, x, ddim_seq[k], ddim_seq[k + 1], s, g, label);
                check(ddim_seq[k]);
            }
        }
        float* row = out.features.data() + static_cast<std::size_t>(i) * dim;
        for (int d = 0; d < dim; ++d)
            row[d] = static_cast<float>(std::clamp(x[static_cast<std::size_t>(d)], -1.0, 1.0));
    });
    return out;
}

}  // namespace clab
