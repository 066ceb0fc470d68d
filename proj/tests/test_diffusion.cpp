#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "clab/dataset.hpp"
#include "clab/diffusion.hpp"

using namespace clab;

namespace {

// Unconditional identity-free network that predicts zero for every input.
Network zero_net(int dim, int max_t) {
    NetworkSpec spec;
    spec.data_dim = dim;
    spec.hidden = {4};
    spec.output_dim = dim;
    spec.time_embed_dim = 2;
    spec.max_timestep = max_t;
    Network net = init_network(spec, 1);
    for (auto& w : net.weights) w.fill(0.0);
    for (auto& b : net.biases) std::fill(b.begin(), b.end(), 0.0);
    return net;
}

// With T = 1 and all-zero data, x_1 = sqrt(beta_1) * eps, so the linear map
// x / sqrt(beta_1) recovers eps exactly: a handcrafted perfect predictor.
Network exact_predictor_net(int dim, double beta1) {
    NetworkSpec spec;
    spec.data_dim = dim;
    spec.output_dim = dim;
    Network net = init_network(spec, 1);
    net.weights[0].fill(0.0);
    for (int i = 0; i < dim; ++i) net.weights[0](i, i) = 1.0 / std::sqrt(beta1);
    return net;
}

Dataset zero_dataset(int n, int dim) {
    Dataset ds;
    ds.n = n;
    ds.dim = dim;
    ds.features.assign(static_cast<std::size_t>(n) * dim, 0.0f);
    return ds;
}

}  // namespace

TEST_CASE("schedule: single step, bounds and monotonicity") {
    const Schedule s = make_schedule(1, 0.1, 0.1);
    CHECK(s.alpha_bar[1] == Catch::Approx(0.9).margin(1e-15));

    CHECK_THROWS_AS(make_schedule(0, 0.1, 0.1), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.1), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.2, 0.1), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), ConfigError);

    const Schedule d = make_schedule(1000, 1e-4, 0.02);
    for (int t = 2; t <= d.T; ++t) {
        CHECK(d.beta[t] >= d.beta[t - 1]);
        CHECK(d.alpha_bar[t] < d.alpha_bar[t - 1]);
    }
    // Independent recomputation of the cumulative product.
    long double prod = 1.0L;
    for (int t = 1; t <= d.T; ++t) prod *= static_cast<long double>(1.0 - d.beta[t]);
    CHECK(static_cast<double>(prod) == Catch::Approx(d.alpha_bar[d.T]).epsilon(1e-12));
    CHECK(d.alpha_bar[d.T] < 0.01);
}

TEST_CASE("forward_sample: zero noise and range checks") {
    const Schedule s = make_schedule(10, 0.01, 0.1);
    const std::vector<double> x0{0.5, -0.25};
    const std::vector<double> zero{0.0, 0.0};
    const auto xt = forward_sample(x0, 7, zero, s);
    CHECK(xt[0] == std::sqrt(s.alpha_bar[7]) * 0.5);
    CHECK(xt[1] == std::sqrt(s.alpha_bar[7]) * -0.25);

    CHECK_THROWS_AS(forward_sample(x0, 0, zero, s), UsageError);
    CHECK_THROWS_AS(forward_sample(x0, 11, zero, s), UsageError);

    // Tiny beta at t = 1 keeps x_t close to x0.
    const Schedule tiny = make_schedule(10, 1e-8, 1e-8);
    const auto near = forward_sample(x0, 1, zero, tiny);
    CHECK(near[0] == Catch::Approx(0.5).margin(1e-6));
}

TEST_CASE("forward_sample: Monte-Carlo variance matches 1 - alpha_bar") {
    const Schedule s = make_schedule(10, 0.01, 0.1);
    const int t = 7, n = 100000;
    const std::vector<double> x0{0.0, 0.0};
    Philox rng(2024);
    double sum = 0.0, sum2 = 0.0;
    std::vector<double> eps(2);
    for (int i = 0; i < n; ++i) {
        for (auto& e : eps) e = rng.gaussian();
        const auto xt = forward_sample(x0, t, eps, s);
        for (double v : xt) {
            sum += v;
            sum2 += v * v;
        }
    }
    const double mean = sum / (2.0 * n);
    const double var = sum2 / (2.0 * n) - mean * mean;
    CHECK(std::abs(var / (1.0 - s.alpha_bar[t]) - 1.0) < 0.02);
}

TEST_CASE("compose_forward_chain: noiseless chain and t = 1 equivalence") {
    Schedule noiseless;
    noiseless.T = 5;
    noiseless.beta.assign(6, 0.0);
    noiseless.alpha.assign(6, 1.0);
    noiseless.alpha_bar.assign(6, 1.0);
    const std::vector<double> x0{0.3, -0.7};
    Philox rng(1);
    CHECK(compose_forward_chain(x0, 5, noiseless, rng) == x0);

    // At t = 1 the chain and the closed form are the same formula (up to
    // the one-ulp difference between beta_1 and 1 - alpha_bar_1).
    const Schedule s = make_schedule(10, 0.01, 0.1);
    Philox ra(7), rb(7);
    const auto chain = compose_forward_chain(x0, 1, s, ra);
    std::vector<double> eps{rb.gaussian(), rb.gaussian()};
    const auto closed = forward_sample(x0, 1, eps, s);
    CHECK(chain[0] == Catch::Approx(closed[0]).margin(1e-12));
    CHECK(chain[1] == Catch::Approx(closed[1]).margin(1e-12));
}

TEST_CASE("compose_forward_chain agrees with the closed form in distribution") {
    const Schedule s = make_schedule(8, 0.02, 0.12);
    const int t = 6, n = 100000;
    const std::vector<double> x0{0.8};
    Philox rc(11), rf(12);
    double cs = 0, cs2 = 0, fs = 0, fs2 = 0;
    std::vector<double> eps(1);
    for (int i = 0; i < n; ++i) {
        const auto a = compose_forward_chain(x0, t, s, rc);
        cs += a[0];
        cs2 += a[0] * a[0];
        eps[0] = rf.gaussian();
        const auto b = forward_sample(x0, t, eps, s);
        fs += b[0];
        fs2 += b[0] * b[0];
    }
    const double mc = cs / n, vc = cs2 / n - mc * mc;
    const double mf = fs / n, vf = fs2 / n - mf * mf;
    CHECK(std::abs(mc - mf) < 0.02);
    CHECK(std::abs(vc / vf - 1.0) < 0.02);
}

TEST_CASE("training_loss: exact predictor reaches zero loss") {
    const Schedule s = make_schedule(1, 0.3, 0.3);
    const Network net = exact_predictor_net(3, s.beta[1]);
    const Dataset ds = zero_dataset(16, 3);
    std::vector<std::int64_t> idx(16);
    std::iota(idx.begin(), idx.end(), 0);
    Philox rng(5);
    const auto res = training_loss(net, ds, idx, s, GuidanceConfig{}, rng);
    CHECK(res.loss < 1e-20);
}

TEST_CASE("training_loss: zero net converges to dimension") {
    const Schedule s = make_schedule(10, 0.01, 0.1);
    const Network net = zero_net(4, 10);
    const Dataset ds = zero_dataset(5000, 4);
    std::vector<std::int64_t> idx(5000);
    std::iota(idx.begin(), idx.end(), 0);
    Philox rng(9);
    const auto res = training_loss(net, ds, idx, s, GuidanceConfig{}, rng);
    CHECK(res.loss == Catch::Approx(4.0).epsilon(0.05));
    // Zero activations make every weight gradient into the first layer zero
    // only for zero inputs; gradients must at least be finite.
    for (const auto& w : res.grads.weights)
        for (double v : w.data) CHECK(std::isfinite(v));
}

TEST_CASE("training_loss is deterministic under a fixed stream") {
    const Schedule s = make_schedule(10, 0.01, 0.1);
    const Network net = zero_net(2, 10);
    const Dataset ds = zero_dataset(32, 2);
    std::vector<std::int64_t> idx(32);
    std::iota(idx.begin(), idx.end(), 0);
    Philox r1(3), r2(3);
    const auto a = training_loss(net, ds, idx, s, GuidanceConfig{}, r1);
    const auto b = training_loss(net, ds, idx, s, GuidanceConfig{}, r2);
    CHECK(a.loss == b.loss);
}

TEST_CASE("guided_epsilon endpoints are bitwise and the midpoint averages") {
    NetworkSpec spec;
    spec.data_dim = 2;
    spec.hidden = {8};
    spec.output_dim = 2;
    spec.time_embed_dim = 4;
    spec.class_embed_dim = 4;
    spec.num_classes = 5;
    spec.max_timestep = 20;
    const Network net = init_network(spec, 21);
    const std::vector<double> x{0.4, 0.1};
    const int t = 9, label = 2;

    const auto cond = forward(net, std::span<const double>(x), t, label);
    const auto uncond = forward(net, std::span<const double>(x), t, net.null_class());
    CHECK(guided_epsilon(net, x, t, label, 1.0) == cond);
    CHECK(guided_epsilon(net, x, t, label, 0.0) == uncond);

    const auto mid = guided_epsilon(net, x, t, label, 0.5);
    for (std::size_t i = 0; i < mid.size(); ++i)
        CHECK(mid[i] == Catch::Approx(0.5 * (cond[i] + uncond[i])).margin(1e-12));

    CHECK_THROWS_AS(guided_epsilon(net, x, t, label, -0.1), UsageError);
    const Network uncond_net = zero_net(2, 20);
    CHECK_THROWS_AS(guided_epsilon(uncond_net, x, t, 0, 1.0), UsageError);
}

TEST_CASE("ddpm_step: final step is deterministic") {
    const Schedule s = make_schedule(10, 0.01, 0.1);
    const Network net = zero_net(2, 10);
    const std::vector<double> x{0.5, -0.5};
    Philox fresh(1);
    Philox advanced(2);
    advanced.gaussian();
    const auto a = ddpm_step(net, x, 1, s, GuidanceConfig{}, std::nullopt, fresh);
    const auto b = ddpm_step(net, x, 1, s, GuidanceConfig{}, std::nullopt, advanced);
    CHECK(a == b);
}

TEST_CASE("ddpm_step: exact predictor inverts a single step") {
    const Schedule s = make_schedule(1, 0.2, 0.2);
    const Network net = exact_predictor_net(2, s.beta[1]);
    const std::vector<double> x0{0.0, 0.0};
    Philox rng(77);
    std::vector<double> eps{rng.gaussian(), rng.gaussian()};
    const auto x1 = forward_sample(x0, 1, eps, s);
    Philox step_rng(3);
    const auto rec = ddpm_step(net, x1, 1, s, GuidanceConfig{}, std::nullopt, step_rng);
    CHECK(rec[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(rec[1] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("ddpm reverse error shrinks as beta shrinks") {
    // Noiseless forward jump + zero-noise predictor isolate the injected
    // reverse noise, which scales with sqrt(beta).
    const std::vector<double> x0{0.6, -0.4};
    const std::vector<double> no_eps{0.0, 0.0};
    double last = 1e18;
    for (const double beta : {0.1, 0.01, 0.001, 0.0001}) {
        const Schedule s = make_schedule(10, beta, beta);
        const Network net = zero_net(2, 10);
        auto x = forward_sample(x0, 10, no_eps, s);
        Philox rng(42);
        for (int t = 10; t >= 1; --t) x = ddpm_step(net, x, t, s, GuidanceConfig{}, std::nullopt, rng);
        const double err = std::hypot(x[0] - x0[0], x[1] - x0[1]);
        CHECK(err < last);
        last = err;
    }
    CHECK(last < 0.1);
}

TEST_CASE("ddim_step: inversion, determinism and ordering") {
    const Schedule s1 = make_schedule(1, 0.2, 0.2);
    const Network exact = exact_predictor_net(2, s1.beta[1]);
    Philox rng(8);
    const std::vector<double> x0{0.0, 0.0};
    std::vector<double> eps{rng.gaussian(), rng.gaussian()};
    const auto x1 = forward_sample(x0, 1, eps, s1);
    const auto rec = ddim_step(exact, x1, 1, 0, s1, GuidanceConfig{}, std::nullopt);
    CHECK(rec[0] == Catch::Approx(0.0).margin(1e-6));
    CHECK(rec[1] == Catch::Approx(0.0).margin(1e-6));

    // Zero predictor + noiseless forward recovers x0 through any stride.
    const Schedule s = make_schedule(100, 1e-3, 0.05);
    const Network zero = zero_net(2, 100);
    const std::vector<double> start{0.25, 0.75};
    const std::vector<double> no_eps{0.0, 0.0};
    auto full = forward_sample(start, 100, no_eps, s);
    for (int t = 100; t >= 1; --t) full = ddim_step(zero, full, t, t - 1, s, GuidanceConfig{}, std::nullopt);
    CHECK(full[0] == Catch::Approx(0.25).margin(1e-6));

    auto strided = forward_sample(start, 100, no_eps, s);
    const auto seq = ddim_timesteps(100, 50);
    REQUIRE(seq.front() == 100);
    REQUIRE(seq.back() == 0);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        REQUIRE(seq[i] > seq[i + 1]);
        strided = ddim_step(zero, strided, seq[i], seq[i + 1], s, GuidanceConfig{}, std::nullopt);
    }
    CHECK(strided[0] == Catch::Approx(0.25).margin(1e-6));
    CHECK(strided[1] == Catch::Approx(0.75).margin(1e-6));

    const auto again = ddim_step(zero, std::vector<double>{0.1, 0.2}, 50, 25, s, GuidanceConfig{}, std::nullopt);
    const auto again2 = ddim_step(zero, std::vector<double>{0.1, 0.2}, 50, 25, s, GuidanceConfig{}, std::nullopt);
    CHECK(again == again2);

    CHECK_THROWS_AS(ddim_step(zero, std::vector<double>{0.1, 0.2}, 50, 50, s, GuidanceConfig{}, std::nullopt),
                    UsageError);
    CHECK_THROWS_AS(ddim_step(zero, std::vector<double>{0.1, 0.2}, 50, -1, s, GuidanceConfig{}, std::nullopt),
                    UsageError);
}

TEST_CASE("sample: shape, balance, range and determinism") {
    const Schedule s = make_schedule(20, 1e-3, 0.05);
    NetworkSpec spec;
    spec.data_dim = 3;
    spec.hidden = {8};
    spec.output_dim = 3;
    spec.time_embed_dim = 4;
    spec.class_embed_dim = 4;
    spec.num_classes = 10;
    spec.max_timestep = 20;
    const Network net = init_network(spec, 5);

    const Dataset unl = sample(zero_net(3, 20), 10, s, SamplerConfig{}, GuidanceConfig{}, LabelPlan::none(), 1);
    CHECK(unl.n == 10);
    CHECK(unl.dim == 3);
    CHECK_FALSE(unl.labeled());
    unl.validate();

    const Dataset bal = sample(net, 1000, s, SamplerConfig{SamplerKind::Ddim, 10}, GuidanceConfig{},
                               LabelPlan::balanced(10), 2);
    std::vector<int> counts(10, 0);
    for (auto l : bal.labels) counts[l]++;
    for (int c = 0; c < 10; ++c) CHECK(counts[c] == 100);

    const Dataset a = sample(net, 40, s, SamplerConfig{}, GuidanceConfig{}, LabelPlan::balanced(10), 7, 1);
    const Dataset b = sample(net, 40, s, SamplerConfig{}, GuidanceConfig{}, LabelPlan::balanced(10), 7, 2);
    CHECK(a.features == b.features);  // thread count must not change bytes
    CHECK(a.labels == b.labels);

    CHECK_THROWS_AS(sample(zero_net(3, 20), 5, s, SamplerConfig{}, GuidanceConfig{}, LabelPlan::balanced(4), 1),
                    UsageError);
}
