#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "clab/nn.hpp"
#include "clab/prng.hpp"

using namespace clab;

namespace {

NetworkSpec small_conditioned_spec() {
    NetworkSpec spec;
    spec.data_dim = 2;
    spec.hidden = {64, 64};
    spec.output_dim = 2;
    spec.time_embed_dim = 4;
    spec.class_embed_dim = 4;
    spec.num_classes = 3;
    spec.max_timestep = 10;
    return spec;
}

// Straight-line re-implementation of the forward arithmetic, written
// independently of the layered code path: transposed weight access and
// column-major accumulation.
std::vector<double> forward_oracle(const Network& net, const std::vector<double>& x, int t, int label) {
    std::vector<double> in = x;
    if (net.spec.time_embed_dim > 0) {
        const int half = net.spec.time_embed_dim / 2;
        for (int i = 0; i < half; ++i)
            in.push_back(std::sin(t * std::pow(10000.0, -2.0 * i / net.spec.time_embed_dim)));
        for (int i = 0; i < half; ++i)
            in.push_back(std::cos(t * std::pow(10000.0, -2.0 * i / net.spec.time_embed_dim)));
    }
    if (net.spec.conditional())
        for (int j = 0; j < net.spec.class_embed_dim; ++j) in.push_back(net.class_embed(label, j));

    for (int l = 0; l < net.layer_count(); ++l) {
        std::vector<double> z(net.biases[static_cast<std::size_t>(l)]);
        for (std::size_t j = 0; j < in.size(); ++j)
            for (int i = 0; i < net.weights[static_cast<std::size_t>(l)].rows; ++i)
                z[static_cast<std::size_t>(i)] += net.weights[static_cast<std::size_t>(l)](i, static_cast<int>(j)) * in[j];
        if (l + 1 < net.layer_count())
            for (double& v : z) v = v / (1.0 + std::exp(-v)) ;
        in = z;
    }
    return in;
}

}  // namespace

TEST_CASE("sinusoidal embedding endpoints") {
    const auto e0 = sinusoidal_embedding(0, 4, 10);
    REQUIRE(e0.size() == 4);
    CHECK(e0[0] == 0.0);
    CHECK(e0[1] == 0.0);
    CHECK(e0[2] == 1.0);
    CHECK(e0[3] == 1.0);

    const auto e1 = sinusoidal_embedding(1, 2, 10);
    CHECK(e1[0] == Catch::Approx(std::sin(1.0)).margin(1e-15));
    CHECK(e1[1] == Catch::Approx(std::cos(1.0)).margin(1e-15));

    for (int t = 0; t <= 10; ++t)
        for (double v : sinusoidal_embedding(t, 4, 10)) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }

    CHECK_THROWS_AS(sinusoidal_embedding(0, 3, 10), ConfigError);
    CHECK_THROWS_AS(sinusoidal_embedding(11, 4, 10), UsageError);
}

TEST_CASE("init_network is deterministic and seed-sensitive") {
    const auto spec = small_conditioned_spec();
    const Network a = init_network(spec, 1);
    const Network b = init_network(spec, 1);
    const Network c = init_network(spec, 2);
    REQUIRE(a.weights.size() == b.weights.size());
    for (std::size_t l = 0; l < a.weights.size(); ++l) CHECK(a.weights[l].data == b.weights[l].data);
    CHECK(a.class_embed.data == b.class_embed.data);

    bool any_differs = false;
    for (std::size_t l = 0; l < a.weights.size(); ++l) any_differs |= a.weights[l].data != c.weights[l].data;
    CHECK(any_differs);
}

TEST_CASE("parameter count matches the closed-form sum") {
    const auto spec = small_conditioned_spec();
    const Network net = init_network(spec, 3);
    // input = 2 + 4 + 4 = 10; layers 10->64->64->2; embedding (3+1) x 4.
    const std::size_t expected = (64 * 10 + 64) + (64 * 64 + 64) + (2 * 64 + 2) + 4 * 4;
    CHECK(net.parameter_count() == expected);
    CHECK(expected == 5010);
}

TEST_CASE("forward collapses to the bias for zero weights") {
    NetworkSpec spec;
    spec.data_dim = 3;
    spec.hidden = {5};
    spec.output_dim = 2;
    Network net = init_network(spec, 1);
    for (auto& w : net.weights) w.fill(0.0);
    net.biases[1] = {0.25, -1.5};
    const std::vector<double> x{0.1, -0.9, 0.3};
    const auto out = forward(net, std::span<const double>(x));
    // Hidden silu(0) = 0, so the output is exactly the final bias.
    CHECK(out[0] == 0.25);
    CHECK(out[1] == -1.5);
}

TEST_CASE("forward is pure and matches an independent evaluation") {
    const auto spec = small_conditioned_spec();
    const Network net = init_network(spec, 17);
    Philox rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const int t = static_cast<int>(rng.next_below(11));
        const int label = static_cast<int>(rng.next_below(4));  // includes the null row
        const auto out1 = forward(net, std::span<const double>(x), t, label);
        const auto out2 = forward(net, std::span<const double>(x), t, label);
        CHECK(out1 == out2);
        const auto oracle = forward_oracle(net, x, t, label);
        REQUIRE(oracle.size() == out1.size());
        for (std::size_t i = 0; i < out1.size(); ++i)
            CHECK(out1[i] == Catch::Approx(oracle[i]).margin(1e-12));
    }
}

TEST_CASE("forward rejects shape and label violations") {
    const Network net = init_network(small_conditioned_spec(), 1);
    const std::vector<double> bad{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(forward(net, std::span<const double>(bad), 0, 0), ShapeError);
    const std::vector<double> ok{1.0, 2.0};
    CHECK_THROWS_AS(forward(net, std::span<const double>(ok), 0, 4), UsageError);
    CHECK_THROWS_AS(forward(net, std::span<const double>(ok), 11, 0), UsageError);
}

TEST_CASE("backward: zero seed gradient and linearity") {
    const Network net = init_network(small_conditioned_spec(), 9);
    const std::vector<double> x{0.4, -0.2};
    ForwardCache cache;
    forward(net, std::span<const double>(x), 3, 1, &cache);

    const std::vector<double> zero(2, 0.0);
    const Gradients gz = backward(net, cache, zero);
    for (const auto& w : gz.weights)
        for (double v : w.data) CHECK(v == 0.0);

    const std::vector<double> g1{0.7, -1.3};
    const std::vector<double> g2{1.4, -2.6};
    const Gradients a = backward(net, cache, g1);
    const Gradients b = backward(net, cache, g2);
    for (std::size_t l = 0; l < a.weights.size(); ++l)
        for (std::size_t i = 0; i < a.weights[l].data.size(); ++i)
            CHECK(b.weights[l].data[i] == 2.0 * a.weights[l].data[i]);
    for (std::size_t i = 0; i < a.class_embed.data.size(); ++i)
        CHECK(b.class_embed.data[i] == 2.0 * a.class_embed.data[i]);
}

TEST_CASE("backward rejects a cache from a different architecture") {
    const Network net = init_network(small_conditioned_spec(), 9);
    NetworkSpec other = small_conditioned_spec();
    other.hidden = {8};
    const Network net2 = init_network(other, 9);
    const std::vector<double> x{0.4, -0.2};
    ForwardCache cache;
    forward(net2, std::span<const double>(x), 3, 1, &cache);
    const std::vector<double> g{1.0, 1.0};
    CHECK_THROWS_AS(backward(net, cache, g), UsageError);
}

TEST_CASE("analytic gradients match central finite differences") {
    NetworkSpec spec = small_conditioned_spec();
    spec.hidden = {16, 16};
    Network net = init_network(spec, 33);
    const std::vector<double> x{0.3, -0.8};
    const int t = 4, label = 2;
    // Loss = w . output with fixed random weights, evaluated per parameter.
    Philox rng(7);
    std::vector<double> w(2);
    for (auto& v : w) v = rng.uniform(-1, 1);

    auto loss_of = [&](const Network& n) {
        const auto out = forward(n, std::span<const double>(x), t, label);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
        return s;
    };
    ForwardCache cache;
    forward(net, std::span<const double>(x), t, label, &cache);
    const Gradients grads = backward(net, cache, w);

    struct Ref {
        double* theta;
        double analytic;
    };
    std::vector<Ref> params;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        for (std::size_t i = 0; i < net.weights[l].data.size(); ++i)
            params.push_back({&net.weights[l].data[i], grads.weights[l].data[i]});
        for (std::size_t i = 0; i < net.biases[l].size(); ++i)
            params.push_back({&net.biases[l][i], grads.biases[l][i]});
    }
    for (std::size_t i = 0; i < net.class_embed.data.size(); ++i)
        params.push_back({&net.class_embed.data[i], grads.class_embed.data[i]});

    Philox pick(99);
    const double h = 1e-4;
    int checked = 0;
    for (int trial = 0; trial < 120; ++trial) {
        auto& p = params[pick.next_below(params.size())];
        const double saved = *p.theta;
        *p.theta = saved + h;
        const double up = loss_of(net);
        *p.theta = saved - h;
        const double down = loss_of(net);
        *p.theta = saved;
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(fd), std::abs(p.analytic), 1e-12});
        if (std::abs(fd) < 1e-12 && std::abs(p.analytic) < 1e-12) continue;
        CHECK(std::abs(fd - p.analytic) / scale < 1e-4);
        ++checked;
    }
    CHECK(checked >= 100);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Network net = init_network(small_conditioned_spec(), 4);
    const Network before = net;
    AdamState state = AdamState::like(net);
    Gradients g = Gradients::like(net);
    adam_step(net, g, state);
    CHECK(state.step == 1);
    for (std::size_t l = 0; l < net.weights.size(); ++l) CHECK(net.weights[l].data == before.weights[l].data);
}

TEST_CASE("adam single-parameter hand value") {
    NetworkSpec spec;
    spec.data_dim = 1;
    spec.output_dim = 1;
    Network net = init_network(spec, 1);
    net.weights[0](0, 0) = 1.0;
    AdamState state = AdamState::like(net, AdamConfig{.lr = 0.1});
    Gradients g = Gradients::like(net);
    g.weights[0](0, 0) = 1.0;
    adam_step(net, g, state);
    // m_hat = v_hat = 1 after bias correction, so the step is lr/(1 + eps).
    const double expected = 1.0 - 0.1 / (1.0 + 1e-8);
    CHECK(net.weights[0](0, 0) == Catch::Approx(expected).margin(1e-15));
}

TEST_CASE("adam is deterministic across identical replicas") {
    Network n1 = init_network(small_conditioned_spec(), 8);
    Network n2 = n1;
    AdamState s1 = AdamState::like(n1), s2 = AdamState::like(n2);
    const std::vector<double> x{0.2, 0.9};
    for (int step = 0; step < 3; ++step) {
        ForwardCache c1, c2;
        forward(n1, std::span<const double>(x), 1, 0, &c1);
        forward(n2, std::span<const double>(x), 1, 0, &c2);
        const std::vector<double> g{1.0, -0.5};
        adam_step(n1, backward(n1, c1, g), s1);
        adam_step(n2, backward(n2, c2, g), s2);
    }
    for (std::size_t l = 0; l < n1.weights.size(); ++l) CHECK(n1.weights[l].data == n2.weights[l].data);
}

TEST_CASE("adam rejects non-finite gradients naming the block") {
    Network net = init_network(small_conditioned_spec(), 4);
    AdamState state = AdamState::like(net);
    Gradients g = Gradients::like(net);
    g.weights[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        adam_step(net, g, state);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("layer 1 weights") != std::string::npos);
    }
}
