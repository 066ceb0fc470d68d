#pragma once
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clab/errors.hpp"
#include "clab/matrix.hpp"
#include "clab/prng.hpp"

namespace clab {

enum class Activation : std::uint8_t { Identity = 0, Silu = 1 };

inline double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_derivative(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// Architecture of a small fully-connected network. Conditioning inputs
// (sinusoidal time embedding, learned class embedding) are concatenated to
// the data vector in front of the first layer. The class-embedding table has
// num_classes + 1 rows; the extra row is the null/unconditional embedding.
struct NetworkSpec {
    int data_dim = 0;
    std::vector<int> hidden;
    int output_dim = 0;
    int time_embed_dim = 0;   // even; 0 disables the time input
    int class_embed_dim = 0;  // 0 disables class conditioning
    int num_classes = 0;
    int max_timestep = 0;
    Activation hidden_activation = Activation::Silu;

    bool conditional() const { return class_embed_dim > 0 && num_classes > 0; }
    int input_dim() const { return data_dim + time_embed_dim + class_embed_dim; }

    std::vector<int> layer_dims() const {
        std::vector<int> dims;
        dims.push_back(input_dim());
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(output_dim);
        return dims;
    }

    void validate() const {
        if (data_dim < 1) throw ConfigError("network: data_dim must be >= 1");
        if (output_dim < 1) throw ConfigError("network: output_dim must be >= 1");
        for (int w : hidden)
            if (w < 1) throw ConfigError("network: hidden widths must be >= 1");
        if (time_embed_dim < 0 || time_embed_dim % 2 != 0)
            throw ConfigError("network: time_embed_dim must be even and >= 0");
        if (class_embed_dim < 0) throw ConfigError("network: class_embed_dim must be >= 0");
        if (class_embed_dim > 0 && num_classes < 1)
            throw ConfigError("network: class conditioning requires num_classes >= 1");
        if (time_embed_dim > 0 && max_timestep < 1)
            throw ConfigError("network: time conditioning requires max_timestep >= 1");
    }

    bool operator==(const NetworkSpec&) const = default;
};

// First dim/2 entries sin(t * w_i), last dim/2 entries cos(t * w_i) with
// w_i = 10000^(-2i/dim). max_t only bounds the accepted timestep.
inline std::vector<double> sinusoidal_embedding(int t, int dim, int max_t) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("sinusoidal_embedding: dim must be even and positive");
    if (t < 0 || t > max_t) throw UsageError("sinusoidal_embedding: timestep out of range");
    const int half = dim / 2;
    std::vector<double> e(static_cast<std::size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double w = std::pow(10000.0, -2.0 * i / dim);
        e[i] = std::sin(t * w);
        e[half + i] = std::cos(t * w);
    }
    return e;
}

struct Network {
    NetworkSpec spec;
    std::vector<Matrix> weights;               // weights[l]: dims[l+1] x dims[l]
    std::vector<std::vector<double>> biases;   // biases[l]: dims[l+1]
    Matrix class_embed;                        // (num_classes + 1) x class_embed_dim

    int null_class() const { return spec.num_classes; }
    int layer_count() const { return static_cast<int>(weights.size()); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.data.size();
        for (const auto& b : biases) n += b.size();
        n += class_embed.data.size();
        return n;
    }
};

// Gradient arrays shape-congruent with a Network's parameters.
struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    Matrix class_embed;

    static Gradients like(const Network& net) {
        Gradients g;
        for (const auto& w : net.weights) g.weights.emplace_back(w.rows, w.cols);
        for (const auto& b : net.biases) g.biases.emplace_back(b.size(), 0.0);
        g.class_embed = Matrix(net.class_embed.rows, net.class_embed.cols);
        return g;
    }

    void zero() {
        for (auto& w : weights) w.fill(0.0);
        for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
        class_embed.fill(0.0);
    }

    void scale(double s) {
        for (auto& w : weights)
            for (double& v : w.data) v *= s;
        for (auto& b : biases)
            for (double& v : b) v *= s;
        for (double& v : class_embed.data) v *= s;
    }

    void add(const Gradients& o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (std::size_t i = 0; i < weights[l].data.size(); ++i) weights[l].data[i] += o.weights[l].data[i];
            for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += o.biases[l][i];
        }
        for (std::size_t i = 0; i < class_embed.data.size(); ++i) class_embed.data[i] += o.class_embed.data[i];
    }
};

// Deterministic initialization: one Philox stream keyed by the seed is
// consumed in declaration order (layer 0 weights row-major, layer 1 weights,
// ..., then the class-embedding table). Weights are uniform on
// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases start at zero, embedding rows
// use fan_in = class_embed_dim. Identical (spec, seed) gives bit-identical
// networks.
inline Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network net;
    net.spec = spec;
    Philox rng(seed);
    const auto dims = spec.layer_dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Matrix w(dims[l + 1], dims[l]);
        const double s = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (double& v : w.data) v = rng.uniform(-s, s);
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(static_cast<std::size_t>(dims[l + 1]), 0.0);
    }
    if (spec.conditional()) {
        net.class_embed = Matrix(spec.num_classes + 1, spec.class_embed_dim);
        const double s = 1.0 / std::sqrt(static_cast<double>(spec.class_embed_dim));
        for (double& v : net.class_embed.data) v = rng.uniform(-s, s);
    }
    return net;
}

// Activations retained by forward() for the matching backward() call.
struct ForwardCache {
    std::vector<int> dims;                       // layer widths of the owning net
    std::vector<std::vector<double>> act;        // act[0] = concatenated input
    std::vector<std::vector<double>> pre;        // pre[l] = W_l act[l] + b_l
    int label = -1;                              // embedding row used, -1 if none
};

namespace detail {

inline void apply_activation(Activation a, std::span<const double> z, std::vector<double>& out) {
    out.resize(z.size());
    switch (a) {
        case Activation::Identity:
            std::copy(z.begin(), z.end(), out.begin());
            break;
        case Activation::Silu:
            for (std::size_t i = 0; i < z.size(); ++i) out[i] = silu(z[i]);
            break;
    }
}

inline std::vector<double> concat_input(const Network& net, std::span<const double> x, int t, int label,
                                        int* used_row) {
    const auto& spec = net.spec;
    if (static_cast<int>(x.size()) != spec.data_dim)
        throw ShapeError("forward: input has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(spec.data_dim));
    std::vector<double> in;
    in.reserve(static_cast<std::size_t>(spec.input_dim()));
    in.insert(in.end(), x.begin(), x.end());
    if (spec.time_embed_dim > 0) {
        const auto te = sinusoidal_embedding(t, spec.time_embed_dim, spec.max_timestep);
        in.insert(in.end(), te.begin(), te.end());
    }
    *used_row = -1;
    if (spec.conditional()) {
        if (label < 0 || label > spec.num_classes)
            throw UsageError("forward: class label " + std::to_string(label) + " outside [0, " +
                             std::to_string(spec.num_classes) + "]");
        const auto row = net.class_embed.row(label);
        in.insert(in.end(), row.begin(), row.end());
        *used_row = label;
    }
    return in;
}

}  // namespace detail

// Pure forward pass: affine layers with the hidden activation between them
// and an identity output layer. `label` may be num_classes for the null
// embedding; it is ignored by unconditional networks.
inline std::vector<double> forward(const Network& net, std::span<const double> x, int t = 0, int label = 0,
                                   ForwardCache* cache = nullptr) {
    int used_row = -1;
    std::vector<double> a = detail::concat_input(net, x, t, label, &used_row);
    if (cache) {
        cache->dims = net.spec.layer_dims();
        cache->act.clear();
        cache->pre.clear();
        cache->act.push_back(a);
        cache->label = used_row;
    }
    const int L = net.layer_count();
    std::vector<double> z;
    for (int l = 0; l < L; ++l) {
        const Matrix& w = net.weights[l];
        z.assign(net.biases[l].begin(), net.biases[l].end());
        for (int i = 0; i < w.rows; ++i) {
            double s = z[i];
            const double* wr = w.data.data() + static_cast<std::size_t>(i) * w.cols;
            for (int j = 0; j < w.cols; ++j) s += wr[j] * a[j];
            z[i] = s;
        }
        const Activation act_kind = (l + 1 < L) ? net.spec.hidden_activation : Activation::Identity;
        if (cache) cache->pre.push_back(z);
        detail::apply_activation(act_kind, z, a);
        if (cache && l + 1 < L) cache->act.push_back(a);
    }
    return a;
}

inline std::vector<double> forward(const Network& net, std::span<const float> x, int t = 0, int label = 0,
                                   ForwardCache* cache = nullptr) {
    std::vector<double> xd(x.begin(), x.end());
    return forward(net, std::span<const double>(xd), t, label, cache);
}

// Exact reverse-mode pass. Accumulates d(loss)/d(theta) into `out` given
// d(loss)/d(output); the cache must come from a forward() call on a network
// of identical shape.
inline void backward_accumulate(const Network& net, const ForwardCache& cache, std::span<const double> output_grad,
                                Gradients& out) {
    const auto dims = net.spec.layer_dims();
    if (cache.dims != dims || cache.act.size() != net.weights.size() || cache.pre.size() != net.weights.size())
        throw UsageError("backward: cache does not match this network's shape");
    if (static_cast<int>(output_grad.size()) != net.spec.output_dim)
        throw ShapeError("backward: output_grad has wrong dimension");

    const int L = net.layer_count();
    std::vector<double> delta(output_grad.begin(), output_grad.end());
    std::vector<double> prev;
    for (int l = L - 1; l >= 0; --l) {
        const Matrix& w = net.weights[l];
        const auto& a_in = cache.act[static_cast<std::size_t>(l)];
        Matrix& gw = out.weights[static_cast<std::size_t>(l)];
        auto& gb = out.biases[static_cast<std::size_t>(l)];
        for (int i = 0; i < w.rows; ++i) {
            const double d = delta[static_cast<std::size_t>(i)];
            gb[static_cast<std::size_t>(i)] += d;
            double* gwr = gw.data.data() + static_cast<std::size_t>(i) * gw.cols;
            for (int j = 0; j < w.cols; ++j) gwr[j] += d * a_in[static_cast<std::size_t>(j)];
        }
        if (l == 0) {
            // Gradient w.r.t. the concatenated input: only the class-embedding
            // slice belongs to a learned parameter.
            if (cache.label >= 0) {
                const int off = net.spec.data_dim + net.spec.time_embed_dim;
                for (int j = 0; j < net.spec.class_embed_dim; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < w.rows; ++i) s += w(i, off + j) * delta[static_cast<std::size_t>(i)];
                    out.class_embed(cache.label, j) += s;
                }
            }
            break;
        }
        prev.assign(static_cast<std::size_t>(w.cols), 0.0);
        for (int i = 0; i < w.rows; ++i) {
            const double d = delta[static_cast<std::size_t>(i)];
            const double* wr = w.data.data() + static_cast<std::size_t>(i) * w.cols;
            for (int j = 0; j < w.cols; ++j) prev[static_cast<std::size_t>(j)] += wr[j] * d;
        }
        const auto& z = cache.pre[static_cast<std::size_t>(l - 1)];
        if (net.spec.hidden_activation == Activation::Silu)
            for (std::size_t j = 0; j < prev.size(); ++j) prev[j] *= silu_derivative(z[j]);
        delta.swap(prev);
    }
}

inline Gradients backward(const Network& net, const ForwardCache& cache, std::span<const double> output_grad) {
    Gradients g = Gradients::like(net);
    backward_accumulate(net, cache, output_grad, g);
    return g;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    long step = 0;
    std::vector<Matrix> m_w, v_w;
    std::vector<std::vector<double>> m_b, v_b;
    Matrix m_e, v_e;

    static AdamState like(const Network& net, AdamConfig cfg = {}) {
        AdamState s;
        s.cfg = cfg;
        for (const auto& w : net.weights) {
            s.m_w.emplace_back(w.rows, w.cols);
            s.v_w.emplace_back(w.rows, w.cols);
        }
        for (const auto& b : net.biases) {
            s.m_b.emplace_back(b.size(), 0.0);
            s.v_b.emplace_back(b.size(), 0.0);
        }
        s.m_e = Matrix(net.class_embed.rows, net.class_embed.cols);
        s.v_e = Matrix(net.class_embed.rows, net.class_embed.cols);
        return s;
    }
};

namespace detail {

inline void adam_update_block(std::span<double> theta, std::span<const double> grad, std::span<double> m,
                              std::span<double> v, const AdamConfig& c, double bc1, double bc2,
                              const std::string& block_name) {
    if (!all_finite(grad)) throw DivergenceError("adam_step: non-finite gradient in " + block_name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        theta[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
}

}  // namespace detail

// Standard bias-corrected Adam update; increments the step counter by one.
inline void adam_step(Network& net, const Gradients& grads, AdamState& state) {
    if (grads.weights.size() != net.weights.size() || !grads.class_embed.same_shape(net.class_embed))
        throw ShapeError("adam_step: gradients do not match network shape");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        if (!net.weights[l].same_shape(grads.weights[l]))
            throw ShapeError("adam_step: gradient shape mismatch in layer " + std::to_string(l));
        detail::adam_update_block(net.weights[l].data, grads.weights[l].data, state.m_w[l].data, state.v_w[l].data,
                                  state.cfg, bc1, bc2, "layer " + std::to_string(l) + " weights");
        detail::adam_update_block(net.biases[l], grads.biases[l], state.m_b[l], state.v_b[l], state.cfg, bc1, bc2,
                                  "layer " + std::to_string(l) + " bias");
    }
    if (!net.class_embed.data.empty())
        detail::adam_update_block(net.class_embed.data, grads.class_embed.data, state.m_e.data, state.v_e.data,
                                  state.cfg, bc1, bc2, "class embedding");
}

}  // namespace clab
