#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "clab/dataset.hpp"
#include "clab/errors.hpp"
#include "clab/nn.hpp"
#include "clab/prng.hpp"

namespace clab {

// Softmax classifier trained once on the original dataset. It doubles as
// the feature extractor for the moment/manifold metrics: features() returns
// the penultimate-layer activations.
struct Classifier {
    Network net;  // unconditioned MLP ending in K logits
    double held_out_accuracy = 0.0;

    int num_classes() const { return net.spec.output_dim; }
    int feature_dim() const { return net.spec.hidden.empty() ? net.spec.data_dim : net.spec.hidden.back(); }
};

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.begin(), logits.end());
    const double m = *std::max_element(p.begin(), p.end());
    double sum = 0.0;
    for (double& v : p) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

inline std::vector<double> predict_proba(const Classifier& clf, std::span<const float> x) {
    return softmax(forward(clf.net, x));
}

inline std::vector<double> features(const Classifier& clf, std::span<const float> x) {
    if (clf.net.spec.hidden.empty()) return std::vector<double>(x.begin(), x.end());
    ForwardCache cache;
    forward(clf.net, x, 0, 0, &cache);
    return cache.act.back();
}

inline int argmax_index(std::span<const double> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Cross-entropy training with Adam on an internal 90/10 split; the held-out
// accuracy is recorded on the 10% side. Deterministic under the seed.
inline Classifier train_classifier(const Dataset& data, int epochs, double lr, std::uint64_t seed,
                                   std::vector<int> hidden = {64}, int batch_size = 64) {
    data.validate();
    if (!data.labeled() || data.num_classes < 2) throw UsageError("train_classifier: need labeled data with K >= 2");
    if (epochs < 1) throw ConfigError("train_classifier: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train_classifier: lr must be > 0");

    auto [train, held_out] = split(data, 0.9, Philox::derive(seed, 0));

    NetworkSpec spec;
    spec.data_dim = data.dim;
    spec.hidden = std::move(hidden);
    spec.output_dim = data.num_classes;
    Classifier clf;
    clf.net = init_network(spec, Philox::derive(seed, 1));

    Philox rng(Philox::derive(seed, 2));
    AdamState adam = AdamState::like(clf.net, AdamConfig{.lr = lr});
    std::vector<std::int64_t> order(static_cast<std::size_t>(train.n));
    std::iota(order.begin(), order.end(), 0);

    Gradients grads = Gradients::like(clf.net);
    ForwardCache cache;
    std::vector<double> grad_out(static_cast<std::size_t>(data.num_classes));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(batch_size)) {
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(batch_size), order.size() - off);
            grads.zero();
            double loss = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const auto idx = order[off + j];
                const auto logits = forward(clf.net, train.row(idx), 0, 0, &cache);
                const auto p = softmax(logits);
                const int label = train.labels[static_cast<std::size_t>(idx)];
                loss -= std::log(std::max(p[static_cast<std::size_t>(label)], 1e-300));
                for (int c = 0; c < data.num_classes; ++c)
                    grad_out[static_cast<std::size_t>(c)] =
                        (p[static_cast<std::size_t>(c)] - (c == label ? 1.0 : 0.0)) / static_cast<double>(len);
                backward_accumulate(clf.net, cache, grad_out, grads);
            }
            if (!std::isfinite(loss)) throw DivergenceError("train_classifier: loss is not finite");
            adam_step(clf.net, grads, adam);
        }
    }

    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < held_out.n; ++i) {
        const auto p = predict_proba(clf, held_out.row(i));
        if (argmax_index(p) == held_out.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    clf.held_out_accuracy = static_cast<double>(correct) / static_cast<double>(held_out.n);
    return clf;
}

}  // namespace clab
