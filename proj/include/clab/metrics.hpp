#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clab/classifier.hpp"
#include "clab/dataset.hpp"
#include "clab/errors.hpp"
#include "clab/matrix.hpp"

namespace clab {

// ---------------------------------------------------------------------------
// Moments and the Frechet distance
// ---------------------------------------------------------------------------

struct MomentSummary {
    std::vector<double> mean;
    Matrix cov;  // F x F, denominator M - 1
    std::int64_t count = 0;
};

inline MomentSummary moments(const Matrix& feats) {
    if (feats.rows < 2) throw UsageError("moments: need at least 2 points");
    const int m = feats.rows, f = feats.cols;
    MomentSummary s;
    s.count = m;
    s.mean.assign(static_cast<std::size_t>(f), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < f; ++j) s.mean[static_cast<std::size_t>(j)] += feats(i, j);
    for (double& v : s.mean) v /= static_cast<double>(m);
    s.cov = Matrix(f, f);
    std::vector<double> c(static_cast<std::size_t>(f));
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < f; ++j) c[static_cast<std::size_t>(j)] = feats(i, j) - s.mean[static_cast<std::size_t>(j)];
        for (int a = 0; a < f; ++a)
            for (int b = a; b < f; ++b) s.cov(a, b) += c[static_cast<std::size_t>(a)] * c[static_cast<std::size_t>(b)];
    }
    for (int a = 0; a < f; ++a)
        for (int b = a; b < f; ++b) {
            s.cov(a, b) /= static_cast<double>(m - 1);
            s.cov(b, a) = s.cov(a, b);
        }
    return s;
}

struct SymmetricEigen {
    std::vector<double> values;
    Matrix vectors;  // columns are eigenvectors
};

// Cyclic Jacobi diagonalization of a symmetric matrix. Plenty for the
// F <= 64 feature spaces used here.
inline SymmetricEigen jacobi_eigen(Matrix a) {
    const int n = a.rows;
    if (n != a.cols) throw ShapeError("jacobi_eigen: matrix must be square");
    Matrix v(n, n);
    for (int i = 0; i < n; ++i) v(i, i) = 1.0;

    const double scale = std::max(a.max_abs(), 1e-300);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        if (off <= 1e-15 * scale) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);
                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (int i = 0; i < n; ++i) {
                    if (i != p && i != q) {
                        const double aip = a(i, p), aiq = a(i, q);
                        a(i, p) = aip - s * (aiq + tau * aip);
                        a(p, i) = a(i, p);
                        a(i, q) = aiq + s * (aip - tau * aiq);
                        a(q, i) = a(i, q);
                    }
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = vip - s * (viq + tau * vip);
                    v(i, q) = viq + s * (vip - tau * viq);
                }
            }
    }
    SymmetricEigen e;
    e.values.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) e.values[static_cast<std::size_t>(i)] = a(i, i);
    e.vectors = std::move(v);
    return e;
}

namespace detail {

inline Matrix eigen_reconstruct(const SymmetricEigen& e, std::span<const double> diag) {
    const int n = e.vectors.rows;
    Matrix s(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) acc += e.vectors(i, k) * diag[static_cast<std::size_t>(k)] * e.vectors(j, k);
            s(i, j) = acc;
            s(j, i) = acc;
        }
    return s;
}

}  // namespace detail

// Principal square root of a symmetric PSD matrix via Jacobi
// eigendecomposition. Eigenvalues in [-1e-9, 0) are treated as rounding
// noise and clipped to zero.
inline Matrix matrix_sqrt_psd(const Matrix& m) {
    if (m.rows != m.cols) throw ShapeError("matrix_sqrt_psd: matrix must be square");
    const double tol = 1e-6 * (1.0 + m.max_abs());
    for (int i = 0; i < m.rows; ++i)
        for (int j = i + 1; j < m.cols; ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol) throw UsageError("matrix_sqrt_psd: matrix is not symmetric");
    Matrix sym(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) sym(i, j) = 0.5 * (m(i, j) + m(j, i));

    auto e = jacobi_eigen(sym);
    std::vector<double> root(e.values.size());
    for (std::size_t i = 0; i < e.values.size(); ++i) {
        if (e.values[i] < -1e-9) throw UsageError("matrix_sqrt_psd: matrix is not PSD within tolerance");
        root[i] = std::sqrt(std::max(e.values[i], 0.0));
    }
    return detail::eigen_reconstruct(e, root);
}

// d = |mu_x - mu_y|^2 + Tr(Sx + Sy - 2 (Sx Sy)^(1/2)), with the product root
// evaluated through the symmetric form sqrt(Sx) Sy sqrt(Sx). When F > 1 and
// either covariance is near-singular both are regularized with 1e-6 I
// (reported through `regularized`). A rounding-level negative result within
// 1e-6 is clamped to zero.
inline double frechet_from_moments(const MomentSummary& x, const MomentSummary& y, bool* regularized = nullptr) {
    if (x.mean.size() != y.mean.size()) throw ShapeError("frechet: feature dimensions differ");
    const int f = static_cast<int>(x.mean.size());
    if (regularized) *regularized = false;

    double mean_term = 0.0;
    for (int i = 0; i < f; ++i) {
        const double d = x.mean[static_cast<std::size_t>(i)] - y.mean[static_cast<std::size_t>(i)];
        mean_term += d * d;
    }

    auto ex = jacobi_eigen(x.cov);
    auto ey = jacobi_eigen(y.cov);
    Matrix cov_y = y.cov;
    double reg = 0.0;
    if (f > 1) {
        const double min_x = *std::min_element(ex.values.begin(), ex.values.end());
        const double min_y = *std::min_element(ey.values.begin(), ey.values.end());
        if (min_x < 1e-10 || min_y < 1e-10) {
            reg = 1e-6;
            if (regularized) *regularized = true;
            for (int i = 0; i < f; ++i) cov_y(i, i) += reg;
        }
    }
    double trace_x = 0.0, trace_y = cov_y.trace();
    std::vector<double> root_x(ex.values.size());
    for (std::size_t i = 0; i < ex.values.size(); ++i) {
        const double lam = ex.values[i] + reg;
        trace_x += lam;
        root_x[i] = std::sqrt(std::max(lam, 0.0));
    }
    const Matrix sx = detail::eigen_reconstruct(ex, root_x);
    Matrix b = matmul(matmul(sx, cov_y), sx);
    for (int i = 0; i < f; ++i)
        for (int j = i + 1; j < f; ++j) {
            const double m = 0.5 * (b(i, j) + b(j, i));
            b(i, j) = m;
            b(j, i) = m;
        }
    auto eb = jacobi_eigen(b);
    double trace_sqrt = 0.0;
    for (double lam : eb.values) trace_sqrt += std::sqrt(std::max(lam, 0.0));

    double d = mean_term + trace_x + trace_y - 2.0 * trace_sqrt;
    if (d < 0.0 && d > -1e-6) d = 0.0;
    return d;
}

inline double frechet_distance(const Matrix& x_feats, const Matrix& y_feats, bool* regularized = nullptr) {
    if (x_feats.cols != y_feats.cols) throw ShapeError("frechet: feature dimensions differ");
    return frechet_from_moments(moments(x_feats), moments(y_feats), regularized);
}

// ---------------------------------------------------------------------------
// k-NN manifold metrics
// ---------------------------------------------------------------------------

// Reference points with their k-th nearest-neighbour radii. radius_sq holds
// the exact squared value used by every membership predicate so that an
// independent double-loop oracle reproduces the counts bit for bit.
struct ManifoldIndex {
    Matrix points;
    std::vector<double> radius;
    std::vector<double> radius_sq;
    int k = 0;
};

inline ManifoldIndex build_manifold(const Matrix& reference, int k) {
    const int m = reference.rows;
    if (k < 1 || k >= m) throw ConfigError("build_manifold: need 1 <= k < number of points");
    ManifoldIndex idx;
    idx.points = reference;
    idx.k = k;
    idx.radius.resize(static_cast<std::size_t>(m));
    idx.radius_sq.resize(static_cast<std::size_t>(m));
    std::vector<double> d2(static_cast<std::size_t>(m) - 1);
    for (int i = 0; i < m; ++i) {
        std::size_t w = 0;
        for (int j = 0; j < m; ++j)
            if (j != i) d2[w++] = dist_sq(reference.row(i), reference.row(j));
        std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
        idx.radius_sq[static_cast<std::size_t>(i)] = d2[static_cast<std::size_t>(k - 1)];
        idx.radius[static_cast<std::size_t>(i)] = std::sqrt(d2[static_cast<std::size_t>(k - 1)]);
    }
    return idx;
}

namespace detail {

inline void check_manifold_dims(const ManifoldIndex& m, const Matrix& pts) {
    if (pts.cols != m.points.cols) throw ShapeError("manifold metric: feature dimensions differ");
    if (pts.rows < 1) throw UsageError("manifold metric: empty point set");
}

}  // namespace detail

// Fraction of `generated` points inside at least one reference ball.
inline double precision(const ManifoldIndex& real_manifold, const Matrix& generated) {
    detail::check_manifold_dims(real_manifold, generated);
    std::int64_t hits = 0;
    for (int j = 0; j < generated.rows; ++j) {
        for (int i = 0; i < real_manifold.points.rows; ++i)
            if (dist_sq(generated.row(j), real_manifold.points.row(i)) <=
                real_manifold.radius_sq[static_cast<std::size_t>(i)]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(generated.rows);
}

// Fraction of `real` points inside the generated manifold (the mirror image
// of precision).
inline double recall(const ManifoldIndex& generated_manifold, const Matrix& real) {
    return precision(generated_manifold, real);
}

// Ball-membership count with multiplicity, normalized by k * M_generated.
inline double density(const ManifoldIndex& real_manifold, const Matrix& generated) {
    detail::check_manifold_dims(real_manifold, generated);
    std::int64_t hits = 0;
    for (int j = 0; j < generated.rows; ++j)
        for (int i = 0; i < real_manifold.points.rows; ++i)
            if (dist_sq(generated.row(j), real_manifold.points.row(i)) <=
                real_manifold.radius_sq[static_cast<std::size_t>(i)])
                ++hits;
    return static_cast<double>(hits) /
           (static_cast<double>(real_manifold.k) * static_cast<double>(generated.rows));
}

// Fraction of reference balls containing at least one generated point.
inline double coverage(const ManifoldIndex& real_manifold, const Matrix& generated) {
    detail::check_manifold_dims(real_manifold, generated);
    std::int64_t covered = 0;
    for (int i = 0; i < real_manifold.points.rows; ++i) {
        for (int j = 0; j < generated.rows; ++j)
            if (dist_sq(generated.row(j), real_manifold.points.row(i)) <=
                real_manifold.radius_sq[static_cast<std::size_t>(i)]) {
                ++covered;
                break;
            }
    }
    return static_cast<double>(covered) / static_cast<double>(real_manifold.points.rows);
}

// ---------------------------------------------------------------------------
// Classifier-based fidelity
// ---------------------------------------------------------------------------

struct FidelityReport {
    double accuracy = 0.0;
    double cross_entropy = 0.0;
    std::vector<double> per_class_accuracy;      // indexed by conditioning class
    std::vector<std::int64_t> per_class_count;
};

// Accuracy, mean cross-entropy and per-class accuracy of the classifier on
// generated samples, judged against their conditioning labels.
inline FidelityReport classifier_fidelity(const Classifier& clf, const Dataset& generated) {
    if (!generated.labeled()) throw UsageError("classifier_fidelity: generated data carries no labels");
    const int k = std::max(clf.num_classes(), generated.num_classes);
    FidelityReport rep;
    rep.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
    rep.per_class_count.assign(static_cast<std::size_t>(k), 0);
    std::int64_t correct = 0;
    double ce = 0.0;
    for (std::int64_t i = 0; i < generated.n; ++i) {
        const int label = generated.labels[static_cast<std::size_t>(i)];
        const auto p = predict_proba(clf, generated.row(i));
        const bool hit = label < clf.num_classes() && argmax_index(p) == label;
        const double p_label = label < clf.num_classes() ? p[static_cast<std::size_t>(label)] : 0.0;
        ce -= std::log(std::max(p_label, 1e-300));
        if (hit) ++correct;
        rep.per_class_count[static_cast<std::size_t>(label)] += 1;
        if (hit) rep.per_class_accuracy[static_cast<std::size_t>(label)] += 1.0;
    }
    for (std::size_t c = 0; c < rep.per_class_accuracy.size(); ++c)
        if (rep.per_class_count[c] > 0) rep.per_class_accuracy[c] /= static_cast<double>(rep.per_class_count[c]);
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(generated.n);
    rep.cross_entropy = ce / static_cast<double>(generated.n);
    return rep;
}

// ---------------------------------------------------------------------------
// Per-generation report and CSV serialization
// ---------------------------------------------------------------------------

struct MetricReport {
    int generation = 0;
    double fid = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double density = 0.0;
    double coverage = 0.0;
    std::optional<double> accuracy;
    std::optional<double> cross_entropy;
    std::vector<double> per_class_accuracy;
    std::vector<std::int64_t> per_class_count;
    bool fid_regularized = false;

    void validate() const {
        auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (fid < 0.0 || !std::isfinite(fid)) throw UsageError("metric report: fid out of range");
        if (!unit(precision) || !unit(recall) || !unit(coverage)) throw UsageError("metric report: fraction out of range");
        if (density < 0.0) throw UsageError("metric report: density out of range");
        if (accuracy && !unit(*accuracy)) throw UsageError("metric report: accuracy out of range");
        if (cross_entropy && *cross_entropy < 0.0) throw UsageError("metric report: cross-entropy out of range");
        for (double a : per_class_accuracy)
            if (!unit(a)) throw UsageError("metric report: per-class accuracy out of range");
    }
};

// Floats are printed with 6 significant digits everywhere they land in CSV.
inline std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline constexpr const char* kMetricsCsvHeader = "generation,fid,precision,recall,density,coverage,accuracy,cross_entropy";

inline std::string metrics_csv_row(const MetricReport& r, bool with_generation = true) {
    std::string row;
    if (with_generation) row += std::to_string(r.generation) + ",";
    row += format_g6(r.fid) + "," + format_g6(r.precision) + "," + format_g6(r.recall) + "," + format_g6(r.density) +
           "," + format_g6(r.coverage) + ",";
    if (r.accuracy) row += format_g6(*r.accuracy);
    row += ",";
    if (r.cross_entropy) row += format_g6(*r.cross_entropy);
    return row;
}

inline std::string metrics_csv(const std::vector<MetricReport>& reports) {
    std::string out = std::string(kMetricsCsvHeader) + "\n";
    for (const auto& r : reports) out += metrics_csv_row(r) + "\n";
    return out;
}

inline std::string per_class_csv(const std::vector<MetricReport>& reports) {
    std::string out = "generation,class,accuracy\n";
    for (const auto& r : reports)
        for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
            if (c < r.per_class_count.size() && r.per_class_count[c] == 0) continue;
            out += std::to_string(r.generation) + "," + std::to_string(c) + "," + format_g6(r.per_class_accuracy[c]) +
                   "\n";
        }
    return out;
}

}  // namespace clab
