#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clab/binio.hpp"
#include "clab/errors.hpp"
#include "clab/prng.hpp"

namespace clab {

// N samples of dimension D with features in [-1, 1], optional class labels,
// a provenance tag (real data vs. the generation that produced it) and the
// per-feature affine map used to normalize: raw = value * scale + shift.
// Features are stored as f32 so in-memory data and GLD1 files agree exactly.
struct Dataset {
    std::int64_t n = 0;
    int dim = 0;
    std::vector<float> features;   // n * dim, row-major
    std::vector<std::uint16_t> labels;  // empty when unlabeled
    int num_classes = 0;
    std::optional<int> generation;  // nullopt = real data
    std::vector<double> shift, scale;

    bool labeled() const { return !labels.empty(); }

    std::span<const float> row(std::int64_t i) const {
        return {features.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }

    std::span<float> row(std::int64_t i) {
        return {features.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }

    // Maps a sample back to the raw data range using the recorded metadata.
    std::vector<double> denormalize(std::int64_t i) const {
        const auto r = row(i);
        std::vector<double> out(r.begin(), r.end());
        if (!shift.empty())
            for (int d = 0; d < dim; ++d) out[d] = out[d] * scale[d] + shift[d];
        return out;
    }

    void validate() const {
        if (n < 1) throw UsageError("dataset: empty");
        if (dim < 1) throw UsageError("dataset: dimension must be >= 1");
        if (features.size() != static_cast<std::size_t>(n) * dim) throw ShapeError("dataset: feature array size mismatch");
        for (float v : features)
            if (!std::isfinite(v) || v < -1.0f || v > 1.0f)
                throw UsageError("dataset: feature outside [-1, 1]");
        if (labeled()) {
            if (static_cast<std::int64_t>(labels.size()) != n) throw ShapeError("dataset: label array size mismatch");
            if (num_classes < 1) throw UsageError("dataset: labeled data needs num_classes >= 1");
            for (auto l : labels)
                if (l >= num_classes) throw UsageError("dataset: label outside [0, K)");
        }
        if (!shift.empty() && (static_cast<int>(shift.size()) != dim || static_cast<int>(scale.size()) != dim))
            throw ShapeError("dataset: normalization metadata size mismatch");
    }
};

namespace detail {

// Per-feature affine normalization onto [-1, 1]; degenerate features
// (zero range) map to 0.
inline Dataset normalize_rows(const std::vector<double>& raw, std::int64_t n, int dim) {
    Dataset ds;
    ds.n = n;
    ds.dim = dim;
    ds.shift.assign(dim, 0.0);
    ds.scale.assign(dim, 1.0);
    for (int d = 0; d < dim; ++d) {
        double lo = raw[static_cast<std::size_t>(d)], hi = lo;
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = raw[static_cast<std::size_t>(i) * dim + d];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        ds.shift[d] = 0.5 * (hi + lo);
        const double half = 0.5 * (hi - lo);
        ds.scale[d] = half < 1e-12 ? 1.0 : half;
    }
    ds.features.resize(static_cast<std::size_t>(n) * dim);
    for (std::int64_t i = 0; i < n; ++i)
        for (int d = 0; d < dim; ++d) {
            const double v = raw[static_cast<std::size_t>(i) * dim + d];
            ds.features[static_cast<std::size_t>(i) * dim + d] =
                static_cast<float>((v - ds.shift[d]) / ds.scale[d]);
        }
    return ds;
}

}  // namespace detail

// K means equally spaced on a circle; the default substrate geometry.
inline std::vector<std::array<double, 2>> circle_means(int k, double radius) {
    std::vector<std::array<double, 2>> m(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const double a = 2.0 * 3.14159265358979323846 * c / k;
        m[static_cast<std::size_t>(c)] = {radius * std::cos(a), radius * std::sin(a)};
    }
    return m;
}

// Isotropic 2-D Gaussian blobs, labels = component index, normalized to
// [-1, 1] with the map recorded.
inline Dataset gaussian_mixture(int k, int n_per_class, const std::vector<std::array<double, 2>>& means, double sigma,
                                std::uint64_t seed) {
    if (k < 1) throw ConfigError("gaussian_mixture: k must be >= 1");
    if (n_per_class < 1) throw ConfigError("gaussian_mixture: n_per_class must be >= 1");
    if (!(sigma > 0.0)) throw ConfigError("gaussian_mixture: sigma must be > 0");
    if (static_cast<int>(means.size()) != k) throw ConfigError("gaussian_mixture: need one mean per class");

    const std::int64_t n = static_cast<std::int64_t>(k) * n_per_class;
    std::vector<double> raw(static_cast<std::size_t>(n) * 2);
    std::vector<std::uint16_t> labels(static_cast<std::size_t>(n));
    Philox rng(seed);
    std::int64_t i = 0;
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < n_per_class; ++j, ++i) {
            raw[static_cast<std::size_t>(i) * 2] = means[static_cast<std::size_t>(c)][0] + sigma * rng.gaussian();
            raw[static_cast<std::size_t>(i) * 2 + 1] = means[static_cast<std::size_t>(c)][1] + sigma * rng.gaussian();
            labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(c);
        }
    Dataset ds = detail::normalize_rows(raw, n, 2);
    ds.labels = std::move(labels);
    ds.num_classes = k;
    return ds;
}

// Fixed 8x8 binary stencils, one per digit class. Row-major, 1 = ink.
inline const std::array<std::array<std::uint8_t, 64>, 10>& glyph_stencils() {
    static const auto stencils = [] {
        const char* art[10][8] = {
            {"..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"},
            {"...##...", "..###...", "...##...", "...##...", "...##...", "...##...", ".######.", "........"},
            {"..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........"},
            {"..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".##..##.", "..####..", "........"},
            {"....##..", "...###..", "..#.##..", ".#..##..", ".######.", "....##..", "....##..", "........"},
            {".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........"},
            {"..####..", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"},
            {".######.", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "........"},
            {"..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........"},
            {"..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..", ".####...", "........"},
        };
        std::array<std::array<std::uint8_t, 64>, 10> s{};
        for (int c = 0; c < 10; ++c)
            for (int r = 0; r < 8; ++r)
                for (int col = 0; col < 8; ++col) s[c][r * 8 + col] = art[c][r][col] == '#' ? 1 : 0;
        return s;
    }();
    return stencils;
}

// 8x8 digit-like glyphs: stencil pixels mapped to {-1, +1}, optionally
// shifted by one pixel in each axis, then perturbed with Gaussian jitter and
// clamped back into [-1, 1]. jitter = 0 with translate = false reproduces
// the stencils exactly.
inline Dataset glyph_dataset(int n_per_class, double jitter, std::uint64_t seed, bool translate = true) {
    if (n_per_class < 1) throw ConfigError("glyph_dataset: n_per_class must be >= 1");
    if (jitter < 0.0 || jitter > 0.5) throw ConfigError("glyph_dataset: jitter must be in [0, 0.5]");

    const auto& stencils = glyph_stencils();
    const int k = 10, dim = 64;
    const std::int64_t n = static_cast<std::int64_t>(k) * n_per_class;
    Dataset ds;
    ds.n = n;
    ds.dim = dim;
    ds.num_classes = k;
    ds.features.resize(static_cast<std::size_t>(n) * dim);
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.shift.assign(dim, 0.0);
    ds.scale.assign(dim, 1.0);

    Philox rng(seed);
    std::int64_t i = 0;
    for (int c = 0; c < k; ++c)
        for (int j = 0; j < n_per_class; ++j, ++i) {
            int dx = 0, dy = 0;
            if (translate) {
                dx = static_cast<int>(rng.next_below(3)) - 1;
                dy = static_cast<int>(rng.next_below(3)) - 1;
            }
            float* out = ds.features.data() + static_cast<std::size_t>(i) * dim;
            for (int r = 0; r < 8; ++r)
                for (int col = 0; col < 8; ++col) {
                    const int sr = r - dy, sc = col - dx;
                    const bool ink =
                        sr >= 0 && sr < 8 && sc >= 0 && sc < 8 && stencils[static_cast<std::size_t>(c)][sr * 8 + sc];
                    double v = ink ? 1.0 : -1.0;
                    if (jitter > 0.0) v += jitter * rng.gaussian();
                    out[r * 8 + col] = static_cast<float>(std::clamp(v, -1.0, 1.0));
                }
            ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(c);
        }
    return ds;
}

// IDX loader (big-endian headers, magic 0x00000803 for images and
// 0x00000801 for labels). Pixels are scaled from [0, 255] to [-1, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    binio::Reader img(binio::read_file(images_path), images_path);
    const std::uint32_t img_magic = img.u32_be("IDX magic");
    if (img_magic != 0x00000803u) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%08X", img_magic);
        throw FormatError(images_path + ": bad IDX image magic 0x" + std::string(buf) +
                          " at byte offset 0 (expected 0x00000803)");
    }
    const std::uint32_t n_img = img.u32_be("image count");
    const std::uint32_t rows = img.u32_be("row count");
    const std::uint32_t cols = img.u32_be("column count");
    const std::size_t pixels = static_cast<std::size_t>(n_img) * rows * cols;
    img.need(pixels, "pixel payload");

    binio::Reader lab(binio::read_file(labels_path), labels_path);
    const std::uint32_t lab_magic = lab.u32_be("IDX magic");
    if (lab_magic != 0x00000801u)
        throw FormatError(labels_path + ": bad IDX label magic at byte offset 0 (expected 0x00000801)");
    const std::uint32_t n_lab = lab.u32_be("label count");
    if (n_img != n_lab)
        throw FormatError(images_path + ": count mismatch, " + std::to_string(n_img) + " images vs " +
                          std::to_string(n_lab) + " labels");
    lab.need(n_lab, "label payload");
    if (n_img == 0) throw FormatError(images_path + ": empty IDX file");

    Dataset ds;
    ds.n = n_img;
    ds.dim = static_cast<int>(rows * cols);
    ds.features.resize(pixels);
    ds.labels.resize(n_lab);
    ds.shift.assign(ds.dim, 127.5);
    ds.scale.assign(ds.dim, 127.5);
    const std::string px = img.raw(pixels, "pixel payload");
    for (std::size_t i = 0; i < pixels; ++i)
        ds.features[i] = static_cast<float>(static_cast<std::uint8_t>(px[i])) / 127.5f - 1.0f;
    const std::string lb = lab.raw(n_lab, "label payload");
    int max_label = 0;
    for (std::size_t i = 0; i < n_lab; ++i) {
        ds.labels[i] = static_cast<std::uint8_t>(lb[i]);
        max_label = std::max(max_label, static_cast<int>(ds.labels[i]));
    }
    ds.num_classes = max_label + 1;
    return ds;
}

// Deterministic stratified split. Label proportions are preserved to within
// one sample per class; the union of the two sides is the input multiset.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split: fraction must be in (0, 1)");
    ds.validate();

    Philox rng(seed);
    auto shuffle_inplace = [&rng](std::vector<std::int64_t>& idx) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.next_below(i)]);
    };

    std::vector<std::int64_t> head, tail;
    if (ds.labeled()) {
        for (int c = 0; c < ds.num_classes; ++c) {
            std::vector<std::int64_t> idx;
            for (std::int64_t i = 0; i < ds.n; ++i)
                if (ds.labels[static_cast<std::size_t>(i)] == c) idx.push_back(i);
            shuffle_inplace(idx);
            const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
            head.insert(head.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
            tail.insert(tail.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
        }
    } else {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(ds.n));
        std::iota(idx.begin(), idx.end(), 0);
        shuffle_inplace(idx);
        const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.n)));
        head.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
        tail.assign(idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
    }
    if (head.empty() || tail.empty()) throw ConfigError("split: one side would be empty");

    auto gather = [&ds](const std::vector<std::int64_t>& idx) {
        Dataset out;
        out.n = static_cast<std::int64_t>(idx.size());
        out.dim = ds.dim;
        out.num_classes = ds.num_classes;
        out.generation = ds.generation;
        out.shift = ds.shift;
        out.scale = ds.scale;
        out.features.reserve(idx.size() * static_cast<std::size_t>(ds.dim));
        for (auto i : idx) {
            const auto r = ds.row(i);
            out.features.insert(out.features.end(), r.begin(), r.end());
            if (ds.labeled()) out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
        }
        return out;
    };
    return {gather(head), gather(tail)};
}

// GLD1 dataset file: magic "GLD1", u32 LE version, u32 LE N, u32 LE D,
// u8 label flag, 3 zero pad bytes, N*D f32 LE row-major, then N u16 LE
// labels when labeled.
inline std::string encode_gld1(const Dataset& ds) {
    ds.validate();
    if (ds.n > 0xFFFFFFFFll || ds.dim < 0) throw UsageError("gld1: dataset too large for format");
    std::string out;
    out.reserve(16 + ds.features.size() * 4 + ds.labels.size() * 2);
    out += "GLD1";
    binio::put_u32(out, 1u);
    binio::put_u32(out, static_cast<std::uint32_t>(ds.n));
    binio::put_u32(out, static_cast<std::uint32_t>(ds.dim));
    out.push_back(ds.labeled() ? char(1) : char(0));
    out.append(3, char(0));
    for (float v : ds.features) binio::put_f32(out, v);
    if (ds.labeled())
        for (auto l : ds.labels) binio::put_u16(out, l);
    return out;
}

inline void write_gld1(const Dataset& ds, const std::string& path) { binio::write_file(path, encode_gld1(ds)); }

inline Dataset read_gld1(const std::string& path) {
    binio::Reader r(binio::read_file(path), path);
    if (r.raw(4, "magic") != "GLD1") throw FormatError(path + ": bad GLD1 magic at byte offset 0");
    const std::uint32_t version = r.u32_le("version");
    if (version != 1u) throw FormatError(path + ": unsupported GLD1 version " + std::to_string(version));
    const std::uint32_t n = r.u32_le("sample count");
    const std::uint32_t dim = r.u32_le("dimension");
    const std::uint8_t labeled = r.u8("label flag");
    r.raw(3, "padding");
    if (n == 0 || dim == 0) throw FormatError(path + ": empty dataset");

    Dataset ds;
    ds.n = n;
    ds.dim = static_cast<int>(dim);
    ds.features.resize(static_cast<std::size_t>(n) * dim);
    for (auto& v : ds.features) v = r.f32_le("feature payload");
    if (labeled) {
        ds.labels.resize(n);
        int max_label = 0;
        for (auto& l : ds.labels) {
            l = r.u16_le("label payload");
            max_label = std::max(max_label, static_cast<int>(l));
        }
        ds.num_classes = max_label + 1;
    }
    if (r.remaining() != 0)
        throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
    try {
        ds.validate();
    } catch (const Error& e) {
        throw FormatError(path + ": invalid payload (" + e.what() + ")");
    }
    return ds;
}

}  // namespace clab
