#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "clab/binio.hpp"
#include "clab/errors.hpp"
#include "clab/nn.hpp"

namespace clab {

// CLNN model snapshot.
//
//   magic "CLNN" | u32 LE format version (1) | layer-spec block | parameters
//
// Layer-spec block:
//   role tag (4 bytes: "DIFF" diffusion denoiser, "CLSF" classifier,
//   "NNET" generic), u32 data_dim, u32 output_dim, u32 hidden-layer count
//   followed by that many u32 widths, u32 time_embed_dim, u32
//   class_embed_dim, u32 num_classes, u32 max_timestep, u8 hidden-activation
//   id, u32 aux count followed by that many f64 values. Aux values by role:
//   DIFF = {beta_start, beta_end}, CLSF = {held-out accuracy}.
//
// Parameters follow as 32-bit little-endian floats in declaration order:
// each layer's weight matrix row-major then its bias vector, then the
// class-embedding table row-major.

struct Snapshot {
    std::string role;  // "DIFF", "CLSF" or "NNET"
    Network net;
    std::vector<double> aux;
};

inline std::string encode_snapshot(const Snapshot& snap) {
    if (snap.role.size() != 4) throw UsageError("snapshot: role tag must be 4 bytes");
    std::string out;
    out += "CLNN";
    binio::put_u32(out, 1u);
    out += snap.role;
    const auto& spec = snap.net.spec;
    binio::put_u32(out, static_cast<std::uint32_t>(spec.data_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.output_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.hidden.size()));
    for (int w : spec.hidden) binio::put_u32(out, static_cast<std::uint32_t>(w));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.time_embed_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.class_embed_dim));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.num_classes));
    binio::put_u32(out, static_cast<std::uint32_t>(spec.max_timestep));
    out.push_back(static_cast<char>(spec.hidden_activation));
    binio::put_u32(out, static_cast<std::uint32_t>(snap.aux.size()));
    for (double v : snap.aux) binio::put_f64(out, v);

    for (std::size_t l = 0; l < snap.net.weights.size(); ++l) {
        for (double v : snap.net.weights[l].data) binio::put_f32(out, static_cast<float>(v));
        for (double v : snap.net.biases[l]) binio::put_f32(out, static_cast<float>(v));
    }
    for (double v : snap.net.class_embed.data) binio::put_f32(out, static_cast<float>(v));
    return out;
}

inline void write_snapshot(const Snapshot& snap, const std::string& path) {
    binio::write_file(path, encode_snapshot(snap));
}

inline Snapshot read_snapshot(const std::string& path) {
    binio::Reader r(binio::read_file(path), path);
    if (r.raw(4, "magic") != "CLNN") throw FormatError(path + ": bad CLNN magic at byte offset 0");
    const std::uint32_t version = r.u32_le("version");
    if (version != 1u) throw FormatError(path + ": unsupported CLNN version " + std::to_string(version));

    Snapshot snap;
    snap.role = r.raw(4, "role tag");
    NetworkSpec spec;
    spec.data_dim = static_cast<int>(r.u32_le("data_dim"));
    spec.output_dim = static_cast<int>(r.u32_le("output_dim"));
    const std::uint32_t n_hidden = r.u32_le("hidden count");
    if (n_hidden > 64) throw FormatError(path + ": implausible hidden layer count");
    for (std::uint32_t i = 0; i < n_hidden; ++i) spec.hidden.push_back(static_cast<int>(r.u32_le("hidden width")));
    spec.time_embed_dim = static_cast<int>(r.u32_le("time_embed_dim"));
    spec.class_embed_dim = static_cast<int>(r.u32_le("class_embed_dim"));
    spec.num_classes = static_cast<int>(r.u32_le("num_classes"));
    spec.max_timestep = static_cast<int>(r.u32_le("max_timestep"));
    const std::uint8_t act = r.u8("activation id");
    if (act > 1) throw FormatError(path + ": unknown activation id " + std::to_string(act));
    spec.hidden_activation = static_cast<Activation>(act);
    const std::uint32_t n_aux = r.u32_le("aux count");
    if (n_aux > 16) throw FormatError(path + ": implausible aux count");
    for (std::uint32_t i = 0; i < n_aux; ++i) snap.aux.push_back(r.f64_le("aux value"));

    try {
        spec.validate();
    } catch (const Error& e) {
        throw FormatError(path + ": invalid network spec (" + e.what() + ")");
    }

    snap.net.spec = spec;
    const auto dims = spec.layer_dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Matrix w(dims[l + 1], dims[l]);
        for (double& v : w.data) v = r.f32_le("weight payload");
        snap.net.weights.push_back(std::move(w));
        std::vector<double> b(static_cast<std::size_t>(dims[l + 1]));
        for (double& v : b) v = r.f32_le("bias payload");
        snap.net.biases.push_back(std::move(b));
    }
    if (spec.conditional()) {
        snap.net.class_embed = Matrix(spec.num_classes + 1, spec.class_embed_dim);
        for (double& v : snap.net.class_embed.data) v = r.f32_le("embedding payload");
    }
    if (r.remaining() != 0) throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
    return snap;
}

}  // namespace clab
