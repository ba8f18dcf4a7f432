// Graph convolution over the knowledge graph.
//
// Each layer computes
//   Hhat    = ReLU(BN(Conv1d(H)))
//   m       = ReLU(S H W)
//   H_next  = ReLU(BN(Conv1d(concat(Hhat, m))))
// with S = Dhat^-1/2 (A + I) Dhat^-1/2 and Dhat the degrees of A + I.
// Node features are stored column-wise: H is [channels, nodes].
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kgrg/tensor.hpp"

namespace kgrg {

// A: row-major N x N, symmetric, zero diagonal. Returns S as an [N, N] constant.
Tensor normalize_adjacency(std::span<const std::uint8_t> adjacency, std::size_t n);
Tensor normalize_adjacency(std::span<const double> adjacency, std::size_t n);

enum class GcnVariant {
    Full,         // three-equation layer above
    MessageOnly,  // H_next = ReLU(S H W)
};

struct GcnLayer {
    Linear conv_a;   // d_in -> d_out
    Tensor w;        // message weight [d_out, d_in]
    Linear conv_b;   // 2 d_out -> d_out
    BatchNorm bn_a, bn_b;
};

struct GcnParams {
    GcnVariant variant = GcnVariant::Full;
    std::vector<GcnLayer> layers;

    // Registers gcn.layer{l}.{conv_a,W,conv_b,bn_a,bn_b}.
    static GcnParams create(ParamStore& store, const std::string& prefix, std::size_t d_in, std::size_t hidden,
                            std::size_t n_layers, GcnVariant variant, Rng& rng);
};

// h: [d_in, B*N] (B graphs side by side); s: [N, N].
Tensor gcn_layer(const Tensor& h, const Tensor& s, GcnLayer& layer, GcnVariant variant, Mode mode);
Tensor gcn_forward(const Tensor& h0, const Tensor& s, GcnParams& params, Mode mode);

}  // namespace kgrg
