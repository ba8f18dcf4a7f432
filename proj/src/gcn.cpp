#include "kgrg/gcn.hpp"

#include <cmath>
#include <stdexcept>

#include "kgrg/rng.hpp"

namespace kgrg {

Tensor normalize_adjacency(std::span<const double> adjacency, std::size_t n) {
    if (adjacency.size() != n * n) throw ShapeError("normalize_adjacency: expected N*N entries");
    for (std::size_t i = 0; i < n; ++i) {
        if (adjacency[i * n + i] != 0.0)
            throw std::invalid_argument("normalize_adjacency: nonzero diagonal at " + std::to_string(i));
        for (std::size_t j = i + 1; j < n; ++j)
            if (adjacency[i * n + j] != adjacency[j * n + i] || adjacency[i * n + j] < 0.0)
                throw std::invalid_argument("normalize_adjacency: adjacency must be symmetric and nonnegative");
    }
    std::vector<double> a_hat(adjacency.begin(), adjacency.end());
    for (std::size_t i = 0; i < n; ++i) a_hat[i * n + i] += 1.0;
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d += a_hat[i * n + j];
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
    }
    std::vector<double> s(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s[i * n + j] = inv_sqrt_deg[i] * a_hat[i * n + j] * inv_sqrt_deg[j];
    return Tensor::from({n, n}, std::move(s));
}

Tensor normalize_adjacency(std::span<const std::uint8_t> adjacency, std::size_t n) {
    std::vector<double> a(adjacency.begin(), adjacency.end());
    return normalize_adjacency(std::span<const double>(a), n);
}

GcnParams GcnParams::create(ParamStore& store, const std::string& prefix, std::size_t d_in, std::size_t hidden,
                            std::size_t n_layers, GcnVariant variant, Rng& rng) {
    GcnParams p;
    p.variant = variant;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        const std::size_t din = l == 0 ? d_in : hidden;
        GcnLayer layer;
        const double bound = 1.0 / std::sqrt(static_cast<double>(din));
        std::vector<double> w(hidden * din);
        for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
        layer.w = store.add(lp + ".W", Tensor::from({hidden, din}, std::move(w)));
        if (variant == GcnVariant::Full) {
            layer.conv_a = add_linear(store, lp + ".conv_a", hidden, din, rng);
            layer.conv_b = add_linear(store, lp + ".conv_b", hidden, 2 * hidden, rng);
            layer.bn_a = store.add_batch_norm(lp + ".bn_a", hidden);
            layer.bn_b = store.add_batch_norm(lp + ".bn_b", hidden);
        }
        p.layers.push_back(std::move(layer));
    }
    return p;
}

Tensor gcn_layer(const Tensor& h, const Tensor& s, GcnLayer& layer, GcnVariant variant, Mode mode) {
    const Tensor message = relu(propagate(matmul(layer.w, h), s));
    if (variant == GcnVariant::MessageOnly) return message;
    const Tensor h_hat = relu(batch_norm(apply(layer.conv_a, h), layer.bn_a, mode));
    return relu(batch_norm(apply(layer.conv_b, concat({h_hat, message}, 0)), layer.bn_b, mode));
}

Tensor gcn_forward(const Tensor& h0, const Tensor& s, GcnParams& params, Mode mode) {
    Tensor h = h0;
    for (auto& layer : params.layers) h = gcn_layer(h, s, layer, params.variant, mode);
    return h;
}

}  // namespace kgrg
