#include "kgrg/classifier.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace kgrg {

ClassifierParams ClassifierParams::create(ParamStore& store, const std::string& prefix, std::size_t hidden,
                                          std::size_t n_primary, Rng& rng) {
    return ClassifierParams{add_linear(store, prefix + ".fc", n_primary, hidden, rng)};
}

Tensor classify(const Tensor& h, std::size_t nodes_per_graph, const ClassifierParams& params) {
    if (h.rank() != 2 || nodes_per_graph == 0 || h.dim(1) % nodes_per_graph != 0)
        throw ShapeError("classify: " + shape_str(h.shape()) + " is not a whole number of " +
                         std::to_string(nodes_per_graph) + "-node graphs");
    const std::size_t d = h.dim(0), b = h.dim(1) / nodes_per_graph;
    const Tensor pooled = mean(reshape(h, {d, b, nodes_per_graph}), {2});  // [d, B]
    return apply(params.fc, pooled);
}

ClassWeights class_weights(std::span<const double> labels, std::size_t k) {
    if (k == 0 || labels.size() % k != 0) throw std::invalid_argument("class_weights: ragged label matrix");
    const std::size_t n = labels.size() / k;
    ClassWeights w;
    for (std::size_t c = 0; c < k; ++c) {
        double pos = 0.0;
        for (std::size_t i = 0; i < n; ++i) pos += labels[i * k + c] > 0.5 ? 1.0 : 0.0;
        const double neg = static_cast<double>(n) - pos;
        const double total = static_cast<double>(n);
        w.pos.push_back(total / std::max(pos, 1.0));
        w.neg.push_back(total / std::max(neg, 1.0));
    }
    return w;
}

std::optional<double> auc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
    // Rank-sum form with average ranks for ties.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] > 0.5) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<ClassAuc> per_class_auc(std::span<const double> scores, std::span<const double> labels,
                                    std::span<const std::string> names) {
    const std::size_t k = names.size();
    if (k == 0 || scores.size() != labels.size() || scores.size() % k != 0)
        throw std::invalid_argument("per_class_auc: shape mismatch");
    const std::size_t n = scores.size() / k;
    std::vector<ClassAuc> rows;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = scores[i * k + c];
            y[i] = labels[i * k + c];
        }
        ClassAuc row{names[c], auc(s, y), 0, 0};
        for (double v : y) (v > 0.5 ? row.n_pos : row.n_neg)++;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::optional<double> mean_auc(std::span<const ClassAuc> rows) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.auc) {
            total += *r.auc;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return total / static_cast<double>(n);
}

void write_auc_csv(std::ostream& os, std::span<const ClassAuc> rows) {
    os << "node,auc,n_pos,n_neg\n";
    for (const auto& r : rows) {
        os << r.node << ',';
        if (r.auc) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", *r.auc);
            os << buf;
        }
        os << ',' << r.n_pos << ',' << r.n_neg << '\n';
    }
}

}  // namespace kgrg
