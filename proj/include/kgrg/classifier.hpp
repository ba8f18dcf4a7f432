// Multi-label finding classifier over pooled graph features.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgrg/tensor.hpp"

namespace kgrg {

struct ClassifierParams {
    Linear fc;  // hidden -> K_primary

    static ClassifierParams create(ParamStore& store, const std::string& prefix, std::size_t hidden,
                                   std::size_t n_primary, Rng& rng);
};

// h: [d, B*N]. Mean over each graph's N node columns, then linear: [K, B].
Tensor classify(const Tensor& h, std::size_t nodes_per_graph, const ClassifierParams& params);

struct ClassWeights {
    std::vector<double> pos, neg;
};

// labels: row-major [samples, K]. w_pos = (P+N)/max(P,1), w_neg = (P+N)/max(N,1).
ClassWeights class_weights(std::span<const double> labels, std::size_t k);

// Mann-Whitney AUC with ties counted one half; nullopt when a class is absent.
std::optional<double> auc(std::span<const double> scores, std::span<const double> labels);

struct ClassAuc {
    std::string node;
    std::optional<double> auc;
    std::size_t n_pos = 0, n_neg = 0;
};

// scores, labels: row-major [samples, K].
std::vector<ClassAuc> per_class_auc(std::span<const double> scores, std::span<const double> labels,
                                    std::span<const std::string> names);
// Mean over classes with a defined AUC; nullopt when none.
std::optional<double> mean_auc(std::span<const ClassAuc> rows);

// CSV "node,auc,n_pos,n_neg"; undefined AUCs are written as an empty field.
void write_auc_csv(std::ostream& os, std::span<const ClassAuc> rows);

}  // namespace kgrg
