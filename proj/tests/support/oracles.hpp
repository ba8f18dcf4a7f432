// Brute-force reference implementations used by the unit tests and the
// acceptance binary. Written independently of the library code paths.
#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kgrg/lexicon_kg.hpp"
#include "kgrg/metrics.hpp"

namespace oracle {

// Two-sided 97.5% Student t quantile with 14 degrees of freedom (B = 15).
inline constexpr double kT975Df14 = 2.1447866879169273;

// S[i][j] = (A + I)[i][j] / sqrt(deg_i * deg_j), degrees of A + I, element by element.
std::vector<double> normalized_adjacency(const std::vector<std::uint8_t>& a, std::size_t n);

// Tries every span length from the longest down at each position and every
// lexicon entry; the lowest id wins among identical names.
std::vector<kgrg::ConceptMatch> longest_match(std::span<const std::string> lemmas,
                                              std::span<const kgrg::Concept> lexicon);

// counts[i][j] = number of documents containing both i and j.
std::vector<std::uint64_t> cooccurrence(std::span<const std::set<std::size_t>> docs, std::size_t n);
std::vector<std::uint8_t> threshold(const std::vector<std::uint64_t>& counts, std::size_t n, std::uint64_t tau);

double bleu(std::span<const kgrg::Tokens> hyps, std::span<const kgrg::Tokens> refs, std::size_t n);
double rouge_l(std::span<const kgrg::Tokens> hyps, std::span<const kgrg::Tokens> refs, double beta = 1.2);
double cider(std::span<const kgrg::Tokens> hyps, std::span<const kgrg::Tokens> refs, std::size_t n_max = 4);

// mean, sample sd, half width for conf = 0.95 and B = 15 using the frozen quantile.
struct Interval {
    double mean, sd, half_width;
};
Interval t_interval_b15(std::span<const double> values);

// ---- random fixtures

// Lexicon of 1-4 token names over a 12-word pool (prefixes and duplicate
// names occur) and documents that mix pool words with planted names.
struct MiningCase {
    std::vector<kgrg::Concept> lexicon;
    std::vector<std::vector<std::string>> docs;
};
MiningCase random_mining_case(std::uint64_t seed, std::size_t n_docs = 200, std::size_t n_concepts = 30);

// Short token sequences over a 6-word pool, 1-12 tokens each.
struct TokenPairs {
    std::vector<kgrg::Tokens> hyps, refs;
};
TokenPairs random_token_pairs(std::uint64_t seed, std::size_t n);

}  // namespace oracle
