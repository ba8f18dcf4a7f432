// Report corpus ingestion, text normalisation, vocabulary and splits.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace kgrg {

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Report {
    std::string id;
    std::string findings;
    std::string impression;
    std::vector<std::string> labels;
    std::string frontal_ref;
    std::string lateral_ref;
};

struct TokenizedReport {
    std::string id;
    std::vector<std::vector<std::string>> sentences;
    std::vector<std::string> flat_tokens;
};

struct LoadResult {
    std::vector<Report> reports;
    std::size_t skipped = 0;  // records missing a section or a view
};

// One JSON object per line with keys id, findings, impression, labels,
// frontal_ref, lateral_ref. Blank lines are ignored.
LoadResult read_reports(std::istream& is);
LoadResult load_reports(const std::string& path);
void write_reports(std::ostream& os, std::span<const Report> reports);

// Lowercased, punctuation-separated tokens of free text with no sentence
// handling ("." is kept as an ordinary token).
std::vector<std::string> tokenize(const std::string& text);
// Sentence split at '.', '!', '?'; each sentence ends with ".".
std::vector<std::vector<std::string>> split_sentences(const std::string& text);
TokenizedReport preprocess(const Report& report);

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kStart = 1;
inline constexpr std::size_t kEnd = 2;
inline constexpr std::size_t kUnk = 3;
inline constexpr const char* kSentenceEnd = ".";

class Vocabulary {
public:
    Vocabulary();

    static Vocabulary build(std::span<const TokenizedReport> corpus, std::size_t min_freq = 3);
    static Vocabulary read(std::istream& is);
    static Vocabulary load(const std::string& path);
    void write(std::ostream& os) const;
    void save(const std::string& path) const;

    std::size_t size() const { return tokens_.size(); }
    std::size_t index(const std::string& token) const;  // kUnk when absent
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token(std::size_t index) const;
    std::size_t min_frequency() const { return min_freq_; }

    std::vector<std::size_t> encode(std::span<const std::string> tokens) const;
    std::vector<std::string> decode(std::span<const std::size_t> ids) const;

private:
    void push(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t min_freq_ = 0;
};

struct LabelVector {
    std::vector<double> values;  // 0/1 per primary node
    std::size_t unmatched = 0;   // label strings matching no primary node
};

LabelVector extract_labels(const Report& report, std::span<const std::string> primary_nodes);

struct SplitRatios {
    double train = 0.6, val = 0.2, test = 0.2;
};

template <typename T>
struct Splits {
    std::vector<T> train, val, test;
};

// Seeded shuffle of positions, then contiguous slices sized floor(n*train),
// floor(n*val) and the remainder.
Splits<std::size_t> split_indices(std::size_t n, SplitRatios ratios, std::uint64_t seed);

template <typename T>
Splits<T> split_dataset(std::span<const T> items, SplitRatios ratios, std::uint64_t seed) {
    const auto idx = split_indices(items.size(), ratios, seed);
    Splits<T> out;
    for (auto i : idx.train) out.train.push_back(items[i]);
    for (auto i : idx.val) out.val.push_back(items[i]);
    for (auto i : idx.test) out.test.push_back(items[i]);
    return out;
}

struct CorpusStats {
    std::size_t reports = 0, sentences = 0, tokens = 0;
};
CorpusStats corpus_stats(std::span<const TokenizedReport> corpus);

std::string to_lower(std::string s);
std::string join(std::span<const std::string> tokens, const std::string& sep = " ");

}  // namespace kgrg
