// Caption metrics, t-based bootstrap intervals and the sentence-count table.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgrg {

using Tokens = std::vector<std::string>;

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Corpus BLEU-n: clipped precisions pooled over the corpus, uniform geometric
// mean, brevity penalty exp(min(0, 1 - r/c)). Zero when any precision is zero.
double bleu(std::span<const Tokens> hyps, std::span<const Tokens> refs, std::size_t n);
// BLEU-1..4 in one pass.
std::array<double, 4> bleu_1to4(std::span<const Tokens> hyps, std::span<const Tokens> refs);
// Single-pair BLEU-n (same formula on a one-item corpus).
double sentence_bleu(const Tokens& hyp, const Tokens& ref, std::size_t n);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
double rouge_l_pair(const Tokens& hyp, const Tokens& ref, double beta = 1.2);
double rouge_l(std::span<const Tokens> hyps, std::span<const Tokens> refs, double beta = 1.2);

struct CiderOptions {
    std::size_t n_max = 4;
    bool cider_d = false;   // clipped counts and Gaussian length penalty
    double sigma = 6.0;     // CIDEr-D length penalty width
};

// Per-pair scores. IDF = log(M / max(df, 1)) over the M reference documents.
std::vector<double> cider_scores(std::span<const Tokens> hyps, std::span<const Tokens> refs,
                                 const CiderOptions& opt = {});
double cider(std::span<const Tokens> hyps, std::span<const Tokens> refs, const CiderOptions& opt = {});

struct ReportScore {
    std::string id;
    double bleu1 = 0.0, bleu4 = 0.0, rouge_l = 0.0, cider = 0.0;
    std::size_t ref_sentences = 0;
};

struct EvalResult {
    std::array<double, 4> bleu{};
    double rouge_l = 0.0;
    double cider = 0.0;
    double mean = 0.0;
    std::vector<ReportScore> per_report;

    // bleu1..bleu4, rougeL, cider, mean
    std::array<double, 7> headline() const;
    static const std::array<const char*, 7>& headline_names();
};

struct TextRecord {
    std::string id;
    std::string text;
};

// Line-delimited {"id", "text"} records; extra keys are ignored.
std::vector<TextRecord> read_text_records(std::istream& is);
std::vector<TextRecord> load_text_records(const std::string& path);
void write_text_records(std::ostream& os, std::span<const TextRecord> records);

// Aligns by id (every reference id must have exactly one hypothesis and vice versa).
EvalResult evaluate(std::span<const TextRecord> hyps, std::span<const TextRecord> refs,
                    const CiderOptions& opt = {});

struct MetricInterval {
    std::string name;
    double point = 0.0;     // replicate mean
    double sd = 0.0;        // sample standard deviation across replicates
    double half_width = 0.0;
    double lower = 0.0, upper = 0.0;
};

struct BootstrapResult {
    std::size_t replicates = 0;
    double conf = 0.95;
    double t_quantile = 0.0;
    std::vector<MetricInterval> metrics;
    std::vector<std::vector<std::size_t>> assignments;  // resampled training indices per replicate
};

// mean +- t_{B-1, (1+conf)/2} * sd / sqrt(B) for each column of values[replicate][metric].
BootstrapResult t_interval(const std::vector<std::vector<double>>& values, std::span<const std::string> names,
                           double conf = 0.95);

// Indices drawn with replacement for replicate b; depends only on (seed, b, n).
std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed, std::size_t replicate);

using ReplicateFn = std::function<std::vector<double>(std::size_t replicate, std::span<const std::size_t> train_indices)>;

// Runs B replicates (threads > 1 fans out; results merged in replicate order).
BootstrapResult bootstrap(const ReplicateFn& fn, std::span<const std::string> names, std::size_t n_train,
                          std::size_t replicates = 15, double conf = 0.95, std::uint64_t seed = 0,
                          std::size_t threads = 1);

void write_bootstrap_csv(std::ostream& os, const BootstrapResult& r);

struct ComplexityBin {
    double low = 0.0, high = 0.0;
    double mean_sentences = 0.0;
    std::size_t count = 0;
};

// Ten equal BLEU bins over [0, 1]; the last bin is closed on the right.
std::vector<ComplexityBin> complexity_table(std::span<const double> bleu1, std::span<const std::size_t> ref_sentences,
                                            std::size_t bins = 10);
void write_complexity_csv(std::ostream& os, std::span<const ComplexityBin> bins);

void write_eval_csv(std::ostream& os, const EvalResult& r);
void write_per_report_csv(std::ostream& os, const EvalResult& r);

}  // namespace kgrg
