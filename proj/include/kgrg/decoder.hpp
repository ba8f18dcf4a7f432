// Two-level report decoder: a topic LSTM attends over graph node features and
// emits one topic vector per sentence; a word LSTM expands each topic.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgrg/corpus.hpp"
#include "kgrg/tensor.hpp"

namespace kgrg {

struct DecoderConfig {
    std::size_t node_dim = 256;
    std::size_t embed_dim = 200;
    std::size_t hidden = 512;
    std::size_t att_dim = 128;
    std::size_t max_len = 30;
    std::size_t max_sentences = 7;
    double stop_threshold = 0.5;
    double lambda_stop = 1.0;
};

struct DecoderParams {
    DecoderConfig cfg;
    Tensor att_q;      // [att, hidden]
    Linear att_k;      // node_dim -> att
    Tensor att_v;      // [1, att]
    LstmParams topic;  // node_dim -> hidden
    Linear stop;       // hidden -> 1
    Linear topic_proj; // hidden -> node_dim
    LstmParams word;   // embed + node_dim -> hidden
    Tensor embed;      // [V, embed]
    Linear out;        // hidden -> V

    // Registers everything under <prefix>. The embedding table is random
    // N(0, 0.01^2) until overwritten by load_embeddings.
    static DecoderParams create(ParamStore& store, const std::string& prefix, const DecoderConfig& cfg,
                                std::size_t vocab_size, Rng& rng);
};

struct AttentionOutput {
    Tensor context;  // [node_dim, 1]
    Tensor weights;  // [1, N]
};

// nodes: [node_dim, N]; query: [hidden, 1].
AttentionOutput attend(const Tensor& nodes, const Tensor& query, const DecoderParams& p);

struct TopicOutput {
    Tensor topic;      // [node_dim, 1]
    Tensor stop_logit; // [1, 1]
    LstmState state;
    double stop_prob() const;
};

LstmState zero_state(std::size_t hidden);
TopicOutput topic_step(const Tensor& context, const LstmState& state, const DecoderParams& p);

// Teacher forcing: inputs are START then gold[0..L-2]; returns logits [V, L].
Tensor word_teacher(const Tensor& topic, std::span<const std::size_t> gold, const DecoderParams& p);
// Greedy argmax until the sentence terminator (or END) or max_len tokens.
std::vector<std::size_t> word_greedy(const Tensor& topic, std::size_t terminator, const DecoderParams& p);

struct TeacherOutput {
    std::vector<Tensor> logits;  // one [V, L_s] per sentence
    Tensor stop_logits;          // [1, S]
};

// Runs the topic loop over the gold sentences (truncated to max_sentences).
TeacherOutput decode_teacher(const Tensor& nodes, std::span<const std::vector<std::size_t>> gold,
                             const DecoderParams& p);

class DecoderError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Sum of token cross-entropy over all sentences plus lambda_stop times the
// summed BCE of the stop gate against "this is the last sentence".
Tensor decoder_loss(const TeacherOutput& out, std::span<const std::vector<std::size_t>> gold, double lambda_stop);

struct GeneratedReport {
    std::vector<std::vector<std::size_t>> sentences;
    std::vector<double> stop_probs;

    std::string text(const Vocabulary& vocab) const;
};

GeneratedReport generate_report(const Tensor& nodes, const DecoderParams& p, std::size_t terminator);

// Gold token ids per sentence, truncated to max_len tokens (terminator kept last).
std::vector<std::vector<std::size_t>> encode_sentences(const TokenizedReport& report, const Vocabulary& vocab,
                                                       std::size_t max_len);

class EmbeddingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Word-vector text file: "word v1 ... vD" per line. Every row is first drawn
// from N(0, 0.01^2) in vocabulary order, then rows for words present in the
// file are overwritten. random_only skips the file entirely.
std::vector<double> read_embeddings(std::istream& is, const Vocabulary& vocab, std::size_t dim, std::uint64_t seed,
                                    std::size_t* loaded = nullptr);
std::vector<double> load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                    std::uint64_t seed, bool random_only = false, std::size_t* loaded = nullptr);

// One JSON object per line: {"id", "text", "stop_probs"}.
void write_generated(std::ostream& os, const std::string& id, const std::string& text,
                     std::span<const double> stop_probs);

}  // namespace kgrg
