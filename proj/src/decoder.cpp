#include "kgrg/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "kgrg/rng.hpp"

namespace kgrg {

namespace {

std::vector<double> random_rows(std::size_t rows, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(rows * dim);
    for (auto& x : v) x = rng.normal(0.0, 0.01);
    return v;
}

Tensor ones_row(std::size_t n) { return Tensor::full({1, n}, 1.0); }

}  // namespace

DecoderParams DecoderParams::create(ParamStore& store, const std::string& prefix, const DecoderConfig& cfg,
                                    std::size_t vocab_size, Rng& rng) {
    DecoderParams p;
    p.cfg = cfg;
    auto uniform = [&](Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
        return Tensor::from(std::move(shape), std::move(v));
    };
    p.att_q = store.add(prefix + ".att.query", uniform({cfg.att_dim, cfg.hidden}, cfg.hidden));
    p.att_k = add_linear(store, prefix + ".att.key", cfg.att_dim, cfg.node_dim, rng);
    p.att_v = store.add(prefix + ".att.score", uniform({1, cfg.att_dim}, cfg.att_dim));
    p.topic = add_lstm(store, prefix + ".topic_lstm", cfg.node_dim, cfg.hidden, rng);
    p.stop = add_linear(store, prefix + ".stop", 1, cfg.hidden, rng);
    p.topic_proj = add_linear(store, prefix + ".topic_proj", cfg.node_dim, cfg.hidden, rng);
    p.word = add_lstm(store, prefix + ".word_lstm", cfg.embed_dim + cfg.node_dim, cfg.hidden, rng);
    p.embed = store.add(prefix + ".embed",
                        Tensor::from({vocab_size, cfg.embed_dim}, random_rows(vocab_size, cfg.embed_dim, rng.next())));
    p.out = add_linear(store, prefix + ".out", vocab_size, cfg.hidden, rng);
    return p;
}

AttentionOutput attend(const Tensor& nodes, const Tensor& query, const DecoderParams& p) {
    const std::size_t n = nodes.dim(1);
    const Tensor keys = apply(p.att_k, nodes);                          // [att, N]
    const Tensor q = matmul(matmul(p.att_q, query), ones_row(n));       // [att, N]
    const Tensor scores = matmul(p.att_v, tanh(add(keys, q)));          // [1, N]
    const Tensor weights = softmax(scores, 1);
    return {matmul(nodes, transpose(weights)), weights};
}

double TopicOutput::stop_prob() const { return 1.0 / (1.0 + std::exp(-stop_logit.item())); }

LstmState zero_state(std::size_t hidden) { return {Tensor::zeros({hidden, 1}), Tensor::zeros({hidden, 1})}; }

TopicOutput topic_step(const Tensor& context, const LstmState& state, const DecoderParams& p) {
    TopicOutput out;
    out.state = lstm_cell(context, state, p.topic);
    out.stop_logit = apply(p.stop, out.state.h);
    out.topic = apply(p.topic_proj, out.state.h);
    return out;
}

Tensor word_teacher(const Tensor& topic, std::span<const std::size_t> gold, const DecoderParams& p) {
    if (gold.empty()) throw DecoderError("word_teacher: empty gold sentence");
    std::vector<std::size_t> inputs{kStart};
    inputs.insert(inputs.end(), gold.begin(), gold.end() - 1);
    const Tensor emb = embedding(p.embed, inputs);  // [E, L]
    LstmState state = zero_state(p.cfg.hidden);
    std::vector<Tensor> hs;
    hs.reserve(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        state = lstm_cell(concat({slice(emb, 1, t, 1), topic}, 0), state, p.word);
        hs.push_back(state.h);
    }
    return apply(p.out, concat(hs, 1));
}

std::vector<std::size_t> word_greedy(const Tensor& topic, std::size_t terminator, const DecoderParams& p) {
    std::vector<std::size_t> tokens;
    std::size_t prev = kStart;
    LstmState state = zero_state(p.cfg.hidden);
    while (tokens.size() < p.cfg.max_len) {
        const std::size_t id[1] = {prev};
        state = lstm_cell(concat({embedding(p.embed, id), topic}, 0), state, p.word);
        const Tensor logits = apply(p.out, state.h);
        const auto v = logits.values();
        prev = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
        tokens.push_back(prev);
        if (prev == terminator || prev == kEnd) break;
        // Keep the tape short: the greedy path never back-propagates.
        state = {state.h.detach(), state.c.detach()};
    }
    return tokens;
}

TeacherOutput decode_teacher(const Tensor& nodes, std::span<const std::vector<std::size_t>> gold,
                             const DecoderParams& p) {
    const std::size_t s = std::min(gold.size(), p.cfg.max_sentences);
    if (s == 0) throw DecoderError("decode_teacher: report has no sentences");
    TeacherOutput out;
    LstmState state = zero_state(p.cfg.hidden);
    std::vector<Tensor> stops;
    for (std::size_t i = 0; i < s; ++i) {
        const auto att = attend(nodes, state.h, p);
        const auto step = topic_step(att.context, state, p);
        state = step.state;
        stops.push_back(step.stop_logit);
        out.logits.push_back(word_teacher(step.topic, gold[i], p));
    }
    out.stop_logits = concat(stops, 1);
    return out;
}

Tensor decoder_loss(const TeacherOutput& out, std::span<const std::vector<std::size_t>> gold, double lambda_stop) {
    const std::size_t s = out.logits.size();
    if (s == 0 || gold.size() != s || out.stop_logits.numel() != s)
        throw DecoderError("decoder_loss: " + std::to_string(s) + " decoded sentences against " +
                           std::to_string(gold.size()) + " gold sentences");
    Tensor loss = cross_entropy(out.logits[0], gold[0]);
    for (std::size_t i = 1; i < s; ++i) loss = add(loss, cross_entropy(out.logits[i], gold[i]));
    if (lambda_stop != 0.0) {
        std::vector<double> last(s, 0.0);
        last.back() = 1.0;
        const std::vector<double> ones(1, 1.0);
        const Tensor bce = weighted_bce(reshape(out.stop_logits, {1, s}), last, ones, ones);
        loss = add(loss, scale(bce, lambda_stop));
    }
    return loss;
}

std::string GeneratedReport::text(const Vocabulary& vocab) const {
    std::string t;
    for (const auto& s : sentences) {
        for (auto id : s) {
            if (id == kEnd) continue;
            if (!t.empty()) t += ' ';
            t += vocab.token(id);
        }
    }
    return t;
}

GeneratedReport generate_report(const Tensor& nodes, const DecoderParams& p, std::size_t terminator) {
    GeneratedReport r;
    LstmState state = zero_state(p.cfg.hidden);
    const Tensor frozen_nodes = nodes.detach();
    for (std::size_t i = 0; i < p.cfg.max_sentences; ++i) {
        const auto att = attend(frozen_nodes, state.h, p);
        const auto step = topic_step(att.context, state, p);
        state = {step.state.h.detach(), step.state.c.detach()};
        r.sentences.push_back(word_greedy(step.topic.detach(), terminator, p));
        r.stop_probs.push_back(step.stop_prob());
        if (r.stop_probs.back() > p.cfg.stop_threshold) break;
    }
    return r;
}

std::vector<std::vector<std::size_t>> encode_sentences(const TokenizedReport& report, const Vocabulary& vocab,
                                                       std::size_t max_len) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& sentence : report.sentences) {
        auto ids = vocab.encode(sentence);
        if (ids.empty()) continue;
        if (ids.size() > max_len) {
            const auto last = ids.back();
            ids.resize(max_len);
            ids.back() = last;
        }
        out.push_back(std::move(ids));
    }
    return out;
}

std::vector<double> read_embeddings(std::istream& is, const Vocabulary& vocab, std::size_t dim, std::uint64_t seed,
                                    std::size_t* loaded) {
    auto table = random_rows(vocab.size(), dim, seed);
    std::size_t count = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        std::vector<double> values;
        std::string tok;
        while (ls >> tok) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw EmbeddingError("embeddings line " + std::to_string(lineno) + ": bad value '" + tok + "'");
            }
        }
        if (values.size() != dim)
            throw EmbeddingError("embeddings line " + std::to_string(lineno) + ": dimension " +
                                 std::to_string(values.size()) + ", expected " + std::to_string(dim));
        if (!vocab.contains(word)) continue;
        std::copy(values.begin(), values.end(), table.begin() + static_cast<std::ptrdiff_t>(vocab.index(word) * dim));
        ++count;
    }
    if (loaded) *loaded = count;
    return table;
}

std::vector<double> load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                    std::uint64_t seed, bool random_only, std::size_t* loaded) {
    if (random_only || path.empty()) {
        if (loaded) *loaded = 0;
        return random_rows(vocab.size(), dim, seed);
    }
    std::ifstream f(path);
    if (!f) throw EmbeddingError("cannot open embeddings file " + path);
    return read_embeddings(f, vocab, dim, seed, loaded);
}

void write_generated(std::ostream& os, const std::string& id, const std::string& text,
                     std::span<const double> stop_probs) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["text"] = text;
    j["stop_probs"] = std::vector<double>(stop_probs.begin(), stop_probs.end());
    os << j.dump() << '\n';
}

}  // namespace kgrg
