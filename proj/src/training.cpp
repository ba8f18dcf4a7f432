#include "kgrg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "kgrg/rng.hpp"

namespace kgrg {

namespace fs = std::filesystem;

// ---- config -----------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || x < 0) throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || !std::isfinite(x)) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define KGRG_SIZE(name) \
    {#name, {[](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_size(k, v); }, \
             [](const TrainConfig& c) { return std::to_string(c.name); }}}
#define KGRG_DOUBLE(name) \
    {#name, {[](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_double(k, v); }, \
             [](const TrainConfig& c) { return fmt_g(c.name); }}}
#define KGRG_STRING(name) \
    {#name, {[](TrainConfig& c, const std::string&, const std::string& v) { c.name = v; }, \
             [](const TrainConfig& c) { return c.name; }}}
#define KGRG_BOOL(name) \
    {#name, {[](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_bool(k, v); }, \
             [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }}}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f{
        KGRG_STRING(stage),
        KGRG_SIZE(epochs),
        KGRG_SIZE(batch_size),
        KGRG_DOUBLE(lr),
        KGRG_DOUBLE(weight_decay),
        {"seed", {[](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_size(k, v); },
                  [](const TrainConfig& c) { return std::to_string(c.seed); }}},
        KGRG_DOUBLE(noise_sigma),
        KGRG_SIZE(max_steps),
        KGRG_STRING(corpus),
        KGRG_STRING(graph),
        KGRG_STRING(vocab),
        KGRG_STRING(embeddings),
        KGRG_STRING(checkpoint),
        KGRG_STRING(out_dir),
        KGRG_SIZE(image_side),
        KGRG_SIZE(gcn_hidden),
        KGRG_SIZE(gcn_layers),
        KGRG_STRING(gcn_variant),
        KGRG_SIZE(embed_dim),
        KGRG_SIZE(decoder_hidden),
        KGRG_SIZE(att_dim),
        KGRG_SIZE(max_len),
        KGRG_SIZE(max_sentences),
        KGRG_DOUBLE(stop_threshold),
        KGRG_DOUBLE(lambda_stop),
        KGRG_BOOL(random_embeddings),
        KGRG_SIZE(decoder_epochs),
        KGRG_DOUBLE(decoder_lr),
        KGRG_SIZE(decoder_max_steps),
        KGRG_SIZE(min_freq),
        KGRG_DOUBLE(train_ratio),
        KGRG_DOUBLE(val_ratio),
        KGRG_DOUBLE(test_ratio),
    };
    return f;
}

#undef KGRG_SIZE
#undef KGRG_DOUBLE
#undef KGRG_STRING
#undef KGRG_BOOL

}  // namespace

DecoderConfig TrainConfig::decoder_config() const {
    DecoderConfig d;
    d.node_dim = gcn_hidden;
    d.embed_dim = embed_dim;
    d.hidden = decoder_hidden;
    d.att_dim = att_dim;
    d.max_len = max_len;
    d.max_sentences = max_sentences;
    d.stop_threshold = stop_threshold;
    d.lambda_stop = lambda_stop;
    return d;
}

GcnVariant TrainConfig::variant() const {
    if (gcn_variant == "full") return GcnVariant::Full;
    if (gcn_variant == "message-only") return GcnVariant::MessageOnly;
    throw ConfigError("config: gcn_variant must be full or message-only, got '" + gcn_variant + "'");
}

void TrainConfig::validate() const {
    if (stage != "classify" && stage != "generate") throw ConfigError("config: stage must be classify or generate");
    if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
    if (gcn_hidden == 0 || gcn_layers == 0 || embed_dim == 0 || decoder_hidden == 0 || att_dim == 0)
        throw ConfigError("config: model sizes must be positive");
    if (max_len == 0 || max_sentences == 0) throw ConfigError("config: max_len and max_sentences must be positive");
    if (image_side < TinyCnn::kMinSide) throw ConfigError("config: image_side below " + std::to_string(TinyCnn::kMinSide));
    if (lr <= 0.0 || decoder_lr < 0.0 || weight_decay < 0.0) throw ConfigError("config: bad learning rate or decay");
    if (noise_sigma < 0.0) throw ConfigError("config: noise_sigma must be non-negative");
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 || train_ratio + val_ratio + test_ratio > 1.0 + 1e-9)
        throw ConfigError("config: split ratios must be non-negative and sum to at most 1");
    variant();
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second.set(cfg, key, value);
}

TrainConfig read_config(std::istream& is, TrainConfig base) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    return read_config(f, std::move(base));
}

void write_config(std::ostream& os, const TrainConfig& cfg) {
    for (const auto& [k, f] : fields()) os << k << " = " << f.get(cfg) << '\n';
}

// ---- data ---------------------------------------------------------------------------

Dataset load_dataset(const std::string& corpus_path, const KnowledgeGraph& graph, std::size_t image_side) {
    const auto loaded = load_reports(corpus_path);
    const fs::path base = fs::path(corpus_path).parent_path();
    const auto primaries = graph.primary_names();
    Dataset data;
    data.skipped = loaded.skipped;
    auto resolve = [&](const std::string& ref) {
        const fs::path p(ref);
        return (p.is_absolute() ? p : base / p).string();
    };
    auto is_image = [](const std::string& ref) { return fs::path(ref).extension() == ".pgm"; };
    for (std::size_t i = 0; i < loaded.reports.size(); ++i) {
        const Report& r = loaded.reports[i];
        const bool img = is_image(r.frontal_ref);
        if (img != is_image(r.lateral_ref)) throw ParseError("report " + r.id + ": views use different sources");
        if (i == 0) data.feature_maps = !img;
        if (data.feature_maps == img) throw ParseError("report " + r.id + ": corpus mixes images and feature maps");
        Sample s;
        s.id = r.id;
        if (img) {
            s.frontal = fit_image(load_pgm(resolve(r.frontal_ref)), image_side);
            s.lateral = fit_image(load_pgm(resolve(r.lateral_ref)), image_side);
        } else {
            const auto f = load_feature_map(resolve(r.frontal_ref));
            const auto l = load_feature_map(resolve(r.lateral_ref));
            if (f.channels != l.channels || (data.feature_channels && f.channels != data.feature_channels))
                throw ParseError("report " + r.id + ": feature-map channel count differs");
            data.feature_channels = f.channels;
            s.frontal_fm = f.to_tensor();
            s.lateral_fm = l.to_tensor();
        }
        s.labels = extract_labels(r, primaries).values;
        s.text = preprocess(r);
        s.reference = r.findings + " " + r.impression;
        data.samples.push_back(std::move(s));
    }
    return data;
}

void apply_noise(Dataset& data, std::span<const std::size_t> indices, double sigma, std::uint64_t seed) {
    if (sigma == 0.0) return;
    if (data.feature_maps) throw ConfigError("noise ablation needs image inputs");
    for (auto i : indices) {
        auto& s = data.samples.at(i);
        s.frontal = add_gaussian_noise(s.frontal, sigma, derive_seed(seed, 2 * i));
        s.lateral = add_gaussian_noise(s.lateral, sigma, derive_seed(seed, 2 * i + 1));
    }
}

std::vector<const Sample*> pick(const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<const Sample*> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(&data.samples.at(i));
    return out;
}

// ---- model ---------------------------------------------------------------------------

const std::vector<std::string>& Model::frozen_prefixes() {
    static const std::vector<std::string> p{"encoder.", "gcn.", "classifier."};
    return p;
}

const std::vector<std::string>& Model::decoder_prefixes() {
    static const std::vector<std::string> p{"decoder."};
    return p;
}

Model::Model(const TrainConfig& c, const KnowledgeGraph& graph, std::size_t vocab_size, std::size_t feature_channels,
             std::span<const double> embeddings)
    : cfg(c) {
    cfg.validate();
    graph.validate();
    Rng rng(derive_seed(cfg.seed, 1));
    nodes = graph.size();
    primary = graph.primary_count();
    if (primary == 0) throw ParseError("knowledge graph has no primary nodes");
    std::size_t channels = feature_channels;
    use_cnn = feature_channels == 0;
    if (use_cnn) {
        cnn = TinyCnn::create(store, "encoder.cnn", rng);
        channels = cnn.out_channels();
    }
    node_init = NodeInitParams::create(store, "encoder.attention", graph.finding_count(), channels, rng);
    gcn = GcnParams::create(store, "gcn", 3 * channels, cfg.gcn_hidden, cfg.gcn_layers, cfg.variant(), rng);
    classifier = ClassifierParams::create(store, "classifier", cfg.gcn_hidden, primary, rng);
    decoder = DecoderParams::create(store, "decoder", cfg.decoder_config(), vocab_size, rng);
    if (!embeddings.empty()) {
        if (embeddings.size() != decoder.embed.numel())
            throw EmbeddingError("embedding table has " + std::to_string(embeddings.size()) + " values, expected " +
                                 std::to_string(decoder.embed.numel()));
        std::copy(embeddings.begin(), embeddings.end(), decoder.embed.mutable_values().begin());
    }
    s = normalize_adjacency(std::span<const std::uint8_t>(graph.adjacency()), nodes);
}

Tensor Model::encode(std::span<const Sample* const> batch, Mode mode) {
    const std::size_t b = batch.size();
    if (b == 0) throw ShapeError("encode: empty batch");
    std::vector<Tensor> cols;
    cols.reserve(b);
    if (use_cnn) {
        std::vector<const Image*> imgs;
        for (auto* smp : batch) imgs.push_back(&smp->frontal);
        for (auto* smp : batch) imgs.push_back(&smp->lateral);
        const Tensor x = cnn.forward(stack_images(imgs), mode);  // [C, 2B, h, w]
        const std::size_t c = x.dim(0), p = x.dim(2) * x.dim(3);
        for (std::size_t i = 0; i < b; ++i) {
            const Tensor f = reshape(slice(x, 1, i, 1), {c, p});
            const Tensor l = reshape(slice(x, 1, b + i, 1), {c, p});
            cols.push_back(init_nodes(f, l, node_init));
        }
    } else {
        for (auto* smp : batch) cols.push_back(init_nodes(smp->frontal_fm, smp->lateral_fm, node_init));
    }
    return gcn_forward(b == 1 ? cols[0] : concat(cols, 1), s, gcn, mode);
}

Tensor Model::classify_batch(std::span<const Sample* const> batch, Mode mode) {
    return classify(encode(batch, mode), nodes, classifier);
}

Snapshot snapshot(const ParamStore& store) {
    Snapshot s;
    for (const auto& name : store.names()) {
        const auto v = store.at(name).values();
        s.emplace(name, std::vector<double>(v.begin(), v.end()));
    }
    return s;
}

void restore(ParamStore& store, const Snapshot& snap) {
    for (const auto& [name, v] : snap) {
        auto dst = store.at(name).mutable_values();
        if (dst.size() != v.size()) throw ShapeError("restore: size mismatch for " + name);
        std::copy(v.begin(), v.end(), dst.begin());
    }
}

// ---- stage 1 ---------------------------------------------------------------------------

std::vector<double> label_matrix(std::span<const Sample* const> samples) {
    std::vector<double> y;
    for (auto* s : samples) y.insert(y.end(), s->labels.begin(), s->labels.end());
    return y;
}

std::vector<double> predict_scores(Model& model, std::span<const Sample* const> samples) {
    const std::size_t k = model.primary;
    std::vector<double> scores(samples.size() * k);
    const std::size_t bs = model.cfg.batch_size;
    for (std::size_t start = 0; start < samples.size(); start += bs) {
        const std::size_t n = std::min(bs, samples.size() - start);
        const Tensor logits = model.classify_batch(samples.subspan(start, n), Mode::Eval);  // [K, n]
        const auto v = logits.values();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < k; ++c) scores[(start + i) * k + c] = 1.0 / (1.0 + std::exp(-v[c * n + i]));
    }
    return scores;
}

std::optional<double> evaluate_auc(Model& model, std::span<const Sample* const> samples, std::vector<ClassAuc>* rows,
                                   std::span<const std::string> names) {
    if (samples.empty()) return std::nullopt;
    const auto scores = predict_scores(model, samples);
    const auto labels = label_matrix(samples);
    std::vector<std::string> fallback;
    if (names.empty()) {
        for (std::size_t c = 0; c < model.primary; ++c) fallback.push_back("node" + std::to_string(c + 1));
        names = fallback;
    }
    auto per_class = per_class_auc(scores, labels, names);
    auto m = mean_auc(per_class);
    if (rows) *rows = std::move(per_class);
    return m;
}

namespace {

void check_finite(double loss, std::size_t step, const char* stage) {
    if (!std::isfinite(loss))
        throw NumericError(std::string(stage) + ": non-finite loss at step " + std::to_string(step), step);
}

AdamConfig adam_config(double lr, double wd) {
    AdamConfig a;
    a.lr = lr;
    a.weight_decay = wd;
    return a;
}

// Resampled training sets repeat samples; scoring needs each report once.
std::vector<const Sample*> distinct(std::span<const Sample* const> samples) {
    std::vector<const Sample*> out;
    std::set<const Sample*> seen;
    for (const auto* s : samples)
        if (seen.insert(s).second) out.push_back(s);
    return out;
}

}  // namespace

Stage1Result train_stage1(Model& model, std::span<const Sample* const> train, std::span<const Sample* const> val) {
    const auto& cfg = model.cfg;
    if (train.empty()) throw ParseError("stage 1: empty training split");
    const auto labels_all = label_matrix(train);
    if (std::none_of(labels_all.begin(), labels_all.end(), [](double v) { return v > 0.5; }))
        throw ParseError("stage 1: training split carries no labels");
    const auto weights = class_weights(labels_all, model.primary);
    const auto select_on = val.empty() ? train : val;

    Adam adam(adam_config(cfg.lr, cfg.weight_decay));
    Rng rng(derive_seed(cfg.seed, 2));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    Stage1Result res;
    res.best_auc = -std::numeric_limits<double>::infinity();
    Snapshot best = snapshot(model.store);
    bool done = false;
    for (std::size_t epoch = 1; epoch <= cfg.epochs && !done; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            std::vector<const Sample*> batch;
            std::vector<double> y(model.primary * n);
            for (std::size_t i = 0; i < n; ++i) {
                batch.push_back(train[order[start + i]]);
                for (std::size_t c = 0; c < model.primary; ++c) y[c * n + i] = batch.back()->labels[c];
            }
            model.store.zero_grad();
            const Tensor logits = model.classify_batch(batch, Mode::Train);
            const Tensor loss = scale(weighted_bce(logits, y, weights.pos, weights.neg), 1.0 / static_cast<double>(n));
            check_finite(loss.item(), res.steps + 1, "stage 1");
            loss.backward();
            adam.step(model.store, Model::frozen_prefixes());
            ++res.steps;
            loss_sum += loss.item();
            ++batches;
            if (cfg.max_steps && res.steps >= cfg.max_steps) {
                done = true;
                break;
            }
        }
        EpochLog log{epoch, res.steps, loss_sum / static_cast<double>(batches), evaluate_auc(model, select_on), {}};
        const double score = log.auc.value_or(-1.0);
        if (score > res.best_auc) {
            res.best_auc = score;
            res.best_epoch = epoch;
            best = snapshot(model.store);
        }
        res.log.push_back(log);
    }
    restore(model.store, best);
    if (res.best_epoch == 0) res.best_auc = 0.0;
    return res;
}

// ---- stage 2 ---------------------------------------------------------------------------

namespace {

std::vector<Tensor> node_features(Model& model, std::span<const Sample* const> samples) {
    std::vector<Tensor> out;
    const std::size_t bs = model.cfg.batch_size;
    const std::size_t n = model.nodes;
    for (std::size_t start = 0; start < samples.size(); start += bs) {
        const std::size_t m = std::min(bs, samples.size() - start);
        const Tensor h = model.encode(samples.subspan(start, m), Mode::Eval).detach();
        for (std::size_t i = 0; i < m; ++i) out.push_back(slice(h, 1, i * n, n).detach());
    }
    return out;
}

}  // namespace

std::vector<Generated> generate_reports(Model& model, const Vocabulary& vocab, std::span<const Sample* const> samples) {
    const auto feats = node_features(model, samples);
    const std::size_t terminator = vocab.index(kSentenceEnd);
    std::vector<Generated> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Generated g;
        g.id = samples[i]->id;
        g.report = generate_report(feats[i], model.decoder, terminator);
        g.text = g.report.text(vocab);
        out.push_back(std::move(g));
    }
    return out;
}

EvalResult evaluate_generated(std::span<const Generated> hyps, std::span<const Sample* const> refs) {
    std::vector<TextRecord> h, r;
    for (const auto& g : hyps) h.push_back({g.id, g.text});
    for (auto* s : refs) r.push_back({s->id, s->reference});
    return evaluate(h, r);
}

Stage2Result train_stage2(Model& model, const Vocabulary& vocab, std::span<const Sample* const> train,
                          std::span<const Sample* const> val) {
    const auto& cfg = model.cfg;
    Stage2Result res;
    res.frozen_hash_before = model.store.hash(Model::frozen_prefixes());

    std::vector<Tensor> feats = node_features(model, train);
    std::vector<std::vector<std::vector<std::size_t>>> gold;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < train.size(); ++i) {
        gold.push_back(encode_sentences(train[i]->text, vocab, cfg.max_len));
        if (!gold.back().empty()) usable.push_back(i);
    }
    if (usable.empty()) throw ParseError("stage 2: no training report has a sentence");
    const auto train_once = distinct(train);
    const std::span<const Sample* const> select_on =
        val.size() >= 2 ? val : std::span<const Sample* const>(train_once);

    Adam adam(adam_config(cfg.decoder_lr > 0.0 ? cfg.decoder_lr : cfg.lr, cfg.weight_decay));
    Rng rng(derive_seed(cfg.seed, 3));
    res.best_mean = -std::numeric_limits<double>::infinity();
    Snapshot best = snapshot(model.store);
    bool done = false;
    for (std::size_t epoch = 1; epoch <= cfg.decoder_epochs && !done; ++epoch) {
        rng.shuffle(usable.begin(), usable.end());
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < usable.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, usable.size() - start);
            model.store.zero_grad();
            Tensor loss;
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t i = usable[start + j];
                const auto& g = gold[i];
                const std::size_t s = std::min(g.size(), cfg.max_sentences);
                const std::span<const std::vector<std::size_t>> gs(g.data(), s);
                const Tensor l = decoder_loss(decode_teacher(feats[i], gs, model.decoder), gs, cfg.lambda_stop);
                loss = loss.defined() ? add(loss, l) : l;
            }
            loss = scale(loss, 1.0 / static_cast<double>(n));
            check_finite(loss.item(), res.steps + 1, "stage 2");
            loss.backward();
            adam.step(model.store, Model::decoder_prefixes());
            ++res.steps;
            loss_sum += loss.item();
            ++batches;
            if (cfg.decoder_max_steps && res.steps >= cfg.decoder_max_steps) {
                done = true;
                break;
            }
        }
        EpochLog log{epoch, res.steps, loss_sum / static_cast<double>(batches), {}, {}};
        if (select_on.size() >= 2) log.mean = evaluate_generated(generate_reports(model, vocab, select_on), select_on).mean;
        const double score = log.mean.value_or(-log.loss);
        if (score > res.best_mean) {
            res.best_mean = score;
            res.best_epoch = epoch;
            best = snapshot(model.store);
        }
        res.log.push_back(log);
    }
    restore(model.store, best);
    if (res.best_epoch == 0) res.best_mean = 0.0;
    res.frozen_hash_after = model.store.hash(Model::frozen_prefixes());
    return res;
}

void write_log_csv(std::ostream& os, std::span<const EpochLog> log, bool with_mean) {
    os << "epoch,step,loss,auc" << (with_mean ? ",mean" : "") << '\n';
    for (const auto& l : log) {
        os << l.epoch << ',' << l.step << ',' << fmt(l.loss) << ',';
        if (l.auc) os << fmt(*l.auc);
        if (with_mean) {
            os << ',';
            if (l.mean) os << fmt(*l.mean);
        }
        os << '\n';
    }
}

// ---- pipeline ----------------------------------------------------------------------------

Vocabulary build_vocabulary(const Dataset& data, std::span<const std::size_t> train, std::size_t min_freq) {
    std::vector<TokenizedReport> texts;
    for (auto i : train) texts.push_back(data.samples.at(i).text);
    return Vocabulary::build(texts, min_freq);
}

PipelineResult run_pipeline(const TrainConfig& cfg, const Dataset& data, const KnowledgeGraph& graph,
                            const Vocabulary& vocab, const PipelineOptions& opt) {
    PipelineResult res;
    res.splits = split_indices(data.samples.size(), {cfg.train_ratio, cfg.val_ratio, cfg.test_ratio}, cfg.seed);
    const auto& train_idx = opt.train_override ? *opt.train_override : res.splits.train;
    const auto train = pick(data, train_idx);
    const auto val = pick(data, res.splits.val);
    const auto test = pick(data, res.splits.test);
    res.finding_nodes = graph.finding_count();

    TrainConfig run_cfg = cfg;
    if (opt.init_seed) run_cfg.seed = *opt.init_seed;
    const auto emb = load_embeddings(run_cfg.embeddings, vocab, run_cfg.embed_dim, derive_seed(run_cfg.seed, 4),
                                     run_cfg.random_embeddings);
    Model model(run_cfg, graph, vocab.size(), data.feature_maps ? data.feature_channels : 0, emb);
    res.stage1 = train_stage1(model, train, val);
    const auto train_once = distinct(train);
    res.train_auc = evaluate_auc(model, train_once);
    res.val_auc = evaluate_auc(model, val);
    res.test_auc = evaluate_auc(model, test);
    if (!opt.run_stage2) return res;
    res.stage2 = train_stage2(model, vocab, train, val);
    if (train_once.size() >= 2)
        res.train_eval = evaluate_generated(generate_reports(model, vocab, train_once), train_once);
    if (test.size() >= 2) res.test_eval = evaluate_generated(generate_reports(model, vocab, test), test);
    return res;
}

}  // namespace kgrg
