// Two-stage training, dataset loading, the synthetic corpus generator and the
// experiment drivers (ablations, noise sweep, bootstrap) built on top.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgrg/classifier.hpp"
#include "kgrg/corpus.hpp"
#include "kgrg/decoder.hpp"
#include "kgrg/encoder.hpp"
#include "kgrg/gcn.hpp"
#include "kgrg/lexicon_kg.hpp"
#include "kgrg/metrics.hpp"
#include "kgrg/tensor.hpp"

namespace kgrg {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::size_t step) : std::runtime_error(what), step(step) {}
    std::size_t step;
};

struct TrainConfig {
    std::string stage = "classify";  // classify | generate
    std::size_t epochs = 150;
    std::size_t batch_size = 8;
    double lr = 1e-6;
    double weight_decay = 1e-5;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    std::size_t max_steps = 0;  // 0 = no limit

    std::string corpus;
    std::string graph;
    std::string vocab;       // empty: build from the training split
    std::string embeddings;  // empty: random rows
    std::string checkpoint;  // stage-1 checkpoint consumed by stage 2
    std::string out_dir = ".";

    // Model size. The defaults are the reference configuration.
    std::size_t image_side = 64;
    std::size_t gcn_hidden = 256;
    std::size_t gcn_layers = 3;
    std::string gcn_variant = "full";  // full | message-only
    std::size_t embed_dim = 200;
    std::size_t decoder_hidden = 512;
    std::size_t att_dim = 128;
    std::size_t max_len = 30;
    std::size_t max_sentences = 7;
    double stop_threshold = 0.5;
    double lambda_stop = 1.0;
    bool random_embeddings = false;

    std::size_t decoder_epochs = 150;
    double decoder_lr = 0.0;  // 0 = same as lr
    std::size_t decoder_max_steps = 0;

    std::size_t min_freq = 3;
    double train_ratio = 0.6, val_ratio = 0.2, test_ratio = 0.2;

    DecoderConfig decoder_config() const;
    GcnVariant variant() const;
    void validate() const;
};

// UTF-8 key=value lines; '#' starts a comment; unknown keys are rejected.
TrainConfig read_config(std::istream& is, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
void write_config(std::ostream& os, const TrainConfig& cfg);

struct Sample {
    std::string id;
    Image frontal, lateral;           // image source
    Tensor frontal_fm, lateral_fm;    // feature-map source [C, P]
    std::vector<double> labels;       // one per primary node
    TokenizedReport text;
    std::string reference;            // findings + " " + impression
};

struct Dataset {
    std::vector<Sample> samples;
    bool feature_maps = false;
    std::size_t feature_channels = 0;
    std::size_t skipped = 0;
};

// Loads the corpus; view refs are resolved relative to the corpus file's
// directory. ".pgm" refs are images, anything else a feature map.
Dataset load_dataset(const std::string& corpus_path, const KnowledgeGraph& graph, std::size_t image_side);

// Replaces the training images of `indices` with noisy copies (seeded per sample and view).
void apply_noise(Dataset& data, std::span<const std::size_t> indices, double sigma, std::uint64_t seed);

struct Model {
    TrainConfig cfg;
    ParamStore store;
    TinyCnn cnn;
    bool use_cnn = true;
    NodeInitParams node_init;
    GcnParams gcn;
    ClassifierParams classifier;
    DecoderParams decoder;
    Tensor s;  // normalised adjacency
    std::size_t nodes = 0, primary = 0;

    static const std::vector<std::string>& frozen_prefixes();   // encoder, gcn, classifier
    static const std::vector<std::string>& decoder_prefixes();  // decoder

    // feature_channels == 0 selects the image CNN.
    Model(const TrainConfig& cfg, const KnowledgeGraph& graph, std::size_t vocab_size, std::size_t feature_channels,
          std::span<const double> embeddings = {});
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    // [d, B*N]
    Tensor encode(std::span<const Sample* const> batch, Mode mode);
    // [K, B]
    Tensor classify_batch(std::span<const Sample* const> batch, Mode mode);
};

using Snapshot = std::map<std::string, std::vector<double>>;
Snapshot snapshot(const ParamStore& store);
void restore(ParamStore& store, const Snapshot& snap);

struct EpochLog {
    std::size_t epoch = 0, step = 0;
    double loss = 0.0;
    std::optional<double> auc;   // stage 1
    std::optional<double> mean;  // stage 2
};

struct Stage1Result {
    std::vector<EpochLog> log;
    double best_auc = 0.0;
    std::size_t best_epoch = 0;
    std::size_t steps = 0;
};

struct Stage2Result {
    std::vector<EpochLog> log;
    double best_mean = 0.0;
    std::size_t best_epoch = 0;
    std::size_t steps = 0;
    std::uint64_t frozen_hash_before = 0, frozen_hash_after = 0;
};

std::vector<const Sample*> pick(const Dataset& data, std::span<const std::size_t> indices);

// Sigmoid scores, row-major [samples, K], in eval mode.
std::vector<double> predict_scores(Model& model, std::span<const Sample* const> samples);
std::vector<double> label_matrix(std::span<const Sample* const> samples);
std::optional<double> evaluate_auc(Model& model, std::span<const Sample* const> samples,
                                   std::vector<ClassAuc>* rows = nullptr, std::span<const std::string> names = {});

// Weighted BCE over primary nodes; keeps the best validation-AUC parameters
// (training AUC when the validation split is empty).
Stage1Result train_stage1(Model& model, std::span<const Sample* const> train, std::span<const Sample* const> val);

// Decoder only; encoder, GCN and classifier are evaluated once in eval mode
// and stay bit-unchanged. Keeps the best validation mean metric.
Stage2Result train_stage2(Model& model, const Vocabulary& vocab, std::span<const Sample* const> train,
                          std::span<const Sample* const> val);

struct Generated {
    std::string id;
    GeneratedReport report;
    std::string text;
};
std::vector<Generated> generate_reports(Model& model, const Vocabulary& vocab, std::span<const Sample* const> samples);
EvalResult evaluate_generated(std::span<const Generated> hyps, std::span<const Sample* const> refs);

void write_log_csv(std::ostream& os, std::span<const EpochLog> log, bool with_mean);

// ---- end-to-end pipeline -------------------------------------------------------

struct PipelineOptions {
    bool run_stage2 = true;
    const std::vector<std::size_t>* train_override = nullptr;  // bootstrap resample
    // Replaces cfg.seed for initialisation and shuffling; splits still use cfg.seed.
    std::optional<std::uint64_t> init_seed;
};

struct PipelineResult {
    Splits<std::size_t> splits;
    Stage1Result stage1;
    Stage2Result stage2;
    std::optional<double> val_auc, test_auc, train_auc;
    std::optional<EvalResult> test_eval, train_eval;
    std::size_t finding_nodes = 0;
};

Vocabulary build_vocabulary(const Dataset& data, std::span<const std::size_t> train, std::size_t min_freq);

PipelineResult run_pipeline(const TrainConfig& cfg, const Dataset& data, const KnowledgeGraph& graph,
                            const Vocabulary& vocab, const PipelineOptions& opt = {});

// ---- experiments ---------------------------------------------------------------

struct AblationRow {
    std::string variant;
    std::size_t finding_nodes = 0;
    std::optional<double> auc;
    std::optional<EvalResult> eval;
};

inline const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v{"random-embs", "gcn-zhang", "nodes-20", "nodes-40", "nodes-60"};
    return v;
}

struct AblationInputs {
    TrainConfig cfg;
    std::vector<Report> reports;  // for graph rebuilding
    std::vector<Concept> lexicon;
    KnowledgeGraph manual;
    KnowledgeGraph baseline_graph;
    std::uint64_t tau = 0;
};

// Graph for nodes-N variants: manual graph plus N-20 mined auxiliary nodes.
KnowledgeGraph ablation_graph(const AblationInputs& in, std::size_t finding_nodes);

// Baseline first, then each requested variant.
std::vector<AblationRow> run_ablations(const AblationInputs& in, const Dataset& data,
                                       std::span<const std::string> variants);
void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows);

struct NoiseRow {
    double sigma = 0.0;
    std::optional<double> auc;
    std::optional<EvalResult> eval;
};

// Reference points documented alongside the sweep; never compared against.
struct NoiseReference {
    double auc_clean = 0.786, auc_noisy = 0.683;
    double mean_clean = 0.308, mean_noisy = 0.282;
};

std::vector<NoiseRow> run_noise_sweep(const TrainConfig& cfg, const Dataset& clean, const KnowledgeGraph& graph,
                                      std::span<const double> sigmas, bool with_stage2);
void write_noise_csv(std::ostream& os, std::span<const NoiseRow> rows, const NoiseReference& ref = {});

// Retrains on resampled training splits and evaluates on the fixed test split.
BootstrapResult run_bootstrap(const TrainConfig& cfg, const Dataset& data, const KnowledgeGraph& graph,
                              std::size_t replicates, double conf, std::size_t threads);

// ---- synthetic corpus ------------------------------------------------------------

struct SynthOptions {
    std::uint64_t seed = 0;
    std::size_t n_pairs = 20;
    std::size_t image_side = 64;
};

struct SynthCorpus {
    std::vector<Report> reports;
    std::vector<std::pair<Image, Image>> images;  // frontal, lateral per report
    std::vector<Concept> lexicon;
};

// 1-3 primary findings per pair (pair i always includes finding i mod K),
// template sentences naming them, and a bright blob per finding at a
// view-specific location.
SynthCorpus synth_corpus(const KnowledgeGraph& graph, const SynthOptions& opt);
// Writes reports.jsonl, images/, lexicon.tsv and graph20.txt into dir.
void save_synth_corpus(const SynthCorpus& corpus, const KnowledgeGraph& graph, const std::string& dir);

}  // namespace kgrg
