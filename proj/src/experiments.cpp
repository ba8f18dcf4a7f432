#include <cstdio>
#include <ostream>

#include "kgrg/rng.hpp"
#include "kgrg/training.hpp"

namespace kgrg {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_eval_fields(std::ostream& os, const std::optional<EvalResult>& e) {
    for (std::size_t i = 0; i < 7; ++i) {
        os << ',';
        if (e) os << fmt(e->headline()[i]);
    }
}

void write_eval_header(std::ostream& os) {
    for (const auto* n : EvalResult::headline_names()) os << ',' << n;
}

Vocabulary pipeline_vocabulary(const TrainConfig& cfg, const Dataset& data) {
    if (!cfg.vocab.empty()) return Vocabulary::load(cfg.vocab);
    const auto splits = split_indices(data.samples.size(), {cfg.train_ratio, cfg.val_ratio, cfg.test_ratio}, cfg.seed);
    return build_vocabulary(data, splits.train, cfg.min_freq);
}

// Held-out evaluation when a test split exists, training-set evaluation otherwise.
std::optional<EvalResult> headline_eval(const PipelineResult& r) { return r.test_eval ? r.test_eval : r.train_eval; }
std::optional<double> headline_auc(const PipelineResult& r) { return r.test_auc ? r.test_auc : r.train_auc; }

}  // namespace

KnowledgeGraph ablation_graph(const AblationInputs& in, std::size_t finding_nodes) {
    const std::size_t primary = in.manual.primary_count();
    if (finding_nodes < primary)
        throw ConfigError("ablation: " + std::to_string(finding_nodes) + " finding nodes is fewer than the " +
                          std::to_string(primary) + " primary nodes");
    if (finding_nodes == primary) return in.manual;
    KgBuildOptions opts;
    opts.q = finding_nodes - primary;
    opts.tau = in.tau;
    return build_knowledge_graph(in.reports, in.lexicon, in.manual, opts).graph;
}

std::vector<AblationRow> run_ablations(const AblationInputs& in, const Dataset& data,
                                       std::span<const std::string> variants) {
    const auto vocab = pipeline_vocabulary(in.cfg, data);
    auto run = [&](const std::string& name, const TrainConfig& cfg, const KnowledgeGraph& graph) {
        const auto r = run_pipeline(cfg, data, graph, vocab);
        return AblationRow{name, graph.finding_count(), headline_auc(r), headline_eval(r)};
    };
    std::vector<AblationRow> rows;
    rows.push_back(run("baseline", in.cfg, in.baseline_graph));
    for (const auto& v : variants) {
        TrainConfig cfg = in.cfg;
        if (v == "random-embs") {
            cfg.random_embeddings = true;
            rows.push_back(run(v, cfg, in.baseline_graph));
        } else if (v == "gcn-zhang") {
            cfg.gcn_variant = "message-only";
            rows.push_back(run(v, cfg, in.baseline_graph));
        } else if (v == "nodes-20" || v == "nodes-40" || v == "nodes-60") {
            const std::size_t n = std::stoul(v.substr(6));
            rows.push_back(run(v, cfg, ablation_graph(in, n)));
        } else {
            throw ConfigError("unknown ablation variant '" + v + "'");
        }
    }
    return rows;
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
    os << "variant,finding_nodes,auc";
    write_eval_header(os);
    os << '\n';
    for (const auto& r : rows) {
        os << r.variant << ',' << r.finding_nodes << ',' << opt_fmt(r.auc);
        write_eval_fields(os, r.eval);
        os << '\n';
    }
}

std::vector<NoiseRow> run_noise_sweep(const TrainConfig& cfg, const Dataset& clean, const KnowledgeGraph& graph,
                                      std::span<const double> sigmas, bool with_stage2) {
    const auto vocab = pipeline_vocabulary(cfg, clean);
    const auto splits = split_indices(clean.samples.size(), {cfg.train_ratio, cfg.val_ratio, cfg.test_ratio}, cfg.seed);
    std::vector<NoiseRow> rows;
    for (double sigma : sigmas) {
        if (sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
        Dataset data = clean;
        apply_noise(data, splits.train, sigma, derive_seed(cfg.seed, 5));
        PipelineOptions opt;
        opt.run_stage2 = with_stage2;
        const auto r = run_pipeline(cfg, data, graph, vocab, opt);
        rows.push_back({sigma, headline_auc(r), headline_eval(r)});
    }
    return rows;
}

void write_noise_csv(std::ostream& os, std::span<const NoiseRow> rows, const NoiseReference& ref) {
    os << "sigma,auc";
    write_eval_header(os);
    os << ",ref_auc_clean,ref_auc_noisy,ref_mean_clean,ref_mean_noisy\n";
    for (const auto& r : rows) {
        os << fmt(r.sigma) << ',' << opt_fmt(r.auc);
        write_eval_fields(os, r.eval);
        os << ',' << fmt(ref.auc_clean) << ',' << fmt(ref.auc_noisy) << ',' << fmt(ref.mean_clean) << ','
           << fmt(ref.mean_noisy) << '\n';
    }
}

BootstrapResult run_bootstrap(const TrainConfig& cfg, const Dataset& data, const KnowledgeGraph& graph,
                              std::size_t replicates, double conf, std::size_t threads) {
    const auto vocab = pipeline_vocabulary(cfg, data);
    const auto splits = split_indices(data.samples.size(), {cfg.train_ratio, cfg.val_ratio, cfg.test_ratio}, cfg.seed);
    if (splits.test.size() < 2) throw ConfigError("bootstrap: the test split needs at least two reports");
    std::vector<std::string> names;
    for (const auto* n : EvalResult::headline_names()) names.emplace_back(n);
    const ReplicateFn fn = [&](std::size_t b, std::span<const std::size_t> positions) {
        std::vector<std::size_t> train;
        train.reserve(positions.size());
        for (auto p : positions) train.push_back(splits.train[p]);
        PipelineOptions opt;
        opt.train_override = &train;
        opt.init_seed = derive_seed(cfg.seed, 1000 + b);
        const auto r = run_pipeline(cfg, data, graph, vocab, opt);
        const auto h = r.test_eval->headline();
        return std::vector<double>(h.begin(), h.end());
    };
    return bootstrap(fn, names, splits.train.size(), replicates, conf, cfg.seed, threads);
}

}  // namespace kgrg
