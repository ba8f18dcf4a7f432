#include "kgrg/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "kgrg/rng.hpp"
#include "kgrg/training.hpp"

namespace kgrg {

namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    std::string out_dir;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

TrainConfig resolve_config(const Globals& g) {
    TrainConfig cfg = g.config.empty() ? TrainConfig{} : load_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    return cfg;
}

fs::path out_path(const TrainConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.out_dir);
    return fs::path(cfg.out_dir) / name;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    return f;
}

void require(const std::string& value, const char* what) {
    if (value.empty()) throw UsageError(std::string("missing ") + what + " (flag or config key)");
}

KnowledgeGraph load_graph(const TrainConfig& cfg) {
    if (cfg.graph.empty()) return default_manual_graph();
    return KnowledgeGraph::load(cfg.graph);
}

Vocabulary vocab_for(const TrainConfig& cfg, const Dataset& data, const Splits<std::size_t>& splits) {
    if (!cfg.vocab.empty()) return Vocabulary::load(cfg.vocab);
    return build_vocabulary(data, splits.train, cfg.min_freq);
}

Splits<std::size_t> splits_for(const TrainConfig& cfg, const Dataset& data) {
    return split_indices(data.samples.size(), {cfg.train_ratio, cfg.val_ratio, cfg.test_ratio}, cfg.seed);
}

std::vector<double> embeddings_for(const TrainConfig& cfg, const Vocabulary& vocab) {
    return load_embeddings(cfg.embeddings, vocab, cfg.embed_dim, derive_seed(cfg.seed, 4), cfg.random_embeddings);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

std::vector<Report> reports_of(const std::string& corpus) { return load_reports(corpus).reports; }

// Loads a checkpointed model together with the vocabulary it was trained with.
struct Loaded {
    Dataset data;
    KnowledgeGraph graph;
    Splits<std::size_t> splits;
    Vocabulary vocab;
    std::unique_ptr<Model> model;
};

Loaded load_model(const TrainConfig& cfg, const std::string& checkpoint) {
    require(cfg.corpus, "--corpus");
    require(checkpoint, "--checkpoint");
    Loaded l;
    l.graph = load_graph(cfg);
    l.data = load_dataset(cfg.corpus, l.graph, cfg.image_side);
    l.splits = splits_for(cfg, l.data);
    const fs::path vocab_path =
        cfg.vocab.empty() ? fs::path(checkpoint).parent_path() / "vocab.txt" : fs::path(cfg.vocab);
    l.vocab = Vocabulary::load(vocab_path.string());
    l.model = std::make_unique<Model>(cfg, l.graph, l.vocab.size(),
                                      l.data.feature_maps ? l.data.feature_channels : 0);
    load_checkpoint(checkpoint, l.model->store);
    return l;
}

std::vector<std::size_t> split_by_name(const Splits<std::size_t>& s, const std::string& name, std::size_t n) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    if (name == "all") {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    throw UsageError("unknown split '" + name + "' (train, val, test, all)");
}

void write_generated_file(const fs::path& p, std::span<const Generated> gen) {
    auto f = open_out(p);
    for (const auto& g : gen) write_generated(f, g.id, g.text, g.report.stop_probs);
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knowledge-graph report generation toolkit", "kgrg"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every command");
    Globals g;
    app.add_option("--config", g.config, "key=value training config")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Seed for all randomness (overrides the config)");
    app.add_option("--threads", g.threads, "Worker threads for bootstrap replicates")->check(CLI::PositiveNumber);
    app.add_option("--out-dir", g.out_dir, "Output directory (overrides the config)");

    // Shared per-command options that map onto config keys.
    std::string corpus, graph, vocab, checkpoint;
    auto data_opts = [&](CLI::App* c) {
        c->add_option("--corpus", corpus, "Report corpus (JSONL)");
        c->add_option("--graph", graph, "Knowledge graph file");
        c->add_option("--vocab", vocab, "Vocabulary file");
    };
    auto apply_data = [&](TrainConfig& cfg) {
        if (!corpus.empty()) cfg.corpus = corpus;
        if (!graph.empty()) cfg.graph = graph;
        if (!vocab.empty()) cfg.vocab = vocab;
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    };

    // kg-build
    auto* kg_build = app.add_subcommand("kg-build", "Mine auxiliary nodes and edges into a knowledge graph");
    std::string lexicon, manual, graph_out;
    std::size_t q = 10;
    std::uint64_t tau = 0;
    kg_build->add_option("--corpus", corpus, "Report corpus (JSONL)")->required();
    kg_build->add_option("--lexicon", lexicon, "Concept lexicon (name<TAB>category)")->required();
    kg_build->add_option("--manual", manual, "Manual graph with global and primary nodes (default: built-in 20)");
    kg_build->add_option("--q", q, "Auxiliary nodes to add")->capture_default_str();
    kg_build->add_option("--tau", tau, "Co-occurrence threshold (0 = max(2, ceil(0.01 * documents)))")->capture_default_str();
    kg_build->add_option("--out", graph_out, "Output graph file")->required();

    // kg-stats
    auto* kg_stats = app.add_subcommand("kg-stats", "Summarise a knowledge graph");
    kg_stats->add_option("--graph", graph, "Knowledge graph file")->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus (reports, images, lexicon, graph)");
    SynthOptions sopt;
    std::string synth_out;
    synth->add_option("--pairs", sopt.n_pairs, "Number of image pairs")->capture_default_str();
    synth->add_option("--image-side", sopt.image_side, "Image side in pixels")->capture_default_str();
    synth->add_option("--out", synth_out, "Output directory")->required();

    // train-classify
    auto* train_cls = app.add_subcommand("train-classify", "Stage 1: encoder, GCN and classifier");
    data_opts(train_cls);

    // train-generate
    auto* train_gen = app.add_subcommand("train-generate", "Stage 2: decoder on a frozen stage-1 model");
    data_opts(train_gen);
    train_gen->add_option("--checkpoint", checkpoint, "Stage-1 checkpoint");

    // generate
    auto* gen = app.add_subcommand("generate", "Generate reports with a trained model");
    data_opts(gen);
    std::string split = "test", gen_out;
    gen->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
    gen->add_option("--split", split, "train, val, test or all")->capture_default_str();
    gen->add_option("--out", gen_out, "Output JSONL (default <out-dir>/generated.jsonl)");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Score hypotheses against references");
    std::string hyp, ref, per_report;
    bool cider_d = false;
    eval->add_option("--hyp", hyp, "Hypothesis records {id, text}")->required()->check(CLI::ExistingFile);
    eval->add_option("--ref", ref, "Reference records {id, text}")->required()->check(CLI::ExistingFile);
    eval->add_flag("--cider-d", cider_d, "Use CIDEr-D instead of plain CIDEr");
    eval->add_option("--per-report", per_report, "Also write per-report scores to this CSV");

    // bootstrap
    auto* boot = app.add_subcommand("bootstrap", "Retrain on resampled training sets; t-interval on the test split");
    data_opts(boot);
    std::size_t replicates = 15;
    double conf = 0.95;
    boot->add_option("--replicates", replicates, "Replicates B")->capture_default_str()->check(CLI::Range(2, 100000));
    boot->add_option("--conf", conf, "Confidence level")->capture_default_str()->check(CLI::Range(0.0, 1.0));

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run ablation variants against the baseline");
    data_opts(ablate);
    std::vector<std::string> variants;
    ablate->add_option("--variant", variants, "random-embs | gcn-zhang | nodes-20 | nodes-40 | nodes-60 (default: all)")
        ->check(CLI::IsMember(ablation_variants()));
    ablate->add_option("--lexicon", lexicon, "Concept lexicon for rebuilding graphs")->required();
    ablate->add_option("--manual", manual, "Manual graph (default: built-in 20)");
    ablate->add_option("--tau", tau, "Co-occurrence threshold for rebuilt graphs (0 = default)")->capture_default_str();

    // noise
    auto* noise = app.add_subcommand("noise", "Retrain with Gaussian noise on training images");
    data_opts(noise);
    std::vector<double> sigmas{0.0, 1.0, 2.0};
    bool stage1_only = false;
    noise->add_option("--sigmas", sigmas, "Noise standard deviations (pixel units, images in [0, 1])")->delimiter(',');
    noise->add_flag("--stage1-only", stage1_only, "Skip decoder training (AUC only)");

    // complexity
    auto* complexity = app.add_subcommand("complexity", "Reference sentence count per BLEU-1 bin");
    complexity->add_option("--hyp", hyp, "Hypothesis records")->required()->check(CLI::ExistingFile);
    complexity->add_option("--ref", ref, "Reference records")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    try {
        TrainConfig cfg = resolve_config(g);
        apply_data(cfg);

        if (*kg_build) {
            const KnowledgeGraph man = manual.empty() ? default_manual_graph() : KnowledgeGraph::load(manual);
            KgBuildOptions opts{q, tau};
            const auto report = build_knowledge_graph(reports_of(corpus), load_lexicon(lexicon), man, opts);
            report.graph.save(graph_out);
            out << "nodes " << report.graph.size() << " (primary " << report.graph.primary_count() << ", auxiliary "
                << report.graph.auxiliary_count() << "), edges " << report.graph.edge_count() << ", tau "
                << report.tau << ", documents " << report.doc_count << '\n';
            if (report.short_of_q) err << "warning: fewer than " << q << " auxiliary candidates were found\n";
        } else if (*kg_stats) {
            const auto gr = KnowledgeGraph::load(graph);
            gr.validate();
            out << "nodes " << gr.size() << "\nfinding_nodes " << gr.finding_count() << "\nprimary "
                << gr.primary_count() << "\nauxiliary " << gr.auxiliary_count() << "\nedges " << gr.edge_count()
                << '\n';
        } else if (*synth) {
            sopt.seed = cfg.seed;
            const auto man = default_manual_graph();
            const auto sc = synth_corpus(man, sopt);
            save_synth_corpus(sc, man, synth_out);
            out << "wrote " << sc.reports.size() << " pairs to " << synth_out << '\n';
        } else if (*train_cls) {
            require(cfg.corpus, "--corpus");
            const auto gr = load_graph(cfg);
            auto data = load_dataset(cfg.corpus, gr, cfg.image_side);
            const auto splits = splits_for(cfg, data);
            apply_noise(data, splits.train, cfg.noise_sigma, derive_seed(cfg.seed, 5));
            const auto voc = vocab_for(cfg, data, splits);
            Model model(cfg, gr, voc.size(), data.feature_maps ? data.feature_channels : 0, embeddings_for(cfg, voc));
            const auto train = pick(data, splits.train), val = pick(data, splits.val), test = pick(data, splits.test);
            const auto res = train_stage1(model, train, val);
            save_checkpoint(out_path(cfg, "stage1.ckpt").string(), model.store);
            voc.save(out_path(cfg, "vocab.txt").string());
            {
                auto f = open_out(out_path(cfg, "stage1_log.csv"));
                write_log_csv(f, res.log, false);
            }
            const auto names = gr.primary_names();
            for (const auto& [tag, set] : {std::pair{"val", &val}, std::pair{"test", &test}}) {
                std::vector<ClassAuc> rows;
                const auto m = evaluate_auc(model, *set, &rows, names);
                if (set->empty()) continue;
                auto f = open_out(out_path(cfg, std::string("auc_") + tag + ".csv"));
                write_auc_csv(f, rows);
                out << tag << "_auc " << opt_fmt(m) << '\n';
            }
            out << "steps " << res.steps << ", best epoch " << res.best_epoch << '\n';
        } else if (*train_gen) {
            auto l = load_model(cfg, cfg.checkpoint);
            const auto train = pick(l.data, l.splits.train), val = pick(l.data, l.splits.val);
            const auto res = train_stage2(*l.model, l.vocab, train, val);
            save_checkpoint(out_path(cfg, "stage2.ckpt").string(), l.model->store);
            l.vocab.save(out_path(cfg, "vocab.txt").string());
            {
                auto f = open_out(out_path(cfg, "stage2_log.csv"));
                write_log_csv(f, res.log, true);
            }
            if (res.frozen_hash_before != res.frozen_hash_after)
                throw std::logic_error("frozen parameters changed during stage 2");
            out << "steps " << res.steps << ", best epoch " << res.best_epoch << ", frozen hash " << std::hex
                << res.frozen_hash_after << std::dec << '\n';
        } else if (*gen) {
            auto l = load_model(cfg, checkpoint);
            const auto idx = split_by_name(l.splits, split, l.data.samples.size());
            const auto samples = pick(l.data, idx);
            const auto result = generate_reports(*l.model, l.vocab, samples);
            const fs::path p = gen_out.empty() ? out_path(cfg, "generated.jsonl") : fs::path(gen_out);
            write_generated_file(p, result);
            std::vector<TextRecord> refs;
            for (auto* s : samples) refs.push_back({s->id, s->reference});
            auto f = open_out(p.parent_path() / ("references_" + split + ".jsonl"));
            write_text_records(f, refs);
            out << "wrote " << result.size() << " reports to " << p.string() << '\n';
        } else if (*eval) {
            CiderOptions copt;
            copt.cider_d = cider_d;
            const auto r = evaluate(load_text_records(hyp), load_text_records(ref), copt);
            write_eval_csv(out, r);
            if (!per_report.empty()) {
                auto f = open_out(per_report);
                write_per_report_csv(f, r);
            }
        } else if (*boot) {
            require(cfg.corpus, "--corpus");
            const auto gr = load_graph(cfg);
            const auto data = load_dataset(cfg.corpus, gr, cfg.image_side);
            const auto r = run_bootstrap(cfg, data, gr, replicates, conf, g.threads);
            auto f = open_out(out_path(cfg, "bootstrap.csv"));
            write_bootstrap_csv(f, r);
            write_bootstrap_csv(out, r);
        } else if (*ablate) {
            require(cfg.corpus, "--corpus");
            AblationInputs in;
            in.cfg = cfg;
            in.reports = reports_of(cfg.corpus);
            in.lexicon = load_lexicon(lexicon);
            in.manual = manual.empty() ? default_manual_graph() : KnowledgeGraph::load(manual);
            in.tau = tau;
            in.baseline_graph = cfg.graph.empty() ? ablation_graph(in, in.manual.primary_count() + 10)
                                                  : KnowledgeGraph::load(cfg.graph);
            const auto data = load_dataset(cfg.corpus, in.baseline_graph, cfg.image_side);
            if (variants.empty()) variants = ablation_variants();
            const auto rows = run_ablations(in, data, variants);
            auto f = open_out(out_path(cfg, "ablation.csv"));
            write_ablation_csv(f, rows);
            write_ablation_csv(out, rows);
        } else if (*noise) {
            require(cfg.corpus, "--corpus");
            const auto gr = load_graph(cfg);
            const auto data = load_dataset(cfg.corpus, gr, cfg.image_side);
            const auto rows = run_noise_sweep(cfg, data, gr, sigmas, !stage1_only);
            auto f = open_out(out_path(cfg, "noise.csv"));
            write_noise_csv(f, rows);
            write_noise_csv(out, rows);
        } else if (*complexity) {
            const auto r = evaluate(load_text_records(hyp), load_text_records(ref));
            std::vector<double> b1;
            std::vector<std::size_t> sents;
            for (const auto& p : r.per_report) {
                b1.push_back(p.bleu1);
                sents.push_back(p.ref_sentences);
            }
            const auto bins = complexity_table(b1, sents);
            write_complexity_csv(out, bins);
            if (!g.out_dir.empty()) {
                auto f = open_out(out_path(cfg, "complexity.csv"));
                write_complexity_csv(f, bins);
            }
        }
        return 0;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace kgrg
