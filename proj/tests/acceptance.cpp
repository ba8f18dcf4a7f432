// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kgrg/rng.hpp"
#include "kgrg/training.hpp"
#include "support/grad_suite.hpp"
#include "support/oracles.hpp"
#include "support/toy.hpp"

using namespace kgrg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failure reasons for one criterion.
struct Verdict {
    std::vector<std::string> failures;
    std::string detail;
    void expect(bool ok, const std::string& why) {
        if (!ok) failures.push_back(why);
    }
};

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

toy::Corpus& shared_corpus() {
    static toy::TempDir dir("acceptance");
    static toy::Corpus c = toy::make_corpus(dir.path, 20, 0);
    return c;
}

// Shorter schedule for the experiment drivers, which retrain many times.
TrainConfig driver_config() {
    auto cfg = toy::config();
    cfg.epochs = 6;
    cfg.decoder_epochs = 4;
    return cfg;
}

Verdict gradient_suite() {
    Verdict v;
    const auto t0 = Clock::now();
    double worst_op = 0.0, worst_comp = 0.0;
    std::size_t checked = 0;
    for (const auto& c : gradsuite::cases())
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto r = c.run(seed);
            checked += r.checked;
            const double tol = c.composite ? gradsuite::kCompositeTolerance : gradsuite::kOpTolerance;
            (c.composite ? worst_comp : worst_op) = std::max(c.composite ? worst_comp : worst_op, r.max_rel_error);
            v.expect(r.max_rel_error <= tol && std::isfinite(r.max_rel_error),
                     c.name + " seed " + std::to_string(seed) + " rel " + num(r.max_rel_error) + " at " + r.worst);
            v.expect(r.checked > 0, c.name + " probed no entries");
        }
    const double secs = seconds_since(t0);
    v.expect(secs < 120.0, "runtime " + num(secs) + " s");
    v.detail = std::to_string(gradsuite::cases().size()) + " cases x 10 seeds, " + std::to_string(checked) +
               " entries, worst op " + num(worst_op) + ", worst composite " + num(worst_comp) + ", " + num(secs) +
               " s";
    return v;
}

Verdict graph_math() {
    Verdict v;
    Rng rng(2024);
    double worst = 0.0;
    for (int g = 0; g < 100; ++g) {
        const std::size_t n = 1 + rng.below(12);
        const double density = rng.uniform();
        std::vector<std::uint8_t> a(n * n, 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (rng.uniform() < density) a[i * n + j] = a[j * n + i] = 1;
        const auto s = normalize_adjacency(std::span<const std::uint8_t>(a), n);
        const auto want = oracle::normalized_adjacency(a, n);
        for (std::size_t k = 0; k < n * n; ++k) worst = std::max(worst, std::abs(s[k] - want[k]));
    }
    v.expect(worst <= 1e-12, "max abs error " + num(worst));
    bool identity = true;
    for (std::size_t n = 1; n <= 12; ++n) {
        const std::vector<std::uint8_t> zero(n * n, 0);
        const auto s = normalize_adjacency(std::span<const std::uint8_t>(zero), n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) identity &= s[i * n + j] == (i == j ? 1.0 : 0.0);
    }
    v.expect(identity, "A=0 does not give the identity exactly");
    v.detail = "100 graphs, max abs error " + num(worst);
    return v;
}

Verdict mining() {
    Verdict v;
    std::size_t matches = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto c = oracle::random_mining_case(seed, 200, 30);
        const ConceptMatcher matcher(c.lexicon);
        std::vector<std::set<std::size_t>> per_doc;
        std::size_t mismatched = 0;
        for (const auto& d : c.docs) {
            const auto got = matcher.match(d);
            mismatched += got != oracle::longest_match(d, c.lexicon);
            matches += got.size();
            std::set<std::size_t> ids;
            for (const auto& m : got) ids.insert(m.concept_id);
            per_doc.push_back(std::move(ids));
        }
        v.expect(mismatched == 0, "seed " + std::to_string(seed) + ": " + std::to_string(mismatched) +
                                      " documents differ from the longest-match oracle");
        const auto m = build_cooccurrence(per_doc, 30);
        v.expect(m.counts == oracle::cooccurrence(per_doc, 30), "co-occurrence differs, seed " + std::to_string(seed));
        for (std::uint64_t tau : {1u, 2u, 3u, 8u, 50u})
            v.expect(binarize(m, tau) == oracle::threshold(m.counts, 30, tau),
                     "binarize differs at tau " + std::to_string(tau));
    }
    v.detail = "3 x 200 documents, 30 concepts, " + std::to_string(matches) + " matches";
    return v;
}

Verdict metric_oracles() {
    Verdict v;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto p = oracle::random_token_pairs(1000 + seed, 50);
        const auto b = bleu_1to4(p.hyps, p.refs);
        for (std::size_t n = 1; n <= 4; ++n) worst = std::max(worst, std::abs(b[n - 1] - oracle::bleu(p.hyps, p.refs, n)));
        worst = std::max(worst, std::abs(rouge_l(p.hyps, p.refs) - oracle::rouge_l(p.hyps, p.refs)));
        worst = std::max(worst, std::abs(cider(p.hyps, p.refs) - oracle::cider(p.hyps, p.refs)));
    }
    v.expect(worst <= 1e-9, "max abs error " + num(worst));
    const std::vector<Tokens> refs{tokenize("the heart is normal in size ."),
                                   tokenize("no pleural effusion or pneumothorax ."),
                                   tokenize("mild opacity at the left lung base ."),
                                   tokenize("a calcified granuloma in the right apex .")};
    const auto b = bleu_1to4(refs, refs);
    const bool exact = b[0] == 1.0 && b[1] == 1.0 && b[2] == 1.0 && b[3] == 1.0 && rouge_l(refs, refs) == 1.0 &&
                       cider(refs, refs) == 10.0;
    v.expect(exact, "identity scores are not exactly (1,1,1,1,1,10)");
    v.detail = "4 x 50 pairs, max abs error " + num(worst);
    return v;
}

Verdict memorization() {
    Verdict v;
    const auto t0 = Clock::now();
    const auto& c = shared_corpus();
    auto cfg = toy::config();
    cfg.max_steps = 500;
    std::vector<std::size_t> idx(c.data.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto vocab = build_vocabulary(c.data, idx, cfg.min_freq);
    Model model(cfg, c.graph, vocab.size(), 0, load_embeddings("", vocab, cfg.embed_dim, derive_seed(cfg.seed, 4)));
    const auto train = pick(c.data, idx);
    const auto s1 = train_stage1(model, train, {});
    const auto auc = evaluate_auc(model, train);
    v.expect(s1.steps <= 500, "stage 1 used " + std::to_string(s1.steps) + " steps");
    v.expect(auc && *auc >= 0.95, "training AUC " + (auc ? num(*auc) : std::string("undefined")));

    const auto frozen = model.store.hash(Model::frozen_prefixes());
    const auto s2 = train_stage2(model, vocab, train, {});
    const auto ev = evaluate_generated(generate_reports(model, vocab, train), train);
    v.expect(ev.bleu[0] >= 0.8, "training BLEU-1 " + num(ev.bleu[0]));
    v.expect(s2.frozen_hash_before == frozen && s2.frozen_hash_after == frozen &&
                 model.store.hash(Model::frozen_prefixes()) == frozen,
             "frozen parameters changed during stage 2");
    const double secs = seconds_since(t0);
    v.expect(secs < 600.0, "runtime " + num(secs) + " s");
    v.detail = "AUC " + (auc ? num(*auc) : std::string("n/a")) + " after " + std::to_string(s1.steps) +
               " steps, BLEU-1 " + num(ev.bleu[0]) + ", " + num(secs) + " s";
    return v;
}

Verdict ablations() {
    Verdict v;
    const auto& c = shared_corpus();
    AblationInputs in;
    in.cfg = driver_config();
    in.reports = c.synth.reports;
    in.lexicon = c.synth.lexicon;
    in.manual = default_manual_graph();
    in.baseline_graph = ablation_graph(in, 30);
    const auto data = load_dataset(c.corpus_path, in.baseline_graph, in.cfg.image_side);
    const auto rows = run_ablations(in, data, ablation_variants());
    v.expect(rows.size() == 6, std::to_string(rows.size()) + " rows");
    std::ostringstream csv;
    write_ablation_csv(csv, rows);
    const std::string text = csv.str();
    v.expect(std::count(text.begin(), text.end(), '\n') == 7, "CSV does not have a header plus six rows");
    for (const auto& name : ablation_variants())
        v.expect(text.find('\n' + name + ',') != std::string::npos, "CSV lacks " + name);
    for (const auto& r : rows) {
        v.expect(r.eval.has_value() && r.auc.has_value(), r.variant + " has no scores");
        if (r.variant.rfind("nodes-", 0) == 0) {
            const std::size_t want = std::stoul(r.variant.substr(6));
            v.expect(r.finding_nodes == want, r.variant + " has " + std::to_string(r.finding_nodes) + " finding nodes");
            v.expect(ablation_graph(in, want).finding_count() == want, r.variant + " graph size");
        }
    }
    v.detail = "baseline + " + std::to_string(ablation_variants().size()) + " variants";
    return v;
}

Verdict bootstrapping() {
    Verdict v;
    Rng rng(77);
    std::vector<std::vector<double>> values(15);
    std::vector<std::vector<double>> cols(3);
    for (auto& row : values) {
        row = {rng.normal(0.38, 0.01), rng.normal(0.34, 0.02), rng.uniform()};
        for (std::size_t m = 0; m < 3; ++m) cols[m].push_back(row[m]);
    }
    const std::vector<std::string> names{"rougeL", "cider", "other"};
    const auto r = t_interval(values, names, 0.95);
    double worst = std::abs(r.t_quantile - oracle::kT975Df14);
    for (std::size_t m = 0; m < 3; ++m) {
        const auto want = oracle::t_interval_b15(cols[m]);
        const auto& got = r.metrics[m];
        for (double d : {got.point - want.mean, got.sd - want.sd, got.half_width - want.half_width,
                         got.lower - (want.mean - want.half_width), got.upper - (want.mean + want.half_width)})
            worst = std::max(worst, std::abs(d));
    }
    v.expect(worst <= 1e-12, "t-interval max abs error " + num(worst));

    const auto& c = shared_corpus();
    auto cfg = driver_config();
    cfg.train_ratio = 0.6;
    cfg.val_ratio = 0.2;
    cfg.test_ratio = 0.2;
    const auto a = run_bootstrap(cfg, c.data, c.graph, 3, 0.95, 1);
    const auto b = run_bootstrap(cfg, c.data, c.graph, 3, 0.95, 2);
    std::ostringstream ca, cb;
    write_bootstrap_csv(ca, a);
    write_bootstrap_csv(cb, b);
    bool same = a.assignments == b.assignments && a.metrics.size() == b.metrics.size();
    for (std::size_t m = 0; same && m < a.metrics.size(); ++m)
        same = a.metrics[m].point == b.metrics[m].point && a.metrics[m].sd == b.metrics[m].sd;
    v.expect(same && ca.str() == cb.str(), "pipeline bootstrap differs between runs");
    v.detail = "t-interval max abs error " + num(worst) + ", pipeline bootstrap B=3 repeated";
    return v;
}

Verdict noise() {
    Verdict v;
    const auto& c = shared_corpus();
    auto cfg = driver_config();
    cfg.train_ratio = 0.6;
    cfg.val_ratio = 0.2;
    cfg.test_ratio = 0.2;
    const std::vector<double> sigmas{0.0, 1.0, 2.0};
    const auto rows = run_noise_sweep(cfg, c.data, c.graph, sigmas, true);
    v.expect(rows.size() == 3, std::to_string(rows.size()) + " rows");

    const auto splits = split_indices(c.data.samples.size(), {0.6, 0.2, 0.2}, cfg.seed);
    const auto vocab = build_vocabulary(c.data, splits.train, cfg.min_freq);
    const auto base = run_pipeline(cfg, c.data, c.graph, vocab);
    if (!rows.empty()) {
        const auto& r0 = rows[0];
        v.expect(r0.auc == base.test_auc, "sigma=0 AUC differs from the baseline");
        v.expect(r0.eval && base.test_eval && r0.eval->headline() == base.test_eval->headline(),
                 "sigma=0 metrics differ from the baseline");
    }
    std::ostringstream csv;
    write_noise_csv(csv, rows);
    const std::string header = csv.str().substr(0, csv.str().find('\n'));
    for (const char* col : {"ref_auc_clean", "ref_auc_noisy", "ref_mean_clean", "ref_mean_noisy"})
        v.expect(header.find(col) != std::string::npos, std::string("CSV lacks ") + col);
    v.expect(csv.str().find("0.786000,0.683000,0.308000,0.282000") != std::string::npos,
             "reference values missing from the CSV rows");
    v.detail = "sigmas 0,1,2";
    return v;
}

bool same_bytes(const std::function<void(std::ostream&)>& write_first,
                const std::function<void(std::istream&, std::ostream&)>& read_then_write) {
    std::ostringstream first;
    write_first(first);
    std::istringstream in(first.str());
    std::ostringstream second;
    read_then_write(in, second);
    return !first.str().empty() && first.str() == second.str();
}

Verdict formats() {
    Verdict v;
    const auto& c = shared_corpus();
    KgBuildOptions opts;
    opts.q = 10;
    opts.tau = 2;
    const auto graph = build_knowledge_graph(c.synth.reports, c.synth.lexicon, default_manual_graph(), opts).graph;
    v.expect(same_bytes([&](std::ostream& os) { graph.write(os); },
                        [](std::istream& is, std::ostream& os) { KnowledgeGraph::read(is).write(os); }),
             "graph");

    std::vector<std::size_t> idx(c.data.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto vocab = build_vocabulary(c.data, idx, 1);
    v.expect(same_bytes([&](std::ostream& os) { vocab.write(os); },
                        [](std::istream& is, std::ostream& os) { Vocabulary::read(is).write(os); }),
             "vocabulary");

    Model model(toy::config(), graph, vocab.size(), 0);
    v.expect(same_bytes([&](std::ostream& os) { write_checkpoint(os, model.store); },
                        [&](std::istream& is, std::ostream& os) {
                            auto cfg = toy::config();
                            cfg.seed = 99;
                            Model other(cfg, graph, vocab.size(), 0);
                            assign_checkpoint(read_checkpoint(is), other.store);
                            write_checkpoint(os, other.store);
                        }),
             "checkpoint");

    FeatureMap fm;
    fm.channels = 3;
    fm.height = 4;
    fm.width = 5;
    Rng rng(5);
    for (std::size_t i = 0; i < 60; ++i) fm.values.push_back(static_cast<float>(rng.normal(0.0, 3.0)));
    fm.values[7] = 1e-30f;
    fm.values[8] = -0.0f;
    v.expect(same_bytes([&](std::ostream& os) { write_feature_map(os, fm); },
                        [](std::istream& is, std::ostream& os) { write_feature_map(os, read_feature_map(is)); }),
             "binary feature map");
    v.expect(same_bytes([&](std::ostream& os) { write_feature_map_text(os, fm); },
                        [](std::istream& is, std::ostream& os) {
                            write_feature_map_text(os, read_feature_map_text(is));
                        }),
             "text feature map");
    v.detail = "graph, vocabulary, checkpoint, feature map (binary, text)";
    return v;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient suite", gradient_suite}, {2, "graph math oracle", graph_math},
        {3, "mining oracle", mining},          {4, "metric oracle", metric_oracles},
        {5, "memorization", memorization},     {6, "ablation harness", ablations},
        {7, "bootstrap", bootstrapping},       {8, "noise ablation", noise},
        {9, "format round trips", formats},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v.failures.push_back(std::string("exception: ") + e.what());
        }
        const bool ok = v.failures.empty();
        failed += !ok;
        std::cout << (ok ? "PASS " : "FAIL ") << c.id << ' ' << c.name;
        if (!v.detail.empty()) std::cout << " (" << v.detail << ')';
        std::cout << '\n';
        for (std::size_t i = 0; i < v.failures.size() && i < 10; ++i) std::cout << "    " << v.failures[i] << '\n';
        std::cout.flush();
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - static_cast<std::size_t>(failed) << '/'
              << criteria.size() << '\n';
    return failed ? 1 : 0;
}
