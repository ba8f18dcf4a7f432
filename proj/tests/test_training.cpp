#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "kgrg/rng.hpp"
#include "kgrg/training.hpp"
#include "support/toy.hpp"

using namespace kgrg;

namespace {

toy::Corpus& corpus() {
    static toy::TempDir dir("training");
    static toy::Corpus c = toy::make_corpus(dir.path, 10, 3);
    return c;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

TEST_CASE("config parsing") {
    std::istringstream in("# toy\nepochs = 12\nlr=0.5  # inline\n\nrandom_embeddings = true\ngcn_variant=message-only\n");
    const auto c = read_config(in);
    CHECK(c.epochs == 12);
    CHECK(c.lr == 0.5);
    CHECK(c.random_embeddings);
    CHECK(c.variant() == GcnVariant::MessageOnly);
    CHECK(c.batch_size == 8);

    auto bad = [](const std::string& s) {
        std::istringstream is(s);
        return read_config(is);
    };
    CHECK_THROWS_AS(bad("unknown_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(bad("epochs = -1\n"), ConfigError);
    CHECK_THROWS_AS(bad("epochs = 3x\n"), ConfigError);
    CHECK_THROWS_AS(bad("lr = nan\n"), ConfigError);
    CHECK_THROWS_AS(bad("just words\n"), ConfigError);
    CHECK_THROWS_AS(bad("random_embeddings = maybe\n"), ConfigError);
}

TEST_CASE("config write and read round trip") {
    auto c = toy::config();
    c.seed = 123456789012345ULL;
    c.noise_sigma = 0.1;
    std::ostringstream first;
    write_config(first, c);
    std::istringstream in(first.str());
    const auto back = read_config(in);
    std::ostringstream second;
    write_config(second, back);
    CHECK(first.str() == second.str());
    CHECK(back.noise_sigma == 0.1);
    CHECK(back.seed == c.seed);
}

TEST_CASE("config validation") {
    auto c = toy::config();
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = toy::config();
    c.gcn_variant = "other";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = toy::config();
    c.image_side = 8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = toy::config();
    c.train_ratio = 0.9;
    c.val_ratio = 0.2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("synthetic corpus is seeded and labelled") {
    const auto g = default_manual_graph();
    SynthOptions opt;
    opt.n_pairs = 25;
    const auto a = synth_corpus(g, opt), b = synth_corpus(g, opt);
    REQUIRE(a.reports.size() == 25);
    const auto primaries = g.primary_names();
    for (std::size_t i = 0; i < 25; ++i) {
        CHECK(a.reports[i].findings == b.reports[i].findings);
        CHECK(a.images[i].first.pixels == b.images[i].first.pixels);
        const auto& labels = a.reports[i].labels;
        CHECK(std::find(labels.begin(), labels.end(), primaries[i % 20]) != labels.end());
        CHECK(labels.size() <= 3);
    }
    CHECK(a.lexicon.size() >= 30);
    opt.seed = 1;
    CHECK(synth_corpus(g, opt).reports[0].findings != a.reports[0].findings);
}

TEST_CASE("dataset loading from images") {
    const auto& c = corpus();
    REQUIRE(c.data.samples.size() == 10);
    CHECK_FALSE(c.data.feature_maps);
    const auto& s = c.data.samples[3];
    CHECK(s.frontal.height == 64);
    CHECK(s.labels.size() == 20);
    CHECK(s.labels[3] == 1.0);
    CHECK(s.text.sentences.size() >= 2);
}

TEST_CASE("dataset loading from feature maps") {
    toy::TempDir dir("fmap-corpus");
    std::vector<Report> reports;
    Rng rng(0);
    for (int i = 0; i < 3; ++i) {
        const std::string id = "r" + std::to_string(i);
        for (const char* view : {"f", "l"}) {
            FeatureMap fm;
            fm.channels = 5;
            fm.height = fm.width = 2;
            for (int k = 0; k < 20; ++k) fm.values.push_back(static_cast<float>(rng.normal()));
            save_feature_map(dir.file(id + view + (i == 1 ? ".txt" : ".fmap")), fm);
        }
        const std::string ext = i == 1 ? ".txt" : ".fmap";
        reports.push_back({id, "the heart is normal.", "no effusion.", {"Normal"}, id + "f" + ext, id + "l" + ext});
    }
    {
        std::ofstream f(dir.file("reports.jsonl"));
        write_reports(f, reports);
    }
    const auto g = default_manual_graph();
    const auto data = load_dataset(dir.file("reports.jsonl"), g, 64);
    CHECK(data.feature_maps);
    CHECK(data.feature_channels == 5);
    auto cfg = toy::config();
    Model m(cfg, g, 10, data.feature_channels);
    CHECK_FALSE(m.use_cnn);
    const auto batch = pick(data, std::vector<std::size_t>{0, 2});
    CHECK(m.classify_batch(batch, Mode::Eval).shape() == Shape{20, 2});
    Dataset copy = data;
    CHECK_THROWS_AS(apply_noise(copy, std::vector<std::size_t>{0}, 1.0, 0), ConfigError);
}

TEST_CASE("noise touches only the requested samples") {
    Dataset d = corpus().data;
    apply_noise(d, std::vector<std::size_t>{1, 4}, 0.0, 9);
    CHECK(d.samples[1].frontal.pixels == corpus().data.samples[1].frontal.pixels);
    apply_noise(d, std::vector<std::size_t>{1, 4}, 0.5, 9);
    CHECK(d.samples[1].frontal.pixels != corpus().data.samples[1].frontal.pixels);
    CHECK(d.samples[4].lateral.pixels != corpus().data.samples[4].lateral.pixels);
    CHECK(d.samples[2].frontal.pixels == corpus().data.samples[2].frontal.pixels);
}

TEST_CASE("model parameter layout and shapes") {
    const auto& c = corpus();
    auto cfg = toy::config();
    Model m(cfg, c.graph, 30, 0);
    for (const auto& name : m.store.names()) {
        bool known = false;
        for (const char* p : {"encoder.cnn.", "encoder.attention.", "gcn.", "classifier.", "decoder."})
            known |= name.rfind(p, 0) == 0;
        CHECK_MESSAGE(known, name);
    }
    // Same seed, same initial parameters. Compared before any train-mode
    // forward pass, which moves the batch-norm running statistics.
    Model m2(cfg, c.graph, 30, 0);
    CHECK(m.store.hash({}) == m2.store.hash({}));
    cfg.seed = 1;
    Model m3(cfg, c.graph, 30, 0);
    CHECK(m.store.hash({}) != m3.store.hash({}));

    const auto batch = pick(c.data, std::vector<std::size_t>{0, 1, 2});
    CHECK(m.encode(batch, Mode::Train).shape() == Shape{32, 3 * 21});
    CHECK(m.classify_batch(batch, Mode::Eval).shape() == Shape{20, 3});


    std::vector<double> wrong(7, 0.0);
    CHECK_THROWS_AS(Model(toy::config(), c.graph, 30, 0, wrong), EmbeddingError);
}

TEST_CASE("snapshot and restore") {
    auto cfg = toy::config();
    Model m(cfg, corpus().graph, 30, 0);
    const auto snap = snapshot(m.store);
    const auto h = m.store.hash({});
    m.store.at("classifier.fc.weight").mutable_values()[0] += 1.0;
    CHECK(m.store.hash({}) != h);
    restore(m.store, snap);
    CHECK(m.store.hash({}) == h);
}

TEST_CASE("short stage-1 and stage-2 runs") {
    const auto& c = corpus();
    auto cfg = toy::config();
    cfg.epochs = 4;
    cfg.decoder_epochs = 2;
    const auto idx = all_indices(c.data.samples.size());
    const auto vocab = build_vocabulary(c.data, idx, cfg.min_freq);
    Model m(cfg, c.graph, vocab.size(), 0);
    const auto train = pick(c.data, idx);
    const auto s1 = train_stage1(m, train, {});
    CHECK(s1.log.size() == 4);
    CHECK(s1.steps == 4 * 2);  // ceil(10 / 8) batches per epoch
    CHECK(s1.best_auc >= 0.0);
    CHECK(s1.best_auc <= 1.0);
    for (const auto& e : s1.log) CHECK(std::isfinite(e.loss));
    CHECK(s1.log.back().loss < s1.log.front().loss);

    const auto dec_before = m.store.hash(Model::decoder_prefixes());
    const auto s2 = train_stage2(m, vocab, train, {});
    CHECK(s2.frozen_hash_before == s2.frozen_hash_after);
    CHECK(s2.frozen_hash_after == m.store.hash(Model::frozen_prefixes()));
    CHECK(m.store.hash(Model::decoder_prefixes()) != dec_before);
    CHECK(s2.log.size() == 2);
    CHECK(s2.log[0].mean.has_value());

    std::ostringstream os;
    write_log_csv(os, s2.log, true);
    CHECK(os.str().rfind("epoch,step,loss,auc,mean\n", 0) == 0);

    const auto gen = generate_reports(m, vocab, train);
    CHECK(gen.size() == 10);
    const auto ev = evaluate_generated(gen, train);
    CHECK(ev.per_report.size() == 10);
}

TEST_CASE("non-finite loss raises a numeric error") {
    const auto& c = corpus();
    auto cfg = toy::config();
    cfg.epochs = 1;
    Model m(cfg, c.graph, 30, 0);
    m.store.at("classifier.fc.bias").mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
    const auto train = pick(c.data, all_indices(10));
    CHECK_THROWS_AS(train_stage1(m, train, {}), NumericError);
}

TEST_CASE("pipeline is deterministic per seed") {
    const auto& c = corpus();
    auto cfg = toy::config();
    cfg.epochs = 2;
    cfg.decoder_epochs = 1;
    cfg.train_ratio = 0.6;
    cfg.val_ratio = 0.2;
    cfg.test_ratio = 0.2;
    const auto splits = split_indices(10, {0.6, 0.2, 0.2}, cfg.seed);
    const auto vocab = build_vocabulary(c.data, splits.train, cfg.min_freq);
    const auto a = run_pipeline(cfg, c.data, c.graph, vocab);
    const auto b = run_pipeline(cfg, c.data, c.graph, vocab);
    REQUIRE(a.test_eval.has_value());
    CHECK(a.splits.test == splits.test);
    CHECK(a.stage1.log.back().loss == b.stage1.log.back().loss);
    CHECK(a.test_eval->headline() == b.test_eval->headline());
    CHECK(a.finding_nodes == 20);
}

TEST_CASE("resampled training sets with repeats are scored once per report") {
    const auto& c = corpus();
    auto cfg = toy::config();
    cfg.epochs = 1;
    cfg.decoder_epochs = 1;
    cfg.train_ratio = 1.0;
    cfg.val_ratio = 0.0;
    cfg.test_ratio = 0.0;
    const std::vector<std::size_t> resampled{0, 0, 3, 3, 3, 5, 7, 7, 9, 9};
    const auto vocab = build_vocabulary(c.data, all_indices(10), cfg.min_freq);
    PipelineOptions opt;
    opt.train_override = &resampled;
    const auto r = run_pipeline(cfg, c.data, c.graph, vocab, opt);
    REQUIRE(r.train_eval.has_value());
    CHECK(r.train_eval->per_report.size() == 5);
}

TEST_CASE("heavy training noise does not raise held-out auc on the toy corpus") {
    toy::TempDir dir("noise-trend");
    const auto c = toy::make_corpus(dir.path, 20, 0);
    auto cfg = toy::config();
    cfg.epochs = 10;
    cfg.train_ratio = 0.6;
    cfg.val_ratio = 0.2;
    cfg.test_ratio = 0.2;
    const std::vector<double> sigmas{0.0, 2.0};
    const auto rows = run_noise_sweep(cfg, c.data, c.graph, sigmas, false);
    REQUIRE(rows.size() == 2);
    REQUIRE(rows[0].auc.has_value());
    REQUIRE(rows[1].auc.has_value());
    MESSAGE("auc sigma=0 " << *rows[0].auc << ", sigma=2 " << *rows[1].auc);
    CHECK(*rows[1].auc <= *rows[0].auc + 0.05);
}
