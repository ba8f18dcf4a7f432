#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kgrg/cli.hpp"
#include "kgrg/training.hpp"
#include "support/toy.hpp"

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "kgrg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = kgrg::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run({}).code == 1);
    CHECK(run({"no-such-command"}).code == 1);
    CHECK(run({"kg-stats"}).code == 1);
    CHECK(run({"kg-stats", "--graph", "g.txt", "--bogus"}).code == 1);
    CHECK(run({"bootstrap", "--replicates", "1"}).code == 1);
    CHECK(run({"generate", "--checkpoint", "x.ckpt", "--split", "nope"}).code != 0);
    CHECK(run({"train-classify"}).code == 1);  // no corpus anywhere
}

TEST_CASE("help exits cleanly") {
    const auto r = run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("kg-build") != std::string::npos);
}

TEST_CASE("missing or malformed inputs exit with 2") {
    toy::TempDir dir("cli-bad");
    CHECK(run({"kg-stats", "--graph", dir.file("missing.txt")}).code == 2);
    write_file(dir.file("broken.txt"), "this is not a graph\n");
    const auto r = run({"kg-stats", "--graph", dir.file("broken.txt")});
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error: ", 0) == 0);
}

TEST_CASE("kg-stats on the built-in graph") {
    toy::TempDir dir("cli-stats");
    kgrg::default_manual_graph().save(dir.file("g.txt"));
    const auto r = run({"kg-stats", "--graph", dir.file("g.txt")});
    REQUIRE(r.code == 0);
    CHECK(r.out == "nodes 21\nfinding_nodes 20\nprimary 20\nauxiliary 0\nedges 20\n");
}

TEST_CASE("synth then kg-build") {
    toy::TempDir dir("cli-synth");
    const auto s = run({"--seed", "4", "synth", "--pairs", "12", "--image-side", "32", "--out", dir.path});
    REQUIRE(s.code == 0);
    CHECK(s.out.rfind("wrote 12 pairs", 0) == 0);
    const auto b = run({"kg-build", "--corpus", dir.file("reports.jsonl"), "--lexicon", dir.file("lexicon.tsv"),
                        "--q", "5", "--tau", "2", "--out", dir.file("kg.txt")});
    REQUIRE(b.code == 0);
    const auto st = run({"kg-stats", "--graph", dir.file("kg.txt")});
    REQUIRE(st.code == 0);
    CHECK(st.out.find("finding_nodes 25\n") != std::string::npos);
}

TEST_CASE("evaluate on identical files") {
    toy::TempDir dir("cli-eval");
    const std::string recs =
        "{\"id\":\"a\",\"text\":\"the heart is normal.\"}\n{\"id\":\"b\",\"text\":\"no pleural effusion.\"}\n"
        "{\"id\":\"c\",\"text\":\"mild opacity at the base.\"}\n";
    write_file(dir.file("h.jsonl"), recs);
    write_file(dir.file("r.jsonl"), recs);
    const auto r = run({"evaluate", "--hyp", dir.file("h.jsonl"), "--ref", dir.file("r.jsonl"), "--per-report",
                        dir.file("per.csv")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("2.5") != std::string::npos);
    std::ifstream per(dir.file("per.csv"));
    CHECK(per.good());

    const auto c = run({"complexity", "--hyp", dir.file("h.jsonl"), "--ref", dir.file("r.jsonl")});
    REQUIRE(c.code == 0);
    CHECK(c.out.rfind("bin_low,bin_high,mean_sentences,count\n", 0) == 0);

    write_file(dir.file("short.jsonl"), "{\"id\":\"a\",\"text\":\"x\"}\n");
    CHECK(run({"evaluate", "--hyp", dir.file("short.jsonl"), "--ref", dir.file("r.jsonl")}).code == 2);
}

TEST_CASE("an invalid config value is a data error") {
    toy::TempDir dir("cli-config");
    write_file(dir.file("bad.cfg"), "epochs = many\n");
    CHECK(run({"--config", dir.file("bad.cfg"), "kg-stats", "--graph", dir.file("g.txt")}).code == 2);
}
