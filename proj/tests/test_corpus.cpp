#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "kgrg/corpus.hpp"

using namespace kgrg;

namespace {

Report report(std::string id, std::string findings, std::string impression, std::vector<std::string> labels = {}) {
    return {std::move(id), std::move(findings), std::move(impression), std::move(labels), "f.pgm", "l.pgm"};
}

}  // namespace

TEST_CASE("tokenize lowercases and separates punctuation") {
    const auto t = tokenize("Heart size NORMAL, lungs (clear).");
    const std::vector<std::string> want{"heart", "size", "normal", ",", "lungs", "(", "clear", ")", "."};
    CHECK(t == want);
    CHECK(tokenize("  ").empty());
}

TEST_CASE("sentences end with a single terminator token") {
    const auto s = split_sentences("No effusion! Is there a nodule? no  Heart is normal");
    REQUIRE(s.size() == 3);
    CHECK(s[0] == std::vector<std::string>{"no", "effusion", "."});
    CHECK(s[1] == std::vector<std::string>{"is", "there", "a", "nodule", "."});
    CHECK(s[2].back() == ".");
    CHECK(split_sentences("...").empty());
}

TEST_CASE("preprocess joins findings and impression") {
    const auto r = preprocess(report("a", "The heart is normal.", "No acute disease."));
    CHECK(r.sentences.size() == 2);
    CHECK(r.flat_tokens.size() == 9);
    CHECK_THROWS_AS(preprocess(report("b", " ", "")), ParseError);
}

TEST_CASE("reader skips incomplete records and rejects malformed ones") {
    std::istringstream in(
        R"({"id":"1","findings":"a.","impression":"b.","labels":["X"],"frontal_ref":"f","lateral_ref":"l"})"
        "\n\n"
        R"({"id":"2","findings":"","impression":"b.","frontal_ref":"f","lateral_ref":"l"})"
        "\n"
        R"({"id":"3","findings":"a.","impression":"b.","frontal_ref":"f"})"
        "\n");
    const auto r = read_reports(in);
    CHECK(r.reports.size() == 1);
    CHECK(r.skipped == 2);
    CHECK(r.reports[0].labels == std::vector<std::string>{"X"});

    std::istringstream dup(R"({"id":"1"})"
                           "\n"
                           R"({"id":"1"})");
    CHECK_THROWS_AS(read_reports(dup), ParseError);
    std::istringstream bad("{not json");
    CHECK_THROWS_AS(read_reports(bad), ParseError);
    std::istringstream labels(R"({"id":"1","labels":"x"})");
    CHECK_THROWS_AS(read_reports(labels), ParseError);
}

TEST_CASE("report writer round trips") {
    const std::vector<Report> rs{report("a", "x y.", "z.", {"Cardiomegaly"}), report("b", "p.", "q.")};
    std::ostringstream out;
    write_reports(out, rs);
    std::istringstream in(out.str());
    const auto back = read_reports(in);
    REQUIRE(back.reports.size() == 2);
    CHECK(back.reports[0].labels == rs[0].labels);
    CHECK(back.reports[1].findings == "p.");
}

TEST_CASE("vocabulary ordering, min frequency and unknowns") {
    std::vector<TokenizedReport> corpus{preprocess(report("a", "b a a.", "c.")),
                                        preprocess(report("b", "a b.", "d."))};
    const auto v = Vocabulary::build(corpus, 2);
    // "." x4, "a" x3, "b" x2; c and d dropped.
    REQUIRE(v.size() == 7);
    CHECK(v.token(kPad) == "<pad>");
    CHECK(v.token(kStart) == "<start>");
    CHECK(v.token(kEnd) == "<end>");
    CHECK(v.token(kUnk) == "<unk>");
    CHECK(v.token(4) == ".");
    CHECK(v.token(5) == "a");
    CHECK(v.token(6) == "b");
    CHECK(v.index("c") == kUnk);
    const std::vector<std::string> toks{"a", "zzz"};
    CHECK(v.encode(toks) == std::vector<std::size_t>{5, kUnk});
    CHECK_THROWS(v.token(99));
}

TEST_CASE("vocabulary file round trip is byte identical") {
    std::vector<TokenizedReport> corpus{preprocess(report("a", "the lungs are clear.", "no effusion."))};
    const auto v = Vocabulary::build(corpus, 1);
    std::ostringstream first;
    v.write(first);
    std::istringstream in(first.str());
    const auto back = Vocabulary::read(in);
    std::ostringstream second;
    back.write(second);
    CHECK(first.str() == second.str());

    std::istringstream missing_specials("a\t0\n");
    CHECK_THROWS_AS(Vocabulary::read(missing_specials), ParseError);
    std::istringstream gap("<pad>\t0\n<start>\t1\n<end>\t2\n<unk>\t4\n");
    CHECK_THROWS_AS(Vocabulary::read(gap), ParseError);
}

TEST_CASE("labels match primary nodes case-insensitively") {
    const std::vector<std::string> nodes{"Normal", "Cardiomegaly", "Effusion"};
    const auto l = extract_labels(report("a", "x.", "y.", {"cardiomegaly", "EFFUSION", "Unicorn"}), nodes);
    CHECK(l.values == std::vector<double>{0, 1, 1});
    CHECK(l.unmatched == 1);
}

TEST_CASE("splits partition the index set and are seed-stable") {
    for (std::size_t n : {0u, 1u, 7u, 20u, 101u}) {
        const auto s = split_indices(n, {}, 42);
        std::vector<std::size_t> all;
        for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> want(n);
        for (std::size_t i = 0; i < n; ++i) want[i] = i;
        CHECK(all == want);
        CHECK(s.train.size() == static_cast<std::size_t>(0.6 * static_cast<double>(n) + 1e-9));
        const auto again = split_indices(n, {}, 42);
        CHECK(again.train == s.train);
        CHECK(again.test == s.test);
    }
    CHECK(split_indices(50, {}, 1).train != split_indices(50, {}, 2).train);
    CHECK_THROWS(split_indices(10, {0.5, 0.5, 0.5}, 0));
}
