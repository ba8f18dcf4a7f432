#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "kgrg/lexicon_kg.hpp"
#include "support/oracles.hpp"

using namespace kgrg;

namespace {

std::vector<Concept> lexicon_from(const std::string& text) {
    std::istringstream in(text);
    return read_lexicon(in);
}

Report doc(std::string id, std::string text, std::vector<std::string> labels = {}) {
    return {std::move(id), std::move(text), "ok.", std::move(labels), "f", "l"};
}

}  // namespace

TEST_CASE("lemmatiser rules") {
    CHECK(lemmatize_token("opacities") == "opacity");
    CHECK(lemmatize_token("lungs") == "lung");
    CHECK(lemmatize_token("apices") == "apex");
    CHECK(lemmatize_token("atelectasis") == "atelectasis");
    CHECK(lemmatize_token("glass") == "glass");
    CHECK(lemmatize_token("hilus") == "hilus");
    CHECK(lemmatize_token("gas") == "gas");
    // "-es" is stripped only when the stem is a known lexicon token.
    CHECK(lemmatize_token("masses") == "masse");
    CHECK(lemmatize_token("masses", {"mass"}) == "mass");
}

TEST_CASE("lexicon reader lemmatises names and rejects bad lines") {
    const auto lex = lexicon_from("# comment\nPleural effusions\tClinicalFinding\nmass\tImagingObservation\n");
    REQUIRE(lex.size() == 2);
    CHECK(lex[0].text() == "pleural effusion");
    CHECK(lex[1].category == Category::ImagingObservation);
    CHECK_THROWS_AS(lexicon_from("no tab here\n"), ParseError);
    CHECK_THROWS_AS(lexicon_from("a\tNotACategory\n"), ParseError);
    CHECK_THROWS_AS(lexicon_from("a b c d e f\tClinicalFinding\n"), ParseError);
}

TEST_CASE("matcher prefers the longest span") {
    const auto lex = lexicon_from("lung\tAnatomicalEntity\nleft lung\tAnatomicalEntity\nleft lung base\tAnatomicalEntity\n");
    const std::vector<std::string> lemmas{"the", "left", "lung", "base", "and", "left", "lung", "lung"};
    const auto m = match_concepts(lemmas, lex);
    const std::vector<ConceptMatch> want{{2, 1, 4}, {1, 5, 7}, {0, 7, 8}};
    CHECK(m == want);
}

TEST_CASE("matcher agrees with the exhaustive oracle on random documents") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto c = oracle::random_mining_case(seed, 60, 30);
        const ConceptMatcher matcher(c.lexicon);
        for (const auto& d : c.docs) CHECK(matcher.match(d) == oracle::longest_match(d, c.lexicon));
    }
}

TEST_CASE("co-occurrence and binarize against brute force") {
    const auto c = oracle::random_mining_case(7, 80, 30);
    const ConceptMatcher matcher(c.lexicon);
    std::vector<std::set<std::size_t>> per_doc;
    for (const auto& d : c.docs) {
        std::set<std::size_t> s;
        for (const auto& m : matcher.match(d)) s.insert(m.concept_id);
        per_doc.push_back(s);
    }
    const auto m = build_cooccurrence(per_doc, 30);
    CHECK(m.doc_count == 80);
    CHECK(m.counts == oracle::cooccurrence(per_doc, 30));
    for (std::uint64_t tau : {1u, 2u, 5u, 20u}) CHECK(binarize(m, tau) == oracle::threshold(m.counts, 30, tau));

    // Merging two halves equals counting the whole.
    const std::span<const std::set<std::size_t>> all(per_doc);
    auto a = build_cooccurrence(all.subspan(0, 30), 30);
    a.merge(build_cooccurrence(all.subspan(30), 30));
    CHECK(a.counts == m.counts);
    CHECK(a.doc_count == m.doc_count);
}

TEST_CASE("auxiliary selection ranks by frequency then name") {
    const std::map<std::string, std::size_t> df{{"b", 3}, {"a", 3}, {"c", 5}, {"normal", 9}, {"d", 0}};
    const auto sel = select_auxiliary(df, 3, {"normal"});
    CHECK(sel.names == std::vector<std::string>{"c", "a", "b"});
    CHECK_FALSE(sel.short_of_q);
    const auto more = select_auxiliary(df, 5, {"normal"});
    CHECK(more.names.size() == 3);
    CHECK(more.short_of_q);
}

TEST_CASE("default tau") {
    CHECK(default_tau(0) == 2);
    CHECK(default_tau(150) == 2);
    CHECK(default_tau(201) == 3);
    CHECK(default_tau(1000) == 10);
}

TEST_CASE("manual graph shape") {
    const auto g = default_manual_graph();
    g.validate();
    CHECK(g.size() == 21);
    CHECK(g.finding_count() == 20);
    CHECK(g.primary_count() == 20);
    CHECK(g.edge_count() == 20);
    CHECK(g.nodes()[0].kind == NodeKind::Global);
    CHECK(g.find("cardiomegaly") == 5);
}

TEST_CASE("graph file round trip is byte identical") {
    auto g = default_manual_graph();
    g.set_edge(3, 7);
    const std::vector<std::string> mined{"pleural effusion", "left lung"};
    const std::vector<MinedEdge> edges{{"pleural effusion", "Effusion"}, {"left lung", "pleural effusion"}};
    const auto merged = merge_graph(g, mined, edges);
    std::ostringstream first;
    merged.write(first);
    std::istringstream in(first.str());
    const auto back = KnowledgeGraph::read(in);
    std::ostringstream second;
    back.write(second);
    CHECK(first.str() == second.str());
    CHECK(back.auxiliary_count() == 2);
    CHECK(back.edge(0, 22));
    CHECK(back.edge(3, 7));
}

TEST_CASE("graph reader rejects structural violations") {
    auto parse = [](const std::string& s) {
        std::istringstream in(s);
        return KnowledgeGraph::read(in);
    };
    CHECK_THROWS_AS(parse("nodes 2\n0\ta\tprimary\n1\tb\tglobal\nedges 0\n"), ParseError);
    CHECK_THROWS_AS(parse("nodes 3\n0\tg\tglobal\n1\tx\tauxiliary\n2\ty\tprimary\nedges 0\n"), ParseError);
    CHECK_THROWS_AS(parse("nodes 2\n0\tg\tglobal\n1\tx\tprimary\nedges 1\n1\t0\n"), ParseError);
    CHECK_THROWS_AS(parse("nodes 2\n0\tg\tglobal\n1\tx\tprimary\nedges 1\n0\t5\n"), ParseError);
    CHECK_THROWS_AS(parse("nodes 2\n0\tg\tglobal\n"), ParseError);
    CHECK_NOTHROW(parse("nodes 2\n0\tg\tglobal\n1\tx\tprimary\nedges 1\n0\t1\n"));
}

TEST_CASE("merge rejects collisions") {
    const auto g = default_manual_graph();
    const std::vector<std::string> clash{"Edema"};
    CHECK_THROWS(merge_graph(g, clash, {}));
    const std::vector<std::string> dup{"x", "X"};
    CHECK_THROWS(merge_graph(g, dup, {}));
}

TEST_CASE("graph building picks frequent concepts and links co-occurring findings") {
    const auto lex = lexicon_from(
        "pleural effusion\tClinicalFinding\nleft lung\tAnatomicalEntity\nheart\tAnatomicalEntity\n"
        "rare thing\tClinicalFinding\n");
    std::vector<Report> docs{
        doc("1", "Small pleural effusions at the left lung.", {"Effusion"}),
        doc("2", "Pleural effusion near the left lung.", {"Effusion"}),
        doc("3", "Normal heart.", {"Normal"}),
        doc("4", "The heart is normal.", {"Normal"}),
        doc("5", "A rare thing.", {}),
    };
    KgBuildOptions opts;
    opts.q = 2;
    opts.tau = 2;
    const auto r = build_knowledge_graph(docs, lex, default_manual_graph(), opts);
    r.graph.validate();
    CHECK(r.doc_count == 5);
    CHECK(r.doc_freqs.at("pleural effusion") == 2);
    CHECK(r.doc_freqs.at("heart") == 2);
    CHECK(r.doc_freqs.at("rare thing") == 1);
    CHECK(r.graph.finding_count() == 22);
    // Ties at df 2 broken lexicographically: "heart" < "left lung" < "pleural effusion".
    CHECK(r.graph.nodes()[21].name == "heart");
    CHECK(r.graph.nodes()[22].name == "left lung");
    CHECK(r.graph.edge(r.graph.find("heart"), r.graph.find("Normal")));
    CHECK_FALSE(r.graph.edge(r.graph.find("heart"), r.graph.find("left lung")));
    CHECK_FALSE(r.short_of_q);

    opts.q = 10;
    CHECK(build_knowledge_graph(docs, lex, default_manual_graph(), opts).short_of_q);
}
