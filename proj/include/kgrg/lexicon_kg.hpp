// Concept mining over report text and prior knowledge graph assembly.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "kgrg/corpus.hpp"

namespace kgrg {

enum class Category { AnatomicalEntity, ClinicalFinding, ImagingObservation };

const char* category_name(Category c);
Category parse_category(const std::string& s);

struct Concept {
    std::vector<std::string> name;  // lemmatised tokens, 1..5
    Category category = Category::ClinicalFinding;

    std::string text() const { return join(name); }
};

inline constexpr std::size_t kMaxConceptTokens = 5;

// Lexicon file: "name<TAB>category" per line; '#' comments allowed.
// Names are tokenised and lemmatised on load.
std::vector<Concept> read_lexicon(std::istream& is);
std::vector<Concept> load_lexicon(const std::string& path);

// Single-token lemmas of a lexicon; the "-es" rule consults this set.
std::unordered_set<std::string> lexicon_vocabulary(std::span<const Concept> lexicon);

std::string lemmatize_token(const std::string& token, const std::unordered_set<std::string>& known = {});
std::vector<std::string> lemmatize(std::span<const std::string> tokens,
                                   const std::unordered_set<std::string>& known = {});

struct ConceptMatch {
    std::size_t concept_id;
    std::size_t start, end;  // half-open token span

    bool operator==(const ConceptMatch&) const = default;
};

// Greedy left-to-right longest match over the lemma sequence.
class ConceptMatcher {
public:
    explicit ConceptMatcher(std::span<const Concept> lexicon);
    std::vector<ConceptMatch> match(std::span<const std::string> lemmas) const;

private:
    struct TrieNode {
        std::map<std::string, std::size_t> next;
        std::ptrdiff_t concept_id = -1;
    };
    std::vector<TrieNode> trie_;
};

std::vector<ConceptMatch> match_concepts(std::span<const std::string> lemmas, std::span<const Concept> lexicon);

// Up to q concept names by descending document frequency, lexicographic on
// ties, skipping names already in `existing` (compared lowercase).
struct AuxiliarySelection {
    std::vector<std::string> names;
    bool short_of_q = false;
};
AuxiliarySelection select_auxiliary(const std::map<std::string, std::size_t>& doc_freqs, std::size_t q,
                                    const std::set<std::string>& existing);

struct CooccurrenceMatrix {
    std::size_t n = 0;
    std::vector<std::uint64_t> counts;  // n*n, symmetric
    std::uint64_t doc_count = 0;

    std::uint64_t at(std::size_t i, std::size_t j) const { return counts[i * n + j]; }
    void merge(const CooccurrenceMatrix& other);
};

CooccurrenceMatrix build_cooccurrence(std::span<const std::set<std::size_t>> per_doc, std::size_t n_concepts);

// edge(i, j) = 1 iff i != j and counts(i, j) >= tau. Row-major n*n 0/1.
std::vector<std::uint8_t> binarize(const CooccurrenceMatrix& m, std::uint64_t tau);

std::uint64_t default_tau(std::uint64_t doc_count);

enum class NodeKind { Global, PrimaryFinding, AuxiliaryFinding };

const char* node_kind_name(NodeKind k);

struct GraphNode {
    std::string name;
    NodeKind kind;
};

class KnowledgeGraph {
public:
    KnowledgeGraph() = default;
    KnowledgeGraph(std::vector<GraphNode> nodes, std::vector<std::uint8_t> adjacency);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<GraphNode>& nodes() const { return nodes_; }
    const std::vector<std::uint8_t>& adjacency() const { return adj_; }
    bool edge(std::size_t i, std::size_t j) const { return adj_[i * size() + j] != 0; }
    void set_edge(std::size_t i, std::size_t j, bool on = true);
    std::size_t edge_count() const;

    std::size_t finding_count() const { return size() == 0 ? 0 : size() - 1; }
    std::size_t primary_count() const;
    std::size_t auxiliary_count() const;
    std::vector<std::string> primary_names() const;
    std::ptrdiff_t find(const std::string& name) const;  // case-insensitive, -1 when absent

    // Graph file: "nodes N", N lines "index<TAB>name<TAB>kind", "edges M",
    // M lines "i<TAB>j" with i < j.
    static KnowledgeGraph read(std::istream& is);
    static KnowledgeGraph load(const std::string& path);
    void write(std::ostream& os) const;
    void save(const std::string& path) const;

    // Checks the structural invariants; throws on violation.
    void validate() const;

private:
    std::vector<GraphNode> nodes_;
    std::vector<std::uint8_t> adj_;
};

// Global node plus the 20 primary findings, each linked to the global node.
KnowledgeGraph default_manual_graph();
const std::vector<std::string>& default_primary_findings();

struct MinedEdge {
    std::string a, b;
};

// Appends auxiliary nodes after the primaries, adds mined edges, keeps manual
// edges and links the global node to every finding node.
KnowledgeGraph merge_graph(const KnowledgeGraph& manual, std::span<const std::string> mined_nodes,
                           std::span<const MinedEdge> mined_edges);

struct KgBuildOptions {
    std::size_t q = 10;
    std::uint64_t tau = 0;  // 0 selects default_tau(doc_count)
};

struct KgBuildReport {
    KnowledgeGraph graph;
    std::map<std::string, std::size_t> doc_freqs;
    std::uint64_t tau = 0;
    std::uint64_t doc_count = 0;
    bool short_of_q = false;
};

// Per document: lemmatise, match, collect the set of matched concepts plus
// the document's own primary labels. Auxiliary nodes are chosen with
// select_auxiliary and edges are mined among all finding nodes.
KgBuildReport build_knowledge_graph(std::span<const Report> reports, std::span<const Concept> lexicon,
                                    const KnowledgeGraph& manual, const KgBuildOptions& opts);

}  // namespace kgrg
