#include "kgrg/lexicon_kg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace kgrg {

const char* category_name(Category c) {
    switch (c) {
        case Category::AnatomicalEntity: return "AnatomicalEntity";
        case Category::ClinicalFinding: return "ClinicalFinding";
        case Category::ImagingObservation: return "ImagingObservation";
    }
    return "?";
}

Category parse_category(const std::string& s) {
    if (s == "AnatomicalEntity") return Category::AnatomicalEntity;
    if (s == "ClinicalFinding") return Category::ClinicalFinding;
    if (s == "ImagingObservation") return Category::ImagingObservation;
    throw ParseError("unknown concept category '" + s + "'");
}

// ---- lemmatiser ---------------------------------------------------------------

namespace {

const std::unordered_map<std::string, std::string>& irregular_forms() {
    static const std::unordered_map<std::string, std::string> table = {
        {"apices", "apex"},         {"atelectases", "atelectasis"}, {"bronchi", "bronchus"},
        {"calculi", "calculus"},    {"criteria", "criterion"},      {"diagnoses", "diagnosis"},
        {"emboli", "embolus"},      {"feet", "foot"},               {"foci", "focus"},
        {"hila", "hilum"},          {"indices", "index"},           {"matrices", "matrix"},
        {"men", "man"},             {"metastases", "metastasis"},   {"nuclei", "nucleus"},
        {"pleurae", "pleura"},      {"septa", "septum"},            {"stenoses", "stenosis"},
        {"teeth", "tooth"},         {"vertebrae", "vertebra"},      {"women", "woman"},
    };
    return table;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string lemmatize_token(const std::string& token, const std::unordered_set<std::string>& known) {
    if (auto it = irregular_forms().find(token); it != irregular_forms().end()) return it->second;
    if (token.size() > 4 && ends_with(token, "ies")) return token.substr(0, token.size() - 3) + "y";
    if (token.size() > 3 && ends_with(token, "es")) {
        const std::string base = token.substr(0, token.size() - 2);
        if (known.count(base)) return base;
    }
    if (token.size() > 3 && ends_with(token, "s") && !ends_with(token, "ss") && !ends_with(token, "us") &&
        !ends_with(token, "is"))
        return token.substr(0, token.size() - 1);
    return token;
}

std::vector<std::string> lemmatize(std::span<const std::string> tokens, const std::unordered_set<std::string>& known) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(lemmatize_token(t, known));
    return out;
}

// ---- lexicon ----------------------------------------------------------------------

std::vector<Concept> read_lexicon(std::istream& is) {
    std::vector<std::pair<std::vector<std::string>, Category>> raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("lexicon line " + std::to_string(line_no) + ": missing tab");
        auto tokens = tokenize(line.substr(0, tab));
        if (tokens.empty() || tokens.size() > kMaxConceptTokens)
            throw ParseError("lexicon line " + std::to_string(line_no) + ": concept must have 1-" +
                             std::to_string(kMaxConceptTokens) + " tokens");
        raw.emplace_back(std::move(tokens), parse_category(line.substr(tab + 1)));
    }
    // Two passes: the "-es" rule needs the single-token surface forms first.
    std::unordered_set<std::string> known;
    for (const auto& [toks, _] : raw)
        if (toks.size() == 1) known.insert(toks[0]);
    std::vector<Concept> out;
    for (auto& [toks, cat] : raw) out.push_back(Concept{lemmatize(toks, known), cat});
    return out;
}

std::vector<Concept> load_lexicon(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open lexicon " + path);
    return read_lexicon(is);
}

std::unordered_set<std::string> lexicon_vocabulary(std::span<const Concept> lexicon) {
    std::unordered_set<std::string> out;
    for (const auto& c : lexicon)
        for (const auto& t : c.name) out.insert(t);
    return out;
}

// ---- matching -----------------------------------------------------------------------

ConceptMatcher::ConceptMatcher(std::span<const Concept> lexicon) : trie_(1) {
    for (std::size_t id = 0; id < lexicon.size(); ++id) {
        std::size_t node = 0;
        for (const auto& tok : lexicon[id].name) {
            auto it = trie_[node].next.find(tok);
            if (it == trie_[node].next.end()) {
                trie_[node].next.emplace(tok, trie_.size());
                const std::size_t child = trie_.size();
                trie_.emplace_back();
                node = child;
            } else {
                node = it->second;
            }
        }
        if (trie_[node].concept_id < 0) trie_[node].concept_id = static_cast<std::ptrdiff_t>(id);
    }
}

std::vector<ConceptMatch> ConceptMatcher::match(std::span<const std::string> lemmas) const {
    std::vector<ConceptMatch> out;
    std::size_t i = 0;
    while (i < lemmas.size()) {
        std::size_t node = 0, best_end = 0;
        std::ptrdiff_t best = -1;
        for (std::size_t j = i; j < lemmas.size() && j - i < kMaxConceptTokens; ++j) {
            auto it = trie_[node].next.find(lemmas[j]);
            if (it == trie_[node].next.end()) break;
            node = it->second;
            if (trie_[node].concept_id >= 0) {
                best = trie_[node].concept_id;
                best_end = j + 1;
            }
        }
        if (best >= 0) {
            out.push_back({static_cast<std::size_t>(best), i, best_end});
            i = best_end;
        } else {
            ++i;
        }
    }
    return out;
}

std::vector<ConceptMatch> match_concepts(std::span<const std::string> lemmas, std::span<const Concept> lexicon) {
    return ConceptMatcher(lexicon).match(lemmas);
}

// ---- selection & co-occurrence ------------------------------------------------------------

AuxiliarySelection select_auxiliary(const std::map<std::string, std::size_t>& doc_freqs, std::size_t q,
                                    const std::set<std::string>& existing) {
    std::vector<std::pair<std::string, std::size_t>> cands;
    for (const auto& [name, n] : doc_freqs)
        if (n > 0 && !existing.count(to_lower(name))) cands.emplace_back(name, n);
    // doc_freqs iterates in lexicographic order, so a stable sort keeps ties lexicographic.
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    AuxiliarySelection sel;
    sel.short_of_q = cands.size() < q;
    for (std::size_t i = 0; i < std::min(q, cands.size()); ++i) sel.names.push_back(cands[i].first);
    return sel;
}

void CooccurrenceMatrix::merge(const CooccurrenceMatrix& other) {
    if (other.n != n) throw std::invalid_argument("co-occurrence merge: size mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    doc_count += other.doc_count;
}

CooccurrenceMatrix build_cooccurrence(std::span<const std::set<std::size_t>> per_doc, std::size_t n_concepts) {
    CooccurrenceMatrix m;
    m.n = n_concepts;
    m.counts.assign(n_concepts * n_concepts, 0);
    m.doc_count = per_doc.size();
    for (const auto& doc : per_doc) {
        for (auto i : doc) {
            if (i >= n_concepts) throw std::out_of_range("co-occurrence: concept id out of range");
            for (auto j : doc) ++m.counts[i * n_concepts + j];
        }
    }
    return m;
}

std::vector<std::uint8_t> binarize(const CooccurrenceMatrix& m, std::uint64_t tau) {
    if (tau == 0) throw std::invalid_argument("binarize: tau must be positive");
    std::vector<std::uint8_t> out(m.n * m.n, 0);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j)
            if (i != j && m.at(i, j) >= tau) out[i * m.n + j] = 1;
    return out;
}

std::uint64_t default_tau(std::uint64_t doc_count) {
    return std::max<std::uint64_t>(2, static_cast<std::uint64_t>(std::ceil(0.01 * static_cast<double>(doc_count))));
}

// ---- knowledge graph --------------------------------------------------------------------------

const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::Global: return "global";
        case NodeKind::PrimaryFinding: return "primary";
        case NodeKind::AuxiliaryFinding: return "auxiliary";
    }
    return "?";
}

namespace {
NodeKind parse_node_kind(const std::string& s) {
    if (s == "global") return NodeKind::Global;
    if (s == "primary") return NodeKind::PrimaryFinding;
    if (s == "auxiliary") return NodeKind::AuxiliaryFinding;
    throw ParseError("unknown node kind '" + s + "'");
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}
}  // namespace

KnowledgeGraph::KnowledgeGraph(std::vector<GraphNode> nodes, std::vector<std::uint8_t> adjacency)
    : nodes_(std::move(nodes)), adj_(std::move(adjacency)) {
    if (adj_.size() != nodes_.size() * nodes_.size())
        throw std::invalid_argument("knowledge graph: adjacency size does not match node count");
}

void KnowledgeGraph::set_edge(std::size_t i, std::size_t j, bool on) {
    if (i == j) throw std::invalid_argument("knowledge graph: self-loops are not stored");
    adj_[i * size() + j] = adj_[j * size() + i] = on ? 1 : 0;
}

std::size_t KnowledgeGraph::edge_count() const {
    std::size_t m = 0;
    for (std::size_t i = 0; i < size(); ++i)
        for (std::size_t j = i + 1; j < size(); ++j) m += edge(i, j);
    return m;
}

std::size_t KnowledgeGraph::primary_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(),
                                                  [](const auto& n) { return n.kind == NodeKind::PrimaryFinding; }));
}

std::size_t KnowledgeGraph::auxiliary_count() const {
    return static_cast<std::size_t>(std::count_if(
        nodes_.begin(), nodes_.end(), [](const auto& n) { return n.kind == NodeKind::AuxiliaryFinding; }));
}

std::vector<std::string> KnowledgeGraph::primary_names() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
        if (n.kind == NodeKind::PrimaryFinding) out.push_back(n.name);
    return out;
}

std::ptrdiff_t KnowledgeGraph::find(const std::string& name) const {
    const std::string key = to_lower(name);
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (to_lower(nodes_[i].name) == key) return static_cast<std::ptrdiff_t>(i);
    return -1;
}

void KnowledgeGraph::validate() const {
    if (nodes_.empty() || nodes_[0].kind != NodeKind::Global)
        throw ParseError("knowledge graph: node 0 must be the global node");
    bool seen_aux = false;
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        if (nodes_[i].kind == NodeKind::Global) throw ParseError("knowledge graph: more than one global node");
        if (nodes_[i].kind == NodeKind::AuxiliaryFinding) seen_aux = true;
        if (nodes_[i].kind == NodeKind::PrimaryFinding && seen_aux)
            throw ParseError("knowledge graph: primary node '" + nodes_[i].name + "' follows an auxiliary node");
        if (nodes_[i].name.empty() || nodes_[i].name.find('\t') != std::string::npos ||
            nodes_[i].name.find('\n') != std::string::npos)
            throw ParseError("knowledge graph: invalid node name at index " + std::to_string(i));
    }
    for (std::size_t i = 0; i < size(); ++i) {
        if (edge(i, i)) throw ParseError("knowledge graph: self-loop at node " + std::to_string(i));
        for (std::size_t j = i + 1; j < size(); ++j)
            if (edge(i, j) != edge(j, i)) throw ParseError("knowledge graph: adjacency not symmetric");
    }
}

KnowledgeGraph KnowledgeGraph::read(std::istream& is) {
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::string {
        if (!std::getline(is, line)) throw ParseError("graph file: unexpected end of input after line " + std::to_string(line_no));
        ++line_no;
        return line;
    };
    auto header = [&](const std::string& key) -> std::size_t {
        const std::string l = next_line();
        const std::string prefix = key + " ";
        if (l.rfind(prefix, 0) != 0) throw ParseError("graph file line " + std::to_string(line_no) + ": expected '" + key + " <count>'");
        try {
            return std::stoul(l.substr(prefix.size()));
        } catch (const std::exception&) {
            throw ParseError("graph file line " + std::to_string(line_no) + ": bad count");
        }
    };

    const std::size_t n = header("nodes");
    std::vector<GraphNode> nodes;
    for (std::size_t i = 0; i < n; ++i) {
        const auto f = split_tabs(next_line());
        if (f.size() != 3 || f[0] != std::to_string(i))
            throw ParseError("graph file line " + std::to_string(line_no) + ": expected '" + std::to_string(i) +
                             "<TAB>name<TAB>kind'");
        nodes.push_back({f[1], parse_node_kind(f[2])});
    }
    KnowledgeGraph g(std::move(nodes), std::vector<std::uint8_t>(n * n, 0));
    const std::size_t m = header("edges");
    for (std::size_t e = 0; e < m; ++e) {
        const auto f = split_tabs(next_line());
        std::size_t i = 0, j = 0;
        try {
            if (f.size() != 2) throw std::invalid_argument("fields");
            i = std::stoul(f[0]);
            j = std::stoul(f[1]);
        } catch (const std::exception&) {
            throw ParseError("graph file line " + std::to_string(line_no) + ": expected 'i<TAB>j'");
        }
        if (!(i < j) || j >= n) throw ParseError("graph file line " + std::to_string(line_no) + ": edge requires i < j < N");
        g.set_edge(i, j);
    }
    g.validate();
    return g;
}

KnowledgeGraph KnowledgeGraph::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open graph " + path);
    return read(is);
}

void KnowledgeGraph::write(std::ostream& os) const {
    os << "nodes " << size() << '\n';
    for (std::size_t i = 0; i < size(); ++i)
        os << i << '\t' << nodes_[i].name << '\t' << node_kind_name(nodes_[i].kind) << '\n';
    os << "edges " << edge_count() << '\n';
    for (std::size_t i = 0; i < size(); ++i)
        for (std::size_t j = i + 1; j < size(); ++j)
            if (edge(i, j)) os << i << '\t' << j << '\n';
}

void KnowledgeGraph::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write graph " + path);
    write(os);
}

const std::vector<std::string>& default_primary_findings() {
    static const std::vector<std::string> names = {
        "Normal",        "Airspace disease", "Atelectasis", "Calcinosis",     "Cardiomegaly",
        "Cicatrix",      "Edema",            "Effusion",    "Emphysema",      "Fracture bone",
        "Hernia",        "Hypoinflation",    "Lesion",      "Medical device", "Opacity",
        "Pneumonia",     "Pneumothorax",     "Scoliosis",   "Thickening",     "Others",
    };
    return names;
}

KnowledgeGraph default_manual_graph() {
    std::vector<GraphNode> nodes{{"global", NodeKind::Global}};
    for (const auto& n : default_primary_findings()) nodes.push_back({n, NodeKind::PrimaryFinding});
    const std::size_t n = nodes.size();
    KnowledgeGraph g(std::move(nodes), std::vector<std::uint8_t>(n * n, 0));
    for (std::size_t i = 1; i < n; ++i) g.set_edge(0, i);
    return g;
}

KnowledgeGraph merge_graph(const KnowledgeGraph& manual, std::span<const std::string> mined_nodes,
                           std::span<const MinedEdge> mined_edges) {
    manual.validate();
    if (manual.auxiliary_count() != 0)
        throw std::invalid_argument("merge_graph: manual graph must hold only global and primary nodes");
    std::vector<GraphNode> nodes = manual.nodes();
    for (const auto& name : mined_nodes) {
        if (manual.find(name) >= 0)
            throw std::invalid_argument("merge_graph: mined node '" + name + "' collides with a manual node");
        for (std::size_t i = manual.size(); i < nodes.size(); ++i)
            if (to_lower(nodes[i].name) == to_lower(name))
                throw std::invalid_argument("merge_graph: duplicate mined node '" + name + "'");
        nodes.push_back({name, NodeKind::AuxiliaryFinding});
    }
    const std::size_t n = nodes.size(), n0 = manual.size();
    KnowledgeGraph g(std::move(nodes), std::vector<std::uint8_t>(n * n, 0));
    for (std::size_t i = 0; i < n0; ++i)
        for (std::size_t j = i + 1; j < n0; ++j)
            if (manual.edge(i, j)) g.set_edge(i, j);
    for (const auto& e : mined_edges) {
        const auto a = g.find(e.a), b = g.find(e.b);
        if (a < 0 || b < 0) throw std::invalid_argument("merge_graph: edge references unknown node");
        if (a != b) g.set_edge(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
    }
    for (std::size_t i = 1; i < n; ++i) g.set_edge(0, i);
    return g;
}

KgBuildReport build_knowledge_graph(std::span<const Report> reports, std::span<const Concept> lexicon,
                                    const KnowledgeGraph& manual, const KgBuildOptions& opts) {
    manual.validate();
    const auto primaries = manual.primary_names();

    // Concept universe: unique lexicon concept texts, then any primary name
    // not already present.
    std::vector<std::string> universe;
    std::unordered_map<std::string, std::size_t> uid;
    auto intern = [&](const std::string& name) {
        auto [it, inserted] = uid.emplace(name, universe.size());
        if (inserted) universe.push_back(name);
        return it->second;
    };
    std::vector<std::size_t> lex_to_uid;
    for (const auto& c : lexicon) lex_to_uid.push_back(intern(c.text()));
    const std::size_t n_lexicon_names = universe.size();
    const auto known = lexicon_vocabulary(lexicon);
    std::vector<std::size_t> primary_uid;
    for (const auto& p : primaries) primary_uid.push_back(intern(join(lemmatize(tokenize(p), known))));

    const ConceptMatcher matcher(lexicon);
    std::vector<std::set<std::size_t>> per_doc;
    per_doc.reserve(reports.size());
    for (const auto& r : reports) {
        std::set<std::size_t> doc;
        const auto lemmas = lemmatize(tokenize(r.findings + " " + r.impression), known);
        for (const auto& m : matcher.match(lemmas)) doc.insert(lex_to_uid[m.concept_id]);
        const auto labels = extract_labels(r, primaries);
        for (std::size_t k = 0; k < primaries.size(); ++k)
            if (labels.values[k] > 0) doc.insert(primary_uid[k]);
        per_doc.push_back(std::move(doc));
    }
    const auto co = build_cooccurrence(per_doc, universe.size());

    KgBuildReport out;
    out.doc_count = co.doc_count;
    out.tau = opts.tau ? opts.tau : default_tau(co.doc_count);
    for (std::size_t u = 0; u < n_lexicon_names; ++u) out.doc_freqs[universe[u]] = co.at(u, u);

    std::set<std::string> existing;
    for (const auto& node : manual.nodes()) {
        existing.insert(to_lower(node.name));
        existing.insert(join(lemmatize(tokenize(node.name), known)));
    }
    const auto sel = select_auxiliary(out.doc_freqs, opts.q, existing);
    out.short_of_q = sel.short_of_q;

    std::vector<std::pair<std::string, std::size_t>> finding_nodes;
    for (std::size_t k = 0; k < primaries.size(); ++k) finding_nodes.emplace_back(primaries[k], primary_uid[k]);
    for (const auto& name : sel.names) finding_nodes.emplace_back(name, uid.at(name));
    const auto adj = binarize(co, out.tau);
    std::vector<MinedEdge> edges;
    for (std::size_t a = 0; a < finding_nodes.size(); ++a)
        for (std::size_t b = a + 1; b < finding_nodes.size(); ++b)
            if (adj[finding_nodes[a].second * co.n + finding_nodes[b].second])
                edges.push_back({finding_nodes[a].first, finding_nodes[b].first});
    out.graph = merge_graph(manual, sel.names, edges);
    return out;
}

}  // namespace kgrg
