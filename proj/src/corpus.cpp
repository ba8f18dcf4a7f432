#include "kgrg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "kgrg/rng.hpp"

namespace kgrg {

using json = nlohmann::json;

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string join(std::span<const std::string> tokens, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += sep;
        out += tokens[i];
    }
    return out;
}

// ---- ingestion ---------------------------------------------------------------

namespace {

std::string string_field(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || j[key].is_null()) return {};
    if (!j[key].is_string())
        throw ParseError("line " + std::to_string(line) + ": field '" + key + "' is not a string");
    return j[key].get<std::string>();
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

LoadResult read_reports(std::istream& is) {
    LoadResult out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (blank(line)) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object()) throw ParseError("line " + std::to_string(line_no) + ": record is not an object");
        Report r;
        r.id = string_field(j, "id", line_no);
        if (r.id.empty()) throw ParseError("line " + std::to_string(line_no) + ": missing id");
        r.findings = string_field(j, "findings", line_no);
        r.impression = string_field(j, "impression", line_no);
        r.frontal_ref = string_field(j, "frontal_ref", line_no);
        r.lateral_ref = string_field(j, "lateral_ref", line_no);
        if (j.contains("labels") && !j["labels"].is_null()) {
            if (!j["labels"].is_array())
                throw ParseError("line " + std::to_string(line_no) + ": labels is not a list");
            for (const auto& l : j["labels"]) {
                if (!l.is_string())
                    throw ParseError("line " + std::to_string(line_no) + ": label is not a string");
                r.labels.push_back(l.get<std::string>());
            }
        }
        if (!ids.insert(r.id).second)
            throw ParseError("line " + std::to_string(line_no) + ": duplicate id '" + r.id + "'");
        if (blank(r.findings) || blank(r.impression) || r.frontal_ref.empty() || r.lateral_ref.empty()) {
            ++out.skipped;
            continue;
        }
        out.reports.push_back(std::move(r));
    }
    return out;
}

LoadResult load_reports(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open corpus " + path);
    return read_reports(is);
}

void write_reports(std::ostream& os, std::span<const Report> reports) {
    for (const auto& r : reports) {
        json j;
        j["id"] = r.id;
        j["findings"] = r.findings;
        j["impression"] = r.impression;
        j["labels"] = r.labels;
        j["frontal_ref"] = r.frontal_ref;
        j["lateral_ref"] = r.lateral_ref;
        os << j.dump() << '\n';
    }
}

// ---- tokenisation --------------------------------------------------------------

namespace {

bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

bool is_split_punct(char c) {
    switch (c) {
        case ',': case ';': case ':': case '(': case ')': case '[': case ']':
        case '"': case '\'': case '.': case '!': case '?':
            return true;
        default:
            return false;
    }
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (char raw : text) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_split_punct(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur += c;
        }
    }
    flush();
    return out;
}

std::vector<std::vector<std::string>> split_sentences(const std::string& text) {
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> cur;
    for (auto& tok : tokenize(text)) {
        if (tok.size() == 1 && is_terminal(tok[0])) {
            if (!cur.empty()) {
                cur.emplace_back(kSentenceEnd);
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(std::move(tok));
        }
    }
    if (!cur.empty()) {
        cur.emplace_back(kSentenceEnd);
        out.push_back(std::move(cur));
    }
    return out;
}

TokenizedReport preprocess(const Report& report) {
    TokenizedReport out;
    out.id = report.id;
    out.sentences = split_sentences(report.findings + " " + report.impression);
    if (out.sentences.empty()) throw ParseError("report '" + report.id + "': empty findings and impression");
    for (const auto& s : out.sentences) out.flat_tokens.insert(out.flat_tokens.end(), s.begin(), s.end());
    return out;
}

// ---- vocabulary -----------------------------------------------------------------

namespace {
const char* const kSpecials[] = {"<pad>", "<start>", "<end>", "<unk>"};
}

Vocabulary::Vocabulary() {
    for (const char* s : kSpecials) push(s);
}

void Vocabulary::push(const std::string& token) {
    index_.emplace(token, tokens_.size());
    tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const TokenizedReport> corpus, std::size_t min_freq) {
    std::map<std::string, std::size_t> freq;
    for (const auto& r : corpus)
        for (const auto& t : r.flat_tokens) ++freq[t];
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : freq)
        if (n >= min_freq) kept.emplace_back(tok, n);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    v.min_freq_ = min_freq;
    for (const auto& [tok, _] : kept)
        if (!v.contains(tok)) v.push(tok);
    return v;
}

Vocabulary Vocabulary::read(std::istream& is) {
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw ParseError("vocabulary line " + std::to_string(line_no) + ": missing tab");
        const std::string tok = line.substr(0, tab);
        std::size_t idx = 0;
        try {
            idx = std::stoul(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw ParseError("vocabulary line " + std::to_string(line_no) + ": bad index");
        }
        if (idx != v.tokens_.size())
            throw ParseError("vocabulary line " + std::to_string(line_no) + ": indices must be dense and ordered");
        v.push(tok);
    }
    for (std::size_t i = 0; i < std::size(kSpecials); ++i)
        if (i >= v.tokens_.size() || v.tokens_[i] != kSpecials[i])
            throw ParseError("vocabulary: special tokens must occupy indices 0-3");
    return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open vocabulary " + path);
    return read(is);
}

void Vocabulary::write(std::ostream& os) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << i << '\n';
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write vocabulary " + path);
    write(os);
}

std::size_t Vocabulary::index(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t index) const {
    if (index >= tokens_.size())
        throw std::out_of_range("vocabulary index " + std::to_string(index) + " out of range (size " +
                                std::to_string(tokens_.size()) + ")");
    return tokens_[index];
}

std::vector<std::size_t> Vocabulary::encode(std::span<const std::string> tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(index(t));
    return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const std::size_t> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (auto i : ids) out.push_back(token(i));
    return out;
}

// ---- labels & splits ----------------------------------------------------------------

LabelVector extract_labels(const Report& report, std::span<const std::string> primary_nodes) {
    LabelVector out;
    out.values.assign(primary_nodes.size(), 0.0);
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t k = 0; k < primary_nodes.size(); ++k) pos.emplace(to_lower(primary_nodes[k]), k);
    for (const auto& l : report.labels) {
        auto it = pos.find(to_lower(l));
        if (it == pos.end())
            ++out.unmatched;
        else
            out.values[it->second] = 1.0;
    }
    return out;
}

Splits<std::size_t> split_indices(std::size_t n, SplitRatios ratios, std::uint64_t seed) {
    const double total = ratios.train + ratios.val + ratios.test;
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.train + 1e-9));
    const auto n_val = std::min(n - n_train,
                                static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.val + 1e-9)));
    Splits<std::size_t> out;
    out.train.assign(order.begin(), order.begin() + n_train);
    out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    out.test.assign(order.begin() + n_train + n_val, order.end());
    return out;
}

CorpusStats corpus_stats(std::span<const TokenizedReport> corpus) {
    CorpusStats s;
    s.reports = corpus.size();
    for (const auto& r : corpus) {
        s.sentences += r.sentences.size();
        s.tokens += r.flat_tokens.size();
    }
    return s;
}

}  // namespace kgrg
