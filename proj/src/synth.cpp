#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <set>
#include <sstream>

#include "kgrg/rng.hpp"
#include "kgrg/training.hpp"

namespace kgrg {

namespace fs = std::filesystem;

namespace {

struct Template {
    const char* sentence;
    std::vector<std::pair<const char*, Category>> concepts;
};

using C = Category;

// One sentence per primary finding, in default_primary_findings() order.
const std::vector<Template>& finding_templates() {
    static const std::vector<Template> t{
        {"the lungs are clear and the cardiomediastinal silhouette is unremarkable.",
         {{"lung", C::AnatomicalEntity}, {"cardiomediastinal silhouette", C::AnatomicalEntity}}},
        {"patchy airspace disease is seen in the right lower lobe.",
         {{"patchy", C::ImagingObservation}, {"right lower lobe", C::AnatomicalEntity}}},
        {"there is subsegmental atelectasis at the left lung base.",
         {{"subsegmental", C::ImagingObservation}, {"left lung base", C::AnatomicalEntity}}},
        {"a calcified granuloma is noted in the right upper lobe.",
         {{"calcified granuloma", C::ClinicalFinding}, {"right upper lobe", C::AnatomicalEntity}}},
        {"the heart is enlarged with prominent pulmonary vasculature.",
         {{"heart", C::AnatomicalEntity}, {"pulmonary vasculature", C::AnatomicalEntity}}},
        {"linear scarring is present in the lingula.",
         {{"linear scarring", C::ClinicalFinding}, {"lingula", C::AnatomicalEntity}}},
        {"interstitial edema with cephalization of the vessels.",
         {{"interstitial", C::ImagingObservation}, {"cephalization", C::ImagingObservation},
          {"vessel", C::AnatomicalEntity}}},
        {"a small pleural effusion blunts the costophrenic angle.",
         {{"pleural", C::AnatomicalEntity}, {"costophrenic angle", C::AnatomicalEntity}}},
        {"hyperexpanded lungs with a flattened diaphragm.",
         {{"hyperexpanded", C::ImagingObservation}, {"flattened diaphragm", C::ImagingObservation}}},
        {"a healed fracture is seen in the posterior rib.",
         {{"healed", C::ImagingObservation}, {"posterior rib", C::AnatomicalEntity}}},
        {"a hiatal hernia projects behind the cardiac silhouette.",
         {{"hiatal", C::ClinicalFinding}, {"cardiac silhouette", C::AnatomicalEntity}}},
        {"low lung volumes with bronchovascular crowding.",
         {{"low lung volume", C::ImagingObservation}, {"bronchovascular crowding", C::ImagingObservation}}},
        {"a nodular density is seen in the left upper lobe.",
         {{"nodular density", C::ImagingObservation}, {"left upper lobe", C::AnatomicalEntity}}},
        {"a pacemaker overlies the left chest wall.",
         {{"pacemaker", C::ClinicalFinding}, {"left chest wall", C::AnatomicalEntity}}},
        {"focal opacity in the right middle lobe.",
         {{"focal", C::ImagingObservation}, {"right middle lobe", C::AnatomicalEntity}}},
        {"consolidation in the left lower lobe concerning for infection.",
         {{"consolidation", C::ImagingObservation}, {"left lower lobe", C::AnatomicalEntity},
          {"infection", C::ClinicalFinding}}},
        {"small apical pneumothorax with a visible pleural line.",
         {{"apical", C::AnatomicalEntity}, {"pleural line", C::ImagingObservation}}},
        {"mild dextroscoliosis of the thoracic spine.",
         {{"dextroscoliosis", C::ClinicalFinding}, {"thoracic spine", C::AnatomicalEntity}}},
        {"biapical pleural thickening along the lateral chest.",
         {{"biapical", C::AnatomicalEntity}, {"lateral chest", C::AnatomicalEntity}}},
        {"degenerative changes of the acromioclavicular joints.",
         {{"degenerative change", C::ClinicalFinding}, {"acromioclavicular joint", C::AnatomicalEntity}}},
    };
    return t;
}

const std::vector<Template>& closing_templates() {
    static const std::vector<Template> t{
        {"no acute cardiopulmonary process.", {{"acute cardiopulmonary process", C::ClinicalFinding}}},
        {"osseous structures are intact.", {{"osseous structure", C::AnatomicalEntity}}},
        {"mediastinal contours are stable.", {{"mediastinal contour", C::AnatomicalEntity}}},
        {"the trachea is midline.", {{"trachea", C::AnatomicalEntity}}},
    };
    return t;
}

// Lexicon entries that never occur in the synthetic text.
const std::vector<std::pair<const char*, Category>>& distractors() {
    static const std::vector<std::pair<const char*, Category>> d{
        {"aortic knob", C::AnatomicalEntity},
        {"azygos fissure", C::AnatomicalEntity},
        {"kerley b line", C::ImagingObservation},
    };
    return d;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Image render(std::span<const std::size_t> findings, std::size_t k_total, std::size_t side, bool lateral, Rng& rng) {
    Image img{side, side, std::vector<double>(side * side)};
    const std::size_t cols = 5, rows = (k_total + cols - 1) / cols;
    const double sd = static_cast<double>(side) / 20.0;
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            double v = 0.1 + rng.normal(0.0, 0.02);
            for (auto k : findings) {
                // The lateral view uses a different cell for each finding.
                const std::size_t cell = lateral ? (k * 7 + 3) % k_total : k;
                const double cx = (static_cast<double>(cell % cols) + 0.5) * static_cast<double>(side) / cols;
                const double cy = (static_cast<double>(cell / cols) + 0.5) * static_cast<double>(side) / rows;
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                v += 0.8 * std::exp(-(dx * dx + dy * dy) / (2.0 * sd * sd));
            }
            img.pixels[y * side + x] = quantize(v);
        }
    return img;
}

}  // namespace

SynthCorpus synth_corpus(const KnowledgeGraph& graph, const SynthOptions& opt) {
    graph.validate();
    const auto primaries = graph.primary_names();
    const std::size_t k = primaries.size();
    const auto& templates = finding_templates();
    const auto& defaults = default_primary_findings();
    // Map each primary to its template by name; unknown names get a generic sentence.
    std::vector<std::string> sentences(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto it = std::find_if(defaults.begin(), defaults.end(),
                                     [&](const std::string& d) { return to_lower(d) == to_lower(primaries[i]); });
        sentences[i] = it != defaults.end() ? templates[static_cast<std::size_t>(it - defaults.begin())].sentence
                                            : "there is evidence of " + to_lower(primaries[i]) + ".";
    }

    SynthCorpus out;
    Rng rng(opt.seed);
    for (std::size_t p = 0; p < opt.n_pairs; ++p) {
        std::set<std::size_t> chosen{p % k};
        const std::size_t extra = rng.below(3);  // 0..2 more findings
        while (chosen.size() < std::min(k, 1 + extra)) chosen.insert(static_cast<std::size_t>(rng.below(k)));
        const std::vector<std::size_t> fs_idx(chosen.begin(), chosen.end());

        Report r;
        char id[32];
        std::snprintf(id, sizeof id, "synth-%04zu", p);
        r.id = id;
        for (auto f : fs_idx) {
            if (!r.findings.empty()) r.findings += ' ';
            r.findings += sentences[f];
            r.labels.push_back(primaries[f]);
        }
        std::size_t key = 0;
        for (auto f : fs_idx) key += f;
        r.impression = closing_templates()[key % closing_templates().size()].sentence;
        r.frontal_ref = "images/" + r.id + "_frontal.pgm";
        r.lateral_ref = "images/" + r.id + "_lateral.pgm";
        auto frontal = render(fs_idx, k, opt.image_side, false, rng);
        auto lateral = render(fs_idx, k, opt.image_side, true, rng);
        out.reports.push_back(std::move(r));
        out.images.emplace_back(std::move(frontal), std::move(lateral));
    }

    std::ostringstream lex;
    for (const auto& t : templates)
        for (const auto& [name, cat] : t.concepts) lex << name << '\t' << category_name(cat) << '\n';
    for (const auto& t : closing_templates())
        for (const auto& [name, cat] : t.concepts) lex << name << '\t' << category_name(cat) << '\n';
    for (const auto& [name, cat] : distractors()) lex << name << '\t' << category_name(cat) << '\n';
    std::istringstream lex_in(lex.str());
    out.lexicon = read_lexicon(lex_in);
    return out;
}

void save_synth_corpus(const SynthCorpus& corpus, const KnowledgeGraph& graph, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root / "images");
    {
        std::ofstream f(root / "reports.jsonl", std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + (root / "reports.jsonl").string());
        write_reports(f, corpus.reports);
    }
    for (std::size_t i = 0; i < corpus.reports.size(); ++i) {
        save_pgm((root / corpus.reports[i].frontal_ref).string(), corpus.images[i].first);
        save_pgm((root / corpus.reports[i].lateral_ref).string(), corpus.images[i].second);
    }
    {
        std::ofstream f(root / "lexicon.tsv", std::ios::binary);
        for (const auto& c : corpus.lexicon) f << c.text() << '\t' << category_name(c.category) << '\n';
    }
    graph.save((root / "graph20.txt").string());
}

}  // namespace kgrg
