#include "kgrg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <thread>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "kgrg/corpus.hpp"
#include "kgrg/rng.hpp"

namespace kgrg {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
    NgramCounts c;
    if (t.size() < n) return c;
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
    return c;
}

void check_aligned(std::span<const Tokens> hyps, std::span<const Tokens> refs, const char* what) {
    if (hyps.empty()) throw MetricError(std::string(what) + ": empty corpus");
    if (hyps.size() != refs.size())
        throw MetricError(std::string(what) + ": " + std::to_string(hyps.size()) + " hypotheses vs " +
                          std::to_string(refs.size()) + " references");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::array<double, 4> bleu_1to4(std::span<const Tokens> hyps, std::span<const Tokens> refs) {
    check_aligned(hyps, refs, "bleu");
    std::array<double, 4> matched{}, total{};
    double c = 0.0, r = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        c += static_cast<double>(hyps[i].size());
        r += static_cast<double>(refs[i].size());
        for (std::size_t k = 1; k <= 4; ++k) {
            const auto hc = ngrams(hyps[i], k);
            const auto rc = ngrams(refs[i], k);
            for (const auto& [g, cnt] : hc) {
                const auto it = rc.find(g);
                matched[k - 1] += static_cast<double>(std::min(cnt, it == rc.end() ? std::size_t{0} : it->second));
                total[k - 1] += static_cast<double>(cnt);
            }
        }
    }
    std::array<double, 4> out{};
    if (c == 0.0) return out;
    const double bp = std::exp(std::min(0.0, 1.0 - r / c));
    double log_sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
        if (total[k] == 0.0 || matched[k] == 0.0) break;
        log_sum += std::log(matched[k] / total[k]);
        out[k] = bp * std::exp(log_sum / static_cast<double>(k + 1));
    }
    return out;
}

double bleu(std::span<const Tokens> hyps, std::span<const Tokens> refs, std::size_t n) {
    if (n < 1 || n > 4) throw MetricError("bleu: order must be 1..4");
    return bleu_1to4(hyps, refs)[n - 1];
}

double sentence_bleu(const Tokens& hyp, const Tokens& ref, std::size_t n) {
    return bleu(std::span<const Tokens>(&hyp, 1), std::span<const Tokens>(&ref, 1), n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l_pair(const Tokens& hyp, const Tokens& ref, double beta) {
    if (hyp.empty() || ref.empty()) return 0.0;
    const auto l = static_cast<double>(lcs_length(hyp, ref));
    if (l == 0.0) return 0.0;
    const double p = l / static_cast<double>(hyp.size());
    const double r = l / static_cast<double>(ref.size());
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l(std::span<const Tokens> hyps, std::span<const Tokens> refs, double beta) {
    check_aligned(hyps, refs, "rouge_l");
    double total = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) total += rouge_l_pair(hyps[i], refs[i], beta);
    return total / static_cast<double>(hyps.size());
}

std::vector<double> cider_scores(std::span<const Tokens> hyps, std::span<const Tokens> refs, const CiderOptions& opt) {
    check_aligned(hyps, refs, "cider");
    if (refs.size() < 2) throw MetricError("cider: IDF needs at least two reference documents");
    const double m = static_cast<double>(refs.size());
    std::vector<double> scores(hyps.size(), 0.0);
    for (std::size_t n = 1; n <= opt.n_max; ++n) {
        std::vector<NgramCounts> hc(hyps.size()), rc(refs.size());
        std::map<std::vector<std::string>, std::size_t> df;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            rc[i] = ngrams(refs[i], n);
            for (const auto& kv : rc[i]) ++df[kv.first];
            hc[i] = ngrams(hyps[i], n);
        }
        auto idf = [&](const std::vector<std::string>& g) {
            const auto it = df.find(g);
            return std::log(m / static_cast<double>(std::max<std::size_t>(it == df.end() ? 0 : it->second, 1)));
        };
        for (std::size_t i = 0; i < hyps.size(); ++i) {
            std::map<std::vector<std::string>, double> vh, vr;
            for (const auto& [g, c] : hc[i]) vh[g] = static_cast<double>(c) * idf(g);
            for (const auto& [g, c] : rc[i]) vr[g] = static_cast<double>(c) * idf(g);
            double nh = 0.0, nr = 0.0, dot = 0.0;
            for (const auto& [g, v] : vh) nh += v * v;
            for (const auto& [g, v] : vr) nr += v * v;
            for (const auto& [g, v] : vh) {
                const auto it = vr.find(g);
                if (it == vr.end()) continue;
                dot += opt.cider_d ? std::min(v, it->second) * it->second : v * it->second;
            }
            double sim = 0.0;
            if (nh > 0.0 && nr > 0.0) sim = dot / std::sqrt(nh * nr);
            if (opt.cider_d) {
                const double delta = static_cast<double>(hyps[i].size()) - static_cast<double>(refs[i].size());
                sim *= std::exp(-(delta * delta) / (2.0 * opt.sigma * opt.sigma));
            }
            scores[i] += sim;
        }
    }
    for (auto& s : scores) s = s * 10.0 / static_cast<double>(opt.n_max);
    return scores;
}

double cider(std::span<const Tokens> hyps, std::span<const Tokens> refs, const CiderOptions& opt) {
    const auto s = cider_scores(hyps, refs, opt);
    double total = 0.0;
    for (double v : s) total += v;
    return total / static_cast<double>(s.size());
}

std::array<double, 7> EvalResult::headline() const { return {bleu[0], bleu[1], bleu[2], bleu[3], rouge_l, cider, mean}; }

const std::array<const char*, 7>& EvalResult::headline_names() {
    static const std::array<const char*, 7> names{"bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider", "mean"};
    return names;
}

std::vector<TextRecord> read_text_records(std::istream& is) {
    std::vector<TextRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("record line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<TextRecord> load_text_records(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open " + path);
    return read_text_records(f);
}

void write_text_records(std::ostream& os, std::span<const TextRecord> records) {
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["text"] = r.text;
        os << j.dump() << '\n';
    }
}

EvalResult evaluate(std::span<const TextRecord> hyps, std::span<const TextRecord> refs, const CiderOptions& opt) {
    std::unordered_map<std::string, const TextRecord*> by_id;
    for (const auto& h : hyps)
        if (!by_id.emplace(h.id, &h).second) throw MetricError("evaluate: duplicate hypothesis id " + h.id);
    if (hyps.size() != refs.size())
        throw MetricError("evaluate: " + std::to_string(hyps.size()) + " hypotheses vs " +
                          std::to_string(refs.size()) + " references");
    std::vector<Tokens> ht, rt;
    EvalResult r;
    for (const auto& ref : refs) {
        const auto it = by_id.find(ref.id);
        if (it == by_id.end()) throw MetricError("evaluate: no hypothesis for id " + ref.id);
        ht.push_back(tokenize(it->second->text));
        rt.push_back(tokenize(ref.text));
        r.per_report.push_back({ref.id, 0, 0, 0, 0, split_sentences(ref.text).size()});
    }
    r.bleu = bleu_1to4(ht, rt);
    r.rouge_l = rouge_l(ht, rt);
    const auto cs = cider_scores(ht, rt, opt);
    double total = 0.0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        auto& pr = r.per_report[i];
        const auto b = bleu_1to4(std::span<const Tokens>(&ht[i], 1), std::span<const Tokens>(&rt[i], 1));
        pr.bleu1 = b[0];
        pr.bleu4 = b[3];
        pr.rouge_l = rouge_l_pair(ht[i], rt[i]);
        pr.cider = cs[i];
        total += cs[i];
    }
    r.cider = total / static_cast<double>(cs.size());
    r.mean = (r.bleu[0] + r.bleu[1] + r.bleu[2] + r.bleu[3] + r.rouge_l + r.cider) / 6.0;
    return r;
}

BootstrapResult t_interval(const std::vector<std::vector<double>>& values, std::span<const std::string> names,
                           double conf) {
    const std::size_t b = values.size();
    if (b < 2) throw MetricError("bootstrap: need at least two replicates");
    if (!(conf > 0.0 && conf < 1.0)) throw MetricError("bootstrap: confidence level must be in (0, 1)");
    for (const auto& row : values)
        if (row.size() != names.size()) throw MetricError("bootstrap: replicate width differs from metric names");
    BootstrapResult r;
    r.replicates = b;
    r.conf = conf;
    const boost::math::students_t dist(static_cast<double>(b - 1));
    r.t_quantile = boost::math::quantile(dist, 0.5 + conf / 2.0);
    const double bd = static_cast<double>(b);
    for (std::size_t m = 0; m < names.size(); ++m) {
        double mean = 0.0;
        for (const auto& row : values) mean += row[m];
        mean /= bd;
        double ss = 0.0;
        for (const auto& row : values) ss += (row[m] - mean) * (row[m] - mean);
        MetricInterval mi;
        mi.name = names[m];
        mi.point = mean;
        mi.sd = std::sqrt(ss / (bd - 1.0));
        mi.half_width = r.t_quantile * mi.sd / std::sqrt(bd);
        mi.lower = mean - mi.half_width;
        mi.upper = mean + mi.half_width;
        r.metrics.push_back(mi);
    }
    return r;
}

std::vector<std::size_t> resample_indices(std::size_t n, std::uint64_t seed, std::size_t replicate) {
    Rng rng(derive_seed(seed, replicate));
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    return idx;
}

BootstrapResult bootstrap(const ReplicateFn& fn, std::span<const std::string> names, std::size_t n_train,
                          std::size_t replicates, double conf, std::uint64_t seed, std::size_t threads) {
    if (replicates < 2) throw MetricError("bootstrap: need at least two replicates");
    if (n_train == 0) throw MetricError("bootstrap: empty training set");
    std::vector<std::vector<std::size_t>> assignments(replicates);
    for (std::size_t b = 0; b < replicates; ++b) assignments[b] = resample_indices(n_train, seed, b);
    std::vector<std::vector<double>> values(replicates);
    threads = std::clamp<std::size_t>(threads, 1, replicates);
    if (threads == 1) {
        for (std::size_t b = 0; b < replicates; ++b) values[b] = fn(b, assignments[b]);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t b = w; b < replicates; b += threads) values[b] = fn(b, assignments[b]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    auto r = t_interval(values, names, conf);
    r.assignments = std::move(assignments);
    return r;
}

void write_bootstrap_csv(std::ostream& os, const BootstrapResult& r) {
    os << "metric,point,sd,half_width,lower,upper,replicates,conf\n";
    for (const auto& m : r.metrics)
        os << m.name << ',' << fmt(m.point) << ',' << fmt(m.sd) << ',' << fmt(m.half_width) << ',' << fmt(m.lower)
           << ',' << fmt(m.upper) << ',' << r.replicates << ',' << fmt(r.conf) << '\n';
}

std::vector<ComplexityBin> complexity_table(std::span<const double> bleu1, std::span<const std::size_t> ref_sentences,
                                            std::size_t bins) {
    if (bleu1.size() != ref_sentences.size()) throw MetricError("complexity_table: length mismatch");
    if (bins == 0) throw MetricError("complexity_table: zero bins");
    std::vector<ComplexityBin> out(bins);
    std::vector<double> sums(bins, 0.0);
    const double width = 1.0 / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        out[b].low = static_cast<double>(b) * width;
        out[b].high = static_cast<double>(b + 1) * width;
    }
    for (std::size_t i = 0; i < bleu1.size(); ++i) {
        const double s = std::clamp(bleu1[i], 0.0, 1.0);
        auto b = static_cast<std::size_t>(s * static_cast<double>(bins));
        b = std::min(b, bins - 1);
        ++out[b].count;
        sums[b] += static_cast<double>(ref_sentences[i]);
    }
    for (std::size_t b = 0; b < bins; ++b)
        if (out[b].count) out[b].mean_sentences = sums[b] / static_cast<double>(out[b].count);
    return out;
}

void write_complexity_csv(std::ostream& os, std::span<const ComplexityBin> bins) {
    os << "bin_low,bin_high,mean_sentences,count\n";
    for (const auto& b : bins) os << fmt(b.low) << ',' << fmt(b.high) << ',' << fmt(b.mean_sentences) << ',' << b.count << '\n';
}

void write_eval_csv(std::ostream& os, const EvalResult& r) {
    const auto names = EvalResult::headline_names();
    const auto vals = r.headline();
    for (std::size_t i = 0; i < names.size(); ++i) os << (i ? "," : "") << names[i];
    os << '\n';
    for (std::size_t i = 0; i < vals.size(); ++i) os << (i ? "," : "") << fmt(vals[i]);
    os << '\n';
}

void write_per_report_csv(std::ostream& os, const EvalResult& r) {
    os << "id,bleu1,bleu4,rougeL,cider,ref_sentences\n";
    for (const auto& p : r.per_report)
        os << p.id << ',' << fmt(p.bleu1) << ',' << fmt(p.bleu4) << ',' << fmt(p.rouge_l) << ',' << fmt(p.cider) << ','
           << p.ref_sentences << '\n';
}

}  // namespace kgrg
