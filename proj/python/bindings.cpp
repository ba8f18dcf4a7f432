#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kgrg/cli.hpp"
#include "kgrg/training.hpp"

namespace py = pybind11;
using namespace kgrg;

namespace {

py::dict eval_dict(const EvalResult& r) {
    py::dict d;
    const auto names = EvalResult::headline_names();
    const auto vals = r.headline();
    for (std::size_t i = 0; i < names.size(); ++i) d[names[i]] = vals[i];
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Knowledge-graph report generation core";

    py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("tokenize", &tokenize, py::arg("text"));
    m.def("split_sentences", &split_sentences, py::arg("text"));

    m.def(
        "bleu",
        [](const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, std::size_t n) {
            return bleu(hyps, refs, n);
        },
        py::arg("hyps"), py::arg("refs"), py::arg("n") = 4);
    m.def(
        "rouge_l",
        [](const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, double beta) {
            return rouge_l(hyps, refs, beta);
        },
        py::arg("hyps"), py::arg("refs"), py::arg("beta") = 1.2);
    m.def(
        "cider",
        [](const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, bool cider_d) {
            CiderOptions opt;
            opt.cider_d = cider_d;
            return cider(hyps, refs, opt);
        },
        py::arg("hyps"), py::arg("refs"), py::arg("cider_d") = false);
    m.def(
        "evaluate_texts",
        [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs, bool cider_d) {
            if (hyps.size() != refs.size()) throw MetricError("evaluate_texts: hyps and refs differ in length");
            std::vector<TextRecord> h, r;
            for (std::size_t i = 0; i < hyps.size(); ++i) {
                h.push_back({std::to_string(i), hyps[i]});
                r.push_back({std::to_string(i), refs[i]});
            }
            CiderOptions opt;
            opt.cider_d = cider_d;
            return eval_dict(evaluate(h, r, opt));
        },
        py::arg("hyps"), py::arg("refs"), py::arg("cider_d") = false,
        "Scores parallel lists of report texts; returns the headline metrics.");

    m.def(
        "auc",
        [](const std::vector<double>& scores, const std::vector<double>& labels) { return auc(scores, labels); },
        py::arg("scores"), py::arg("labels"));

    m.def(
        "normalize_adjacency",
        [](const std::vector<double>& a, std::size_t n) {
            const auto s = normalize_adjacency(std::span<const double>(a), n);
            return std::vector<double>(s.values().begin(), s.values().end());
        },
        py::arg("adjacency"), py::arg("n"), "Row-major D^-1/2 (A + I) D^-1/2.");

    m.def(
        "t_interval",
        [](const std::vector<std::vector<double>>& values, const std::vector<std::string>& names, double conf) {
            const auto r = t_interval(values, names, conf);
            py::list out;
            for (const auto& mi : r.metrics) {
                py::dict d;
                d["name"] = mi.name;
                d["point"] = mi.point;
                d["sd"] = mi.sd;
                d["half_width"] = mi.half_width;
                d["lower"] = mi.lower;
                d["upper"] = mi.upper;
                out.append(d);
            }
            return py::make_tuple(r.t_quantile, out);
        },
        py::arg("values"), py::arg("names"), py::arg("conf") = 0.95);

    py::class_<KnowledgeGraph>(m, "KnowledgeGraph")
        .def_static("load", &KnowledgeGraph::load, py::arg("path"))
        .def_static("default", &default_manual_graph)
        .def("save", &KnowledgeGraph::save, py::arg("path"))
        .def_property_readonly("size", &KnowledgeGraph::size)
        .def_property_readonly("finding_count", &KnowledgeGraph::finding_count)
        .def_property_readonly("primary_count", &KnowledgeGraph::primary_count)
        .def_property_readonly("auxiliary_count", &KnowledgeGraph::auxiliary_count)
        .def_property_readonly("edge_count", &KnowledgeGraph::edge_count)
        .def_property_readonly("names",
                               [](const KnowledgeGraph& g) {
                                   std::vector<std::string> out;
                                   for (const auto& n : g.nodes()) out.push_back(n.name);
                                   return out;
                               })
        .def("find", &KnowledgeGraph::find, py::arg("name"))
        .def("edge", &KnowledgeGraph::edge, py::arg("i"), py::arg("j"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<std::string> all{"kgrg"};
            all.insert(all.end(), args.begin(), args.end());
            std::vector<const char*> argv;
            for (const auto& a : all) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a kgrg command; returns (exit_code, stdout, stderr).");
}
