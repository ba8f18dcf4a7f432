// Small synthetic corpus and model settings for end-to-end tests.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "kgrg/training.hpp"

namespace toy {

// Reduced dimensions that memorise the 20-pair corpus in well under a minute.
kgrg::TrainConfig config();

// Fresh directory under the system temp dir; removed on destruction.
struct TempDir {
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    std::string path;
    std::string file(const std::string& name) const { return path + "/" + name; }
};

struct Corpus {
    kgrg::KnowledgeGraph graph;
    kgrg::SynthCorpus synth;
    kgrg::Dataset data;
    std::string corpus_path;
};

// Writes synth_corpus output into dir and loads it back as a dataset.
Corpus make_corpus(const std::string& dir, std::size_t pairs = 20, std::uint64_t seed = 0);

}  // namespace toy
