#include "toy.hpp"

#include <filesystem>
#include <unistd.h>

namespace toy {

kgrg::TrainConfig config() {
    kgrg::TrainConfig c;
    c.epochs = 40;
    c.batch_size = 8;
    c.lr = 0.003;
    c.weight_decay = 0.0;
    c.gcn_hidden = 32;
    c.gcn_layers = 3;
    c.embed_dim = 32;
    c.decoder_hidden = 64;
    c.att_dim = 32;
    c.decoder_epochs = 150;
    c.decoder_lr = 0.005;
    c.min_freq = 1;
    c.train_ratio = 1.0;
    c.val_ratio = 0.0;
    c.test_ratio = 0.0;
    return c;
}

TempDir::TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / ("kgrg-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    path = p.string();
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
}

Corpus make_corpus(const std::string& dir, std::size_t pairs, std::uint64_t seed) {
    Corpus c;
    c.graph = kgrg::default_manual_graph();
    kgrg::SynthOptions opt;
    opt.seed = seed;
    opt.n_pairs = pairs;
    c.synth = kgrg::synth_corpus(c.graph, opt);
    kgrg::save_synth_corpus(c.synth, c.graph, dir);
    c.corpus_path = dir + "/reports.jsonl";
    c.data = kgrg::load_dataset(c.corpus_path, c.graph, opt.image_side);
    return c;
}

}  // namespace toy
