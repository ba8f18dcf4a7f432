// Visual features per view and graph node initialisation.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kgrg/tensor.hpp"

namespace kgrg {

struct FeatureMap {
    std::uint32_t channels = 0, height = 0, width = 0;
    std::vector<float> values;  // channel-major, row-major within a channel

    std::size_t positions() const { return std::size_t{height} * width; }
    // [C, H*W]
    Tensor to_tensor() const;
    static FeatureMap from_tensor(const Tensor& t, std::uint32_t height, std::uint32_t width);
};

// Binary: "FMAP", u32 version = 1, u32 C, H, W, then C*H*W f32, all little-endian.
void write_feature_map(std::ostream& os, const FeatureMap& fm);
FeatureMap read_feature_map(std::istream& is);
// Text: "C H W" header line, then whitespace-separated floats.
void write_feature_map_text(std::ostream& os, const FeatureMap& fm);
FeatureMap read_feature_map_text(std::istream& is);
// Dispatches on extension: ".fmap" binary, ".txt" text.
FeatureMap load_feature_map(const std::string& path);
void save_feature_map(const std::string& path, const FeatureMap& fm);

struct Image {
    std::size_t height = 0, width = 0;
    std::vector<double> pixels;  // row-major, nominally [0, 1]
};

// 8-bit binary PGM (P5).
Image load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Image& img);

// i.i.d. N(0, sigma^2) per pixel; sigma == 0 returns the input unchanged.
Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed);

// Centre crop / zero pad to side x side.
Image fit_image(const Image& img, std::size_t side);

// Three stages of {3x3 conv stride 2 pad 1, batch norm, ReLU}, 1 -> 8 -> 16 -> 32 channels.
struct TinyCnn {
    static constexpr std::size_t kStages = 3;
    static constexpr std::size_t kChannels[kStages + 1] = {1, 8, 16, 32};
    static constexpr std::size_t kMinSide = 16;

    struct Stage {
        Tensor w, b;
        BatchNorm bn;
    };
    Stage stages[kStages];

    static TinyCnn create(ParamStore& store, const std::string& prefix, Rng& rng);
    std::size_t out_channels() const { return kChannels[kStages]; }
    static std::size_t out_side(std::size_t side);

    // images: [1, B, H, W] -> [32, B, H/8, W/8]
    Tensor forward(const Tensor& images, Mode mode);
    FeatureMap forward(const Image& image, Mode mode);
};

// Stacks images into a [1, B, H, W] constant tensor; all must share a size.
Tensor stack_images(const std::vector<const Image*>& images);

// Spatial means of each view averaged: [C, 1].
Tensor global_pool(const Tensor& frontal, const Tensor& lateral);

// Kernel-size-1 conv to one channel per finding node, softmax over positions: [K, P].
Tensor spatial_attention(const Tensor& features, const Linear& conv);

struct NodeInitParams {
    Linear attention_frontal;  // [K, C]
    Linear attention_lateral;

    static NodeInitParams create(ParamStore& store, const std::string& prefix, std::size_t findings,
                                 std::size_t channels, Rng& rng);
};

// frontal, lateral: [C, P]. Returns H0 as [3C, 1 + K]; column 0 is the global
// node concat(g, p_f, p_l), column k is concat(g, a_f^k, a_l^k).
Tensor init_nodes(const Tensor& frontal, const Tensor& lateral, const NodeInitParams& params);

}  // namespace kgrg
