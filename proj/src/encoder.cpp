#include "kgrg/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kgrg/corpus.hpp"
#include "kgrg/rng.hpp"

namespace kgrg {

// ---- feature maps ------------------------------------------------------------

Tensor FeatureMap::to_tensor() const {
    return Tensor::from({channels, positions()}, std::vector<double>(values.begin(), values.end()));
}

FeatureMap FeatureMap::from_tensor(const Tensor& t, std::uint32_t height, std::uint32_t width) {
    if (t.rank() != 2 || t.dim(1) != std::size_t{height} * width)
        throw ShapeError("FeatureMap::from_tensor: " + shape_str(t.shape()) + " does not hold " +
                         std::to_string(height) + "x" + std::to_string(width) + " positions");
    FeatureMap fm;
    fm.channels = static_cast<std::uint32_t>(t.dim(0));
    fm.height = height;
    fm.width = width;
    fm.values.assign(t.values().begin(), t.values().end());
    return fm;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("feature map: truncated");
    return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
}

void check_dims(const FeatureMap& fm) {
    if (fm.channels == 0 || fm.height == 0 || fm.width == 0)
        throw ParseError("feature map: C, H and W must be positive");
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void write_feature_map(std::ostream& os, const FeatureMap& fm) {
    os.write("FMAP", 4);
    put_u32(os, 1);
    put_u32(os, fm.channels);
    put_u32(os, fm.height);
    put_u32(os, fm.width);
    for (float v : fm.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(os, bits);
    }
}

FeatureMap read_feature_map(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "FMAP", 4) != 0) throw ParseError("feature map: bad magic");
    if (const auto version = get_u32(is); version != 1)
        throw ParseError("feature map: unsupported version " + std::to_string(version));
    FeatureMap fm;
    fm.channels = get_u32(is);
    fm.height = get_u32(is);
    fm.width = get_u32(is);
    check_dims(fm);
    fm.values.resize(std::size_t{fm.channels} * fm.height * fm.width);
    for (auto& v : fm.values) {
        const std::uint32_t bits = get_u32(is);
        std::memcpy(&v, &bits, 4);
    }
    return fm;
}

void write_feature_map_text(std::ostream& os, const FeatureMap& fm) {
    os << fm.channels << ' ' << fm.height << ' ' << fm.width << '\n';
    char buf[32];
    std::size_t i = 0;
    for (std::uint32_t c = 0; c < fm.channels; ++c)
        for (std::uint32_t y = 0; y < fm.height; ++y) {
            for (std::uint32_t x = 0; x < fm.width; ++x, ++i) {
                std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(fm.values[i]));
                os << (x ? " " : "") << buf;
            }
            os << '\n';
        }
}

FeatureMap read_feature_map_text(std::istream& is) {
    FeatureMap fm;
    if (!(is >> fm.channels >> fm.height >> fm.width)) throw ParseError("feature map text: bad header");
    check_dims(fm);
    fm.values.resize(std::size_t{fm.channels} * fm.height * fm.width);
    std::string tok;
    for (auto& v : fm.values) {
        if (!(is >> tok)) throw ParseError("feature map text: expected " + std::to_string(fm.values.size()) + " values");
        char* end = nullptr;
        v = std::strtof(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size()) throw ParseError("feature map text: bad value '" + tok + "'");
    }
    if (is >> tok) throw ParseError("feature map text: trailing data");
    return fm;
}

FeatureMap load_feature_map(const std::string& path) {
    const bool text = ends_with(path, ".txt");
    std::ifstream is(path, text ? std::ios::in : std::ios::binary);
    if (!is) throw ParseError("cannot open feature map " + path);
    return text ? read_feature_map_text(is) : read_feature_map(is);
}

void save_feature_map(const std::string& path, const FeatureMap& fm) {
    const bool text = ends_with(path, ".txt");
    std::ofstream os(path, text ? std::ios::out : std::ios::binary);
    if (!os) throw std::runtime_error("cannot write feature map " + path);
    if (text)
        write_feature_map_text(os, fm);
    else
        write_feature_map(os, fm);
}

// ---- images ------------------------------------------------------------------------

Image load_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open image " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw ParseError("image " + path + ": only binary PGM (P5) is supported");
    auto next_int = [&]() {
        is >> std::ws;
        while (is.peek() == '#') {
            std::string comment;
            std::getline(is, comment);
            is >> std::ws;
        }
        long v = -1;
        if (!(is >> v) || v <= 0) throw ParseError("image " + path + ": bad header");
        return static_cast<std::size_t>(v);
    };
    Image img;
    img.width = next_int();
    img.height = next_int();
    const std::size_t maxval = next_int();
    if (maxval > 255) throw ParseError("image " + path + ": 16-bit PGM not supported");
    is.get();
    std::vector<unsigned char> raw(img.width * img.height);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw ParseError("image " + path + ": truncated pixel data");
    img.pixels.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / static_cast<double>(maxval);
    return img;
}

void save_pgm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write image " + path);
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw std::invalid_argument("noise sigma must be nonnegative");
    if (sigma == 0) return img;
    Image out = img;
    Rng rng(seed);
    for (auto& p : out.pixels) p += rng.normal(0.0, sigma);
    return out;
}

Image fit_image(const Image& img, std::size_t side) {
    if (img.height == side && img.width == side) return img;
    Image out;
    out.height = out.width = side;
    out.pixels.assign(side * side, 0.0);
    auto offset = [side](std::size_t n) {
        return n > side ? std::ptrdiff_t(n - side) / 2 : -std::ptrdiff_t(side - n) / 2;
    };
    const std::ptrdiff_t oy = offset(img.height), ox = offset(img.width);
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            const std::ptrdiff_t sy = std::ptrdiff_t(y) + oy, sx = std::ptrdiff_t(x) + ox;
            if (sy >= 0 && sx >= 0 && sy < std::ptrdiff_t(img.height) && sx < std::ptrdiff_t(img.width))
                out.pixels[y * side + x] = img.pixels[std::size_t(sy) * img.width + std::size_t(sx)];
        }
    return out;
}

// ---- tiny CNN -------------------------------------------------------------------------

TinyCnn TinyCnn::create(ParamStore& store, const std::string& prefix, Rng& rng) {
    TinyCnn cnn;
    for (std::size_t s = 0; s < kStages; ++s) {
        const std::size_t cin = kChannels[s], cout = kChannels[s + 1];
        const double sd = std::sqrt(2.0 / static_cast<double>(cin * 9));
        std::vector<double> w(cout * cin * 9);
        for (auto& v : w) v = rng.normal(0.0, sd);
        const std::string p = prefix + ".stage" + std::to_string(s);
        cnn.stages[s].w = store.add(p + ".conv.weight", Tensor::from({cout, cin, 3, 3}, std::move(w)));
        cnn.stages[s].b = store.add(p + ".conv.bias", Tensor::zeros({cout}));
        cnn.stages[s].bn = store.add_batch_norm(p + ".bn", cout);
    }
    return cnn;
}

std::size_t TinyCnn::out_side(std::size_t side) {
    for (std::size_t s = 0; s < kStages; ++s) side = (side + 2 - 3) / 2 + 1;
    return side;
}

Tensor TinyCnn::forward(const Tensor& images, Mode mode) {
    if (images.rank() != 4 || images.dim(0) != 1)
        throw ShapeError("TinyCnn: expected [1, B, H, W], got " + shape_str(images.shape()));
    if (images.dim(2) < kMinSide || images.dim(3) < kMinSide)
        throw ShapeError("TinyCnn: image side must be at least " + std::to_string(kMinSide));
    Tensor x = images;
    for (auto& st : stages) x = relu(batch_norm(conv2d(x, st.w, st.b, 2, 1), st.bn, mode));
    return x;
}

FeatureMap TinyCnn::forward(const Image& image, Mode mode) {
    const Tensor out = forward(stack_images({&image}), mode);
    const auto side_h = static_cast<std::uint32_t>(out.dim(2)), side_w = static_cast<std::uint32_t>(out.dim(3));
    return FeatureMap::from_tensor(reshape(out, {out.dim(0), out.dim(2) * out.dim(3)}), side_h, side_w);
}

Tensor stack_images(const std::vector<const Image*>& images) {
    if (images.empty()) throw ShapeError("stack_images: no images");
    const std::size_t h = images[0]->height, w = images[0]->width;
    std::vector<double> v;
    v.reserve(images.size() * h * w);
    for (const Image* img : images) {
        if (img->height != h || img->width != w) throw ShapeError("stack_images: images differ in size");
        v.insert(v.end(), img->pixels.begin(), img->pixels.end());
    }
    return Tensor::from({1, images.size(), h, w}, std::move(v));
}

// ---- node initialisation ------------------------------------------------------------------

Tensor global_pool(const Tensor& frontal, const Tensor& lateral) {
    if (frontal.rank() != 2 || lateral.rank() != 2 || frontal.dim(0) != lateral.dim(0))
        throw ShapeError("global_pool: channel mismatch " + shape_str(frontal.shape()) + " vs " +
                         shape_str(lateral.shape()));
    const std::size_t c = frontal.dim(0);
    return scale(add(reshape(mean(frontal, {1}), {c, 1}), reshape(mean(lateral, {1}), {c, 1})), 0.5);
}

Tensor spatial_attention(const Tensor& features, const Linear& conv) {
    return softmax(apply(conv, features), 1);
}

NodeInitParams NodeInitParams::create(ParamStore& store, const std::string& prefix, std::size_t findings,
                                      std::size_t channels, Rng& rng) {
    NodeInitParams p;
    p.attention_frontal = add_linear(store, prefix + ".attention_frontal", findings, channels, rng);
    p.attention_lateral = add_linear(store, prefix + ".attention_lateral", findings, channels, rng);
    return p;
}

Tensor init_nodes(const Tensor& frontal, const Tensor& lateral, const NodeInitParams& params) {
    if (frontal.rank() != 2 || lateral.rank() != 2 || frontal.dim(0) != lateral.dim(0))
        throw ShapeError("init_nodes: view features disagree " + shape_str(frontal.shape()) + " vs " +
                         shape_str(lateral.shape()));
    const std::size_t c = frontal.dim(0);
    const std::size_t k = params.attention_frontal.w.dim(0);
    if (params.attention_lateral.w.dim(0) != k || params.attention_frontal.w.dim(1) != c)
        throw ShapeError("init_nodes: attention parameters do not match " + std::to_string(c) + " channels");

    const Tensor pf = reshape(mean(frontal, {1}), {c, 1});
    const Tensor pl = reshape(mean(lateral, {1}), {c, 1});
    const Tensor g = scale(add(pf, pl), 0.5);

    const Tensor af = matmul(frontal, transpose(spatial_attention(frontal, params.attention_frontal)));  // [C, K]
    const Tensor al = matmul(lateral, transpose(spatial_attention(lateral, params.attention_lateral)));
    const Tensor g_rep = matmul(g, Tensor::full({1, k}, 1.0));

    const Tensor global_col = concat({g, pf, pl}, 0);
    const Tensor finding_cols = concat({g_rep, af, al}, 0);
    return concat({global_col, finding_cols}, 1);
}

}  // namespace kgrg
