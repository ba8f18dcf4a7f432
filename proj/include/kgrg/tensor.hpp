// Minimal dense reverse-mode autodiff over 64-bit floats.
//
// Layout convention used throughout the library: 2-D activations are
// [channels, positions], i.e. a column is one position / node / time step.
// A tensor is a shared handle onto a graph node; every op records its
// parents and a closure that pushes the output gradient back into them.
// The graph is rebuilt on every forward pass.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgrg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until needed
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    // Zero-filled when no gradient has been accumulated.
    std::vector<double> grad() const;
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    double item() const;
    double operator[](std::size_t i) const { return node_->value[i]; }

    void zero_grad();
    // New leaf sharing no history; values copied.
    Tensor detach() const;

    // Reverse-mode sweep from a scalar. Gradients accumulate into leaves.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// ---- primitive algebra -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, Shape shape);
// Mean over the listed axes; those axes are removed from the result.
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor sum(const Tensor& x);

// out[o, p] = b[o] + sum_i w[o, i] * x[i, p]. Bias may be undefined.
Tensor conv_k1(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [C_in, B, H, W]; w: [C_out, C_in, k, k]; b: [C_out] -> [C_out, B, H', W'].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);

// H: [d, B*N] holding B graphs of N nodes side by side; returns H * blockdiag(S, ..., S).
Tensor propagate(const Tensor& h, const Tensor& s);

// table: [V, E]; returns [E, T] with column t = table row ids[t].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

enum class Mode { Train, Eval };

struct BatchNorm {
    Tensor gamma, beta;                 // trainable, [C]
    Tensor running_mean, running_var;   // buffers, [C]
    double eps = 1e-5;
    double momentum = 0.1;

    static BatchNorm make(std::size_t channels);
};

// Per-channel normalisation of x ([C, ...]) over all trailing positions.
Tensor batch_norm(const Tensor& x, BatchNorm& bn, Mode mode);

struct LstmParams {
    Tensor w;  // [4H, in + H], gate order i, f, g, o
    Tensor b;  // [4H]
    std::size_t hidden = 0;
};

struct LstmState {
    Tensor h, c;  // [H, B]
};

LstmState lstm_cell(const Tensor& x, const LstmState& state, const LstmParams& p);

// ---- losses ------------------------------------------------------------

// logits: [V, T]. Sum over unmasked t of -log softmax(logits[:, t])[target_t].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::span<const std::uint8_t> mask = {});

// logits, labels: [K, B] (or [K]); weights per row k. Sums over every entry of
//   -(w_pos[k] y log s(z) + w_neg[k] (1 - y) log(1 - s(z))).
Tensor weighted_bce(const Tensor& logits, std::span<const double> labels,
                    std::span<const double> w_pos, std::span<const double> w_neg);

// ---- parameters, optimiser, checkpoints ---------------------------------

class ParamStore {
public:
    // Trainable leaf with gradient slot.
    Tensor& add(const std::string& name, Tensor t);
    // Non-trainable buffer (batch-norm running statistics).
    Tensor& add_buffer(const std::string& name, Tensor t);
    // Registers <prefix>.{gamma,beta} and buffers <prefix>.{running_mean,running_var}.
    BatchNorm add_batch_norm(const std::string& prefix, std::size_t channels);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool trainable(const std::string& name) const;
    std::vector<std::string> names() const;

    void zero_grad();
    std::size_t total_size() const;

    // Copy values (not handles) from another store with the same names and shapes.
    void load_values(const ParamStore& other);

    // 64-bit FNV-1a over names and value bits of every entry whose name starts
    // with one of the prefixes.
    std::uint64_t hash(const std::vector<std::string>& prefixes) const;

private:
    struct Entry {
        Tensor tensor;
        bool trainable;
    };
    std::map<std::string, Entry> entries_;
};

struct AdamConfig {
    double lr = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // Updates every trainable entry whose name starts with one of the prefixes
    // (all trainable entries when the list is empty).
    void step(ParamStore& store, const std::vector<std::string>& prefixes = {});
    std::size_t steps() const { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, Moments> state_;
};

// Binary checkpoint: "CKPT1", then per entry (sorted by name)
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 LE values.
void write_checkpoint(std::ostream& os, const ParamStore& store);
void save_checkpoint(const std::string& path, const ParamStore& store);
// Reads raw blocks (name -> tensor).
std::map<std::string, Tensor> read_checkpoint(std::istream& is);
std::map<std::string, Tensor> load_checkpoint_blocks(const std::string& path);
// Fills an already-constructed store; every entry must be present with matching shape.
void load_checkpoint(const std::string& path, ParamStore& store);
void assign_checkpoint(const std::map<std::string, Tensor>& blocks, ParamStore& store);

// ---- gradient checking ---------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "<param>[index]"
};

// Compares analytic gradients of the scalar returned by `f` against central
// differences for the given leaves. `max_per_param` limits the entries probed
// per leaf (0 = all); `stride_seed` picks which entries when limited.
// rel = |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                           double step = 1e-5, std::size_t max_per_param = 0,
                           std::uint64_t stride_seed = 0, double floor = 1e-6);

}  // namespace kgrg

namespace kgrg {

class Rng;

// Affine map applied per column: out = w x + b.
struct Linear {
    Tensor w;  // [out, in]
    Tensor b;  // [out], may be undefined
};

// Registers <prefix>.weight / <prefix>.bias initialised U(-1/sqrt(in), 1/sqrt(in)).
Linear add_linear(ParamStore& store, const std::string& prefix, std::size_t out, std::size_t in, Rng& rng,
                  bool bias = true);
inline Tensor apply(const Linear& l, const Tensor& x) { return conv_k1(x, l.w, l.b); }

LstmParams add_lstm(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);

}  // namespace kgrg
