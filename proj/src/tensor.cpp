#include "kgrg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "kgrg/rng.hpp"

namespace kgrg {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

using Parents = std::vector<std::shared_ptr<Node>>;

Tensor make_result(Shape shape, std::vector<double> value, Parents parents,
                   std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->is_leaf = false;
    n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [](const auto& p) { return p && p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return Tensor(std::move(n));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t r) {
    if (t.rank() != r)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
}

// c[m,n] += a[m,k] * b[k,n]
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,k] += a[m,n] * b[k,n]^T
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
           std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
            ci[p] += s;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

struct AxisSplit {
    std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r{1, s.at(axis), 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double stable_sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dfdx_from_y_x) {
    std::vector<double> out(x.numel());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
    return make_result(x.shape(), std::move(out), {x.node_ptr()}, [dfdx_from_y_x](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            p.grad[i] += self.grad[i] * dfdx_from_y_x(self.value[i], p.value[i]);
    });
}

}  // namespace

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

std::vector<double> Tensor::grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return std::vector<double>(node_->value.size(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

void Tensor::backward() const {
    if (numel() != 1)
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the tape.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !p->is_leaf && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---- algebra --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) shape_fail("matmul", a.shape(), b.shape());
    std::vector<double> out(m * n, 0.0);
    mm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {a.node_ptr(), b.node_ptr()}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            mm_nt(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            mm_tn(pa.value.data(), self.grad.data(), pb.grad.data(), m, k, n);
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    const std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    const auto v = a.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
    return make_result({c, r}, std::move(out), {a.node_ptr()}, [r, c](Node& self) {
        Node& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
    });
}

namespace {
template <typename Op, typename Da, typename Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Op op, Da da, Db db) {
    if (a.shape() != b.shape()) shape_fail(name, a.shape(), b.shape());
    std::vector<double> out(a.numel());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [da, db](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * da(pa.value[i], pb.value[i]);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] += self.grad[i] * db(pa.value[i], pb.value[i]);
        }
    });
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
    return unary(
        a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, [](double v) { return v > 0 ? v : 0.0; },
        [](double, double xv) { return xv > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, [](double v) { return stable_sigmoid(v); },
        [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
    const auto [outer, n, inner] = split_axis(x.shape(), axis);
    std::vector<double> out(x.numel());
    const auto v = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = -INFINITY;
            for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[base + i * inner]);
            double z = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(v[base + i * inner] - mx);
                out[base + i * inner] = e;
                z += e;
            }
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= z;
        }
    return make_result(x.shape(), std::move(out), {x.node_ptr()},
                       [outer = outer, n = n, inner = inner](Node& self) {
                           Node& p = *self.parents[0];
                           p.ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t in = 0; in < inner; ++in) {
                                   const std::size_t base = o * n * inner + in;
                                   double dot = 0.0;
                                   for (std::size_t i = 0; i < n; ++i)
                                       dot += self.grad[base + i * inner] * self.value[base + i * inner];
                                   for (std::size_t i = 0; i < n; ++i) {
                                       const std::size_t k = base + i * inner;
                                       p.grad[k] += self.value[k] * (self.grad[k] - dot);
                                   }
                               }
                       });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const Shape& s0 = xs[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& t : xs) {
        if (t.rank() != s0.size()) shape_fail("concat", s0, t.shape());
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != axis && t.dim(d) != s0[d]) shape_fail("concat", s0, t.shape());
        out_shape[axis] += t.dim(axis);
    }
    const auto [outer, total, inner] = split_axis(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> widths;
    Parents parents;
    std::size_t off = 0;
    for (const auto& t : xs) {
        const std::size_t w = t.dim(axis) * inner;
        const auto v = t.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(v.data() + o * w, w, out.data() + o * total * inner + off);
        off += w;
        widths.push_back(w);
        parents.push_back(t.node_ptr());
    }
    return make_result(std::move(out_shape), std::move(out), std::move(parents),
                       [widths, outer = outer, row = total * inner](Node& self) {
                           std::size_t off = 0;
                           for (std::size_t i = 0; i < widths.size(); ++i) {
                               Node& p = *self.parents[i];
                               const std::size_t w = widths[i];
                               if (p.requires_grad) {
                                   p.ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t j = 0; j < w; ++j)
                                           p.grad[o * w + j] += self.grad[o * row + off + j];
                               }
                               off += w;
                           }
                       });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    if (axis >= x.rank() || start + len > x.dim(axis))
        throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range on axis " + std::to_string(axis) + " of " +
                         shape_str(x.shape()));
    const auto [outer, n, inner] = split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    std::vector<double> out(shape_numel(out_shape));
    const auto v = x.values();
    const std::size_t w = len * inner;
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(v.data() + o * n * inner + start * inner, w, out.data() + o * w);
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [outer = outer, row = n * inner, off = start * inner, w](Node& self) {
                           Node& p = *self.parents[0];
                           p.ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t j = 0; j < w; ++j)
                                   p.grad[o * row + off + j] += self.grad[o * w + j];
                       });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
    return make_result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()),
                       {x.node_ptr()}, [](Node& self) {
                           Node& p = *self.parents[0];
                           p.ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
                       });
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes) {
    const Shape& s = x.shape();
    std::vector<bool> reduce(s.size(), false);
    for (auto a : axes) {
        if (a >= s.size()) throw ShapeError("mean: axis out of range for " + shape_str(s));
        reduce[a] = true;
    }
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (reduce[d])
            count *= s[d];
        else
            out_shape.push_back(s[d]);
    }
    // Map each input element to its output slot.
    std::vector<std::size_t> target(x.numel());
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t flat = 0; flat < x.numel(); ++flat) {
        std::size_t t = 0;
        for (std::size_t d = 0; d < s.size(); ++d)
            if (!reduce[d]) t = t * s[d] + idx[d];
        target[flat] = t;
        for (std::size_t d = s.size(); d-- > 0;) {
            if (++idx[d] < s[d]) break;
            idx[d] = 0;
        }
    }
    std::vector<double> out(shape_numel(out_shape), 0.0);
    const auto v = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) out[target[i]] += v[i];
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& o : out) o *= inv;
    return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                       [target = std::move(target), inv](Node& self) {
                           Node& p = *self.parents[0];
                           p.ensure_grad();
                           for (std::size_t i = 0; i < target.size(); ++i)
                               p.grad[i] += self.grad[target[i]] * inv;
                       });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return make_result({}, {s}, {x.node_ptr()}, [](Node& self) {
        Node& p = *self.parents[0];
        p.ensure_grad();
        for (auto& g : p.grad) g += self.grad[0];
    });
}

Tensor conv_k1(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank("conv_k1", x, 2);
    require_rank("conv_k1", w, 2);
    const std::size_t cin = x.dim(0), len = x.dim(1), cout = w.dim(0);
    if (w.dim(1) != cin) shape_fail("conv_k1", w.shape(), x.shape());
    const bool has_bias = b.defined();
    if (has_bias && b.numel() != cout) shape_fail("conv_k1 bias", b.shape(), Shape{cout});
    std::vector<double> out(cout * len, 0.0);
    if (has_bias)
        for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.data() + o * len, len, b[o]);
    mm_nn(w.values().data(), x.values().data(), out.data(), cout, cin, len);
    Parents parents{x.node_ptr(), w.node_ptr()};
    if (has_bias) parents.push_back(b.node_ptr());
    return make_result({cout, len}, std::move(out), std::move(parents), [cin, len, cout](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            mm_tn(pw.value.data(), self.grad.data(), px.grad.data(), cout, cin, len);
        }
        if (pw.requires_grad) {
            pw.ensure_grad();
            mm_nt(self.grad.data(), px.value.data(), pw.grad.data(), cout, len, cin);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Node& pb = *self.parents[2];
            pb.ensure_grad();
            for (std::size_t o = 0; o < cout; ++o) {
                double s = 0.0;
                for (std::size_t p = 0; p < len; ++p) s += self.grad[o * len + p];
                pb.grad[o] += s;
            }
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
    require_rank("conv2d", x, 4);
    require_rank("conv2d", w, 4);
    const std::size_t cin = x.dim(0), nb = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin || w.dim(3) != k) shape_fail("conv2d", w.shape(), x.shape());
    if (b.numel() != cout) shape_fail("conv2d bias", b.shape(), Shape{cout});
    if (stride == 0 || h + 2 * pad < k || wd + 2 * pad < k)
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " too small for kernel");
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (wd + 2 * pad - k) / stride + 1;

    struct Geo {
        std::size_t cin, nb, h, w, cout, k, oh, ow, stride, pad;
    };
    const Geo g{cin, nb, h, wd, cout, k, oh, ow, stride, pad};

    // Calls fn(out_index, in_index, weight_index) for every valid tap.
    auto for_each_tap = [](const Geo& g, auto&& fn) {
        for (std::size_t o = 0; o < g.cout; ++o)
            for (std::size_t n = 0; n < g.nb; ++n)
                for (std::size_t y = 0; y < g.oh; ++y)
                    for (std::size_t xo = 0; xo < g.ow; ++xo) {
                        const std::size_t oi = ((o * g.nb + n) * g.oh + y) * g.ow + xo;
                        for (std::size_t c = 0; c < g.cin; ++c)
                            for (std::size_t ky = 0; ky < g.k; ++ky) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ky) -
                                                          static_cast<std::ptrdiff_t>(g.pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                                for (std::size_t kx = 0; kx < g.k; ++kx) {
                                    const std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(xo * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                    const std::size_t ii = ((c * g.nb + n) * g.h + iy) * g.w + ix;
                                    const std::size_t wi = ((o * g.cin + c) * g.k + ky) * g.k + kx;
                                    fn(oi, ii, wi);
                                }
                            }
                    }
    };

    std::vector<double> out(cout * nb * oh * ow);
    const auto xv = x.values(), wv = w.values(), bv = b.values();
    for (std::size_t o = 0; o < cout; ++o)
        std::fill_n(out.data() + o * nb * oh * ow, nb * oh * ow, bv[o]);
    for_each_tap(g, [&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += wv[wi] * xv[ii]; });

    return make_result({cout, nb, oh, ow}, std::move(out), {x.node_ptr(), w.node_ptr(), b.node_ptr()},
                       [g, for_each_tap](Node& self) {
                           Node& px = *self.parents[0];
                           Node& pw = *self.parents[1];
                           Node& pb = *self.parents[2];
                           if (px.requires_grad) px.ensure_grad();
                           if (pw.requires_grad) pw.ensure_grad();
                           for_each_tap(g, [&](std::size_t oi, std::size_t ii, std::size_t wi) {
                               const double go = self.grad[oi];
                               if (px.requires_grad) px.grad[ii] += go * pw.value[wi];
                               if (pw.requires_grad) pw.grad[wi] += go * px.value[ii];
                           });
                           if (pb.requires_grad) {
                               pb.ensure_grad();
                               const std::size_t per = g.nb * g.oh * g.ow;
                               for (std::size_t o = 0; o < g.cout; ++o)
                                   for (std::size_t i = 0; i < per; ++i) pb.grad[o] += self.grad[o * per + i];
                           }
                       });
}

Tensor propagate(const Tensor& h, const Tensor& s) {
    require_rank("propagate", h, 2);
    require_rank("propagate", s, 2);
    const std::size_t n = s.dim(0);
    if (s.dim(1) != n || n == 0 || h.dim(1) % n != 0) shape_fail("propagate", h.shape(), s.shape());
    const std::size_t d = h.dim(0), nb = h.dim(1) / n, cols = h.dim(1);
    std::vector<double> out(d * cols, 0.0);
    const auto hv = h.values(), sv = s.values();
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t b = 0; b < nb; ++b) {
            const double* hi = hv.data() + c * cols + b * n;
            double* oi = out.data() + c * cols + b * n;
            for (std::size_t i = 0; i < n; ++i) {
                const double a = hi[i];
                if (a == 0.0) continue;
                const double* si = sv.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) oi[j] += a * si[j];
            }
        }
    return make_result({d, cols}, std::move(out), {h.node_ptr(), s.node_ptr()},
                       [d, nb, n, cols](Node& self) {
                           Node& ph = *self.parents[0];
                           Node& ps = *self.parents[1];
                           if (ph.requires_grad) ph.ensure_grad();
                           if (ps.requires_grad) ps.ensure_grad();
                           for (std::size_t c = 0; c < d; ++c)
                               for (std::size_t b = 0; b < nb; ++b) {
                                   const std::size_t base = c * cols + b * n;
                                   for (std::size_t i = 0; i < n; ++i)
                                       for (std::size_t j = 0; j < n; ++j) {
                                           const double go = self.grad[base + j];
                                           if (ph.requires_grad) ph.grad[base + i] += go * ps.value[i * n + j];
                                           if (ps.requires_grad) ps.grad[i * n + j] += go * ph.value[base + i];
                                       }
                               }
                       });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
    require_rank("embedding", table, 2);
    const std::size_t vocab = table.dim(0), e = table.dim(1), t = ids.size();
    std::vector<double> out(e * t);
    const auto tv = table.values();
    for (std::size_t j = 0; j < t; ++j) {
        if (ids[j] >= vocab)
            throw std::out_of_range("embedding: index " + std::to_string(ids[j]) +
                                    " out of range for vocabulary of " + std::to_string(vocab));
        for (std::size_t k = 0; k < e; ++k) out[k * t + j] = tv[ids[j] * e + k];
    }
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    return make_result({e, t}, std::move(out), {table.node_ptr()}, [idv = std::move(idv), e, t](Node& self) {
        Node& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t j = 0; j < t; ++j)
            for (std::size_t k = 0; k < e; ++k) p.grad[idv[j] * e + k] += self.grad[k * t + j];
    });
}

// ---- batch norm -----------------------------------------------------------

BatchNorm BatchNorm::make(std::size_t channels) {
    BatchNorm bn;
    bn.gamma = Tensor::full({channels}, 1.0, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, 1.0);
    return bn;
}

Tensor batch_norm(const Tensor& x, BatchNorm& bn, Mode mode) {
    if (x.rank() < 2) throw ShapeError("batch_norm: expected [C, ...], got " + shape_str(x.shape()));
    const std::size_t c = x.dim(0), len = x.numel() / c;
    if (len == 0) throw ShapeError("batch_norm: no positions in " + shape_str(x.shape()));
    if (bn.gamma.numel() != c) shape_fail("batch_norm", bn.gamma.shape(), x.shape());
    const auto xv = x.values(), gv = bn.gamma.values(), bv = bn.beta.values();
    std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(c);

    if (mode == Mode::Train) {
        auto rm = bn.running_mean.mutable_values();
        auto rv = bn.running_var.mutable_values();
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* xc = xv.data() + ch * len;
            double mu = 0.0;
            for (std::size_t i = 0; i < len; ++i) mu += xc[i];
            mu /= static_cast<double>(len);
            double var = 0.0;
            for (std::size_t i = 0; i < len; ++i) var += (xc[i] - mu) * (xc[i] - mu);
            var /= static_cast<double>(len);
            inv_std[ch] = 1.0 / std::sqrt(var + bn.eps);
            for (std::size_t i = 0; i < len; ++i) {
                xhat[ch * len + i] = (xc[i] - mu) * inv_std[ch];
                out[ch * len + i] = gv[ch] * xhat[ch * len + i] + bv[ch];
            }
            const double unbiased = len > 1 ? var * static_cast<double>(len) / static_cast<double>(len - 1) : var;
            rm[ch] = (1.0 - bn.momentum) * rm[ch] + bn.momentum * mu;
            rv[ch] = (1.0 - bn.momentum) * rv[ch] + bn.momentum * unbiased;
        }
    } else {
        const auto rm = bn.running_mean.values(), rv = bn.running_var.values();
        for (std::size_t ch = 0; ch < c; ++ch) {
            inv_std[ch] = 1.0 / std::sqrt(rv[ch] + bn.eps);
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t k = ch * len + i;
                xhat[k] = (xv[k] - rm[ch]) * inv_std[ch];
                out[k] = gv[ch] * xhat[k] + bv[ch];
            }
        }
    }

    const bool train = mode == Mode::Train;
    return make_result(
        x.shape(), std::move(out), {x.node_ptr(), bn.gamma.node_ptr(), bn.beta.node_ptr()},
        [c, len, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            if (px.requires_grad) px.ensure_grad();
            const double l = static_cast<double>(len);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t k = ch * len + i;
                    sum_dy += self.grad[k];
                    sum_dy_xhat += self.grad[k] * xhat[k];
                }
                if (pg.requires_grad) pg.grad[ch] += sum_dy_xhat;
                if (pb.requires_grad) pb.grad[ch] += sum_dy;
                if (!px.requires_grad) continue;
                const double gm = pg.value[ch];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t k = ch * len + i;
                    if (train)
                        px.grad[k] += gm * inv_std[ch] / l *
                                      (l * self.grad[k] - sum_dy - xhat[k] * sum_dy_xhat);
                    else
                        px.grad[k] += gm * inv_std[ch] * self.grad[k];
                }
            }
        });
}

// ---- LSTM -------------------------------------------------------------------

LstmState lstm_cell(const Tensor& x, const LstmState& state, const LstmParams& p) {
    const std::size_t hd = p.hidden;
    if (x.rank() != 2 || state.h.rank() != 2 || state.h.dim(0) != hd || state.c.shape() != state.h.shape() ||
        x.dim(1) != state.h.dim(1) || p.w.dim(0) != 4 * hd || p.w.dim(1) != x.dim(0) + hd)
        throw ShapeError("lstm_cell: x " + shape_str(x.shape()) + ", h " + shape_str(state.h.shape()) +
                         ", w " + shape_str(p.w.shape()));
    const Tensor z = conv_k1(concat({x, state.h}, 0), p.w, p.b);
    const Tensor i = sigmoid(slice(z, 0, 0, hd));
    const Tensor f = sigmoid(slice(z, 0, hd, hd));
    const Tensor g = tanh(slice(z, 0, 2 * hd, hd));
    const Tensor o = sigmoid(slice(z, 0, 3 * hd, hd));
    LstmState next;
    next.c = add(mul(f, state.c), mul(i, g));
    next.h = mul(o, tanh(next.c));
    return next;
}

// ---- losses -------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::span<const std::uint8_t> mask) {
    require_rank("cross_entropy", logits, 2);
    const std::size_t v = logits.dim(0), t = logits.dim(1);
    if (targets.size() != t)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t) + " positions");
    if (!mask.empty() && mask.size() != t) throw ShapeError("cross_entropy: mask length mismatch");
    const auto lv = logits.values();
    std::vector<double> prob(v * t, 0.0);
    double loss = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
        if (!mask.empty() && !mask[j]) continue;
        if (targets[j] >= v)
            throw std::out_of_range("cross_entropy: target " + std::to_string(targets[j]) +
                                    " out of range for " + std::to_string(v) + " classes");
        double mx = -INFINITY;
        for (std::size_t k = 0; k < v; ++k) mx = std::max(mx, lv[k * t + j]);
        double z = 0.0;
        for (std::size_t k = 0; k < v; ++k) z += std::exp(lv[k * t + j] - mx);
        const double logz = mx + std::log(z);
        loss += logz - lv[targets[j] * t + j];
        for (std::size_t k = 0; k < v; ++k) prob[k * t + j] = std::exp(lv[k * t + j] - logz);
        prob[targets[j] * t + j] -= 1.0;
    }
    return make_result({}, {loss}, {logits.node_ptr()}, [prob = std::move(prob)](Node& self) {
        Node& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < prob.size(); ++i) p.grad[i] += self.grad[0] * prob[i];
    });
}

Tensor weighted_bce(const Tensor& logits, std::span<const double> labels, std::span<const double> w_pos,
                    std::span<const double> w_neg) {
    if (logits.rank() < 1 || logits.rank() > 2) throw ShapeError("weighted_bce: expected [K] or [K, B]");
    const std::size_t k = logits.dim(0), nb = logits.rank() == 2 ? logits.dim(1) : 1;
    if (labels.size() != k * nb || w_pos.size() != k || w_neg.size() != k)
        throw ShapeError("weighted_bce: labels/weights do not match logits " + shape_str(logits.shape()));
    const auto z = logits.values();
    std::vector<double> dz(z.size());
    double loss = 0.0;
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t b = 0; b < nb; ++b) {
            const std::size_t i = r * nb + b;
            const double y = labels[i];
            loss += w_pos[r] * y * softplus(-z[i]) + w_neg[r] * (1.0 - y) * softplus(z[i]);
            const double s = stable_sigmoid(z[i]);
            dz[i] = w_pos[r] * y * (s - 1.0) + w_neg[r] * (1.0 - y) * s;
        }
    return make_result({}, {loss}, {logits.node_ptr()}, [dz = std::move(dz)](Node& self) {
        Node& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < dz.size(); ++i) p.grad[i] += self.grad[0] * dz[i];
    });
}

// ---- ParamStore / Adam ----------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (entries_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    t.node()->requires_grad = true;
    t.node()->ensure_grad();
    return entries_.emplace(name, Entry{std::move(t), true}).first->second.tensor;
}

Tensor& ParamStore::add_buffer(const std::string& name, Tensor t) {
    if (entries_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    t.node()->requires_grad = false;
    return entries_.emplace(name, Entry{std::move(t), false}).first->second.tensor;
}

BatchNorm ParamStore::add_batch_norm(const std::string& prefix, std::size_t channels) {
    BatchNorm bn = BatchNorm::make(channels);
    bn.gamma = add(prefix + ".gamma", bn.gamma);
    bn.beta = add(prefix + ".beta", bn.beta);
    bn.running_mean = add_buffer(prefix + ".running_mean", bn.running_mean);
    bn.running_var = add_buffer(prefix + ".running_var", bn.running_var);
    return bn;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second.tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second.tensor;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = entries_.find(name);
    return it != entries_.end() && it->second.trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
}

void ParamStore::zero_grad() {
    for (auto& [_, e] : entries_) e.tensor.zero_grad();
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.tensor.numel();
    return n;
}

void ParamStore::load_values(const ParamStore& other) {
    for (auto& [name, e] : entries_) {
        const Tensor& src = other.at(name);
        if (src.shape() != e.tensor.shape()) shape_fail(name.c_str(), src.shape(), e.tensor.shape());
        std::copy(src.values().begin(), src.values().end(), e.tensor.mutable_values().begin());
    }
}

namespace {
bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
    if (prefixes.empty()) return true;
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](const std::string& p) { return name.rfind(p, 0) == 0; });
}
}  // namespace

std::uint64_t ParamStore::hash(const std::vector<std::string>& prefixes) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, e] : entries_) {
        if (!has_prefix(name, prefixes)) continue;
        mix(name.data(), name.size());
        mix(e.tensor.values().data(), e.tensor.numel() * sizeof(double));
    }
    return h;
}

void Adam::step(ParamStore& store, const std::vector<std::string>& prefixes) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& name : store.names()) {
        if (!store.trainable(name) || !has_prefix(name, prefixes)) continue;
        Tensor& p = store.at(name);
        auto& st = state_[name];
        if (st.m.empty()) {
            st.m.assign(p.numel(), 0.0);
            st.v.assign(p.numel(), 0.0);
        }
        const std::vector<double> g = p.grad();
        auto v = p.mutable_values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double gi = g[i] + cfg_.weight_decay * v[i];
            st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
            st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            v[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

// ---- checkpoints ----------------------------------------------------------------

namespace {
constexpr char kCkptMagic[5] = {'C', 'K', 'P', 'T', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& v) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return true;
}
}  // namespace

void write_checkpoint(std::ostream& os, const ParamStore& store) {
    os.write(kCkptMagic, sizeof kCkptMagic);
    for (const auto& name : store.names()) {
        const Tensor& t = store.at(name);
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_le<std::uint64_t>(os, d);
        for (double v : t.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put_le<std::uint64_t>(os, bits);
        }
    }
}

void save_checkpoint(const std::string& path, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    write_checkpoint(os, store);
}

std::map<std::string, Tensor> read_checkpoint(std::istream& is) {
    char magic[5];
    if (!is.read(magic, 5) || std::memcmp(magic, kCkptMagic, 5) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    std::map<std::string, Tensor> out;
    std::uint32_t name_len;
    while (get_le(is, name_len)) {
        std::string name(name_len, '\0');
        std::uint32_t rank;
        if (!is.read(name.data(), name_len) || !get_le(is, rank))
            throw std::runtime_error("checkpoint: truncated header");
        Shape shape(rank);
        for (auto& d : shape)
            if (std::uint64_t v; get_le(is, v))
                d = v;
            else
                throw std::runtime_error("checkpoint: truncated dims for " + name);
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) {
            std::uint64_t bits;
            if (!get_le(is, bits)) throw std::runtime_error("checkpoint: truncated values for " + name);
            std::memcpy(&v, &bits, sizeof v);
        }
        out.emplace(name, Tensor::from(std::move(shape), std::move(values)));
    }
    return out;
}

std::map<std::string, Tensor> load_checkpoint_blocks(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    return read_checkpoint(is);
}

void assign_checkpoint(const std::map<std::string, Tensor>& blocks, ParamStore& store) {
    for (const auto& name : store.names()) {
        auto it = blocks.find(name);
        if (it == blocks.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
        Tensor& dst = store.at(name);
        if (it->second.shape() != dst.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " +
                                     shape_str(it->second.shape()) + " vs " + shape_str(dst.shape()));
        std::copy(it->second.values().begin(), it->second.values().end(), dst.mutable_values().begin());
    }
}

void load_checkpoint(const std::string& path, ParamStore& store) {
    assign_checkpoint(load_checkpoint_blocks(path), store);
}

// ---- gradient check -------------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double step,
                           std::size_t max_per_param, std::uint64_t stride_seed, double floor) {
    for (auto& l : leaves) l.zero_grad();
    f().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad());

    GradCheckResult res;
    Rng rng(stride_seed);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        std::vector<std::size_t> idx(leaf.numel());
        std::iota(idx.begin(), idx.end(), 0);
        if (max_per_param && idx.size() > max_per_param) {
            rng.shuffle(idx.begin(), idx.end());
            idx.resize(max_per_param);
        }
        auto vals = leaf.mutable_values();
        for (auto i : idx) {
            const double orig = vals[i];
            vals[i] = orig + step;
            const double fp = f().item();
            vals[i] = orig - step;
            const double fm = f().item();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[li][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            ++res.checked;
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst = "leaf" + std::to_string(li) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

}  // namespace kgrg

namespace kgrg {

Linear add_linear(ParamStore& store, const std::string& prefix, std::size_t out, std::size_t in, Rng& rng,
                  bool bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(out * in);
    for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
    Linear l;
    l.w = store.add(prefix + ".weight", Tensor::from({out, in}, std::move(w)));
    if (bias) {
        std::vector<double> b(out);
        for (auto& v : b) v = (2.0 * rng.uniform() - 1.0) * bound;
        l.b = store.add(prefix + ".bias", Tensor::from({out}, std::move(b)));
    }
    return l;
}

LstmParams add_lstm(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::vector<double> w(4 * hidden * (in + hidden)), b(4 * hidden);
    for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
    for (auto& v : b) v = (2.0 * rng.uniform() - 1.0) * bound;
    LstmParams p;
    p.hidden = hidden;
    p.w = store.add(prefix + ".weight", Tensor::from({4 * hidden, in + hidden}, std::move(w)));
    p.b = store.add(prefix + ".bias", Tensor::from({4 * hidden}, std::move(b)));
    return p;
}

}  // namespace kgrg
