#include "icolorit/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "icolorit/error.hpp"

namespace icolorit::ad {

namespace detail {

// Every buffer starts on a full vector-width boundary, so Eigen takes the
// same peeling path (and summation order) for the same shapes in every run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

struct Access {
    static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

}  // namespace detail

namespace {

using detail::Access;
using detail::Buffer;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

thread_local bool g_grad_enabled = true;

const NodePtr& node_of(const Tensor& t) {
    const auto& n = Access::node(t);
    if (!n) throw InvalidArgument("operation on an undefined tensor");
    return n;
}

Node& N(const Tensor& t) { return *node_of(t); }

bool tracks(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && Access::node(*t)->requires_grad) return true;
    }
    return false;
}

/// Builds the output node; attaches history only when some input tracks
/// gradients.
Tensor make_result(Shape shape, Buffer value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->value = std::move(value);
    if (tracks(inputs)) {
        out->requires_grad = true;
        for (const Tensor* t : inputs) {
            out->parents.push_back(t->defined() ? Access::node(*t) : nullptr);
        }
        out->backward_fn = std::move(backward_fn);
    }
    return Access::wrap(std::move(out));
}

Tensor make_result_vec(Shape shape, Buffer value, const std::vector<Tensor>& inputs,
                       std::function<void(Node&)> backward_fn) {
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->value = std::move(value);
    bool any = false;
    if (g_grad_enabled) {
        for (const auto& t : inputs) any = any || Access::node(t)->requires_grad;
    }
    if (any) {
        out->requires_grad = true;
        for (const auto& t : inputs) out->parents.push_back(Access::node(t));
        out->backward_fn = std::move(backward_fn);
    }
    return Access::wrap(std::move(out));
}

/// Parent grad buffer if that parent participates in differentiation.
double* pgrad(Node& self, std::size_t i) {
    Node* p = self.parents[i].get();
    if (p == nullptr || !p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value.assign(numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    require(values.size() == numel(shape),
            "tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(values.begin(), values.end());
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return N(*this).shape; }
std::size_t Tensor::size() const { return N(*this).value.size(); }
std::span<const double> Tensor::values() const { return N(*this).value; }
std::span<double> Tensor::mutable_values() { return N(*this).value; }

double Tensor::item() const {
    require(size() == 1, "item() on tensor of shape " + shape_str(shape()));
    return values()[0];
}

bool Tensor::requires_grad() const { return N(*this).requires_grad; }
bool Tensor::has_grad() const { return defined() && N(*this).grad.size() == size(); }

std::span<const double> Tensor::grad() const { return N(*this).grad; }

std::span<double> Tensor::mutable_grad() {
    N(*this).ensure_grad();
    return N(*this).grad;
}

void Tensor::zero_grad() {
    auto& g = N(*this).grad;
    std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<Node>();
    n->shape = shape();
    n->value = N(*this).value;
    return Tensor(std::move(n));
}

void Tensor::backward() const {
    Node& root = N(*this);
    require(root.value.size() == 1,
            "backward() requires a scalar loss, got shape " + shape_str(root.shape));
    if (!root.requires_grad) return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
    seen.insert(&root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
    }
    root.ensure_grad();
    root.grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Buffer v(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    return make_result(a.shape(), std::move(v), {&a, &b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* g = pgrad(self, k)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Buffer v(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
    return make_result(a.shape(), std::move(v), {&a, &b}, [](Node& self) {
        if (double* g = pgrad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (double* g = pgrad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Buffer v(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(v), {&a, &b}, [](Node& self) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (double* g = pgrad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (double* g = pgrad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& x, double s) {
    Buffer v(x.values().begin(), x.values().end());
    for (double& e : v) e *= s;
    return make_result(x.shape(), std::move(v), {&x}, [s](Node& self) {
        if (double* g = pgrad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    const std::size_t n = last_dim(x.shape());
    require(bias.size() == n, "add_bias: bias of size " + std::to_string(bias.size()) +
                                  " for last dim " + std::to_string(n));
    Buffer v(x.values().begin(), x.values().end());
    const auto bv = bias.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i % n];
    return make_result(x.shape(), std::move(v), {&x, &bias}, [n](Node& self) {
        if (double* g = pgrad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (double* g = pgrad(self, 1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
        }
    });
}

Tensor sum(const Tensor& x) {
    const auto xv = x.values();
    const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    return make_result({}, {s}, {&x}, [](Node& self) {
        if (double* g = pgrad(self, 0)) {
            const std::size_t n = self.parents[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
    require(numel(shape) == x.size(),
            "reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    Buffer v(x.values().begin(), x.values().end());
    return make_result(std::move(shape), std::move(v), {&x}, [](Node& self) {
        if (double* g = pgrad(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
            "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    Buffer v(static_cast<std::size_t>(m * n));
    MapMat(v.data(), m, n).noalias() = CMapMat(a.values().data(), m, k) * CMapMat(b.values().data(), k, n);
    return make_result({a.dim(0), b.dim(1)}, std::move(v), {&a, &b}, [m, k, n](Node& self) {
        CMapMat dc(self.grad.data(), m, n);
        if (double* g = pgrad(self, 0)) {
            MapMat(g, m, k).noalias() += dc * CMapMat(self.parents[1]->value.data(), k, n).transpose();
        }
        if (double* g = pgrad(self, 1)) {
            MapMat(g, k, n).noalias() += CMapMat(self.parents[0]->value.data(), m, k).transpose() * dc;
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
            "matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(0));
    Buffer v(static_cast<std::size_t>(m * n));
    MapMat(v.data(), m, n).noalias() =
        CMapMat(a.values().data(), m, k) * CMapMat(b.values().data(), n, k).transpose();
    return make_result({a.dim(0), b.dim(0)}, std::move(v), {&a, &b}, [m, k, n](Node& self) {
        CMapMat dc(self.grad.data(), m, n);
        if (double* g = pgrad(self, 0)) {
            MapMat(g, m, k).noalias() += dc * CMapMat(self.parents[1]->value.data(), n, k);
        }
        if (double* g = pgrad(self, 1)) {
            MapMat(g, n, k).noalias() += dc.transpose() * CMapMat(self.parents[0]->value.data(), m, k);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(w.rank() == 2 && last_dim(x.shape()) == w.dim(0),
            "linear: input " + shape_str(x.shape()) + " with weight " + shape_str(w.shape()));
    const std::size_t rows = x.size() / w.dim(0);
    Tensor y = matmul(x.rank() == 2 ? x : reshape(x, {rows, w.dim(0)}), w);
    if (bias.defined()) y = add_bias(y, bias);
    if (x.rank() != 2) {
        Shape s = x.shape();
        s.back() = w.dim(1);
        y = reshape(y, std::move(s));
    }
    return y;
}

// ---------------------------------------------------------------------------
// Activations and normalization

Tensor softmax_lastdim(const Tensor& x) {
    const std::size_t n = last_dim(x.shape());
    require(n >= 1 && x.size() > 0, "softmax: empty last dimension");
    const std::size_t rows = x.size() / n;
    const auto xv = x.values();
    Buffer v(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* out = v.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (out[j] = std::exp(in[j] - mx));
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
    }
    return make_result(x.shape(), std::move(v), {&x}, [n, rows](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* dy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = last_dim(x.shape());
    require(d >= 1 && gamma.size() == d && beta.size() == d,
            "layer_norm: affine parameters do not match last dim " + std::to_string(d));
    const std::size_t rows = x.size() / d;
    const auto xv = x.values();
    const auto gv = gamma.values();
    const auto bv = beta.values();
    Buffer v(x.size());
    // Saved normalized activations and inverse std per row.
    auto xhat = std::make_shared<Buffer>(x.size());
    auto rstd = std::make_shared<Buffer>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (in[j] - mu) * rs;
            (*xhat)[r * d + j] = h;
            v[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return make_result(x.shape(), std::move(v), {&x, &gamma, &beta},
                       [d, rows, xhat, rstd](Node& self) {
        const auto& gv = self.parents[1]->value;
        double* gx = pgrad(self, 0);
        double* gg = pgrad(self, 1);
        double* gb = pgrad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* dy = self.grad.data() + r * d;
            const double* h = xhat->data() + r * d;
            if (gg || gb) {
                for (std::size_t j = 0; j < d; ++j) {
                    if (gg) gg[j] += dy[j] * h[j];
                    if (gb) gb[j] += dy[j];
                }
            }
            if (gx) {
                double m1 = 0.0;
                double m2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = dy[j] * gv[j];
                    m1 += dh;
                    m2 += dh * h[j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                const double rs = (*rstd)[r];
                for (std::size_t j = 0; j < d; ++j) {
                    gx[r * d + j] += rs * (dy[j] * gv[j] - m1 - h[j] * m2);
                }
            }
        }
    });
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    const auto xv = x.values();
    Buffer v(xv.size());
    auto cdf = std::make_shared<Buffer>(xv.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double c = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
        (*cdf)[i] = c;
        v[i] = xv[i] * c;
    }
    return make_result(x.shape(), std::move(v), {&x}, [cdf](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double t = xv[i];
            g[i] += self.grad[i] * ((*cdf)[i] + t * kInvSqrt2Pi * std::exp(-0.5 * t * t));
        }
    });
}

// ---------------------------------------------------------------------------
// Indexing

Tensor slice2d(const Tensor& x, std::size_t row0, std::size_t rows, std::size_t col0,
               std::size_t cols) {
    require(x.rank() == 2 && row0 + rows <= x.dim(0) && col0 + cols <= x.dim(1),
            "slice2d: block out of range for " + shape_str(x.shape()));
    const std::size_t stride = x.dim(1);
    const auto xv = x.values();
    Buffer v(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(xv.data() + (row0 + r) * stride + col0, cols, v.data() + r * cols);
    }
    return make_result({rows, cols}, std::move(v), {&x},
                       [row0, rows, col0, cols, stride](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            double* dst = g + (row0 + r) * stride + col0;
            const double* src = self.grad.data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = parts[0].dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(0) == rows, "concat_cols: row count mismatch");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    Buffer v(rows * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pv = parts[k].values();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.data() + r * widths[k], widths[k], v.data() + r * total + off);
        }
        off += widths[k];
    }
    return make_result_vec({rows, total}, std::move(v), parts, [rows, total, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (double* g = pgrad(self, k)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* src = self.grad.data() + r * total + off;
                    for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += src[c];
                }
            }
            off += widths[k];
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const std::size_t cols = parts[0].dim(1);
    std::vector<std::size_t> sizes;
    std::size_t rows = 0;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(1) == cols, "concat_rows: column count mismatch");
        sizes.push_back(p.size());
        rows += p.dim(0);
    }
    Buffer v;
    v.reserve(rows * cols);
    for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    return make_result_vec({rows, cols}, std::move(v), parts, [sizes](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            if (double* g = pgrad(self, k)) {
                for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
            }
            off += sizes[k];
        }
    });
}

Tensor gather(const Tensor& src, std::shared_ptr<const std::vector<std::int64_t>> indices,
              Shape out_shape) {
    require(indices && indices->size() == numel(out_shape),
            "gather: index count does not match output shape " + shape_str(out_shape));
    const auto sv = src.values();
    const auto& idx = *indices;
    Buffer v(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= 0) {
            require(static_cast<std::size_t>(idx[i]) < sv.size(), "gather: index out of range");
            v[i] = sv[static_cast<std::size_t>(idx[i])];
        }
    }
    return make_result(std::move(out_shape), std::move(v), {&src}, [indices](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        const auto& idx = *indices;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= 0) g[idx[i]] += self.grad[i];
        }
    });
}

Tensor group_rowdot(const Tensor& q, const Tensor& k) {
    require(q.rank() == 2 && k.rank() == 2 && q.dim(1) == k.dim(1) && q.dim(0) > 0 &&
                k.dim(0) % q.dim(0) == 0,
            "group_rowdot: shape mismatch " + shape_str(q.shape()) + " vs " + shape_str(k.shape()));
    const std::size_t m = q.dim(0);
    const std::size_t d = q.dim(1);
    const std::size_t groups = k.dim(0) / m;
    const auto qv = q.values();
    const auto kv = k.values();
    Buffer v(m * groups);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < groups; ++j) {
            double s = 0.0;
            const double* kr = kv.data() + (i * groups + j) * d;
            for (std::size_t c = 0; c < d; ++c) s += qv[i * d + c] * kr[c];
            v[i * groups + j] = s;
        }
    }
    return make_result({m, groups}, std::move(v), {&q, &k}, [m, d, groups](Node& self) {
        double* gq = pgrad(self, 0);
        double* gk = pgrad(self, 1);
        const auto& qv = self.parents[0]->value;
        const auto& kv = self.parents[1]->value;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < groups; ++j) {
                const double go = self.grad[i * groups + j];
                const std::size_t kr = (i * groups + j) * d;
                for (std::size_t c = 0; c < d; ++c) {
                    if (gq) gq[i * d + c] += go * kv[kr + c];
                    if (gk) gk[kr + c] += go * qv[i * d + c];
                }
            }
        }
    });
}

Tensor group_weighted_sum(const Tensor& w, const Tensor& v) {
    require(w.rank() == 2 && v.rank() == 2 && v.dim(0) == w.dim(0) * w.dim(1),
            "group_weighted_sum: shape mismatch " + shape_str(w.shape()) + " vs " +
                shape_str(v.shape()));
    const std::size_t m = w.dim(0);
    const std::size_t groups = w.dim(1);
    const std::size_t d = v.dim(1);
    const auto wv = w.values();
    const auto vv = v.values();
    Buffer out(m * d, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < groups; ++j) {
            const double wt = wv[i * groups + j];
            const double* vr = vv.data() + (i * groups + j) * d;
            for (std::size_t c = 0; c < d; ++c) out[i * d + c] += wt * vr[c];
        }
    }
    return make_result({m, d}, std::move(out), {&w, &v}, [m, d, groups](Node& self) {
        double* gw = pgrad(self, 0);
        double* gv = pgrad(self, 1);
        const auto& wv = self.parents[0]->value;
        const auto& vv = self.parents[1]->value;
        for (std::size_t i = 0; i < m; ++i) {
            const double* go = self.grad.data() + i * d;
            for (std::size_t j = 0; j < groups; ++j) {
                const std::size_t vr = (i * groups + j) * d;
                if (gw) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < d; ++c) s += go[c] * vv[vr + c];
                    gw[i * groups + j] += s;
                }
                if (gv) {
                    const double wt = wv[i * groups + j];
                    for (std::size_t c = 0; c < d; ++c) gv[vr + c] += wt * go[c];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Spatial

namespace {

struct SpatialDims {
    std::size_t batch, height, width, channels;
};

SpatialDims spatial_dims(const Tensor& x, const char* op) {
    if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    throw InvalidArgument(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " +
                          shape_str(x.shape()));
}

Shape spatial_shape(const Tensor& like, std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
    return like.rank() == 4 ? Shape{b, h, w, c} : Shape{h, w, c};
}

// Row r = (b, y, x); column = (ky, kx, cin). Out-of-image taps stay zero.
Buffer im2col3x3(const double* in, const SpatialDims& s) {
    const std::size_t cin = s.channels;
    Buffer cols(s.batch * s.height * s.width * 9 * cin, 0.0);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                double* row = cols.data() + ((b * s.height + y) * s.width + x) * 9 * cin;
                for (int ky = 0; ky < 3; ++ky) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(s.height)) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const auto sx = static_cast<std::ptrdiff_t>(x) + kx - 1;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(s.width)) continue;
                        const double* src =
                            in + ((b * s.height + static_cast<std::size_t>(sy)) * s.width +
                                  static_cast<std::size_t>(sx)) * cin;
                        std::copy_n(src, cin, row + static_cast<std::size_t>(ky * 3 + kx) * cin);
                    }
                }
            }
        }
    }
    return cols;
}

void col2im3x3_add(const double* cols, const SpatialDims& s, double* out) {
    const std::size_t cin = s.channels;
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                const double* row = cols + ((b * s.height + y) * s.width + x) * 9 * cin;
                for (int ky = 0; ky < 3; ++ky) {
                    const auto sy = static_cast<std::ptrdiff_t>(y) + ky - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(s.height)) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const auto sx = static_cast<std::ptrdiff_t>(x) + kx - 1;
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(s.width)) continue;
                        double* dst = out + ((b * s.height + static_cast<std::size_t>(sy)) * s.width +
                                             static_cast<std::size_t>(sx)) * cin;
                        const double* src = row + static_cast<std::size_t>(ky * 3 + kx) * cin;
                        for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_same(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    const SpatialDims s = spatial_dims(x, "conv2d_same");
    require(kernel.rank() == 4 && kernel.dim(0) == 3 && kernel.dim(1) == 3 &&
                kernel.dim(2) == s.channels,
            "conv2d_same: kernel " + shape_str(kernel.shape()) + " for input " +
                shape_str(x.shape()));
    const std::size_t cout = kernel.dim(3);
    require(!bias.defined() || bias.size() == cout, "conv2d_same: bias size mismatch");

    const auto rows = static_cast<Eigen::Index>(s.batch * s.height * s.width);
    const auto k9 = static_cast<Eigen::Index>(9 * s.channels);
    const auto co = static_cast<Eigen::Index>(cout);
    auto cols = std::make_shared<Buffer>(im2col3x3(x.values().data(), s));
    Buffer v(static_cast<std::size_t>(rows * co));
    MapMat out(v.data(), rows, co);
    out.noalias() = CMapMat(cols->data(), rows, k9) * CMapMat(kernel.values().data(), k9, co);
    if (bias.defined()) out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), co);

    return make_result(spatial_shape(x, s.batch, s.height, s.width, cout), std::move(v),
                       {&x, &kernel, &bias}, [s, rows, k9, co, cols](Node& self) {
        CMapMat dy(self.grad.data(), rows, co);
        if (double* g = pgrad(self, 1)) {
            MapMat(g, k9, co).noalias() += CMapMat(cols->data(), rows, k9).transpose() * dy;
        }
        if (self.parents[2]) {
            if (double* g = pgrad(self, 2)) {
                Eigen::Map<Eigen::RowVectorXd>(g, co) += dy.colwise().sum();
            }
        }
        if (double* g = pgrad(self, 0)) {
            RowMat dcols = dy * CMapMat(self.parents[1]->value.data(), k9, co).transpose();
            col2im3x3_add(dcols.data(), s, g);
        }
    });
}

namespace {

// Index of the unshuffled element feeding each shuffled element.
template <typename F>
void for_each_shuffle(const SpatialDims& in, std::size_t p, F&& f) {
    const std::size_t c_out = in.channels / (p * p);
    const std::size_t H = in.height * p;
    const std::size_t W = in.width * p;
    for (std::size_t b = 0; b < in.batch; ++b) {
        for (std::size_t y = 0; y < in.height; ++y) {
            for (std::size_t x = 0; x < in.width; ++x) {
                const std::size_t src_base = ((b * in.height + y) * in.width + x) * in.channels;
                for (std::size_t c = 0; c < c_out; ++c) {
                    for (std::size_t i = 0; i < p; ++i) {
                        for (std::size_t j = 0; j < p; ++j) {
                            const std::size_t dst =
                                ((b * H + y * p + i) * W + x * p + j) * c_out + c;
                            f(dst, src_base + c * p * p + i * p + j);
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, std::size_t factor) {
    const SpatialDims s = spatial_dims(x, "pixel_shuffle");
    require(factor >= 1 && s.channels % (factor * factor) == 0,
            "pixel_shuffle: channels " + std::to_string(s.channels) + " not divisible by " +
                std::to_string(factor * factor));
    const std::size_t c_out = s.channels / (factor * factor);
    const auto xv = x.values();
    Buffer v(x.size());
    for_each_shuffle(s, factor, [&](std::size_t dst, std::size_t src) { v[dst] = xv[src]; });
    return make_result(spatial_shape(x, s.batch, s.height * factor, s.width * factor, c_out),
                       std::move(v), {&x}, [s, factor](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        for_each_shuffle(s, factor, [&](std::size_t dst, std::size_t src) { g[src] += self.grad[dst]; });
    });
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t factor) {
    const SpatialDims o = spatial_dims(x, "pixel_unshuffle");
    require(factor >= 1 && o.height % factor == 0 && o.width % factor == 0,
            "pixel_unshuffle: spatial dims " + shape_str(x.shape()) + " not divisible by " +
                std::to_string(factor));
    const SpatialDims s{o.batch, o.height / factor, o.width / factor, o.channels * factor * factor};
    const auto xv = x.values();
    Buffer v(x.size());
    for_each_shuffle(s, factor, [&](std::size_t dst, std::size_t src) { v[src] = xv[dst]; });
    return make_result(spatial_shape(x, s.batch, s.height, s.width, s.channels), std::move(v),
                       {&x}, [s, factor](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        for_each_shuffle(s, factor, [&](std::size_t dst, std::size_t src) { g[dst] += self.grad[src]; });
    });
}

// ---------------------------------------------------------------------------
// Losses

Tensor huber_loss(const Tensor& pred, const Tensor& target) {
    require(pred.shape() == target.shape(), "huber_loss: shape mismatch " +
                                                shape_str(pred.shape()) + " vs " +
                                                shape_str(target.shape()));
    const auto pv = pred.values();
    const auto tv = target.values();
    const double n = static_cast<double>(pv.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double r = pv[i] - tv[i];
        const double ar = std::abs(r);
        total += ar < 1.0 ? 0.5 * r * r : ar - 0.5;
    }
    const Tensor t = target.detach();
    return make_result({}, {total / n}, {&pred}, [t, n](Node& self) {
        double* g = pgrad(self, 0);
        if (!g) return;
        const auto& pv = self.parents[0]->value;
        const auto tv = t.values();
        const double go = self.grad[0] / n;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double r = pv[i] - tv[i];
            g[i] += go * (std::abs(r) < 1.0 ? r : (r > 0 ? 1.0 : -1.0));
        }
    });
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    require(h > 0.0, "finite_diff_check: step must be positive");
    Tensor probe = Tensor::from(x.shape(), {x.values().begin(), x.values().end()}, true);
    Tensor out = f(probe);
    out.backward();
    const Buffer analytic(probe.grad().begin(), probe.grad().end());

    NoGradGuard no_grad;
    double worst = 0.0;
    auto vals = probe.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        vals[i] = orig + h;
        const double up = f(probe).item();
        vals[i] = orig - h;
        const double down = f(probe).item();
        vals[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) /
                           (std::abs(analytic[i]) + std::abs(numeric) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace icolorit::ad
