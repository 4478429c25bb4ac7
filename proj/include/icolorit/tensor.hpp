#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace icolorit::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
struct Access;
}  // namespace detail

/// Reference-counted n-dimensional array of doubles with optional gradient
/// tracking. Copies share storage; operations build a backward graph when
/// any input requires a gradient and grad mode is enabled.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t i) const { return shape().at(i); }
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    std::span<const double> values() const;
    /// Writable view of a leaf's values. Mutating a tensor that already
    /// feeds a graph invalidates that graph's saved state.
    std::span<double> mutable_values();
    double item() const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate.
    void backward() const;

    /// Same values, no history, no gradient tracking.
    Tensor detach() const;

    /// Identity of the underlying storage.
    const void* id() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend struct detail::Access;
};

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
/// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m,k] * b[n,k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// x[..., k] * w[k, n] + bias[n]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Activations and normalization.
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor gelu(const Tensor& x);

// Indexing.
/// Rectangular block of a rank-2 tensor.
Tensor slice2d(const Tensor& x, std::size_t row0, std::size_t rows, std::size_t col0,
               std::size_t cols);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// out[i] = src.flat[indices[i]], or 0 where indices[i] < 0.
Tensor gather(const Tensor& src, std::shared_ptr<const std::vector<std::int64_t>> indices,
              Shape out_shape);
/// q[m, d], k[m*g, d] -> out[m, g] with out[i, j] = <q[i], k[i*g + j]>.
Tensor group_rowdot(const Tensor& q, const Tensor& k);
/// w[m, g], v[m*g, d] -> out[m, d] with out[i] = sum_j w[i, j] v[i*g + j].
Tensor group_weighted_sum(const Tensor& w, const Tensor& v);

// Spatial (channel-last; optional leading batch dimension).
/// x[(B,) H, W, Cin], kernel[3, 3, Cin, Cout], bias[Cout] (may be undefined).
/// Cross-correlation with zero padding 1.
Tensor conv2d_same(const Tensor& x, const Tensor& kernel, const Tensor& bias);
/// x[(B,) h, w, C*P*P] -> [(B,) h*P, w*P, C];
/// out(y*P+i, x*P+j, c) = in(y, x, c*P*P + i*P + j).
Tensor pixel_shuffle(const Tensor& x, std::size_t factor);
Tensor pixel_unshuffle(const Tensor& x, std::size_t factor);

// Losses.
/// Mean over elements of the Huber penalty with knee at |x| = 1. `target`
/// is treated as a constant.
Tensor huber_loss(const Tensor& pred, const Tensor& target);

/// Central-difference gradient check of scalar f at x. Returns the maximum
/// over elements of |g - g_fd| / (|g| + |g_fd| + 1e-8).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-4);

}  // namespace icolorit::ad
