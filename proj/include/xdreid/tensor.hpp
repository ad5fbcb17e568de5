#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "xdreid/common.hpp"

namespace xdreid {

using Shape = std::vector<int>;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized lazily, only when a backward pass reaches this node
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

bool grad_enabled();

}  // namespace detail

/// Disables graph construction inside its scope. Forward values are still
/// computed; backward() cannot reach anything created under the guard.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense row-major tensor with reverse-mode autodiff. Copying a Tensor copies
/// a handle to the same node; use detach()/clone semantics explicitly.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Fills from U(lo, hi) using the supplied engine; used for parameter init.
    static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int ndim() const;
    int dim(int i) const;
    std::int64_t size() const;

    std::vector<double>& data();
    const std::vector<double>& data() const;
    const std::vector<double>& grad() const;
    bool requires_grad() const;
    bool is_leaf() const;
    void zero_grad();
    double item() const;

    /// Value copy with no graph link and requires_grad=false.
    Tensor detach() const;

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

inline constexpr double kNormEps = 1e-5;
// Luma weights for grayscale conversion.
inline constexpr double kGrayR = 0.299;
inline constexpr double kGrayG = 0.587;
inline constexpr double kGrayB = 0.114;
// Parameter init: U(-a, a) with a = sqrt(kInitGain / fan_in), so Var = 1/fan_in.
inline constexpr double kInitGain = 3.0;

// --- layer ops (NCHW for 4-d, rows x cols for 2-d) ---

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor instance_norm(const Tensor& input, double eps = kNormEps);
/// Instance-normalizes, then applies per-(sample, channel) scale and bias
/// supplied as N x C tensors.
Tensor adain(const Tensor& input, const Tensor& scale, const Tensor& bias, double eps = kNormEps);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor max_pool2d(const Tensor& x, int window);
Tensor max_pool2d(const Tensor& x, int window_h, int window_w);
Tensor avg_pool2d(const Tensor& x, int window);
Tensor upsample_nearest(const Tensor& x, int factor);
/// Row-wise softmax over an N x K tensor.
Tensor softmax(const Tensor& logits);
/// N x 3 x H x W -> N x 1 x H x W using the fixed luma weights.
Tensor grayscale(const Tensor& rgb);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// --- arithmetic ---

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor abs(const Tensor& x);
Tensor log(const Tensor& x);
/// Value clamp; gradient passes through only in the open interval (lo, hi).
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor reshape(const Tensor& x, Shape shape);
/// Column slice of an N x M tensor: columns [start, start+len).
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean negative log softmax probability of the true class, one label per row.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

/// Reverse-mode pass from a scalar loss. Each reachable node is visited once;
/// leaf gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

std::int64_t shape_numel(const Shape& shape);
bool all_finite(const Tensor& t);

}  // namespace xdreid
