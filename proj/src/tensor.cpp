#include "xdreid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace xdreid {

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

void set_grad_enabled(bool v) { g_grad_enabled = v; }

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
NoGradGuard::~NoGradGuard() { detail::set_grad_enabled(prev_); }

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

namespace {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

void check_shape_positive(const Shape& shape, const char* who) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError(std::string(who) + ": non-positive dimension in " + shape_str(shape));
    }
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_value_node(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

// Wraps an op result. The backward closure is attached only when the graph is
// live (grad mode on and at least one parent requiring grad).
Tensor make_op_node(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                    std::function<void(detail::Node&)> backward_fn) {
    auto n = make_value_node(std::move(shape), std::move(data));
    bool needs = false;
    if (detail::grad_enabled()) {
        for (const auto& p : parents)
            if (p && p->requires_grad) needs = true;
    }
    if (needs) {
        n->requires_grad = true;
        n->leaf = false;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(n);
}

const NodePtr& checked(const Tensor& t, const char* who) {
    if (!t.defined()) throw ArgumentError(std::string(who) + ": undefined tensor");
    return t.node();
}

}  // namespace

// --- Tensor basics ---

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape_positive(shape, "zeros");
    auto numel = shape_numel(shape);
    auto n = make_value_node(std::move(shape), std::vector<double>(numel, 0.0));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape_positive(shape, "full");
    auto numel = shape_numel(shape);
    auto n = make_value_node(std::move(shape), std::vector<double>(numel, value));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape_positive(shape, "from_data");
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw DimensionError("from_data: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
    auto n = make_value_node(std::move(shape), std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
    check_shape_positive(shape, "uniform");
    auto numel = shape_numel(shape);
    std::vector<double> data(numel);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : data) v = dist(rng);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return checked(*this, "shape")->shape; }
int Tensor::ndim() const { return static_cast<int>(shape().size()); }
int Tensor::dim(int i) const { return shape().at(static_cast<size_t>(i)); }
std::int64_t Tensor::size() const { return checked(*this, "size")->size(); }

std::vector<double>& Tensor::data() { return checked(*this, "data")->data; }
const std::vector<double>& Tensor::data() const { return checked(*this, "data")->data; }

const std::vector<double>& Tensor::grad() const {
    auto& n = checked(*this, "grad");
    n->ensure_grad();
    return n->grad;
}

bool Tensor::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }
bool Tensor::is_leaf() const { return checked(*this, "is_leaf")->leaf; }

void Tensor::zero_grad() {
    auto& n = checked(*this, "zero_grad");
    n->grad.assign(n->data.size(), 0.0);
}

double Tensor::item() const {
    auto& n = checked(*this, "item");
    if (n->size() != 1) throw ArgumentError("item: tensor has " + std::to_string(n->size()) + " elements");
    return n->data[0];
}

Tensor Tensor::detach() const {
    auto& n = checked(*this, "detach");
    return from_data(n->shape, n->data, false);
}

bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

// --- backward ---

void backward(const Tensor& loss) {
    const auto& root = checked(loss, "backward");
    if (root->size() != 1) throw ArgumentError("backward: loss must be scalar, got " + shape_str(root->shape));
    if (!root->requires_grad) throw ArgumentError("backward: loss does not require grad");

    // Postorder DFS: every node appears after all of its parents.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node* p = node->parents[idx].get();
            ++idx;
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Intermediate grads are per-pass scratch; leaf grads accumulate.
    for (auto* n : order) {
        if (n->leaf) {
            n->ensure_grad();
        } else {
            n->grad.assign(n->data.size(), 0.0);
        }
    }
    root->grad[0] = root->leaf ? root->grad[0] + 1.0 : 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (!n->leaf && n->backward_fn) n->backward_fn(*n);
    }
}

// --- elementwise & reductions ---

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    std::vector<double> out(pa->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] + pb->data[i];
    return make_op_node(pa->shape, std::move(out), {pa, pb}, [pa, pb](detail::Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    std::vector<double> out(pa->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] - pb->data[i];
    return make_op_node(pa->shape, std::move(out), {pa, pb}, [pa, pb](detail::Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto pa = a.node(), pb = b.node();
    std::vector<double> out(pa->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] * pb->data[i];
    return make_op_node(pa->shape, std::move(out), {pa, pb}, [pa, pb](detail::Node& n) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
}

Tensor scale(const Tensor& x, double c) {
    auto px = checked(x, "scale");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = px->data[i] * c;
    return make_op_node(px->shape, std::move(out), {px}, [px, c](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& x, double c) {
    auto px = checked(x, "add_scalar");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = px->data[i] + c;
    return make_op_node(px->shape, std::move(out), {px}, [px](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
    });
}

Tensor abs(const Tensor& x) {
    auto px = checked(x, "abs");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(px->data[i]);
    return make_op_node(px->shape, std::move(out), {px}, [px](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) {
            double s = px->data[i] > 0 ? 1.0 : (px->data[i] < 0 ? -1.0 : 0.0);
            px->grad[i] += n.grad[i] * s;
        }
    });
}

Tensor log(const Tensor& x) {
    auto px = checked(x, "log");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) {
        if (px->data[i] <= 0.0) throw ArgumentError("log: non-positive input");
        out[i] = std::log(px->data[i]);
    }
    return make_op_node(px->shape, std::move(out), {px}, [px](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i] / px->data[i];
    });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw ArgumentError("clamp: lo > hi");
    auto px = checked(x, "clamp");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, px->data[i]));
    return make_op_node(px->shape, std::move(out), {px}, [px, lo, hi](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (px->data[i] > lo && px->data[i] < hi) px->grad[i] += n.grad[i];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_shape_positive(shape, "reshape");
    auto px = checked(x, "reshape");
    if (shape_numel(shape) != px->size())
        throw DimensionError("reshape: numel mismatch " + shape_str(px->shape) + " -> " + shape_str(shape));
    return make_op_node(std::move(shape), px->data, {px}, [px](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, int start, int len) {
    auto px = checked(x, "slice_cols");
    if (px->shape.size() != 2) throw DimensionError("slice_cols: expected 2-d tensor");
    const int rows = px->shape[0], cols = px->shape[1];
    if (start < 0 || len <= 0 || start + len > cols) throw ArgumentError("slice_cols: range out of bounds");
    std::vector<double> out(static_cast<size_t>(rows) * len);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < len; ++c) out[static_cast<size_t>(r) * len + c] = px->data[static_cast<size_t>(r) * cols + start + c];
    return make_op_node({rows, len}, std::move(out), {px}, [px, start, len, rows, cols](detail::Node& n) {
        px->ensure_grad();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < len; ++c)
                px->grad[static_cast<size_t>(r) * cols + start + c] += n.grad[static_cast<size_t>(r) * len + c];
    });
}

Tensor sum(const Tensor& x) {
    auto px = checked(x, "sum");
    double s = 0.0;
    for (double v : px->data) s += v;
    return make_op_node({1}, {s}, {px}, [px](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += n.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    auto px = checked(x, "mean");
    double s = 0.0;
    for (double v : px->data) s += v;
    const double inv = 1.0 / static_cast<double>(px->size());
    return make_op_node({1}, {s * inv}, {px}, [px, inv](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += n.grad[0] * inv;
    });
}

// --- activations ---

Tensor leaky_relu(const Tensor& x, double slope) {
    auto px = checked(x, "leaky_relu");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double v = px->data[i];
        out[i] = v > 0 ? v : v * slope;
    }
    return make_op_node(px->shape, std::move(out), {px}, [px, slope](detail::Node& n) {
        px->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            px->grad[i] += n.grad[i] * (px->data[i] > 0 ? 1.0 : slope);
    });
}

Tensor tanh(const Tensor& x) {
    auto px = checked(x, "tanh");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(px->data[i]);
    auto n = make_op_node(px->shape, std::move(out), {px}, nullptr);
    auto pn = n.node();
    if (!pn->leaf) {
        pn->backward_fn = [px](detail::Node& o) {
            px->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i)
                px->grad[i] += o.grad[i] * (1.0 - o.data[i] * o.data[i]);
        };
    }
    return n;
}

Tensor sigmoid(const Tensor& x) {
    auto px = checked(x, "sigmoid");
    std::vector<double> out(px->data.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double v = px->data[i];
        out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    auto n = make_op_node(px->shape, std::move(out), {px}, nullptr);
    auto pn = n.node();
    if (!pn->leaf) {
        pn->backward_fn = [px](detail::Node& o) {
            px->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i)
                px->grad[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
        };
    }
    return n;
}

Tensor softmax(const Tensor& logits) {
    auto px = checked(logits, "softmax");
    if (px->shape.size() != 2) throw DimensionError("softmax: expected N x K tensor");
    const int n_rows = px->shape[0], k = px->shape[1];
    std::vector<double> out(px->data.size());
    for (int r = 0; r < n_rows; ++r) {
        const double* row = px->data.data() + static_cast<size_t>(r) * k;
        double* orow = out.data() + static_cast<size_t>(r) * k;
        double m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - m);
            z += orow[j];
        }
        for (int j = 0; j < k; ++j) orow[j] /= z;
    }
    auto t = make_op_node(px->shape, std::move(out), {px}, nullptr);
    auto pn = t.node();
    if (!pn->leaf) {
        pn->backward_fn = [px, n_rows, k](detail::Node& o) {
            px->ensure_grad();
            for (int r = 0; r < n_rows; ++r) {
                const double* y = o.data.data() + static_cast<size_t>(r) * k;
                const double* g = o.grad.data() + static_cast<size_t>(r) * k;
                double dot = 0.0;
                for (int j = 0; j < k; ++j) dot += g[j] * y[j];
                double* gx = px->grad.data() + static_cast<size_t>(r) * k;
                for (int j = 0; j < k; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return t;
}

Tensor grayscale(const Tensor& rgb) {
    auto px = checked(rgb, "grayscale");
    if (px->shape.size() != 4 || px->shape[1] != 3)
        throw DimensionError("grayscale: expected N x 3 x H x W, got " + shape_str(px->shape));
    const int n = px->shape[0], h = px->shape[2], w = px->shape[3];
    const size_t plane = static_cast<size_t>(h) * w;
    std::vector<double> out(static_cast<size_t>(n) * plane);
    for (int i = 0; i < n; ++i) {
        const double* r = px->data.data() + (static_cast<size_t>(i) * 3 + 0) * plane;
        const double* g = px->data.data() + (static_cast<size_t>(i) * 3 + 1) * plane;
        const double* b = px->data.data() + (static_cast<size_t>(i) * 3 + 2) * plane;
        double* o = out.data() + static_cast<size_t>(i) * plane;
        for (size_t p = 0; p < plane; ++p) o[p] = kGrayR * r[p] + kGrayG * g[p] + kGrayB * b[p];
    }
    return make_op_node({n, 1, h, w}, std::move(out), {px}, [px, n, plane](detail::Node& o) {
        px->ensure_grad();
        for (int i = 0; i < n; ++i) {
            double* r = px->grad.data() + (static_cast<size_t>(i) * 3 + 0) * plane;
            double* g = px->grad.data() + (static_cast<size_t>(i) * 3 + 1) * plane;
            double* b = px->grad.data() + (static_cast<size_t>(i) * 3 + 2) * plane;
            const double* go = o.grad.data() + static_cast<size_t>(i) * plane;
            for (size_t p = 0; p < plane; ++p) {
                r[p] += kGrayR * go[p];
                g[p] += kGrayG * go[p];
                b[p] += kGrayB * go[p];
            }
        }
    });
}

// --- structured layers ---

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
    auto px = checked(input, "conv2d");
    auto pw = checked(weight, "conv2d");
    auto pb = checked(bias, "conv2d");
    if (px->shape.size() != 4) throw DimensionError("conv2d: input must be N x C x H x W");
    if (pw->shape.size() != 4) throw DimensionError("conv2d: weight must be Co x Ci x Kh x Kw");
    if (stride <= 0) throw ArgumentError("conv2d: stride must be positive");
    if (pad < 0) throw ArgumentError("conv2d: pad must be non-negative");
    const int n = px->shape[0], ci = px->shape[1], h = px->shape[2], w = px->shape[3];
    const int co = pw->shape[0], kh = pw->shape[2], kw = pw->shape[3];
    if (pw->shape[1] != ci)
        throw DimensionError("conv2d: input channels " + std::to_string(ci) + " != weight channels " +
                             std::to_string(pw->shape[1]));
    if (pb->shape.size() != 1 || pb->shape[0] != co) throw DimensionError("conv2d: bias must have Co entries");
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        throw DimensionError("conv2d: kernel larger than padded input");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;

    std::vector<double> out(static_cast<size_t>(n) * co * oh * ow);
    const double* in = px->data.data();
    const double* wt = pw->data.data();
    for (int b = 0; b < n; ++b) {
        for (int oc = 0; oc < co; ++oc) {
            double* oplane = out.data() + ((static_cast<size_t>(b) * co + oc) * oh) * ow;
            const double bval = pb->data[oc];
            for (int i = 0; i < oh * ow; ++i) oplane[i] = bval;
            for (int icx = 0; icx < ci; ++icx) {
                const double* iplane = in + ((static_cast<size_t>(b) * ci + icx) * h) * w;
                const double* wk = wt + ((static_cast<size_t>(oc) * ci + icx) * kh) * kw;
                for (int fy = 0; fy < kh; ++fy) {
                    for (int fx = 0; fx < kw; ++fx) {
                        const double wv = wk[fy * kw + fx];
                        // valid output ranges where the tap lands inside the input
                        int y0 = std::max(0, (pad - fy + stride - 1) / stride);
                        int y1 = std::min(oh - 1, (h - 1 + pad - fy) / stride);
                        int x0 = std::max(0, (pad - fx + stride - 1) / stride);
                        int x1 = std::min(ow - 1, (w - 1 + pad - fx) / stride);
                        for (int oy = y0; oy <= y1; ++oy) {
                            const int iy = oy * stride - pad + fy;
                            const double* irow = iplane + static_cast<size_t>(iy) * w;
                            double* orow = oplane + static_cast<size_t>(oy) * ow;
                            const int base = -pad + fx;
                            for (int ox = x0; ox <= x1; ++ox) orow[ox] += wv * irow[ox * stride + base];
                        }
                    }
                }
            }
        }
    }

    return make_op_node({n, co, oh, ow}, std::move(out), {px, pw, pb},
                        [px, pw, pb, n, ci, h, w, co, kh, kw, oh, ow, stride, pad](detail::Node& o) {
        const double* gout = o.grad.data();
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int b = 0; b < n; ++b)
                for (int oc = 0; oc < co; ++oc) {
                    const double* gplane = gout + ((static_cast<size_t>(b) * co + oc) * oh) * ow;
                    double s = 0.0;
                    for (int i = 0; i < oh * ow; ++i) s += gplane[i];
                    pb->grad[oc] += s;
                }
        }
        const bool need_in = px->requires_grad;
        const bool need_w = pw->requires_grad;
        if (!need_in && !need_w) return;
        if (need_in) px->ensure_grad();
        if (need_w) pw->ensure_grad();
        for (int b = 0; b < n; ++b) {
            for (int oc = 0; oc < co; ++oc) {
                const double* gplane = gout + ((static_cast<size_t>(b) * co + oc) * oh) * ow;
                for (int icx = 0; icx < ci; ++icx) {
                    const double* iplane = px->data.data() + ((static_cast<size_t>(b) * ci + icx) * h) * w;
                    double* giplane = need_in ? px->grad.data() + ((static_cast<size_t>(b) * ci + icx) * h) * w : nullptr;
                    const double* wk = pw->data.data() + ((static_cast<size_t>(oc) * ci + icx) * kh) * kw;
                    double* gwk = need_w ? pw->grad.data() + ((static_cast<size_t>(oc) * ci + icx) * kh) * kw : nullptr;
                    for (int fy = 0; fy < kh; ++fy) {
                        for (int fx = 0; fx < kw; ++fx) {
                            int y0 = std::max(0, (pad - fy + stride - 1) / stride);
                            int y1 = std::min(oh - 1, (h - 1 + pad - fy) / stride);
                            int x0 = std::max(0, (pad - fx + stride - 1) / stride);
                            int x1 = std::min(ow - 1, (w - 1 + pad - fx) / stride);
                            const double wv = wk[fy * kw + fx];
                            double wacc = 0.0;
                            const int base = -pad + fx;
                            for (int oy = y0; oy <= y1; ++oy) {
                                const int iy = oy * stride - pad + fy;
                                const double* grow = gplane + static_cast<size_t>(oy) * ow;
                                const double* irow = iplane + static_cast<size_t>(iy) * w;
                                double* girow = need_in ? giplane + static_cast<size_t>(iy) * w : nullptr;
                                for (int ox = x0; ox <= x1; ++ox) {
                                    const double g = grow[ox];
                                    if (need_w) wacc += g * irow[ox * stride + base];
                                    if (need_in) girow[ox * stride + base] += g * wv;
                                }
                            }
                            if (need_w) gwk[fy * kw + fx] += wacc;
                        }
                    }
                }
            }
        }
    });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    auto px = checked(input, "linear");
    auto pw = checked(weight, "linear");
    auto pb = checked(bias, "linear");
    if (px->shape.size() != 2 || pw->shape.size() != 2)
        throw DimensionError("linear: expected N x D input and D x M weight");
    const int n = px->shape[0], d = px->shape[1], m = pw->shape[1];
    if (pw->shape[0] != d)
        throw DimensionError("linear: inner dimensions disagree, input D=" + std::to_string(d) +
                             " weight D=" + std::to_string(pw->shape[0]));
    if (pb->shape.size() != 1 || pb->shape[0] != m) throw DimensionError("linear: bias must have M entries");

    std::vector<double> out(static_cast<size_t>(n) * m);
    for (int r = 0; r < n; ++r) {
        double* orow = out.data() + static_cast<size_t>(r) * m;
        for (int j = 0; j < m; ++j) orow[j] = pb->data[j];
        const double* irow = px->data.data() + static_cast<size_t>(r) * d;
        for (int kx = 0; kx < d; ++kx) {
            const double v = irow[kx];
            const double* wrow = pw->data.data() + static_cast<size_t>(kx) * m;
            for (int j = 0; j < m; ++j) orow[j] += v * wrow[j];
        }
    }
    return make_op_node({n, m}, std::move(out), {px, pw, pb}, [px, pw, pb, n, d, m](detail::Node& o) {
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int r = 0; r < n; ++r) {
                const double* grow = o.grad.data() + static_cast<size_t>(r) * m;
                for (int j = 0; j < m; ++j) pb->grad[j] += grow[j];
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int r = 0; r < n; ++r) {
                const double* irow = px->data.data() + static_cast<size_t>(r) * d;
                const double* grow = o.grad.data() + static_cast<size_t>(r) * m;
                for (int kx = 0; kx < d; ++kx) {
                    double* gwrow = pw->grad.data() + static_cast<size_t>(kx) * m;
                    const double v = irow[kx];
                    for (int j = 0; j < m; ++j) gwrow[j] += v * grow[j];
                }
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (int r = 0; r < n; ++r) {
                double* girow = px->grad.data() + static_cast<size_t>(r) * d;
                const double* grow = o.grad.data() + static_cast<size_t>(r) * m;
                for (int kx = 0; kx < d; ++kx) {
                    const double* wrow = pw->data.data() + static_cast<size_t>(kx) * m;
                    double s = 0.0;
                    for (int j = 0; j < m; ++j) s += grow[j] * wrow[j];
                    girow[kx] += s;
                }
            }
        }
    });
}

namespace {

// Shared moment pass for instance_norm / adain. Writes per-(n,c) mean and
// inverse std into mu / inv_sigma.
void channel_moments(const detail::Node& x, double eps, std::vector<double>& mu,
                     std::vector<double>& inv_sigma) {
    const int n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    mu.resize(static_cast<size_t>(n) * c);
    inv_sigma.resize(static_cast<size_t>(n) * c);
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const double* p = x.data.data() + (static_cast<size_t>(b) * c + ch) * hw;
            double m = 0.0;
            for (int i = 0; i < hw; ++i) m += p[i];
            m /= hw;
            double var = 0.0;
            for (int i = 0; i < hw; ++i) {
                const double dv = p[i] - m;
                var += dv * dv;
            }
            var /= hw;
            mu[static_cast<size_t>(b) * c + ch] = m;
            inv_sigma[static_cast<size_t>(b) * c + ch] = 1.0 / std::sqrt(var + eps);
        }
    }
}

void check_norm_input(const NodePtr& px, const char* who) {
    if (px->shape.size() != 4) throw DimensionError(std::string(who) + ": expected N x C x H x W");
    if (px->shape[2] * px->shape[3] < 2)
        throw ArgumentError(std::string(who) + ": H*W must be >= 2, statistics are degenerate");
}

// dL/dx for y = (x - mu) / sigma given upstream dL/dy per channel.
void norm_backward_channel(const double* x, const double* gy, double mu, double inv_s, int hw,
                           double* gx) {
    double gmean = 0.0, gydot = 0.0;
    for (int i = 0; i < hw; ++i) gmean += gy[i];
    gmean /= hw;
    for (int i = 0; i < hw; ++i) gydot += gy[i] * (x[i] - mu) * inv_s;
    gydot /= hw;
    for (int i = 0; i < hw; ++i) {
        const double y = (x[i] - mu) * inv_s;
        gx[i] += inv_s * (gy[i] - gmean - y * gydot);
    }
}

}  // namespace

Tensor instance_norm(const Tensor& input, double eps) {
    auto px = checked(input, "instance_norm");
    check_norm_input(px, "instance_norm");
    const int n = px->shape[0], c = px->shape[1], hw = px->shape[2] * px->shape[3];
    std::vector<double> mu, inv_sigma;
    channel_moments(*px, eps, mu, inv_sigma);
    std::vector<double> out(px->data.size());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const size_t off = (static_cast<size_t>(b) * c + ch) * hw;
            const double m = mu[static_cast<size_t>(b) * c + ch];
            const double is = inv_sigma[static_cast<size_t>(b) * c + ch];
            for (int i = 0; i < hw; ++i) out[off + i] = (px->data[off + i] - m) * is;
        }
    return make_op_node(px->shape, std::move(out), {px},
                        [px, n, c, hw, mu, inv_sigma](detail::Node& o) {
        px->ensure_grad();
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const size_t off = (static_cast<size_t>(b) * c + ch) * hw;
                norm_backward_channel(px->data.data() + off, o.grad.data() + off,
                                      mu[static_cast<size_t>(b) * c + ch],
                                      inv_sigma[static_cast<size_t>(b) * c + ch], hw,
                                      px->grad.data() + off);
            }
    });
}

Tensor adain(const Tensor& input, const Tensor& scale_t, const Tensor& bias_t, double eps) {
    auto px = checked(input, "adain");
    auto ps = checked(scale_t, "adain");
    auto pb = checked(bias_t, "adain");
    check_norm_input(px, "adain");
    const int n = px->shape[0], c = px->shape[1], hw = px->shape[2] * px->shape[3];
    if (ps->shape != Shape{n, c} || pb->shape != Shape{n, c})
        throw DimensionError("adain: scale/bias must be N x C matching the input");
    std::vector<double> mu, inv_sigma;
    channel_moments(*px, eps, mu, inv_sigma);
    std::vector<double> out(px->data.size());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const size_t nc = static_cast<size_t>(b) * c + ch;
            const size_t off = nc * hw;
            const double m = mu[nc], is = inv_sigma[nc];
            const double s = ps->data[nc], bv = pb->data[nc];
            for (int i = 0; i < hw; ++i) out[off + i] = (px->data[off + i] - m) * is * s + bv;
        }
    return make_op_node(px->shape, std::move(out), {px, ps, pb},
                        [px, ps, pb, n, c, hw, mu, inv_sigma](detail::Node& o) {
        std::vector<double> gy(hw);
        if (px->requires_grad) px->ensure_grad();
        if (ps->requires_grad) ps->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const size_t nc = static_cast<size_t>(b) * c + ch;
                const size_t off = nc * hw;
                const double m = mu[nc], is = inv_sigma[nc], s = ps->data[nc];
                const double* g = o.grad.data() + off;
                if (pb->requires_grad) {
                    double sb = 0.0;
                    for (int i = 0; i < hw; ++i) sb += g[i];
                    pb->grad[nc] += sb;
                }
                if (ps->requires_grad) {
                    double ss = 0.0;
                    for (int i = 0; i < hw; ++i) ss += g[i] * (px->data[off + i] - m) * is;
                    ps->grad[nc] += ss;
                }
                if (px->requires_grad) {
                    for (int i = 0; i < hw; ++i) gy[i] = g[i] * s;
                    norm_backward_channel(px->data.data() + off, gy.data(), m, is, hw,
                                          px->grad.data() + off);
                }
            }
    });
}

Tensor max_pool2d(const Tensor& x, int window) { return max_pool2d(x, window, window); }

Tensor max_pool2d(const Tensor& x, int window_h, int window_w) {
    auto px = checked(x, "max_pool2d");
    if (px->shape.size() != 4) throw DimensionError("max_pool2d: expected N x C x H x W");
    if (window_h <= 0 || window_w <= 0) throw ArgumentError("max_pool2d: window must be positive");
    const int n = px->shape[0], c = px->shape[1], h = px->shape[2], w = px->shape[3];
    if (h % window_h != 0 || w % window_w != 0)
        throw DimensionError("max_pool2d: input dims must divide by the window");
    const int oh = h / window_h, ow = w / window_w;
    std::vector<double> out(static_cast<size_t>(n) * c * oh * ow);
    std::vector<std::int32_t> argmax(out.size());
    for (int b = 0; b < n * c; ++b) {
        const double* plane = px->data.data() + static_cast<size_t>(b) * h * w;
        double* oplane = out.data() + static_cast<size_t>(b) * oh * ow;
        std::int32_t* aplane = argmax.data() + static_cast<size_t>(b) * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                int besti = 0;
                for (int fy = 0; fy < window_h; ++fy)
                    for (int fx = 0; fx < window_w; ++fx) {
                        const int iy = oy * window_h + fy, ix = ox * window_w + fx;
                        const double v = plane[iy * w + ix];
                        if (v > best) {
                            best = v;
                            besti = iy * w + ix;
                        }
                    }
                oplane[oy * ow + ox] = best;
                aplane[oy * ow + ox] = besti;
            }
    }
    return make_op_node({n, c, oh, ow}, std::move(out), {px},
                        [px, n, c, h, w, oh, ow, argmax = std::move(argmax)](detail::Node& o) {
        px->ensure_grad();
        for (int b = 0; b < n * c; ++b) {
            double* gplane = px->grad.data() + static_cast<size_t>(b) * h * w;
            const double* go = o.grad.data() + static_cast<size_t>(b) * oh * ow;
            const std::int32_t* ap = argmax.data() + static_cast<size_t>(b) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) gplane[ap[i]] += go[i];
        }
    });
}

Tensor avg_pool2d(const Tensor& x, int window) {
    auto px = checked(x, "avg_pool2d");
    if (px->shape.size() != 4) throw DimensionError("avg_pool2d: expected N x C x H x W");
    if (window <= 0) throw ArgumentError("avg_pool2d: window must be positive");
    const int n = px->shape[0], c = px->shape[1], h = px->shape[2], w = px->shape[3];
    if (h % window != 0 || w % window != 0)
        throw DimensionError("avg_pool2d: input dims must divide by the window");
    const int oh = h / window, ow = w / window;
    const double inv = 1.0 / (window * window);
    std::vector<double> out(static_cast<size_t>(n) * c * oh * ow);
    for (int b = 0; b < n * c; ++b) {
        const double* plane = px->data.data() + static_cast<size_t>(b) * h * w;
        double* oplane = out.data() + static_cast<size_t>(b) * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (int fy = 0; fy < window; ++fy)
                    for (int fx = 0; fx < window; ++fx)
                        s += plane[(oy * window + fy) * w + ox * window + fx];
                oplane[oy * ow + ox] = s * inv;
            }
    }
    return make_op_node({n, c, oh, ow}, std::move(out), {px},
                        [px, n, c, h, w, oh, ow, window, inv](detail::Node& o) {
        px->ensure_grad();
        for (int b = 0; b < n * c; ++b) {
            double* gplane = px->grad.data() + static_cast<size_t>(b) * h * w;
            const double* go = o.grad.data() + static_cast<size_t>(b) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double g = go[oy * ow + ox] * inv;
                    for (int fy = 0; fy < window; ++fy)
                        for (int fx = 0; fx < window; ++fx)
                            gplane[(oy * window + fy) * w + ox * window + fx] += g;
                }
        }
    });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    auto px = checked(x, "upsample_nearest");
    if (px->shape.size() != 4) throw DimensionError("upsample_nearest: expected N x C x H x W");
    if (factor <= 0) throw ArgumentError("upsample_nearest: factor must be positive");
    const int n = px->shape[0], c = px->shape[1], h = px->shape[2], w = px->shape[3];
    const int oh = h * factor, ow = w * factor;
    std::vector<double> out(static_cast<size_t>(n) * c * oh * ow);
    for (int b = 0; b < n * c; ++b) {
        const double* plane = px->data.data() + static_cast<size_t>(b) * h * w;
        double* oplane = out.data() + static_cast<size_t>(b) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const double* irow = plane + static_cast<size_t>(oy / factor) * w;
            double* orow = oplane + static_cast<size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) orow[ox] = irow[ox / factor];
        }
    }
    return make_op_node({n, c, oh, ow}, std::move(out), {px},
                        [px, n, c, h, w, oh, ow, factor](detail::Node& o) {
        px->ensure_grad();
        for (int b = 0; b < n * c; ++b) {
            double* gplane = px->grad.data() + static_cast<size_t>(b) * h * w;
            const double* go = o.grad.data() + static_cast<size_t>(b) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    gplane[(oy / factor) * w + ox / factor] += go[oy * ow + ox];
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    auto px = checked(logits, "cross_entropy");
    if (px->shape.size() != 2) throw DimensionError("cross_entropy: expected N x K logits");
    const int n = px->shape[0], k = px->shape[1];
    if (static_cast<int>(labels.size()) != n)
        throw DimensionError("cross_entropy: need one label per row");
    for (int lab : labels)
        if (lab < 0 || lab >= k)
            throw ArgumentError("cross_entropy: label " + std::to_string(lab) + " out of range [0," +
                                std::to_string(k) + ")");
    double total = 0.0;
    std::vector<double> probs(px->data.size());
    for (int r = 0; r < n; ++r) {
        const double* row = px->data.data() + static_cast<size_t>(r) * k;
        double* prow = probs.data() + static_cast<size_t>(r) * k;
        double m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
            prow[j] = std::exp(row[j] - m);
            z += prow[j];
        }
        for (int j = 0; j < k; ++j) prow[j] /= z;
        total += m + std::log(z) - row[labels[r]];
    }
    total /= n;
    return make_op_node({1}, {total}, {px},
                        [px, n, k, labels, probs = std::move(probs)](detail::Node& o) {
        px->ensure_grad();
        const double g = o.grad[0] / n;
        for (int r = 0; r < n; ++r) {
            const double* prow = probs.data() + static_cast<size_t>(r) * k;
            double* gx = px->grad.data() + static_cast<size_t>(r) * k;
            for (int j = 0; j < k; ++j) gx[j] += g * (prow[j] - (j == labels[r] ? 1.0 : 0.0));
        }
    });
}

}  // namespace xdreid
