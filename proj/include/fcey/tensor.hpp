#pragma once

// Dense NCHW tensor with tape-based reverse-mode autodiff.
// Desk-scale: eager execution, naive-but-cache-friendly kernels,
// deterministic reduction order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace fcey {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backprop;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : n_(std::make_shared<TensorNode<T>>()) {
        n_->shape = std::move(shape);
        n_->data.assign(static_cast<size_t>(numel(n_->shape)), fill);
    }
    Tensor(Shape shape, std::vector<T> values)
        : n_(std::make_shared<TensorNode<T>>()) {
        n_->shape = std::move(shape);
        if (static_cast<std::int64_t>(values.size()) != numel(n_->shape))
            throw std::invalid_argument("tensor: data length does not match shape " + shape_str(n_->shape));
        n_->data = std::move(values);
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
    static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
    static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
    static Tensor randn(Shape s, std::mt19937& rng, T stddev = T(1)) {
        Tensor t(std::move(s));
        std::normal_distribution<double> d(0.0, double(stddev));
        for (auto& v : t.data()) v = T(d(rng));
        return t;
    }
    static Tensor uniform(Shape s, std::mt19937& rng, T lo, T hi) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> d{double(lo), double(hi)};
        for (auto& v : t.data()) v = T(d(rng));
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(n_->data.size()); }

    std::vector<T>& data() { return n_->data; }
    const std::vector<T>& data() const { return n_->data; }
    std::vector<T>& grad() { n_->ensure_grad(); return n_->grad; }
    const std::vector<T>& grad() const { const_cast<TensorNode<T>*>(n_.get())->ensure_grad(); return n_->grad; }

    T item() const {
        if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar");
        return n_->data[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool rg = true) { n_->requires_grad = rg; return *this; }
    void zero_grad() { if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0)); }

    std::shared_ptr<TensorNode<T>> node() const { return n_; }

    bool all_finite() const {
        for (T v : n_->data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

private:
    std::shared_ptr<TensorNode<T>> n_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<std::shared_ptr<TensorNode<T>>> parents,
                      std::function<void(TensorNode<T>&)> backprop) {
    Tensor<T> out(std::move(shape));
    bool rg = false;
    for (auto& p : parents) rg = rg || p->requires_grad;
    if (rg) {
        out.node()->requires_grad = true;
        out.node()->parents = std::move(parents);
        out.node()->backprop = std::move(backprop);
    }
    return out;
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape: reverse-topological replay over the recorded op graph.
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
public:
    static std::vector<TensorNode<T>*> topo_order(TensorNode<T>* root) {
        std::vector<TensorNode<T>*> order;
        std::unordered_set<TensorNode<T>*> seen;
        // iterative post-order DFS
        std::vector<std::pair<TensorNode<T>*, size_t>> stack;
        stack.push_back({root, 0});
        seen.insert(root);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                TensorNode<T>* p = node->parents[next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        return order;  // parents before children; replay in reverse
    }
};

template <typename T>
void backward(const Tensor<T>& loss) {
    detail::check(loss.size() == 1, "backward: output must be scalar");
    if (!loss.requires_grad()) return;
    auto order = Tape<T>::topo_order(loss.node().get());
    for (auto* n : order) n->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd dfdx) {
    Tensor<T> out = make_result<T>(x.shape(), {x.node()},
        [xp = x.node(), dfdx](TensorNode<T>& self) {
            if (!xp->requires_grad) return;
            xp->ensure_grad();
            for (size_t i = 0; i < self.data.size(); ++i)
                xp->grad[i] += self.grad[i] * dfdx(xp->data[i], self.data[i]);
        });
    auto& y = out.data();
    const auto& xd = x.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = fwd(xd[i]);
    return out;
}

template <typename T, typename Fwd, typename BwdA, typename BwdB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, BwdA dfda, BwdB dfdb,
                    const char* name) {
    check(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = make_result<T>(a.shape(), {a.node(), b.node()},
        [ap = a.node(), bp = b.node(), dfda, dfdb](TensorNode<T>& self) {
            if (ap->requires_grad) {
                ap->ensure_grad();
                for (size_t i = 0; i < self.data.size(); ++i)
                    ap->grad[i] += self.grad[i] * dfda(ap->data[i], bp->data[i]);
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                for (size_t i = 0; i < self.data.size(); ++i)
                    bp->grad[i] += self.grad[i] * dfdb(ap->data[i], bp->data[i]);
            }
        });
    auto& y = out.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = fwd(a.data()[i], b.data()[i]);
    return out;
}

}  // namespace detail

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b,
        [](T x, T y) { return x + y; },
        [](T, T) { return T(1); }, [](T, T) { return T(1); }, "add");
}
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b,
        [](T x, T y) { return x - y; },
        [](T, T) { return T(1); }, [](T, T) { return T(-1); }, "sub");
}
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b,
        [](T x, T y) { return x * y; },
        [](T, T y) { return y; }, [](T x, T) { return x; }, "mul");
}
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b,
        [](T x, T y) { return x / y; },
        [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); }, "div");
}
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b,
        [](T x, T y) { return std::min(x, y); },
        [](T x, T y) { return x <= y ? T(1) : T(0); },
        [](T x, T y) { return x <= y ? T(0) : T(1); }, "minimum");
}
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(a, b,
        [](T x, T y) { return std::max(x, y); },
        [](T x, T y) { return x >= y ? T(1) : T(0); },
        [](T x, T y) { return x >= y ? T(0) : T(1); }, "maximum");
}

template <typename T> Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary_op(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary_op(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}
template <typename T> Tensor<T> neg(const Tensor<T>& x) { return scale(x, T(-1)); }
template <typename T> Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <typename T> Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::abs(v); },
                            [](T v, T) { return v >= T(0) ? T(1) : T(-1); });
}

enum class Activation { Sigmoid, SiLU, ReLU };

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(x,
        [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}
template <typename T> Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                            [](T v, T) { return v > T(0) ? T(1) : T(0); });
}
template <typename T> Tensor<T> silu(const Tensor<T>& x) {
    return detail::unary_op(x,
        [](T v) { T s = T(1) / (T(1) + std::exp(-v)); return v * s; },
        [](T v, T) {
            T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}
template <typename T> Tensor<T> activation(const Tensor<T>& x, Activation kind) {
    switch (kind) {
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::SiLU: return silu(x);
        case Activation::ReLU: return relu(x);
    }
    throw std::invalid_argument("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// Reductions and shape ops
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out = detail::make_result<T>({1}, {x.node()},
        [xp = x.node()](TensorNode<T>& self) {
            xp->ensure_grad();
            for (auto& g : xp->grad) g += self.grad[0];
        });
    T acc = T(0);
    for (T v : x.data()) acc += v;
    out.data()[0] = acc;
    return out;
}

template <typename T> Tensor<T> mean(const Tensor<T>& x) {
    T inv = T(1) / T(x.size());
    Tensor<T> out = detail::make_result<T>({1}, {x.node()},
        [xp = x.node(), inv](TensorNode<T>& self) {
            xp->ensure_grad();
            for (auto& g : xp->grad) g += self.grad[0] * inv;
        });
    T acc = T(0);
    for (T v : x.data()) acc += v;
    out.data()[0] = acc * inv;
    return out;
}

// sum along one axis, removing it
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
    detail::check(axis >= 0 && axis < x.rank(), "sum_axis: bad axis");
    const Shape& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[size_t(i)];
    std::int64_t n = s[size_t(axis)];
    Shape os;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) os.push_back(s[size_t(i)]);
    if (os.empty()) os = {1};
    Tensor<T> out = detail::make_result<T>(os, {x.node()},
        [xp = x.node(), outer, inner, n](TensorNode<T>& self) {
            xp->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t k = 0; k < n; ++k)
                    for (std::int64_t i = 0; i < inner; ++i)
                        xp->grad[size_t((o * n + k) * inner + i)] += self.grad[size_t(o * inner + i)];
        });
    auto& y = out.data();
    const auto& xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t k = 0; k < n; ++k)
            for (std::int64_t i = 0; i < inner; ++i)
                y[size_t(o * inner + i)] += xd[size_t((o * n + k) * inner + i)];
    return out;
}

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    detail::check(numel(new_shape) == x.size(), "reshape: element count mismatch");
    Tensor<T> out = detail::make_result<T>(new_shape, {x.node()},
        [xp = x.node()](TensorNode<T>& self) {
            xp->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += self.grad[i];
        });
    out.data() = x.data();
    return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted
// ---------------------------------------------------------------------------

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis) {
    detail::check(axis >= 0 && axis < x.rank(), "softmax: bad axis");
    const Shape& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[size_t(i)];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[size_t(i)];
    std::int64_t n = s[size_t(axis)];
    Tensor<T> out = detail::make_result<T>(s, {x.node()},
        [xp = x.node(), outer, inner, n](TensorNode<T>& self) {
            xp->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    T dot = T(0);
                    for (std::int64_t k = 0; k < n; ++k) {
                        size_t idx = size_t((o * n + k) * inner + i);
                        dot += self.grad[idx] * self.data[idx];
                    }
                    for (std::int64_t k = 0; k < n; ++k) {
                        size_t idx = size_t((o * n + k) * inner + i);
                        xp->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                    }
                }
        });
    auto& y = out.data();
    const auto& xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::int64_t k = 0; k < n; ++k)
                mx = std::max(mx, xd[size_t((o * n + k) * inner + i)]);
            T denom = T(0);
            for (std::int64_t k = 0; k < n; ++k) {
                size_t idx = size_t((o * n + k) * inner + i);
                y[idx] = std::exp(xd[idx] - mx);
                denom += y[idx];
            }
            for (std::int64_t k = 0; k < n; ++k) y[size_t((o * n + k) * inner + i)] /= denom;
        }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d — im2col + tight gemm loops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* col) {
    // col layout: (C*kh*kw) x (Ho*Wo)
    const std::int64_t hw = std::int64_t(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col + ((std::int64_t(c) * kh + ky) * kw + kx) * hw;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + std::int64_t(oy) * Wo, dst + std::int64_t(oy + 1) * Wo, T(0));
                        continue;
                    }
                    const T* src_row = x + (std::int64_t(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        dst[std::int64_t(oy) * Wo + ox] = (ix >= 0 && ix < W) ? src_row[ix] : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_accumulate(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                       int Ho, int Wo, T* dx) {
    const std::int64_t hw = std::int64_t(Ho) * Wo;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* src = col + ((std::int64_t(c) * kh + ky) * kw + kx) * hw;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    T* dst_row = dx + (std::int64_t(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst_row[ix] += src[std::int64_t(oy) * Wo + ox];
                    }
                }
            }
}

// out[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_acc(const T* A, const T* B, T* out, std::int64_t M, std::int64_t K, std::int64_t N) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * K * N > 1 << 18)
#endif
    for (std::int64_t m = 0; m < M; ++m) {
        T* orow = out + m * N;
        for (std::int64_t k = 0; k < K; ++k) {
            T a = A[m * K + k];
            if (a == T(0)) continue;
            const T* brow = B + k * N;
            for (std::int64_t n = 0; n < N; ++n) orow[n] += a * brow[n];
        }
    }
}

// out[M x K] += A[M x N] * B[K x N]^T
template <typename T>
void gemm_nt_acc(const T* A, const T* B, T* out, std::int64_t M, std::int64_t N, std::int64_t K) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * K * N > 1 << 18)
#endif
    for (std::int64_t m = 0; m < M; ++m) {
        const T* arow = A + m * N;
        T* orow = out + m * K;
        for (std::int64_t k = 0; k < K; ++k) {
            const T* brow = B + k * N;
            T acc = T(0);
            for (std::int64_t n = 0; n < N; ++n) acc += arow[n] * brow[n];
            orow[k] += acc;
        }
    }
}

// out[K x N] += A[M x K]^T * B[M x N]
template <typename T>
void gemm_tn_acc(const T* A, const T* B, T* out, std::int64_t M, std::int64_t K, std::int64_t N) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (M * K * N > 1 << 18)
#endif
    for (std::int64_t k = 0; k < K; ++k) {
        T* orow = out + k * N;
        for (std::int64_t m = 0; m < M; ++m) {
            T a = A[m * K + k];
            if (a == T(0)) continue;
            const T* brow = B + m * N;
            for (std::int64_t n = 0; n < N; ++n) orow[n] += a * brow[n];
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride = 1, int pad = 0, int groups = 1) {
    detail::check(x.rank() == 4, "conv2d: input must be NCHW");
    detail::check(w.rank() == 4, "conv2d: weight must be (Cout,Cin/g,kh,kw)");
    detail::check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    detail::check(Cin % groups == 0 && Cout % groups == 0, "conv2d: channels not divisible by groups");
    detail::check(w.dim(1) == Cin / groups,
                  "conv2d: weight input channels " + std::to_string(w.dim(1)) +
                  " do not match x channels " + std::to_string(Cin) + "/g");
    const bool has_bias = b.defined();
    if (has_bias) detail::check(b.size() == Cout, "conv2d: bias length mismatch");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    detail::check(Ho > 0 && Wo > 0, "conv2d: kernel larger than padded input");

    const int cg_in = Cin / groups, cg_out = Cout / groups;
    const std::int64_t K = std::int64_t(cg_in) * kh * kw;
    const std::int64_t HW = std::int64_t(Ho) * Wo;

    std::vector<std::shared_ptr<TensorNode<T>>> parents = {x.node(), w.node()};
    if (has_bias) parents.push_back(b.node());
    auto backprop = [xp = x.node(), wp = w.node(),
                     bp = has_bias ? b.node() : nullptr,
                     N, Cin, H, W, Cout, kh, kw, stride, pad, groups,
                     cg_in, cg_out, K, Ho, Wo, HW](TensorNode<T>& self) {
        std::vector<T> col(size_t(K * HW));
        std::vector<T> dcol(size_t(K * HW));
        if (xp->requires_grad) xp->ensure_grad();
        if (wp->requires_grad) wp->ensure_grad();
        if (bp && bp->requires_grad) bp->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int g = 0; g < groups; ++g) {
                const T* xs = xp->data.data() + (std::int64_t(n) * Cin + g * cg_in) * H * W;
                const T* dy = self.grad.data() + (std::int64_t(n) * Cout + g * cg_out) * HW;
                const T* wg = wp->data.data() + std::int64_t(g) * cg_out * K;
                detail::im2col(xs, cg_in, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
                if (wp->requires_grad) {
                    T* dw = wp->grad.data() + std::int64_t(g) * cg_out * K;
                    detail::gemm_nt_acc(dy, col.data(), dw, cg_out, HW, K);
                }
                if (xp->requires_grad) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_tn_acc(wg, dy, dcol.data(), cg_out, K, HW);
                    T* dx = xp->grad.data() + (std::int64_t(n) * Cin + g * cg_in) * H * W;
                    detail::col2im_accumulate(dcol.data(), cg_in, H, W, kh, kw, stride, pad, Ho, Wo, dx);
                }
                if (bp && bp->requires_grad) {
                    T* db = bp->grad.data() + std::int64_t(g) * cg_out;
                    for (int c = 0; c < cg_out; ++c) {
                        T acc = T(0);
                        const T* row = dy + std::int64_t(c) * HW;
                        for (std::int64_t j = 0; j < HW; ++j) acc += row[j];
                        db[c] += acc;
                    }
                }
            }
    };
    Tensor<T> out = detail::make_result<T>({N, Cout, Ho, Wo}, std::move(parents), std::move(backprop));

    std::vector<T> col(size_t(K * HW));
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const T* xs = x.data().data() + (std::int64_t(n) * Cin + g * cg_in) * H * W;
            T* ys = out.data().data() + (std::int64_t(n) * Cout + g * cg_out) * HW;
            const T* wg = w.data().data() + std::int64_t(g) * cg_out * K;
            detail::im2col(xs, cg_in, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
            detail::gemm_acc(wg, col.data(), ys, cg_out, K, HW);
            if (has_bias)
                for (int c = 0; c < cg_out; ++c) {
                    T bias = b.data()[size_t(g * cg_out + c)];
                    T* row = ys + std::int64_t(c) * HW;
                    for (std::int64_t j = 0; j < HW; ++j) row[j] += bias;
                }
        }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int pad = 0, int groups = 1) {
    return conv2d(x, w, Tensor<T>(), stride, pad, groups);
}

// ---------------------------------------------------------------------------
// batchnorm — training mode uses batch stats and updates running buffers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    std::vector<T>& running_mean, std::vector<T>& running_var,
                    T eps, bool training, T momentum = T(0.03)) {
    detail::check(x.rank() == 4, "batchnorm: input must be NCHW");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::check(gamma.size() == C && beta.size() == C &&
                  int(running_mean.size()) == C && int(running_var.size()) == C,
                  "batchnorm: per-channel parameter length must equal C");
    detail::check(eps > T(0), "batchnorm: eps must be positive");
    const std::int64_t HW = std::int64_t(H) * W;
    const std::int64_t cnt = std::int64_t(N) * HW;

    std::vector<T> use_mean(size_t(C), T(0));
    std::vector<T> use_var(size_t(C), T(0));
    if (training) {
        for (int c = 0; c < C; ++c) {
            T m = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = x.data().data() + (std::int64_t(n) * C + c) * HW;
                for (std::int64_t j = 0; j < HW; ++j) m += p[j];
            }
            m /= T(cnt);
            T v = T(0);
            for (int n = 0; n < N; ++n) {
                const T* p = x.data().data() + (std::int64_t(n) * C + c) * HW;
                for (std::int64_t j = 0; j < HW; ++j) { T d = p[j] - m; v += d * d; }
            }
            v /= T(cnt);
            use_mean[size_t(c)] = m;
            use_var[size_t(c)] = v;
            // population variance is tracked (not the n/(n-1) corrected one)
            // so inference reproduces training exactly once the averages
            // have adopted the batch statistics
            running_mean[size_t(c)] = (T(1) - momentum) * running_mean[size_t(c)] + momentum * m;
            running_var[size_t(c)] = (T(1) - momentum) * running_var[size_t(c)] + momentum * v;
        }
    } else {
        use_mean = running_mean;
        use_var = running_var;
    }

    auto backprop = [xp = x.node(), gp = gamma.node(), bp = beta.node(),
                     use_mean, use_var, eps, training, N, C, HW, cnt](TensorNode<T>& self) {
        if (xp->requires_grad) xp->ensure_grad();
        if (gp->requires_grad) gp->ensure_grad();
        if (bp->requires_grad) bp->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const T m = use_mean[size_t(c)];
            const T inv_std = T(1) / std::sqrt(use_var[size_t(c)] + eps);
            const T g = gp->data[size_t(c)];
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xs = xp->data.data() + (std::int64_t(n) * C + c) * HW;
                const T* dys = self.grad.data() + (std::int64_t(n) * C + c) * HW;
                for (std::int64_t j = 0; j < HW; ++j) {
                    sum_dy += dys[j];
                    sum_dy_xhat += dys[j] * (xs[j] - m) * inv_std;
                }
            }
            if (gp->requires_grad) gp->grad[size_t(c)] += sum_dy_xhat;
            if (bp->requires_grad) bp->grad[size_t(c)] += sum_dy;
            if (!xp->requires_grad) continue;
            for (int n = 0; n < N; ++n) {
                const T* xs = xp->data.data() + (std::int64_t(n) * C + c) * HW;
                const T* dys = self.grad.data() + (std::int64_t(n) * C + c) * HW;
                T* dxs = xp->grad.data() + (std::int64_t(n) * C + c) * HW;
                if (training) {
                    for (std::int64_t j = 0; j < HW; ++j) {
                        T xhat = (xs[j] - m) * inv_std;
                        dxs[j] += g * inv_std *
                                  (dys[j] - sum_dy / T(cnt) - xhat * sum_dy_xhat / T(cnt));
                    }
                } else {
                    for (std::int64_t j = 0; j < HW; ++j) dxs[j] += g * inv_std * dys[j];
                }
            }
        }
    };
    Tensor<T> out = detail::make_result<T>(x.shape(), {x.node(), gamma.node(), beta.node()},
                                           std::move(backprop));
    for (int c = 0; c < C; ++c) {
        const T m = use_mean[size_t(c)];
        const T inv_std = T(1) / std::sqrt(use_var[size_t(c)] + eps);
        const T g = gamma.data()[size_t(c)], bb = beta.data()[size_t(c)];
        for (int n = 0; n < N; ++n) {
            const T* xs = x.data().data() + (std::int64_t(n) * C + c) * HW;
            T* ys = out.data().data() + (std::int64_t(n) * C + c) * HW;
            for (std::int64_t j = 0; j < HW; ++j) ys[j] = g * (xs[j] - m) * inv_std + bb;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling / resampling / broadcast ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride, int pad) {
    detail::check(x.rank() == 4, "maxpool2d: input must be NCHW");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    detail::check(Ho > 0 && Wo > 0, "maxpool2d: window larger than padded input");
    auto argmax = std::make_shared<std::vector<std::int64_t>>(size_t(std::int64_t(N) * C * Ho * Wo));
    auto backprop = [xp = x.node(), argmax](TensorNode<T>& self) {
        xp->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            std::int64_t src = (*argmax)[i];
            if (src >= 0) xp->grad[size_t(src)] += self.grad[i];
        }
    };
    Tensor<T> out = detail::make_result<T>({N, C, Ho, Wo}, {x.node()}, std::move(backprop));
    const auto& xd = x.data();
    auto& y = out.data();
    std::int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            std::int64_t idx = ((std::int64_t(n) * C + c) * H + iy) * W + ix;
                            if (xd[size_t(idx)] > best) { best = xd[size_t(idx)]; best_idx = idx; }
                        }
                    }
                    // fully padded window: treat as 0
                    y[size_t(oi)] = best_idx >= 0 ? best : T(0);
                    (*argmax)[size_t(oi)] = best_idx;
                }
    return out;
}

// average pooling with window k, stride k; border windows are clipped
template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& x, int k) {
    detail::check(x.rank() == 4 && k >= 1, "avgpool2d: bad input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = (H + k - 1) / k, Wo = (W + k - 1) / k;
    auto backprop = [xp = x.node(), N, C, H, W, k, Ho, Wo](TensorNode<T>& self) {
        xp->ensure_grad();
        std::int64_t oi = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox, ++oi) {
                        int y0 = oy * k, x0 = ox * k;
                        int y1 = std::min(y0 + k, H), x1 = std::min(x0 + k, W);
                        T share = self.grad[size_t(oi)] / T((y1 - y0) * (x1 - x0));
                        for (int iy = y0; iy < y1; ++iy)
                            for (int ix = x0; ix < x1; ++ix)
                                xp->grad[size_t(((std::int64_t(n) * C + c) * H + iy) * W + ix)] += share;
                    }
    };
    Tensor<T> out = detail::make_result<T>({N, C, Ho, Wo}, {x.node()}, std::move(backprop));
    const auto& xd = x.data();
    auto& yd = out.data();
    std::int64_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox, ++oi) {
                    int y0 = oy * k, x0 = ox * k;
                    int y1 = std::min(y0 + k, H), x1 = std::min(x0 + k, W);
                    T acc = T(0);
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix)
                            acc += xd[size_t(((std::int64_t(n) * C + c) * H + iy) * W + ix)];
                    yd[size_t(oi)] = acc / T((y1 - y0) * (x1 - x0));
                }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    detail::check(x.rank() == 4, "global_avg_pool: input must be NCHW");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t HW = std::int64_t(H) * W;
    auto backprop = [xp = x.node(), N, C, HW](TensorNode<T>& self) {
        xp->ensure_grad();
        for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
            T share = self.grad[size_t(nc)] / T(HW);
            T* dst = xp->grad.data() + nc * HW;
            for (std::int64_t j = 0; j < HW; ++j) dst[j] += share;
        }
    };
    Tensor<T> out = detail::make_result<T>({N, C, 1, 1}, {x.node()}, std::move(backprop));
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc) {
        const T* src = x.data().data() + nc * HW;
        T acc = T(0);
        for (std::int64_t j = 0; j < HW; ++j) acc += src[j];
        out.data()[size_t(nc)] = acc / T(HW);
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int s) {
    detail::check(x.rank() == 4 && s >= 1, "upsample_nearest: bad input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H * s, Wo = W * s;
    auto backprop = [xp = x.node(), N, C, H, W, s, Ho, Wo](TensorNode<T>& self) {
        xp->ensure_grad();
        for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox)
                    xp->grad[size_t((nc * H + oy / s) * W + ox / s)] +=
                        self.grad[size_t((nc * Ho + oy) * Wo + ox)];
    };
    Tensor<T> out = detail::make_result<T>({N, C, Ho, Wo}, {x.node()}, std::move(backprop));
    const auto& xd = x.data();
    auto& yd = out.data();
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox)
                yd[size_t((nc * Ho + oy) * Wo + ox)] = xd[size_t((nc * H + oy / s) * W + ox / s)];
    return out;
}

// nearest upsample by integer factor s, cropped to (Ho, Wo)
template <typename T>
Tensor<T> upsample_nearest_to(const Tensor<T>& x, int s, int Ho, int Wo) {
    detail::check(x.rank() == 4 && s >= 1, "upsample_nearest_to: bad input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::check(Ho <= H * s && Wo <= W * s, "upsample_nearest_to: target exceeds upsampled size");
    auto backprop = [xp = x.node(), N, C, H, W, s, Ho, Wo](TensorNode<T>& self) {
        xp->ensure_grad();
        for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox)
                    xp->grad[size_t((nc * H + oy / s) * W + ox / s)] +=
                        self.grad[size_t((nc * Ho + oy) * Wo + ox)];
    };
    Tensor<T> out = detail::make_result<T>({N, C, Ho, Wo}, {x.node()}, std::move(backprop));
    for (std::int64_t nc = 0; nc < std::int64_t(N) * C; ++nc)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox)
                out.data()[size_t((nc * Ho + oy) * Wo + ox)] =
                    x.data()[size_t((nc * H + oy / s) * W + ox / s)];
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs) {
    detail::check(!xs.empty(), "concat: empty input list");
    const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int Ctot = 0;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    for (const auto& x : xs) {
        detail::check(x.rank() == 4, "concat: inputs must be NCHW");
        detail::check(x.dim(0) == N && x.dim(2) == H && x.dim(3) == W,
                      "concat: non-channel extents differ");
        Ctot += x.dim(1);
        parents.push_back(x.node());
    }
    const std::int64_t HW = std::int64_t(H) * W;
    auto backprop = [parents, N, Ctot, HW](TensorNode<T>& self) {
        for (int n = 0; n < N; ++n) {
            std::int64_t coff = 0;
            for (auto& p : parents) {
                const int Ci = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    const T* src = self.grad.data() + (std::int64_t(n) * Ctot + coff) * HW;
                    T* dst = p->grad.data() + std::int64_t(n) * Ci * HW;
                    for (std::int64_t j = 0; j < std::int64_t(Ci) * HW; ++j) dst[j] += src[j];
                }
                coff += Ci;
            }
        }
    };
    Tensor<T> out = detail::make_result<T>({N, Ctot, H, W}, parents, std::move(backprop));
    for (int n = 0; n < N; ++n) {
        std::int64_t coff = 0;
        for (const auto& x : xs) {
            const int Ci = x.dim(1);
            const T* src = x.data().data() + std::int64_t(n) * Ci * HW;
            T* dst = out.data().data() + (std::int64_t(n) * Ctot + coff) * HW;
            std::copy(src, src + std::int64_t(Ci) * HW, dst);
            coff += Ci;
        }
    }
    return out;
}

// channel slice [c0, c1) of an NCHW tensor
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
    detail::check(x.rank() == 4, "slice_channels: input must be NCHW");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::check(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels: bad channel range");
    const std::int64_t HW = std::int64_t(H) * W;
    const int Cs = c1 - c0;
    auto backprop = [xp = x.node(), N, C, c0, Cs, HW](TensorNode<T>& self) {
        xp->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* src = self.grad.data() + std::int64_t(n) * Cs * HW;
            T* dst = xp->grad.data() + (std::int64_t(n) * C + c0) * HW;
            for (std::int64_t j = 0; j < std::int64_t(Cs) * HW; ++j) dst[j] += src[j];
        }
    };
    Tensor<T> out = detail::make_result<T>({N, Cs, H, W}, {x.node()}, std::move(backprop));
    for (int n = 0; n < N; ++n) {
        const T* src = x.data().data() + (std::int64_t(n) * C + c0) * HW;
        T* dst = out.data().data() + std::int64_t(n) * Cs * HW;
        std::copy(src, src + std::int64_t(Cs) * HW, dst);
    }
    return out;
}

// y[n,c,h,w] = x[n,c,h,w] * g[n,c,0,0]
template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& x, const Tensor<T>& g) {
    detail::check(x.rank() == 4 && g.rank() == 4, "mul_broadcast: rank-4 inputs required");
    detail::check(g.dim(0) == x.dim(0) && g.dim(1) == x.dim(1) && g.dim(2) == 1 && g.dim(3) == 1,
                  "mul_broadcast: gate must be (N,C,1,1)");
    const std::int64_t NC = std::int64_t(x.dim(0)) * x.dim(1);
    const std::int64_t HW = std::int64_t(x.dim(2)) * x.dim(3);
    auto backprop = [xp = x.node(), gp = g.node(), NC, HW](TensorNode<T>& self) {
        if (xp->requires_grad) {
            xp->ensure_grad();
            for (std::int64_t nc = 0; nc < NC; ++nc) {
                T gv = gp->data[size_t(nc)];
                for (std::int64_t j = 0; j < HW; ++j)
                    xp->grad[size_t(nc * HW + j)] += self.grad[size_t(nc * HW + j)] * gv;
            }
        }
        if (gp->requires_grad) {
            gp->ensure_grad();
            for (std::int64_t nc = 0; nc < NC; ++nc) {
                T acc = T(0);
                for (std::int64_t j = 0; j < HW; ++j)
                    acc += self.grad[size_t(nc * HW + j)] * xp->data[size_t(nc * HW + j)];
                gp->grad[size_t(nc)] += acc;
            }
        }
    };
    Tensor<T> out = detail::make_result<T>(x.shape(), {x.node(), g.node()}, std::move(backprop));
    for (std::int64_t nc = 0; nc < NC; ++nc) {
        T gv = g.data()[size_t(nc)];
        for (std::int64_t j = 0; j < HW; ++j)
            out.data()[size_t(nc * HW + j)] = x.data()[size_t(nc * HW + j)] * gv;
    }
    return out;
}

// y[n,c,h,w] = x[n,c,h,w] + v[n,c,0,0]
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& v) {
    detail::check(x.rank() == 4 && v.rank() == 4, "add_broadcast: rank-4 inputs required");
    detail::check(v.dim(0) == x.dim(0) && v.dim(1) == x.dim(1) && v.dim(2) == 1 && v.dim(3) == 1,
                  "add_broadcast: addend must be (N,C,1,1)");
    const std::int64_t NC = std::int64_t(x.dim(0)) * x.dim(1);
    const std::int64_t HW = std::int64_t(x.dim(2)) * x.dim(3);
    auto backprop = [xp = x.node(), vp = v.node(), NC, HW](TensorNode<T>& self) {
        if (xp->requires_grad) {
            xp->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += self.grad[i];
        }
        if (vp->requires_grad) {
            vp->ensure_grad();
            for (std::int64_t nc = 0; nc < NC; ++nc) {
                T acc = T(0);
                for (std::int64_t j = 0; j < HW; ++j) acc += self.grad[size_t(nc * HW + j)];
                vp->grad[size_t(nc)] += acc;
            }
        }
    };
    Tensor<T> out = detail::make_result<T>(x.shape(), {x.node(), v.node()}, std::move(backprop));
    for (std::int64_t nc = 0; nc < NC; ++nc) {
        T vv = v.data()[size_t(nc)];
        for (std::int64_t j = 0; j < HW; ++j)
            out.data()[size_t(nc * HW + j)] = x.data()[size_t(nc * HW + j)] + vv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization over the channel axis
// ---------------------------------------------------------------------------

// x is (N,C) or (N,C,1,1); normalize across C with population variance,
// eps inside the sqrt, then affine.
template <typename T>
Tensor<T> layernorm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             T eps = T(1e-5)) {
    detail::check(x.rank() == 2 || (x.rank() == 4 && x.dim(2) == 1 && x.dim(3) == 1),
                  "layernorm_channels: input must be (N,C) or (N,C,1,1)");
    detail::check(eps > T(0), "layernorm_channels: eps must be positive");
    const int N = x.dim(0), C = x.dim(1);
    detail::check(gamma.size() == C && beta.size() == C, "layernorm_channels: affine length mismatch");
    auto backprop = [xp = x.node(), gp = gamma.node(), bp = beta.node(), N, C, eps](TensorNode<T>& self) {
        if (xp->requires_grad) xp->ensure_grad();
        if (gp->requires_grad) gp->ensure_grad();
        if (bp->requires_grad) bp->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* xs = xp->data.data() + std::int64_t(n) * C;
            const T* dys = self.grad.data() + std::int64_t(n) * C;
            T m = T(0);
            for (int c = 0; c < C; ++c) m += xs[c];
            m /= T(C);
            T v = T(0);
            for (int c = 0; c < C; ++c) { T d = xs[c] - m; v += d * d; }
            v /= T(C);
            T inv_std = T(1) / std::sqrt(v + eps);
            T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
            for (int c = 0; c < C; ++c) {
                T xhat = (xs[c] - m) * inv_std;
                T dxhat = dys[c] * gp->data[size_t(c)];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                if (gp->requires_grad) gp->grad[size_t(c)] += dys[c] * xhat;
                if (bp->requires_grad) bp->grad[size_t(c)] += dys[c];
            }
            if (!xp->requires_grad) continue;
            T* dxs = xp->grad.data() + std::int64_t(n) * C;
            for (int c = 0; c < C; ++c) {
                T xhat = (xs[c] - m) * inv_std;
                T dxhat = dys[c] * gp->data[size_t(c)];
                dxs[c] += inv_std * (dxhat - sum_dxhat / T(C) - xhat * sum_dxhat_xhat / T(C));
            }
        }
    };
    Tensor<T> out = detail::make_result<T>(x.shape(), {x.node(), gamma.node(), beta.node()},
                                           std::move(backprop));
    for (int n = 0; n < N; ++n) {
        const T* xs = x.data().data() + std::int64_t(n) * C;
        T* ys = out.data().data() + std::int64_t(n) * C;
        T m = T(0);
        for (int c = 0; c < C; ++c) m += xs[c];
        m /= T(C);
        T v = T(0);
        for (int c = 0; c < C; ++c) { T d = xs[c] - m; v += d * d; }
        v /= T(C);
        T inv_std = T(1) / std::sqrt(v + eps);
        for (int c = 0; c < C; ++c)
            ys[c] = gamma.data()[size_t(c)] * (xs[c] - m) * inv_std + beta.data()[size_t(c)];
    }
    return out;
}

// z is (N,C,1,1); standardize across C per sample with the (std + eps)
// convention used by the Gaussian-gate transform.
template <typename T>
Tensor<T> channel_standardize(const Tensor<T>& z, T eps = T(1e-5)) {
    detail::check(z.rank() == 4 && z.dim(2) == 1 && z.dim(3) == 1,
                  "channel_standardize: input must be (N,C,1,1)");
    const int N = z.dim(0), C = z.dim(1);
    auto backprop = [zp = z.node(), N, C, eps](TensorNode<T>& self) {
        zp->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* zs = zp->data.data() + std::int64_t(n) * C;
            const T* gs = self.grad.data() + std::int64_t(n) * C;
            T m = T(0);
            for (int c = 0; c < C; ++c) m += zs[c];
            m /= T(C);
            T v = T(0);
            for (int c = 0; c < C; ++c) { T d = zs[c] - m; v += d * d; }
            v /= T(C);
            T s = std::sqrt(v);
            T d = s + eps;
            T sum_g = T(0), sum_g_cent = T(0);
            for (int c = 0; c < C; ++c) {
                sum_g += gs[c];
                sum_g_cent += gs[c] * (zs[c] - m);
            }
            T* dzs = zp->grad.data() + std::int64_t(n) * C;
            for (int c = 0; c < C; ++c) {
                T dz = gs[c] / d - sum_g / (T(C) * d);
                if (s > T(0)) dz -= (zs[c] - m) * sum_g_cent / (T(C) * s * d * d);
                dzs[c] += dz;
            }
        }
    };
    Tensor<T> out = detail::make_result<T>(z.shape(), {z.node()}, std::move(backprop));
    for (int n = 0; n < N; ++n) {
        const T* zs = z.data().data() + std::int64_t(n) * C;
        T* ys = out.data().data() + std::int64_t(n) * C;
        T m = T(0);
        for (int c = 0; c < C; ++c) m += zs[c];
        m /= T(C);
        T v = T(0);
        for (int c = 0; c < C; ++c) { T d = zs[c] - m; v += d * d; }
        v /= T(C);
        T d = std::sqrt(v) + eps;
        for (int c = 0; c < C; ++c) ys[c] = (zs[c] - m) / d;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attention pooling: ctx[n,c] = sum_hw alpha[n,0,h,w] * x[n,c,h,w]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> attention_pool(const Tensor<T>& x, const Tensor<T>& alpha) {
    detail::check(x.rank() == 4 && alpha.rank() == 4, "attention_pool: rank-4 inputs required");
    detail::check(alpha.dim(0) == x.dim(0) && alpha.dim(1) == 1 &&
                  alpha.dim(2) == x.dim(2) && alpha.dim(3) == x.dim(3),
                  "attention_pool: alpha must be (N,1,H,W)");
    const int N = x.dim(0), C = x.dim(1);
    const std::int64_t HW = std::int64_t(x.dim(2)) * x.dim(3);
    auto backprop = [xp = x.node(), ap = alpha.node(), N, C, HW](TensorNode<T>& self) {
        if (xp->requires_grad) xp->ensure_grad();
        if (ap->requires_grad) ap->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const T* al = ap->data.data() + std::int64_t(n) * HW;
            for (int c = 0; c < C; ++c) {
                T dctx = self.grad[size_t(std::int64_t(n) * C + c)];
                const T* xs = xp->data.data() + (std::int64_t(n) * C + c) * HW;
                if (xp->requires_grad) {
                    T* dxs = xp->grad.data() + (std::int64_t(n) * C + c) * HW;
                    for (std::int64_t j = 0; j < HW; ++j) dxs[j] += al[j] * dctx;
                }
                if (ap->requires_grad) {
                    T* das = ap->grad.data() + std::int64_t(n) * HW;
                    for (std::int64_t j = 0; j < HW; ++j) das[j] += xs[j] * dctx;
                }
            }
        }
    };
    Tensor<T> out = detail::make_result<T>({N, C, 1, 1}, {x.node(), alpha.node()}, std::move(backprop));
    for (int n = 0; n < N; ++n) {
        const T* al = alpha.data().data() + std::int64_t(n) * HW;
        for (int c = 0; c < C; ++c) {
            const T* xs = x.data().data() + (std::int64_t(n) * C + c) * HW;
            T acc = T(0);
            for (std::int64_t j = 0; j < HW; ++j) acc += al[j] * xs[j];
            out.data()[size_t(std::int64_t(n) * C + c)] = acc;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cell gathering for detection heads.
// indices are (n, y, x) triples into an (N,C,H,W) map; output is (P, C).
// ---------------------------------------------------------------------------

struct CellIndex {
    int n, y, x;
};

template <typename T>
Tensor<T> gather_cells(const Tensor<T>& map, const std::vector<CellIndex>& cells) {
    detail::check(map.rank() == 4, "gather_cells: input must be NCHW");
    const int C = map.dim(1), H = map.dim(2), W = map.dim(3);
    const int P = static_cast<int>(cells.size());
    for (const auto& ci : cells)
        detail::check(ci.n >= 0 && ci.n < map.dim(0) && ci.y >= 0 && ci.y < H &&
                      ci.x >= 0 && ci.x < W, "gather_cells: index out of range");
    auto backprop = [mp = map.node(), cells, C, H, W](TensorNode<T>& self) {
        mp->ensure_grad();
        for (size_t p = 0; p < cells.size(); ++p)
            for (int c = 0; c < C; ++c)
                mp->grad[size_t(((std::int64_t(cells[p].n) * C + c) * H + cells[p].y) * W + cells[p].x)] +=
                    self.grad[p * size_t(C) + size_t(c)];
    };
    Tensor<T> out = detail::make_result<T>({P, C}, {map.node()}, std::move(backprop));
    for (size_t p = 0; p < cells.size(); ++p)
        for (int c = 0; c < C; ++c)
            out.data()[p * size_t(C) + size_t(c)] =
                map.data()[size_t(((std::int64_t(cells[p].n) * C + c) * H + cells[p].y) * W + cells[p].x)];
    return out;
}

// ---------------------------------------------------------------------------
// Stable binary cross-entropy with logits; targets are constants.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, const Tensor<T>& targets) {
    detail::check(logits.shape() == targets.shape(), "bce: shape mismatch");
    const T inv = T(1) / T(logits.size());
    auto backprop = [lp = logits.node(), tp = targets.node(), inv](TensorNode<T>& self) {
        lp->ensure_grad();
        for (size_t i = 0; i < lp->data.size(); ++i) {
            T s = T(1) / (T(1) + std::exp(-lp->data[i]));
            lp->grad[i] += self.grad[0] * (s - tp->data[i]) * inv;
        }
    };
    Tensor<T> out = detail::make_result<T>({1}, {logits.node(), targets.node()}, std::move(backprop));
    T acc = T(0);
    for (size_t i = 0; i < logits.data().size(); ++i) {
        T z = logits.data()[i], t = targets.data()[i];
        acc += std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    out.data()[0] = acc * inv;
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle
// ---------------------------------------------------------------------------

template <typename T, typename F>
std::vector<T> finite_diff_grad(F f, const Tensor<T>& x, T h) {
    detail::check(h > T(0), "finite_diff_grad: h must be positive");
    std::vector<T> g(x.data().size());
    Tensor<T> probe(x.shape());
    probe.data() = x.data();
    for (size_t i = 0; i < g.size(); ++i) {
        T orig = probe.data()[i];
        probe.data()[i] = orig + h;
        T fp = f(probe);
        probe.data()[i] = orig - h;
        T fm = f(probe);
        probe.data()[i] = orig;
        g[i] = (fp - fm) / (T(2) * h);
    }
    return g;
}

template <typename T>
T max_rel_error(const std::vector<T>& a, const std::vector<T>& b) {
    T worst = T(0);
    for (size_t i = 0; i < a.size(); ++i) {
        T denom = std::max({std::abs(a[i]), std::abs(b[i]), T(1e-3)});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

}  // namespace fcey
