#pragma once

// The four feature-context excitation blocks: SE, GC, GE (global
// parameter-free variant), and the Gaussian context transformer (GCT).

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fcey/tensor.hpp"

namespace fcey {

enum class FceKind { None, SE, GC, GE, GCT };

inline std::string fce_kind_name(FceKind k) {
    switch (k) {
        case FceKind::None: return "none";
        case FceKind::SE: return "se";
        case FceKind::GC: return "gc";
        case FceKind::GE: return "ge";
        case FceKind::GCT: return "gct";
    }
    return "?";
}

inline FceKind parse_fce_kind(const std::string& s) {
    if (s == "none") return FceKind::None;
    if (s == "se") return FceKind::SE;
    if (s == "gc") return FceKind::GC;
    if (s == "ge") return FceKind::GE;
    if (s == "gct") return FceKind::GCT;
    throw std::invalid_argument("unknown FCE kind: " + s);
}

struct FceConfig {
    int reduction = 16;       // SE / GC bottleneck ratio
    bool se_bias = true;
    int ge_extent = 0;        // 0 = global gather
    double gct_c = 2.0;       // Gaussian width
    double eps = 1e-5;
};

inline int fce_bottleneck(int channels, int reduction) {
    return std::max(1, (channels + reduction - 1) / reduction);
}

inline std::int64_t fce_param_count(FceKind kind, int channels, const FceConfig& cfg = {}) {
    const std::int64_t C = channels;
    const std::int64_t Cb = fce_bottleneck(channels, cfg.reduction);
    switch (kind) {
        case FceKind::None: return 0;
        case FceKind::SE: {
            std::int64_t n = C * Cb + Cb * C;
            if (cfg.se_bias) n += Cb + C;
            return n;
        }
        case FceKind::GC:
            // key projection (+bias), two transform convs (+biases), LN affine
            return (C + 1) + (C * Cb + Cb) + 2 * Cb + (Cb * C + C);
        case FceKind::GE: return 0;   // parameter-free gather
        case FceKind::GCT: return 0;  // parameter-free gate
    }
    return 0;
}

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>*>>;

namespace detail {

template <typename T>
Tensor<T> kaiming_conv(int cout, int cin, int k, std::mt19937& rng) {
    double fan_in = double(cin) * k * k;
    double bound = std::sqrt(6.0 / fan_in);
    return Tensor<T>::uniform({cout, cin, k, k}, rng, T(-bound), T(bound)).set_requires_grad();
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename T>
struct FceLayer {
    FceKind kind = FceKind::None;
    int channels = 0;
    FceConfig cfg;

    // SE
    Tensor<T> se_w1, se_b1, se_w2, se_b2;
    // GC
    Tensor<T> gc_wk, gc_bk, gc_wv1, gc_bv1, gc_ln_gamma, gc_ln_beta, gc_wv2, gc_bv2;

    FceLayer() = default;
    FceLayer(FceKind kind_, int channels_, const FceConfig& cfg_, std::mt19937& rng)
        : kind(kind_), channels(channels_), cfg(cfg_) {
        const int C = channels, Cb = fce_bottleneck(C, cfg.reduction);
        if (kind == FceKind::SE) {
            se_w1 = detail::kaiming_conv<T>(Cb, C, 1, rng);
            se_w2 = detail::kaiming_conv<T>(C, Cb, 1, rng);
            if (cfg.se_bias) {
                se_b1 = Tensor<T>::zeros({Cb}).set_requires_grad();
                se_b2 = Tensor<T>::zeros({C}).set_requires_grad();
            }
        } else if (kind == FceKind::GC) {
            gc_wk = detail::kaiming_conv<T>(1, C, 1, rng);
            gc_bk = Tensor<T>::zeros({1}).set_requires_grad();
            gc_wv1 = detail::kaiming_conv<T>(Cb, C, 1, rng);
            gc_bv1 = Tensor<T>::zeros({Cb}).set_requires_grad();
            gc_ln_gamma = Tensor<T>::ones({Cb}).set_requires_grad();
            gc_ln_beta = Tensor<T>::zeros({Cb}).set_requires_grad();
            gc_wv2 = detail::kaiming_conv<T>(C, Cb, 1, rng);
            gc_bv2 = Tensor<T>::zeros({C}).set_requires_grad();
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != channels)
            throw std::invalid_argument("fce forward: expected " + std::to_string(channels) +
                                        " channels, got " + shape_str(x.shape()));
        switch (kind) {
            case FceKind::None: return x;
            case FceKind::SE: return se_forward(x);
            case FceKind::GC: return gc_forward(x);
            case FceKind::GE: return ge_forward(x);
            case FceKind::GCT: return gct_forward(x);
        }
        return x;
    }

    Tensor<T> se_forward(const Tensor<T>& x) const {
        Tensor<T> z = global_avg_pool(x);
        Tensor<T> h = relu(conv2d(z, se_w1, se_b1));
        Tensor<T> s = sigmoid(conv2d(h, se_w2, se_b2));
        return mul_broadcast(x, s);
    }

    Tensor<T> gc_forward(const Tensor<T>& x) const {
        const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
        Tensor<T> logits = conv2d(x, gc_wk, gc_bk);              // (N,1,H,W)
        Tensor<T> alpha = reshape(softmax(reshape(logits, {N, H * W}), 1), {N, 1, H, W});
        Tensor<T> ctx = attention_pool(x, alpha);                // (N,C,1,1)
        Tensor<T> t = conv2d(ctx, gc_wv1, gc_bv1);
        t = relu(layernorm_channels(t, gc_ln_gamma, gc_ln_beta, T(cfg.eps)));
        t = conv2d(t, gc_wv2, gc_bv2);
        return add_broadcast(x, t);
    }

    Tensor<T> ge_forward(const Tensor<T>& x) const {
        const int H = x.dim(2), W = x.dim(3);
        const int e = cfg.ge_extent;
        if (e <= 0 || e >= H || e >= W) {
            Tensor<T> g = sigmoid(global_avg_pool(x));
            return mul_broadcast(x, g);
        }
        Tensor<T> gathered = avgpool2d(x, e);
        Tensor<T> gate = sigmoid(upsample_nearest_to(gathered, e, H, W));
        return mul(x, gate);
    }

    Tensor<T> gct_forward(const Tensor<T>& x) const {
        if (channels < 2)
            throw std::invalid_argument("gct forward: needs at least 2 channels");
        Tensor<T> z = global_avg_pool(x);
        Tensor<T> zhat = channel_standardize(z, T(cfg.eps));
        // gate a = exp(-zhat^2 / (2 c^2)), in (0, 1]
        T coef = T(-1.0 / (2.0 * cfg.gct_c * cfg.gct_c));
        Tensor<T> a = fcey::exp(scale(mul(zhat, zhat), coef));
        return mul_broadcast(x, a);
    }

    NamedParams<T> params(const std::string& prefix) {
        NamedParams<T> out;
        auto push = [&](const char* n, Tensor<T>& t) {
            if (t.defined()) out.push_back({prefix + "." + n, &t});
        };
        push("se_w1", se_w1);
        push("se_b1", se_b1);
        push("se_w2", se_w2);
        push("se_b2", se_b2);
        push("gc_wk", gc_wk);
        push("gc_bk", gc_bk);
        push("gc_wv1", gc_wv1);
        push("gc_bv1", gc_bv1);
        push("gc_ln_gamma", gc_ln_gamma);
        push("gc_ln_beta", gc_ln_beta);
        push("gc_wv2", gc_wv2);
        push("gc_bv2", gc_bv2);
        return out;
    }
};

// FLOPs of one FCE block at spatial size HxW (2 * MAC convention,
// elementwise gates counted as one op per element).
inline std::int64_t fce_flops(FceKind kind, int channels, int H, int W, const FceConfig& cfg = {}) {
    const std::int64_t C = channels, HW = std::int64_t(H) * W;
    const std::int64_t Cb = fce_bottleneck(channels, cfg.reduction);
    switch (kind) {
        case FceKind::None: return 0;
        case FceKind::SE:
            return C * HW                      // global pool
                   + 2 * C * Cb + 2 * Cb * C   // bottleneck MLP
                   + C * HW;                   // gate multiply
        case FceKind::GC:
            return 2 * C * HW                  // key projection
                   + 3 * HW                    // softmax
                   + 2 * C * HW                // attention pooling
                   + 2 * C * Cb + 2 * Cb * C   // transform convs
                   + 4 * Cb                    // layernorm + relu
                   + C * HW;                   // fusion add
        case FceKind::GE:
            return C * HW                      // gather
                   + 2 * C * HW;               // sigmoid + excite
        case FceKind::GCT:
            return C * HW                      // global pool
                   + 4 * C                     // standardize + gate
                   + C * HW;                   // gate multiply
    }
    return 0;
}

}  // namespace fcey
