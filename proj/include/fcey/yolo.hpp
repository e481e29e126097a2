#pragma once

// YOLOv8-style detection graph: declarative GraphSpec built from a
// ModelConfig, plus templated weights and the forward executor.
//
// Insertion methods for the excitation blocks:
//   M1 — one block after SPPF (backbone tail)
//   M2 — one block after the last head C2f (P5 path into Detect)
//   M3 — one block after each of the four head C2f blocks

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcey/fce.hpp"
#include "fcey/tensor.hpp"

namespace fcey {

struct ScaleSpec {
    std::string name;
    double depth;
    double width;
    int max_channels;
};

inline ScaleSpec scale_spec(const std::string& name) {
    if (name == "S" || name == "s") return {"S", 0.33, 0.50, 1024};
    if (name == "M" || name == "m") return {"M", 0.67, 0.75, 768};
    if (name == "L" || name == "l") return {"L", 1.00, 1.00, 512};
    throw std::invalid_argument("unknown scale: " + name + " (expected S, M, or L)");
}

inline int scaled_channels(int base, const ScaleSpec& s) {
    double v = double(std::min(base, s.max_channels)) * s.width;
    int c = int(std::llround(v / 8.0)) * 8;
    return std::max(c, 8);
}

inline int scaled_repeats(int base, const ScaleSpec& s) {
    return std::max(1, int(std::llround(double(base) * s.depth)));
}

enum class Method { M1 = 1, M2 = 2, M3 = 3 };

inline Method parse_method(const std::string& s) {
    if (s == "M1" || s == "m1" || s == "1") return Method::M1;
    if (s == "M2" || s == "m2" || s == "2") return Method::M2;
    if (s == "M3" || s == "m3" || s == "3") return Method::M3;
    throw std::invalid_argument("unknown method: " + s + " (expected M1, M2, or M3)");
}

inline std::string method_name(Method m) { return "M" + std::to_string(int(m)); }

struct ModelConfig {
    ScaleSpec scale = scale_spec("L");
    int num_classes = 9;
    FceKind fce = FceKind::None;
    Method method = Method::M1;
    FceConfig fce_cfg;
    int reg_max = 16;
};

enum class BlockKind { ConvBNSiLU, C2f, SPPF, Upsample, Concat, Fce, Detect };

inline std::string block_kind_name(BlockKind k) {
    switch (k) {
        case BlockKind::ConvBNSiLU: return "conv";
        case BlockKind::C2f: return "c2f";
        case BlockKind::SPPF: return "sppf";
        case BlockKind::Upsample: return "upsample";
        case BlockKind::Concat: return "concat";
        case BlockKind::Fce: return "fce";
        case BlockKind::Detect: return "detect";
    }
    return "?";
}

struct NodeSpec {
    BlockKind kind;
    std::string name;
    std::vector<int> inputs;  // node indices; -1 = network input image
    int c_in = 0;
    int c_out = 0;
    int k = 1;
    int stride = 1;
    int pad = 0;
    int repeats = 0;          // C2f
    bool shortcut = false;    // C2f
    bool in_head = false;     // for insertion-count bookkeeping
    FceKind fce_kind = FceKind::None;
    int box_width = 0;        // Detect c2
    int cls_width = 0;        // Detect c3
};

struct GraphSpec {
    ModelConfig cfg;
    std::vector<NodeSpec> nodes;
    std::array<int, 3> outputs{};          // P3/P4/P5 Detect node indices
    std::array<int, 3> strides{8, 16, 32};
};

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

inline GraphSpec build_model(const ModelConfig& cfg) {
    GraphSpec g;
    g.cfg = cfg;
    auto& nodes = g.nodes;
    const ScaleSpec& sc = cfg.scale;

    auto conv = [&](const std::string& name, int in, int cin, int cout, int k, int s) {
        NodeSpec n{BlockKind::ConvBNSiLU, name, {in}};
        n.c_in = cin; n.c_out = cout; n.k = k; n.stride = s; n.pad = k / 2;
        nodes.push_back(n);
        return int(nodes.size()) - 1;
    };
    auto c2f = [&](const std::string& name, int in, int cin, int cout, int rep, bool shortcut,
                   bool head) {
        NodeSpec n{BlockKind::C2f, name, {in}};
        n.c_in = cin; n.c_out = cout; n.repeats = rep; n.shortcut = shortcut; n.in_head = head;
        nodes.push_back(n);
        return int(nodes.size()) - 1;
    };
    auto fce = [&](const std::string& name, int in, int c, bool head) {
        NodeSpec n{BlockKind::Fce, name, {in}};
        n.c_in = c; n.c_out = c; n.fce_kind = cfg.fce; n.in_head = head;
        nodes.push_back(n);
        return int(nodes.size()) - 1;
    };

    const int c1 = scaled_channels(64, sc);
    const int c2 = scaled_channels(128, sc);
    const int c3 = scaled_channels(256, sc);
    const int c4 = scaled_channels(512, sc);
    const int c5 = scaled_channels(1024, sc);
    const int r3 = scaled_repeats(3, sc);
    const int r6 = scaled_repeats(6, sc);

    // backbone
    int x = conv("backbone.stem", -1, 3, c1, 3, 2);
    x = conv("backbone.down1", x, c1, c2, 3, 2);
    x = c2f("backbone.c2f1", x, c2, c2, r3, true, false);
    x = conv("backbone.down2", x, c2, c3, 3, 2);
    int p3 = c2f("backbone.c2f2", x, c3, c3, r6, true, false);
    x = conv("backbone.down3", p3, c3, c4, 3, 2);
    int p4 = c2f("backbone.c2f3", x, c4, c4, r6, true, false);
    x = conv("backbone.down4", p4, c4, c5, 3, 2);
    x = c2f("backbone.c2f4", x, c5, c5, r3, true, false);
    {
        NodeSpec n{BlockKind::SPPF, "backbone.sppf", {x}};
        n.c_in = c5; n.c_out = c5; n.k = 5;
        nodes.push_back(n);
        x = int(nodes.size()) - 1;
    }
    int p5 = x;
    if (cfg.fce != FceKind::None && cfg.method == Method::M1)
        p5 = fce("backbone.fce", p5, c5, false);

    const bool m3 = cfg.fce != FceKind::None && cfg.method == Method::M3;

    // neck / head: top-down
    NodeSpec up1{BlockKind::Upsample, "head.up1", {p5}};
    up1.c_in = c5; up1.c_out = c5; up1.stride = 2;
    nodes.push_back(up1);
    int u1 = int(nodes.size()) - 1;
    NodeSpec cat1{BlockKind::Concat, "head.cat1", {u1, p4}};
    cat1.c_out = c5 + c4;
    nodes.push_back(cat1);
    int h1 = c2f("head.c2f1", int(nodes.size()) - 1, c5 + c4, c4, r3, false, true);
    if (m3) h1 = fce("head.fce1", h1, c4, true);

    NodeSpec up2{BlockKind::Upsample, "head.up2", {h1}};
    up2.c_in = c4; up2.c_out = c4; up2.stride = 2;
    nodes.push_back(up2);
    int u2 = int(nodes.size()) - 1;
    NodeSpec cat2{BlockKind::Concat, "head.cat2", {u2, p3}};
    cat2.c_out = c4 + c3;
    nodes.push_back(cat2);
    int h2 = c2f("head.c2f2", int(nodes.size()) - 1, c4 + c3, c3, r3, false, true);
    if (m3) h2 = fce("head.fce2", h2, c3, true);
    int out_p3 = h2;

    // bottom-up
    int d1 = conv("head.down1", h2, c3, c3, 3, 2);
    NodeSpec cat3{BlockKind::Concat, "head.cat3", {d1, h1}};
    cat3.c_out = c3 + c4;
    nodes.push_back(cat3);
    int h3 = c2f("head.c2f3", int(nodes.size()) - 1, c3 + c4, c4, r3, false, true);
    if (m3) h3 = fce("head.fce3", h3, c4, true);
    int out_p4 = h3;

    int d2 = conv("head.down2", h3, c4, c4, 3, 2);
    NodeSpec cat4{BlockKind::Concat, "head.cat4", {d2, p5}};
    cat4.c_out = c4 + c5;
    nodes.push_back(cat4);
    int h4 = c2f("head.c2f4", int(nodes.size()) - 1, c4 + c5, c5, r3, false, true);
    if (m3) h4 = fce("head.fce4", h4, c5, true);
    if (cfg.fce != FceKind::None && cfg.method == Method::M2)
        h4 = fce("head.fce", h4, c5, true);
    int out_p5 = h4;

    // decoupled detect at three scales; branch widths follow P3 channels
    const int box_w = std::max({16, c3 / 4, 4 * cfg.reg_max});
    const int cls_w = std::max(c3, std::min(cfg.num_classes, 100));
    const std::array<std::pair<int, int>, 3> det_in = {
        std::pair{out_p3, c3}, std::pair{out_p4, c4}, std::pair{out_p5, c5}};
    for (int i = 0; i < 3; ++i) {
        NodeSpec n{BlockKind::Detect, "detect.p" + std::to_string(3 + i), {det_in[size_t(i)].first}};
        n.c_in = det_in[size_t(i)].second;
        n.c_out = 4 * cfg.reg_max + cfg.num_classes;
        n.box_width = box_w;
        n.cls_width = cls_w;
        n.in_head = true;
        nodes.push_back(n);
        g.outputs[size_t(i)] = int(nodes.size()) - 1;
    }
    return g;
}

// channel bookkeeping check: every node's declared input channels match
// its producers; graph is acyclic by construction (inputs < index).
inline void validate_graph(const GraphSpec& g) {
    auto out_channels = [&](int idx) { return g.nodes[size_t(idx)].c_out; };
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const NodeSpec& n = g.nodes[i];
        for (int in : n.inputs) {
            if (in >= int(i))
                throw std::invalid_argument("graph: node " + n.name + " consumes a later node");
            if (in < -1)
                throw std::invalid_argument("graph: bad input index at " + n.name);
        }
        switch (n.kind) {
            case BlockKind::Concat: {
                int total = 0;
                for (int in : n.inputs) total += out_channels(in);
                if (total != n.c_out)
                    throw std::invalid_argument("graph: concat channel mismatch at " + n.name);
                break;
            }
            case BlockKind::Upsample:
                break;
            default: {
                int in = n.inputs.at(0);
                int cin = in == -1 ? 3 : out_channels(in);
                if (cin != n.c_in)
                    throw std::invalid_argument("graph: channel mismatch at " + n.name + ": input " +
                                                std::to_string(cin) + " declared " +
                                                std::to_string(n.c_in));
            }
        }
    }
    int detect = 0;
    for (const auto& n : g.nodes)
        if (n.kind == BlockKind::Detect) ++detect;
    if (detect != 3) throw std::invalid_argument("graph: expected exactly 3 detect outputs");
}

inline int count_fce_nodes(const GraphSpec& g, bool head_only = false, bool backbone_only = false) {
    int n = 0;
    for (const auto& node : g.nodes)
        if (node.kind == BlockKind::Fce &&
            (!head_only || node.in_head) && (!backbone_only || !node.in_head))
            ++n;
    return n;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

template <typename T>
struct ConvBN {
    Tensor<T> w, gamma, beta;
    std::vector<T> run_mean, run_var;
    int stride = 1, pad = 0;
    T bn_momentum = T(0.03);
    Activation act = Activation::SiLU;

    ConvBN() = default;
    ConvBN(int cin, int cout, int k, int stride_, std::mt19937& rng,
           Activation act_ = Activation::SiLU)
        : stride(stride_), pad(k / 2), act(act_) {
        w = detail::kaiming_conv<T>(cout, cin, k, rng);
        gamma = Tensor<T>::ones({cout}).set_requires_grad();
        beta = Tensor<T>::zeros({cout}).set_requires_grad();
        run_mean.assign(size_t(cout), T(0));
        run_var.assign(size_t(cout), T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> y = conv2d(x, w, stride, pad);
        y = batchnorm(y, gamma, beta, run_mean, run_var, T(1e-5), training, bn_momentum);
        return activation(y, act);
    }
};

// plain conv with bias (detect branch tips)
template <typename T>
struct PlainConv {
    Tensor<T> w, b;
    PlainConv() = default;
    PlainConv(int cin, int cout, int k, std::mt19937& rng, T bias_init = T(0)) {
        w = detail::kaiming_conv<T>(cout, cin, k, rng);
        b = Tensor<T>::full({cout}, bias_init).set_requires_grad();
    }
    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, 1, w.dim(2) / 2); }
};

template <typename T>
struct NodeWeights {
    // ConvBNSiLU / SPPF(cv1,cv2) / C2f(cv1,cv2 + bottleneck pairs)
    ConvBN<T> cv1, cv2;
    std::vector<std::pair<ConvBN<T>, ConvBN<T>>> bottlenecks;
    FceLayer<T> fce;
    // Detect branches
    ConvBN<T> box1, box2, cls1, cls2;
    PlainConv<T> box_out, cls_out;
};

template <typename T>
class Model {
public:
    Model() = default;
    Model(GraphSpec graph, unsigned seed = 0) : graph_(std::move(graph)) {
        std::mt19937 rng(seed);
        weights_.resize(graph_.nodes.size());
        for (size_t i = 0; i < graph_.nodes.size(); ++i) {
            const NodeSpec& n = graph_.nodes[i];
            NodeWeights<T>& w = weights_[i];
            switch (n.kind) {
                case BlockKind::ConvBNSiLU:
                    w.cv1 = ConvBN<T>(n.c_in, n.c_out, n.k, n.stride, rng);
                    break;
                case BlockKind::C2f: {
                    const int ch = n.c_out / 2;
                    w.cv1 = ConvBN<T>(n.c_in, 2 * ch, 1, 1, rng);
                    for (int r = 0; r < n.repeats; ++r)
                        w.bottlenecks.push_back({ConvBN<T>(ch, ch, 3, 1, rng),
                                                 ConvBN<T>(ch, ch, 3, 1, rng)});
                    w.cv2 = ConvBN<T>((2 + n.repeats) * ch, n.c_out, 1, 1, rng);
                    break;
                }
                case BlockKind::SPPF: {
                    const int ch = n.c_in / 2;
                    w.cv1 = ConvBN<T>(n.c_in, ch, 1, 1, rng);
                    w.cv2 = ConvBN<T>(4 * ch, n.c_out, 1, 1, rng);
                    break;
                }
                case BlockKind::Fce:
                    w.fce = FceLayer<T>(n.fce_kind, n.c_in, graph_.cfg.fce_cfg, rng);
                    break;
                case BlockKind::Detect: {
                    w.box1 = ConvBN<T>(n.c_in, n.box_width, 3, 1, rng);
                    w.box2 = ConvBN<T>(n.box_width, n.box_width, 3, 1, rng);
                    w.box_out = PlainConv<T>(n.box_width, 4 * graph_.cfg.reg_max, 1, rng);
                    // start the distance distribution maximally soft: zero
                    // logits keep early regression gradients well-behaved
                    std::fill(w.box_out.w.data().begin(), w.box_out.w.data().end(), T(0));
                    w.cls1 = ConvBN<T>(n.c_in, n.cls_width, 3, 1, rng);
                    w.cls2 = ConvBN<T>(n.cls_width, n.cls_width, 3, 1, rng);
                    // class bias set for prior detection probability 0.01
                    T prior = T(std::log(0.01 / 0.99));
                    w.cls_out = PlainConv<T>(n.cls_width, graph_.cfg.num_classes, 1, rng, prior);
                    break;
                }
                default:
                    break;
            }
        }
    }

    const GraphSpec& graph() const { return graph_; }
    GraphSpec& graph() { return graph_; }

    // Raw maps (N, 4*reg_max+nc, H/8, W/8), (.., /16), (.., /32).
    std::array<Tensor<T>, 3> forward(const Tensor<T>& images, bool training = false) {
        if (images.rank() != 4 || images.dim(1) != 3)
            throw std::invalid_argument("forward: images must be (N,3,H,W)");
        if (images.dim(2) % 32 != 0 || images.dim(3) % 32 != 0)
            throw std::invalid_argument("forward: H and W must be divisible by 32, got " +
                                        shape_str(images.shape()));
        std::vector<Tensor<T>> outs(graph_.nodes.size());
        auto input_of = [&](const NodeSpec& n, size_t which = 0) -> const Tensor<T>& {
            int idx = n.inputs[which];
            return idx == -1 ? images : outs[size_t(idx)];
        };
        for (size_t i = 0; i < graph_.nodes.size(); ++i) {
            const NodeSpec& n = graph_.nodes[i];
            NodeWeights<T>& w = weights_[i];
            switch (n.kind) {
                case BlockKind::ConvBNSiLU:
                    outs[i] = w.cv1.forward(input_of(n), training);
                    break;
                case BlockKind::C2f:
                    outs[i] = c2f_forward(n, w, input_of(n), training);
                    break;
                case BlockKind::SPPF:
                    outs[i] = sppf_forward(n, w, input_of(n), training);
                    break;
                case BlockKind::Upsample:
                    outs[i] = upsample_nearest(input_of(n), n.stride);
                    break;
                case BlockKind::Concat: {
                    std::vector<Tensor<T>> xs;
                    for (size_t j = 0; j < n.inputs.size(); ++j) xs.push_back(input_of(n, j));
                    outs[i] = concat(xs);
                    break;
                }
                case BlockKind::Fce:
                    outs[i] = w.fce.forward(input_of(n));
                    break;
                case BlockKind::Detect: {
                    const Tensor<T>& x = input_of(n);
                    Tensor<T> box = w.box_out.forward(
                        w.box2.forward(w.box1.forward(x, training), training));
                    Tensor<T> cls = w.cls_out.forward(
                        w.cls2.forward(w.cls1.forward(x, training), training));
                    outs[i] = concat<T>({box, cls});
                    break;
                }
            }
        }
        return {outs[size_t(graph_.outputs[0])], outs[size_t(graph_.outputs[1])],
                outs[size_t(graph_.outputs[2])]};
    }

    NamedParams<T> params() {
        NamedParams<T> all;
        auto push_convbn = [&](const std::string& pfx, ConvBN<T>& c) {
            if (!c.w.defined()) return;
            all.push_back({pfx + ".w", &c.w});
            all.push_back({pfx + ".gamma", &c.gamma});
            all.push_back({pfx + ".beta", &c.beta});
        };
        for (size_t i = 0; i < graph_.nodes.size(); ++i) {
            const NodeSpec& n = graph_.nodes[i];
            NodeWeights<T>& w = weights_[i];
            const std::string& pfx = n.name;
            push_convbn(pfx + ".cv1", w.cv1);
            for (size_t r = 0; r < w.bottlenecks.size(); ++r) {
                push_convbn(pfx + ".m" + std::to_string(r) + ".cv1", w.bottlenecks[r].first);
                push_convbn(pfx + ".m" + std::to_string(r) + ".cv2", w.bottlenecks[r].second);
            }
            push_convbn(pfx + ".cv2", w.cv2);
            if (n.kind == BlockKind::Fce)
                for (auto& p : w.fce.params(pfx)) all.push_back(p);
            if (n.kind == BlockKind::Detect) {
                push_convbn(pfx + ".box1", w.box1);
                push_convbn(pfx + ".box2", w.box2);
                all.push_back({pfx + ".box_out.w", &w.box_out.w});
                all.push_back({pfx + ".box_out.b", &w.box_out.b});
                push_convbn(pfx + ".cls1", w.cls1);
                push_convbn(pfx + ".cls2", w.cls2);
                all.push_back({pfx + ".cls_out.w", &w.cls_out.w});
                all.push_back({pfx + ".cls_out.b", &w.cls_out.b});
            }
        }
        return all;
    }

    // (name, mean pointer, var pointer) for every batchnorm
    std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
        std::vector<std::pair<std::string, std::vector<T>*>> all;
        auto push = [&](const std::string& pfx, ConvBN<T>& c) {
            if (!c.w.defined()) return;
            all.push_back({pfx + ".run_mean", &c.run_mean});
            all.push_back({pfx + ".run_var", &c.run_var});
        };
        for (size_t i = 0; i < graph_.nodes.size(); ++i) {
            const NodeSpec& n = graph_.nodes[i];
            NodeWeights<T>& w = weights_[i];
            push(n.name + ".cv1", w.cv1);
            for (size_t r = 0; r < w.bottlenecks.size(); ++r) {
                push(n.name + ".m" + std::to_string(r) + ".cv1", w.bottlenecks[r].first);
                push(n.name + ".m" + std::to_string(r) + ".cv2", w.bottlenecks[r].second);
            }
            push(n.name + ".cv2", w.cv2);
            if (n.kind == BlockKind::Detect) {
                push(n.name + ".box1", w.box1);
                push(n.name + ".box2", w.box2);
                push(n.name + ".cls1", w.cls1);
                push(n.name + ".cls2", w.cls2);
            }
        }
        return all;
    }

    NodeWeights<T>& node_weights(size_t i) { return weights_[i]; }

    // Momentum used when training-mode forwards update the running
    // statistics; 1.0 makes a single forward adopt the batch statistics.
    void set_bn_momentum(T m) {
        for (auto& w : weights_) {
            w.cv1.bn_momentum = m;
            w.cv2.bn_momentum = m;
            for (auto& [a, b] : w.bottlenecks) {
                a.bn_momentum = m;
                b.bn_momentum = m;
            }
            w.box1.bn_momentum = m;
            w.box2.bn_momentum = m;
            w.cls1.bn_momentum = m;
            w.cls2.bn_momentum = m;
        }
    }

private:
    static Tensor<T> c2f_forward(const NodeSpec& n, NodeWeights<T>& w, const Tensor<T>& x,
                                 bool training) {
        const int ch = n.c_out / 2;
        Tensor<T> y = w.cv1.forward(x, training);
        std::vector<Tensor<T>> parts;
        parts.push_back(slice_channels(y, 0, ch));
        parts.push_back(slice_channels(y, ch, 2 * ch));
        for (auto& [b1, b2] : w.bottlenecks) {
            Tensor<T> t = b2.forward(b1.forward(parts.back(), training), training);
            parts.push_back(n.shortcut ? add(parts.back(), t) : t);
        }
        return w.cv2.forward(concat(parts), training);
    }

    static Tensor<T> sppf_forward(const NodeSpec& n, NodeWeights<T>& w, const Tensor<T>& x,
                                  bool training) {
        Tensor<T> y = w.cv1.forward(x, training);
        Tensor<T> p1 = maxpool2d(y, n.k, 1, n.k / 2);
        Tensor<T> p2 = maxpool2d(p1, n.k, 1, n.k / 2);
        Tensor<T> p3 = maxpool2d(p2, n.k, 1, n.k / 2);
        return w.cv2.forward(concat<T>({y, p1, p2, p3}), training);
    }

    GraphSpec graph_;
    std::vector<NodeWeights<T>> weights_;
};

}  // namespace fcey
