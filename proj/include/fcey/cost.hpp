#pragma once

// Static parameter and FLOP accounting over a GraphSpec.
// FLOPs = 2 * multiply-accumulates; elementwise ops (BN, activation,
// pooling, upsampling) are counted by default and can be toggled off.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "fcey/fce.hpp"
#include "fcey/yolo.hpp"

namespace fcey {

struct CostOptions {
    bool include_elementwise = true;
};

namespace detail {

inline std::int64_t convbn_params(int cin, int cout, int k) {
    return std::int64_t(cin) * cout * k * k + 2 * cout;
}

inline std::int64_t node_params(const NodeSpec& n, const ModelConfig& cfg) {
    switch (n.kind) {
        case BlockKind::ConvBNSiLU:
            return convbn_params(n.c_in, n.c_out, n.k);
        case BlockKind::C2f: {
            const int ch = n.c_out / 2;
            std::int64_t p = convbn_params(n.c_in, 2 * ch, 1);
            p += std::int64_t(n.repeats) * 2 * convbn_params(ch, ch, 3);
            p += convbn_params((2 + n.repeats) * ch, n.c_out, 1);
            return p;
        }
        case BlockKind::SPPF: {
            const int ch = n.c_in / 2;
            return convbn_params(n.c_in, ch, 1) + convbn_params(4 * ch, n.c_out, 1);
        }
        case BlockKind::Fce:
            return fce_param_count(n.fce_kind, n.c_in, cfg.fce_cfg);
        case BlockKind::Detect: {
            std::int64_t p = convbn_params(n.c_in, n.box_width, 3) +
                             convbn_params(n.box_width, n.box_width, 3) +
                             std::int64_t(n.box_width) * 4 * cfg.reg_max + 4 * cfg.reg_max;
            p += convbn_params(n.c_in, n.cls_width, 3) +
                 convbn_params(n.cls_width, n.cls_width, 3) +
                 std::int64_t(n.cls_width) * cfg.num_classes + cfg.num_classes;
            return p;
        }
        default:
            return 0;
    }
}

// 2*MAC conv cost (no bias) plus optional BN + activation elementwise cost
inline std::int64_t convbn_flops(int cin, int cout, int k, std::int64_t hw, const CostOptions& opt) {
    std::int64_t f = 2 * std::int64_t(k) * k * cin * cout * hw;
    if (opt.include_elementwise) f += 3 * std::int64_t(cout) * hw;  // BN scale/shift + SiLU
    return f;
}

inline std::int64_t fce_flops_hw(FceKind kind, int channels, std::int64_t hw, const FceConfig& cfg) {
    // same accounting as fce_flops but for a precomputed spatial size
    const std::int64_t C = channels;
    const std::int64_t Cb = fce_bottleneck(channels, cfg.reduction);
    switch (kind) {
        case FceKind::None: return 0;
        case FceKind::SE: return C * hw + 2 * C * Cb + 2 * Cb * C + C * hw;
        case FceKind::GC:
            return 2 * C * hw + 3 * hw + 2 * C * hw + 2 * C * Cb + 2 * Cb * C + 4 * Cb + C * hw;
        case FceKind::GE: return 3 * C * hw;
        case FceKind::GCT: return 2 * C * hw + 4 * C;
    }
    return 0;
}

inline std::int64_t node_flops(const NodeSpec& n, const ModelConfig& cfg, std::int64_t hw_in,
                               std::int64_t hw_out, const CostOptions& opt) {
    switch (n.kind) {
        case BlockKind::ConvBNSiLU:
            return convbn_flops(n.c_in, n.c_out, n.k, hw_out, opt);
        case BlockKind::C2f: {
            const int ch = n.c_out / 2;
            std::int64_t f = convbn_flops(n.c_in, 2 * ch, 1, hw_out, opt);
            f += std::int64_t(n.repeats) * 2 * convbn_flops(ch, ch, 3, hw_out, opt);
            if (opt.include_elementwise && n.shortcut)
                f += std::int64_t(n.repeats) * ch * hw_out;
            f += convbn_flops((2 + n.repeats) * ch, n.c_out, 1, hw_out, opt);
            return f;
        }
        case BlockKind::SPPF: {
            const int ch = n.c_in / 2;
            std::int64_t f = convbn_flops(n.c_in, ch, 1, hw_out, opt);
            if (opt.include_elementwise)
                f += 3 * std::int64_t(n.k) * n.k * ch * hw_out;  // three chained maxpools
            f += convbn_flops(4 * ch, n.c_out, 1, hw_out, opt);
            return f;
        }
        case BlockKind::Upsample:
            return opt.include_elementwise ? std::int64_t(n.c_out) * hw_out : 0;
        case BlockKind::Concat:
            return 0;
        case BlockKind::Fce: {
            // fce_flops takes H,W; hw_out is already the product
            return fce_flops_hw(n.fce_kind, n.c_in, hw_out, cfg.fce_cfg);
        }
        case BlockKind::Detect: {
            std::int64_t f = convbn_flops(n.c_in, n.box_width, 3, hw_out, opt) +
                             convbn_flops(n.box_width, n.box_width, 3, hw_out, opt) +
                             2 * std::int64_t(n.box_width) * 4 * cfg.reg_max * hw_out;
            f += convbn_flops(n.c_in, n.cls_width, 3, hw_out, opt) +
                 convbn_flops(n.cls_width, n.cls_width, 3, hw_out, opt) +
                 2 * std::int64_t(n.cls_width) * cfg.num_classes * hw_out;
            if (opt.include_elementwise)
                f += std::int64_t(n.c_out) * hw_out;  // biases
            return f;
        }
    }
    return 0;
}

}  // namespace detail

struct NodeCost {
    std::string name;
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

struct CostReport {
    std::vector<NodeCost> nodes;
    std::int64_t total_params = 0;
    std::int64_t total_flops = 0;
    int input_hw = 0;
};

inline std::int64_t count_params(const GraphSpec& g) {
    std::int64_t total = 0;
    for (const auto& n : g.nodes) total += detail::node_params(n, g.cfg);
    return total;
}

inline std::int64_t count_flops(const GraphSpec& g, int input_hw, CostOptions opt = {}) {
    if (input_hw % 32 != 0)
        throw std::invalid_argument("count_flops: input size must be divisible by 32");
    std::vector<std::int64_t> side(g.nodes.size());
    std::int64_t total = 0;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const NodeSpec& n = g.nodes[i];
        std::int64_t in_side = n.inputs.empty() || n.inputs[0] == -1
                                   ? input_hw
                                   : side[size_t(n.inputs[0])];
        std::int64_t out_side = in_side;
        if (n.kind == BlockKind::ConvBNSiLU && n.stride == 2) out_side = in_side / 2;
        if (n.kind == BlockKind::Upsample) out_side = in_side * n.stride;
        side[i] = out_side;
        total += detail::node_flops(n, g.cfg, in_side * in_side, out_side * out_side, opt);
    }
    return total;
}

inline CostReport cost_report(const GraphSpec& g, int input_hw, CostOptions opt = {}) {
    CostReport r;
    r.input_hw = input_hw;
    if (input_hw % 32 != 0)
        throw std::invalid_argument("cost_report: input size must be divisible by 32");
    std::vector<std::int64_t> side(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const NodeSpec& n = g.nodes[i];
        std::int64_t in_side = n.inputs.empty() || n.inputs[0] == -1
                                   ? input_hw
                                   : side[size_t(n.inputs[0])];
        std::int64_t out_side = in_side;
        if (n.kind == BlockKind::ConvBNSiLU && n.stride == 2) out_side = in_side / 2;
        if (n.kind == BlockKind::Upsample) out_side = in_side * n.stride;
        side[i] = out_side;
        NodeCost c;
        c.name = n.name;
        c.params = detail::node_params(n, g.cfg);
        c.flops = detail::node_flops(n, g.cfg, in_side * in_side, out_side * out_side, opt);
        r.nodes.push_back(c);
        r.total_params += c.params;
        r.total_flops += c.flops;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Summary tables ("X.XXM / X.XG" rendering)
// ---------------------------------------------------------------------------

struct SummaryRow {
    std::string model;
    std::string scale;
    std::string method;
    std::int64_t params = 0;
    double flops_g = 0.0;
    int input_size = 0;
};

inline std::string format_params_m(std::int64_t params) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2fM", double(params) / 1e6);
    return buf;
}

inline std::string format_flops_g(double flops_g) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fG", flops_g);
    return buf;
}

inline std::string model_label(const ModelConfig& cfg) {
    if (cfg.fce == FceKind::None) return "YOLOv8";
    std::string k = fce_kind_name(cfg.fce);
    for (auto& c : k) c = char(std::toupper(c));
    return "YOLOv8+" + k + "-" + method_name(cfg.method);
}

inline std::vector<SummaryRow> summary_table(const std::vector<ModelConfig>& configs, int input_hw,
                                             CostOptions opt = {}) {
    std::vector<SummaryRow> rows;
    for (const auto& cfg : configs) {
        GraphSpec g = build_model(cfg);
        SummaryRow r;
        r.model = model_label(cfg);
        r.scale = cfg.scale.name;
        r.method = cfg.fce == FceKind::None ? "-" : method_name(cfg.method);
        r.params = count_params(g);
        r.flops_g = double(count_flops(g, input_hw, opt)) / 1e9;
        r.input_size = input_hw;
        rows.push_back(r);
    }
    return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "model,scale,method,params,flops_g,input_size\n";
    for (const auto& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%lld,%.3f,%d\n", r.model.c_str(), r.scale.c_str(),
                      r.method.c_str(), static_cast<long long>(r.params), r.flops_g, r.input_size);
        out += buf;
    }
    return out;
}

}  // namespace fcey
