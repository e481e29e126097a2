// fcey — command-line surface for the FCE-YOLOv8 reproduction library.
//
// Subcommands: summary, gradcheck, split, augment, train-toy, predict,
// eval, pr-export.  Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fcey/checkpoint.hpp"
#include "fcey/cost.hpp"
#include "fcey/data.hpp"
#include "fcey/eval.hpp"
#include "fcey/fce.hpp"
#include "fcey/infer.hpp"
#include "fcey/png_io.hpp"
#include "fcey/tensor.hpp"
#include "fcey/train.hpp"
#include "fcey/yolo.hpp"

namespace fs = std::filesystem;
using namespace fcey;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << text;
}

ModelConfig make_config(const std::string& scale, int nc, const std::string& fce,
                        const std::string& method) {
    ModelConfig cfg;
    cfg.scale = scale_spec(scale);
    cfg.num_classes = nc;
    cfg.fce = parse_fce_kind(fce);
    cfg.method = parse_method(method);
    return cfg;
}

// ---------------------------------------------------------------------------
// summary
// ---------------------------------------------------------------------------

struct SummaryArgs {
    std::string scale = "L", fce = "none", method = "M1", out;
    int nc = 9, input_size = 640;
    bool all = false;
};

void run_summary(const SummaryArgs& a) {
    std::vector<ModelConfig> configs;
    if (a.all) {
        for (const char* s : {"S", "M", "L"}) {
            configs.push_back(make_config(s, a.nc, "none", "M1"));
            for (const char* k : {"se", "gc", "ge", "gct"})
                for (const char* m : {"M1", "M2", "M3"})
                    configs.push_back(make_config(s, a.nc, k, m));
        }
    } else {
        configs.push_back(make_config(a.scale, a.nc, a.fce, a.method));
    }
    auto rows = summary_table(configs, a.input_size);
    std::printf("%-16s %-5s %-6s %10s %9s %6s\n", "Model", "Scale", "Method", "Params", "FLOPs",
                "Input");
    for (const auto& r : rows)
        std::printf("%-16s %-5s %-6s %10s %9s %6d\n", r.model.c_str(), r.scale.c_str(),
                    r.method.c_str(), format_params_m(r.params).c_str(),
                    format_flops_g(r.flops_g).c_str(), r.input_size);
    if (!a.out.empty()) write_text_file(a.out, summary_csv(rows));
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

double gradcheck_fce(FceKind kind, int seeds) {
    double worst = 0;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(unsigned(1000 + s));
        FceConfig fcfg;
        FceLayer<double> layer(kind, 8, fcfg, rng);
        Tensor<double> x = Tensor<double>::uniform({2, 8, 5, 5}, rng, -1.0, 1.0);
        Tensor<double> probe({2, 8, 5, 5}, x.data());
        probe.set_requires_grad();
        Tensor<double> loss = sum(layer.forward(probe));
        backward(loss);
        auto fd = finite_diff_grad<double>(
            [&](const Tensor<double>& p) { return sum(layer.forward(p)).item(); }, x, 1e-5);
        worst = std::max(worst, double(max_rel_error(probe.grad(), fd)));
    }
    return worst;
}

double gradcheck_tensor_ops(int seeds) {
    double worst = 0;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937 rng(unsigned(2000 + s));
        Tensor<double> x = Tensor<double>::uniform({2, 4, 6, 6}, rng, -1.0, 1.0);
        Tensor<double> w = Tensor<double>::uniform({4, 4, 3, 3}, rng, -0.5, 0.5);
        auto f = [&](const Tensor<double>& p) {
            return sum(silu(conv2d(p, w, 1, 1))).item();
        };
        Tensor<double> probe({2, 4, 6, 6}, x.data());
        probe.set_requires_grad();
        backward(sum(silu(conv2d(probe, w, 1, 1))));
        auto fd = finite_diff_grad<double>(f, x, 1e-5);
        worst = std::max(worst, double(max_rel_error(probe.grad(), fd)));

        Tensor<double> probe2({2, 4, 6, 6}, x.data());
        probe2.set_requires_grad();
        backward(sum(mul(softmax(probe2, 1), sigmoid(probe2))));
        auto fd2 = finite_diff_grad<double>(
            [&](const Tensor<double>& p) { return sum(mul(softmax(p, 1), sigmoid(p))).item(); }, x,
            1e-5);
        worst = std::max(worst, double(max_rel_error(probe2.grad(), fd2)));
    }
    return worst;
}

struct GradcheckArgs {
    std::string module = "all";
    int seeds = 5;
};

void run_gradcheck(const GradcheckArgs& a) {
    std::vector<std::pair<std::string, double>> results;
    auto want = [&](const std::string& m) { return a.module == "all" || a.module == m; };
    if (want("tensor")) results.push_back({"tensor", gradcheck_tensor_ops(a.seeds)});
    if (want("se")) results.push_back({"se", gradcheck_fce(FceKind::SE, a.seeds)});
    if (want("gc")) results.push_back({"gc", gradcheck_fce(FceKind::GC, a.seeds)});
    if (want("ge")) results.push_back({"ge", gradcheck_fce(FceKind::GE, a.seeds)});
    if (want("gct")) results.push_back({"gct", gradcheck_fce(FceKind::GCT, a.seeds)});
    bool ok = true;
    for (const auto& [name, err] : results) {
        bool pass = err < 1e-4;
        ok = ok && pass;
        std::printf("%-8s max rel. error: %.3e  [%s]\n", name.c_str(), err,
                    pass ? "pass" : "FAIL");
    }
    if (!ok) throw std::runtime_error("gradient check failed (max rel. error >= 1e-4)");
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

struct SplitArgs {
    int n_from_list = 0;
    std::string list, out;
    std::vector<double> ratios{0.7, 0.2, 0.1};
    unsigned seed = 0;
};

void run_split(const SplitArgs& a) {
    std::vector<std::string> items;
    if (!a.list.empty()) {
        std::istringstream is(read_text_file(a.list));
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) items.push_back(line);
    } else if (a.n_from_list > 0) {
        for (int i = 0; i < a.n_from_list; ++i) items.push_back("item_" + std::to_string(i));
    } else {
        throw std::runtime_error("split: provide --list or --n-from-list");
    }
    SplitSpec spec{a.ratios[0], a.ratios[1], a.ratios[2], a.seed};
    auto r = split_dataset(items, spec);
    std::printf("train %zu valid %zu test %zu total %zu\n", r.train.size(), r.valid.size(),
                r.test.size(), r.train.size() + r.valid.size() + r.test.size());
    if (!a.out.empty()) {
        auto dump = [&](const std::string& suffix, const std::vector<std::string>& xs) {
            std::string text;
            for (const auto& x : xs) text += x + "\n";
            write_text_file(a.out + "." + suffix + ".txt", text);
        };
        dump("train", r.train);
        dump("valid", r.valid);
        dump("test", r.test);
    }
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

struct AugmentArgs {
    std::string in_dir, out_dir;
    double alpha = 1.2, gamma = 10.0;
    int count = 0;
};

void run_augment(const AugmentArgs& a) {
    if (a.count > 0) {
        std::printf("index: %d -> %d items\n", a.count, 2 * a.count);
        return;
    }
    if (a.in_dir.empty() || a.out_dir.empty())
        throw std::runtime_error("augment: provide --in-dir and --out-dir (or --count)");
    if (!fs::is_directory(a.in_dir)) throw std::runtime_error("not a directory: " + a.in_dir);
    fs::create_directories(a.out_dir);
    AugmentSpec spec;
    spec.alpha = a.alpha;
    spec.gamma = a.gamma;
    std::vector<fs::path> inputs;
    for (const auto& e : fs::directory_iterator(a.in_dir))
        if (e.path().extension() == ".png") inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
    int n = 0;
    for (const auto& p : inputs) {
        Image im = read_png(p.string());
        write_png((fs::path(a.out_dir) / p.filename()).string(), im);
        Image aug = augment_contrast_brightness(im, spec);
        write_png((fs::path(a.out_dir) / (p.stem().string() + "_aug.png")).string(), aug);
        ++n;
    }
    std::printf("images: %d -> %d\n", n, 2 * n);
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

struct TrainToyArgs {
    std::string scale = "S", fce = "none", method = "M1", out;
    int nc = 9, steps = 200, images = 2, img_size = 64;
    unsigned seed = 0;
    double lr = 0.01;
    std::string dump_dir;
};

void run_train_toy(const TrainToyArgs& a) {
    ModelConfig cfg = make_config(a.scale, a.nc, a.fce, a.method);
    Model<float> model(build_model(cfg), a.seed);
    auto dataset = synth_dataset_multiscale(a.images, a.img_size, a.nc, a.seed);
    if (!a.dump_dir.empty()) {
        fs::create_directories(fs::path(a.dump_dir) / "images");
        fs::create_directories(fs::path(a.dump_dir) / "labels");
        for (size_t i = 0; i < dataset.size(); ++i) {
            std::string id = std::to_string(i);
            write_png((fs::path(a.dump_dir) / "images" / (id + ".png")).string(),
                      dataset[i].image);
            std::string text;
            for (const auto& l : dataset[i].labels) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f\n", l.class_id, l.cx,
                              l.cy, l.w, l.h);
                text += buf;
            }
            write_text_file((fs::path(a.dump_dir) / "labels" / (id + ".txt")).string(), text);
        }
    }
    OptimState<float> opt;
    opt.lr = float(a.lr);
    TrainResult r = train_loop(model, dataset, a.steps, opt, a.images);
    double first = r.losses.front(), last = r.losses.back();
    double reduction = 100.0 * (1.0 - last / first);
    std::int64_t touched = 0;
    for (bool b : r.param_grad_seen) touched += b;
    std::printf("steps %d  loss %.6f -> %.6f  (%.1f%% reduction)\n", a.steps, first, last,
                reduction);
    std::printf("parameters receiving a nonzero gradient: %lld / %zu\n",
                (long long)touched, r.param_grad_seen.size());
    if (!a.out.empty()) {
        save_checkpoint(model, a.out);
        std::printf("checkpoint written: %s.json / %s.bin\n", a.out.c_str(), a.out.c_str());
    }
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string scale = "S", fce = "none", method = "M1", ckpt, image, out;
    int nc = 9, input_size = 640, image_id = 0;
    unsigned seed = 0;
    double conf = 0.25, nms_iou = 0.45;
};

void run_predict(const PredictArgs& a) {
    if (a.image.empty()) throw std::runtime_error("predict: provide --image");
    ModelConfig cfg = make_config(a.scale, a.nc, a.fce, a.method);
    Model<float> model(build_model(cfg), a.seed);
    if (!a.ckpt.empty()) load_checkpoint(model, a.ckpt);
    Image im = read_png(a.image);
    auto [net_img, tf] = letterbox(im, a.input_size);
    Tensor<float> x = image_to_input<float>({&net_img});
    auto maps = model.forward(x, /*training=*/false);
    DecodeConfig dc;
    dc.reg_max = cfg.reg_max;
    dc.num_classes = a.nc;
    dc.conf_threshold = a.conf;
    dc.nms_iou = a.nms_iou;
    auto dets = decode(maps, model.graph().strides, dc, net_img.w, net_img.h, a.image_id);
    dets = nms(dets, dc.nms_iou, /*class_aware=*/true);
    for (auto& d : dets) d.box = tf.to_original(d.box);
    std::string text = format_predictions(dets);
    if (a.out.empty())
        std::fputs(text.c_str(), stdout);
    else
        write_text_file(a.out, text);
    std::fprintf(stderr, "%zu detections\n", dets.size());
}

// ---------------------------------------------------------------------------
// eval / pr-export
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string gt, pred, out;
    int img_w = 64, img_h = 64;
};

std::pair<std::vector<Detection>, std::vector<GroundTruthBox>> load_eval_inputs(
    const EvalArgs& a) {
    if (!fs::is_directory(a.gt)) throw std::runtime_error("not a directory: " + a.gt);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.gt))
        if (e.path().extension() == ".txt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<GroundTruthBox> gts;
    int idx = 0;
    for (const auto& p : files) {
        std::string stem = p.stem().string();
        int image_id = idx;
        if (!stem.empty() && stem.find_first_not_of("0123456789") == std::string::npos)
            image_id = std::stoi(stem);
        auto parsed = parse_yolo_labels(read_text_file(p.string()));
        for (const auto& w : parsed.warnings) std::fprintf(stderr, "%s: %s\n", p.c_str(), w.c_str());
        for (const auto& l : parsed.labels)
            gts.push_back(to_pixel_box(l, image_id, a.img_w, a.img_h));
        ++idx;
    }
    auto dets = parse_predictions(read_text_file(a.pred));
    return {dets, gts};
}

void run_eval(const EvalArgs& a) {
    auto [dets, gts] = load_eval_inputs(a);
    EvalReport rep = evaluate(dets, gts);
    std::printf("mAP@50: %.4f\n", rep.map50);
    std::printf("mAP@50-95: %.4f\n", rep.map50_95);
    std::printf("F1: %.4f @ score >= %.4f\n", rep.best_f1, rep.best_f1_threshold);
    for (int c : rep.classes)
        std::printf("class %d  AP@50 %.4f  AP@50-95 %.4f\n", c, rep.ap50.at(c),
                    rep.ap50_95.at(c));
}

void run_pr_export(const EvalArgs& a) {
    if (a.out.empty()) throw std::runtime_error("pr-export: provide --out");
    auto [dets, gts] = load_eval_inputs(a);
    EvalReport rep = evaluate(dets, gts);
    std::string csv = "class,recall,precision\n";
    for (const auto& [c, curve] : rep.pr_curves) {
        for (const auto& pt : curve) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", c, pt.recall, pt.precision);
            csv += buf;
        }
    }
    write_text_file(a.out, csv);
    std::printf("wrote %s (%zu classes)\n", a.out.c_str(), rep.pr_curves.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fcey — FCE-YOLOv8 reproduction toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read defaults from a TOML/INI config file");
    app.allow_config_extras(false);

    const std::vector<std::string> scales{"S", "M", "L", "s", "m", "l"};
    const std::vector<std::string> kinds{"none", "se", "gc", "ge", "gct"};
    const std::vector<std::string> methods{"M1", "M2", "M3", "m1", "m2", "m3"};

    SummaryArgs sa;
    auto* summary = app.add_subcommand("summary", "Parameter/FLOP cost table");
    summary->add_option("--scale", sa.scale, "Model scale")->check(CLI::IsMember(scales));
    summary->add_option("--nc", sa.nc, "Number of classes")->check(CLI::PositiveNumber);
    summary->add_option("--fce", sa.fce, "FCE kind")->check(CLI::IsMember(kinds));
    summary->add_option("--method", sa.method, "Insertion method")->check(CLI::IsMember(methods));
    summary->add_option("--input-size", sa.input_size, "Square input size (multiple of 32)");
    summary->add_flag("--all", sa.all, "Enumerate all scales, FCE kinds, and methods");
    summary->add_option("--out", sa.out, "Write CSV to this path");
    summary->callback([&] { run_summary(sa); });

    GradcheckArgs ga;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gradcheck->add_option("--module", ga.module, "Which module to check")
        ->check(CLI::IsMember({"all", "tensor", "se", "gc", "ge", "gct"}));
    gradcheck->add_option("--seeds", ga.seeds, "Random seeds per check")->check(CLI::PositiveNumber);
    gradcheck->callback([&] { run_gradcheck(ga); });

    SplitArgs pa;
    auto* split = app.add_subcommand("split", "Deterministic train/valid/test split");
    split->add_option("--n-from-list", pa.n_from_list, "Split a synthetic index of N items");
    split->add_option("--list", pa.list, "File with one item per line");
    split->add_option("--ratios", pa.ratios, "Train/valid/test ratios")->expected(3);
    split->add_option("--seed", pa.seed, "Shuffle seed");
    split->add_option("--out", pa.out, "Write <out>.{train,valid,test}.txt");
    split->callback([&] { run_split(pa); });

    AugmentArgs aa;
    auto* augment = app.add_subcommand("augment", "Contrast/brightness augmentation (doubles set)");
    augment->add_option("--in-dir", aa.in_dir, "Directory of PNG images");
    augment->add_option("--out-dir", aa.out_dir, "Output directory");
    augment->add_option("--alpha", aa.alpha, "Contrast gain")->check(CLI::PositiveNumber);
    augment->add_option("--gamma", aa.gamma, "Brightness offset");
    augment->add_option("--count", aa.count, "Index-level mode: just report N -> 2N");
    augment->callback([&] { run_augment(aa); });

    TrainToyArgs ta;
    auto* train = app.add_subcommand("train-toy", "Overfit a tiny synthetic dataset");
    train->add_option("--scale", ta.scale, "Model scale")->check(CLI::IsMember(scales));
    train->add_option("--nc", ta.nc, "Number of classes")->check(CLI::PositiveNumber);
    train->add_option("--fce", ta.fce, "FCE kind")->check(CLI::IsMember(kinds));
    train->add_option("--method", ta.method, "Insertion method")->check(CLI::IsMember(methods));
    train->add_option("--steps", ta.steps, "SGD steps")->check(CLI::PositiveNumber);
    train->add_option("--images", ta.images, "Synthetic images")->check(CLI::PositiveNumber);
    train->add_option("--img-size", ta.img_size, "Image size (multiple of 32)");
    train->add_option("--seed", ta.seed, "Seed for weights and data");
    train->add_option("--lr", ta.lr, "Learning rate")->check(CLI::PositiveNumber);
    train->add_option("--out", ta.out, "Checkpoint stem to save");
    train->add_option("--dump-dir", ta.dump_dir, "Write training images/labels here");
    train->callback([&] { run_train_toy(ta); });

    PredictArgs ra;
    auto* predict = app.add_subcommand("predict", "Run inference on a PNG image");
    predict->add_option("--image", ra.image, "Input PNG")->required();
    predict->add_option("--ckpt", ra.ckpt, "Checkpoint stem (from train-toy --out)");
    predict->add_option("--scale", ra.scale, "Model scale")->check(CLI::IsMember(scales));
    predict->add_option("--nc", ra.nc, "Number of classes")->check(CLI::PositiveNumber);
    predict->add_option("--fce", ra.fce, "FCE kind")->check(CLI::IsMember(kinds));
    predict->add_option("--method", ra.method, "Insertion method")->check(CLI::IsMember(methods));
    predict->add_option("--input-size", ra.input_size, "Letterbox target (multiple of 32)");
    predict->add_option("--conf", ra.conf, "Confidence threshold");
    predict->add_option("--nms-iou", ra.nms_iou, "NMS IoU threshold");
    predict->add_option("--seed", ra.seed, "Weight seed when no checkpoint given");
    predict->add_option("--image-id", ra.image_id, "Image id for the prediction rows");
    predict->add_option("--out", ra.out, "Prediction file (default stdout)");
    predict->callback([&] { run_predict(ra); });

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Score predictions against YOLO-format labels");
    eval->add_option("--gt", ea.gt, "Directory of YOLO label .txt files")->required();
    eval->add_option("--pred", ea.pred, "Prediction file")->required();
    eval->add_option("--img-w", ea.img_w, "Label image width")->check(CLI::PositiveNumber);
    eval->add_option("--img-h", ea.img_h, "Label image height")->check(CLI::PositiveNumber);
    eval->callback([&] { run_eval(ea); });

    EvalArgs xa;
    auto* prx = app.add_subcommand("pr-export", "Export per-class PR curves as CSV");
    prx->add_option("--gt", xa.gt, "Directory of YOLO label .txt files")->required();
    prx->add_option("--pred", xa.pred, "Prediction file")->required();
    prx->add_option("--img-w", xa.img_w, "Label image width")->check(CLI::PositiveNumber);
    prx->add_option("--img-h", xa.img_h, "Label image height")->check(CLI::PositiveNumber);
    prx->add_option("--out", xa.out, "CSV output path")->required();
    prx->callback([&] { run_pr_export(xa); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
