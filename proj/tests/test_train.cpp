#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

#include "fcey/train.hpp"

using namespace fcey;
using D = Tensor<double>;

namespace {

template <typename F>
double gradcheck(F f, const D& x) {
    D probe(x.shape(), x.data());
    probe.set_requires_grad();
    backward(f(probe));
    auto fd = finite_diff_grad<double>([&](const D& p) { return f(p).item(); }, x, 1e-5);
    return max_rel_error(probe.grad(), fd);
}

NamedParams<double> one_param(D& t) { return {{"w", &t}}; }

}  // namespace

TEST_CASE("two maximum-momentum steps with unit gradient land on -0.02937") {
    D w({1}, {0.0});
    w.set_requires_grad();
    auto params = one_param(w);
    OptimState<double> opt;
    opt.lr = 0.01;
    opt.momentum = 0.937;
    opt.weight_decay = 0.0;
    w.grad() = {1.0};
    sgd_step(params, opt);
    CHECK(w.data()[0] == doctest::Approx(-0.01).epsilon(1e-12));
    w.grad() = {1.0};
    sgd_step(params, opt);
    // velocity 0.937*1 + 1 = 1.937, so the step adds 0.01937
    CHECK(w.data()[0] == doctest::Approx(-0.02937).epsilon(1e-12));
}

TEST_CASE("weight decay alone shrinks the weight even with zero gradient") {
    D w({1}, {1.0});
    w.set_requires_grad();
    auto params = one_param(w);
    OptimState<double> opt;
    opt.lr = 0.1;
    opt.momentum = 0.0;
    opt.weight_decay = 0.0005;
    w.grad() = {0.0};
    sgd_step(params, opt);
    CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * 0.0005).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    D w({3}, {1.0, -2.0, 3.0});
    w.set_requires_grad();
    auto params = one_param(w);
    OptimState<double> opt;
    opt.lr = 0.0;
    w.grad() = {5.0, 5.0, 5.0};
    sgd_step(params, opt);
    CHECK(w.data() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("optimizer state rejects a changed parameter list") {
    D w({1}, {0.0});
    D u({1}, {0.0});
    w.set_requires_grad();
    u.set_requires_grad();
    auto params = one_param(w);
    OptimState<double> opt;
    w.grad() = {1.0};
    sgd_step(params, opt);
    NamedParams<double> two = {{"w", &w}, {"u", &u}};
    CHECK_THROWS_AS(sgd_step(two, opt), std::invalid_argument);
}

TEST_CASE("boxes land at the stride whose cells match their size") {
    // rule: largest stride with min side >= 2*stride, else the finest
    auto at = [](double cx, double cy, double w, double h) {
        std::vector<std::vector<YoloLabel>> labels = {{YoloLabel{0, cx, cy, w, h}}};
        auto t = assign_targets(labels, 64, 64);
        REQUIRE(t.size() == 1);
        return t[0];
    };
    CHECK(at(0.5, 0.5, 1.0, 1.0).scale == 2);       // 64px >= 2*32
    CHECK(at(0.5, 0.5, 0.625, 0.625).scale == 1);   // 40px in [32, 64)
    CHECK(at(0.5, 0.5, 0.5, 0.5).scale == 1);       // 32px boundary
    CHECK(at(0.5, 0.5, 0.21875, 0.21875).scale == 0);  // 14px < 32
    CHECK(at(0.5, 0.5, 1.0, 0.21875).scale == 0);   // min side governs
}

TEST_CASE("the positive cell is the one containing the box center") {
    std::vector<std::vector<YoloLabel>> labels = {
        {YoloLabel{0, 0.3, 0.7, 0.125, 0.125}}};  // 8px box -> stride 8
    auto t = assign_targets(labels, 64, 64);
    REQUIRE(t.size() == 1);
    CHECK(t[0].cell.n == 0);
    CHECK(t[0].cell.x == int(0.3 * 64 / 8));  // column 2
    CHECK(t[0].cell.y == int(0.7 * 64 / 8));  // row 5
    CHECK(t[0].class_id == 0);
    CHECK(t[0].box.x1 == doctest::Approx(0.3 * 64 - 4));
    CHECK(t[0].box.x2 == doctest::Approx(0.3 * 64 + 4));
}

TEST_CASE("centers on the right/bottom edge clamp into the grid") {
    std::vector<std::vector<YoloLabel>> labels = {{YoloLabel{0, 1.0, 1.0, 0.1, 0.1}}};
    auto t = assign_targets(labels, 64, 64);
    REQUIRE(t.size() == 1);
    CHECK(t[0].cell.x == 7);
    CHECK(t[0].cell.y == 7);
}

TEST_CASE("batch index is tracked per image") {
    std::vector<std::vector<YoloLabel>> labels = {
        {}, {YoloLabel{1, 0.5, 0.5, 0.2, 0.2}}, {YoloLabel{2, 0.5, 0.5, 0.2, 0.2}}};
    auto t = assign_targets(labels, 64, 64);
    REQUIRE(t.size() == 2);
    CHECK(t[0].cell.n == 1);
    CHECK(t[1].cell.n == 2);
}

TEST_CASE("toy loss backward agrees with finite differences on every map") {
    const int reg_max = 4, nc = 2;
    const int C = 4 * reg_max + nc;
    std::vector<std::vector<YoloLabel>> labels = {
        {YoloLabel{0, 0.5, 0.5, 1.0, 1.0},          // stride 32
         YoloLabel{1, 0.375, 0.375, 0.5, 0.5},      // stride 16
         YoloLabel{0, 0.3, 0.7, 0.125, 0.125}},     // stride 8
        {YoloLabel{1, 0.625, 0.25, 0.25, 0.25}}};   // 16px -> stride 8
    auto targets = assign_targets(labels, 64, 64);
    REQUIRE(targets.size() == 4);

    std::mt19937 rng(1);
    std::array<D, 3> maps = {D::uniform({2, C, 8, 8}, rng, -1.0, 1.0),
                             D::uniform({2, C, 4, 4}, rng, -1.0, 1.0),
                             D::uniform({2, C, 2, 2}, rng, -1.0, 1.0)};
    for (int which = 0; which < 3; ++which) {
        CAPTURE(which);
        auto f = [&](const D& probe) {
            std::array<D, 3> m = maps;
            m[size_t(which)] = probe;
            return toy_loss(m, targets, reg_max, nc);
        };
        CHECK(gradcheck(f, maps[size_t(which)]) < 1e-4);
    }
}

TEST_CASE("toy loss without positives reduces to the classification term") {
    const int reg_max = 4, nc = 2;
    const int C = 4 * reg_max + nc;
    std::mt19937 rng(2);
    std::array<D, 3> maps = {D::uniform({1, C, 8, 8}, rng, -1.0, 1.0),
                             D::uniform({1, C, 4, 4}, rng, -1.0, 1.0),
                             D::uniform({1, C, 2, 2}, rng, -1.0, 1.0)};
    D loss = toy_loss(maps, {}, reg_max, nc);
    CHECK(std::isfinite(loss.item()));
    CHECK(loss.item() > 0.0);

    // it matches a by-hand mean BCE against all-zero targets, averaged
    // over the three scales
    double expect = 0.0;
    for (int s = 0; s < 3; ++s) {
        double acc = 0.0;
        std::int64_t cnt = 0;
        const D& m = maps[size_t(s)];
        const int H = m.dim(2), W = m.dim(3);
        for (int c = 4 * reg_max; c < C; ++c)
            for (int i = 0; i < H * W; ++i) {
                double z = m.data()[size_t(std::int64_t(c) * H * W + i)];
                acc += std::log(1.0 + std::exp(z));
                ++cnt;
            }
        expect += acc / double(cnt) / 3.0;
    }
    CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("zero training steps change nothing and report empty traces") {
    ModelConfig cfg;
    cfg.scale = scale_spec("S");
    Model<double> model(build_model(cfg), 0);
    auto before = model.params();
    std::vector<std::vector<double>> snapshot;
    for (auto& [name, t] : before) snapshot.push_back(t->data());
    auto data = synth_dataset_multiscale(2, 64, 9, 0);
    OptimState<double> opt;
    TrainResult r = train_loop(model, data, 0, opt, 2);
    CHECK(r.losses.empty());
    auto after = model.params();
    for (size_t i = 0; i < after.size(); ++i) CHECK(after[i].second->data() == snapshot[i]);
}

TEST_CASE("training refuses an empty dataset") {
    ModelConfig cfg;
    cfg.scale = scale_spec("S");
    Model<double> model(build_model(cfg), 0);
    OptimState<double> opt;
    CHECK_THROWS_AS(train_loop(model, {}, 1, opt), std::invalid_argument);
}

TEST_CASE("identical seeds reproduce the loss trace exactly") {
    auto run = [] {
        ModelConfig cfg;
        cfg.scale = scale_spec("S");
        Model<double> model(build_model(cfg), 3);
        auto data = synth_dataset_multiscale(2, 64, 9, 7);
        OptimState<double> opt;
        opt.lr = 0.005;
        return train_loop(model, data, 4, opt, 2).losses;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == 4);
    CHECK(a == b);
}

TEST_CASE("a short run drives the toy loss down and touches every parameter") {
    ModelConfig cfg;
    cfg.scale = scale_spec("S");
    Model<double> model(build_model(cfg), 0);
    auto data = synth_dataset_multiscale(2, 64, 9, 0);
    OptimState<double> opt;
    opt.lr = 0.005;
    TrainResult r = train_loop(model, data, 25, opt, 2);
    REQUIRE(r.losses.size() == 25);
    CHECK(r.losses.back() < r.losses.front());
    size_t with_grad = 0;
    for (bool seen : r.param_grad_seen) with_grad += seen;
    CHECK(with_grad == r.param_grad_seen.size());
}

TEST_CASE("images feed the network as [0,1] grayscale replicated to rgb") {
    Image im = make_image(2, 2, 1);
    im.at(0, 0) = 255;
    im.at(1, 1) = 51;
    D x = image_to_input<double>({&im});
    CHECK(x.shape() == std::vector<int>{1, 3, 2, 2});
    for (int c = 0; c < 3; ++c) {
        CHECK(x.data()[size_t(c * 4 + 0)] == doctest::Approx(1.0));
        CHECK(x.data()[size_t(c * 4 + 3)] == doctest::Approx(0.2));
        CHECK(x.data()[size_t(c * 4 + 1)] == doctest::Approx(0.0));
    }
}
