#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fcey/tensor.hpp"

using namespace fcey;
using D = Tensor<double>;

namespace {

// Analytic gradient (reverse mode) vs central finite differences on the
// scalar loss f.  Returns the worst relative error over all elements.
template <typename F>
double gradcheck(F f, const D& x) {
    D probe(x.shape(), x.data());
    probe.set_requires_grad();
    backward(f(probe));
    auto fd = finite_diff_grad<double>([&](const D& p) { return f(p).item(); }, x, 1e-5);
    return max_rel_error(probe.grad(), fd);
}

D rand_t(Shape s, unsigned seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937 rng(seed);
    return D::uniform(std::move(s), rng, lo, hi);
}

// Random values kept away from zero, so kinked ops (relu, abs, min, max,
// maxpool ties) are differentiable at every probe point.
D rand_away_from_zero(Shape s, unsigned seed) {
    D t = rand_t(std::move(s), seed);
    for (auto& v : t.data()) v += v >= 0 ? 0.15 : -0.15;
    return t;
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("elementwise forward examples") {
    D a({2, 2}, {1, 2, 3, 4});
    D b({2, 2}, {5, 6, 7, 8});
    CHECK(add(a, b).data() == std::vector<double>{6, 8, 10, 12});
    CHECK(sub(b, a).data() == std::vector<double>{4, 4, 4, 4});
    CHECK(mul(a, b).data() == std::vector<double>{5, 12, 21, 32});
    CHECK(div(b, a).data()[3] == doctest::Approx(2.0));
    CHECK(minimum(a, b).data() == a.data());
    CHECK(maximum(a, b).data() == b.data());
    CHECK(scale(a, 2.0).data() == std::vector<double>{2, 4, 6, 8});
    CHECK(add_scalar(a, 1.0).data() == std::vector<double>{2, 3, 4, 5});
    CHECK(neg(a).data() == std::vector<double>{-1, -2, -3, -4});
    CHECK(sigmoid(D({1}, {0.0})).data()[0] == doctest::Approx(0.5));
    CHECK(relu(D({2}, {-1.0, 2.0})).data() == std::vector<double>{0, 2});
    CHECK(silu(D({1}, {0.0})).data()[0] == doctest::Approx(0.0));
    CHECK(sum(a).item() == doctest::Approx(10.0));
    CHECK(mean(a).item() == doctest::Approx(2.5));
}

TEST_CASE("sigmoid derivative at zero is 0.25 (finite difference)") {
    D x({1}, {0.0});
    auto fd = finite_diff_grad<double>([](const D& p) { return sigmoid(p).item(); }, x, 1e-6);
    CHECK(fd[0] == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one, including extreme logits") {
    for (unsigned seed = 0; seed < 5; ++seed) {
        D x = rand_t({3, 7}, seed, -1e4, 1e4);
        D s = softmax(x, 1);
        for (int r = 0; r < 3; ++r) {
            double acc = 0;
            for (int c = 0; c < 7; ++c) acc += s.data()[size_t(r * 7 + c)];
            CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
        }
        for (double v : s.data()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("conv2d is linear in its input") {
    std::mt19937 rng(7);
    D w = D::uniform({4, 3, 3, 3}, rng, -1, 1);
    D x = D::uniform({1, 3, 6, 6}, rng, -1, 1);
    D y = D::uniform({1, 3, 6, 6}, rng, -1, 1);
    D lhs = conv2d(add(x, y), w, 1, 1);
    D rhs = add(conv2d(x, w, 1, 1), conv2d(y, w, 1, 1));
    for (size_t i = 0; i < lhs.data().size(); ++i)
        CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-10));
}

TEST_CASE("gradcheck: unary and binary elementwise ops") {
    for (unsigned seed = 0; seed < 20; ++seed) {
        D x = rand_away_from_zero({2, 3, 4, 4}, seed);
        D y = rand_away_from_zero({2, 3, 4, 4}, seed + 100);
        for (auto& v : y.data()) v += v >= 0 ? 0.5 : -0.5;  // keep |x/y| well-posed
        // keep min/max away from their x == y kink
        for (size_t i = 0; i < y.data().size(); ++i)
            if (std::abs(x.data()[i] - y.data()[i]) < 0.05)
                y.data()[i] += y.data()[i] >= x.data()[i] ? 0.1 : -0.1;
        CHECK(gradcheck([&](const D& p) { return sum(add(p, y)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(sub(p, y)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(p, y)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(div(p, y)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(div(y, p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(minimum(p, y)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(maximum(p, y)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(scale(p, 1.7)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(add_scalar(p, 0.3)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(neg(p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(fcey::exp(p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(fcey::abs(p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(sigmoid(p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(relu(p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(silu(p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return mul(mean(p), mean(p)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(sum_axis(p, 1), sum_axis(p, 1))); },
                        x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(reshape(p, {6, 16}), reshape(p, {6, 16}))); },
                        x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(softmax(p, 1), y)); }, x) < kTol);
    }
}

TEST_CASE("gradcheck: conv2d (input, weight, bias, stride, groups)") {
    for (unsigned seed = 0; seed < 20; ++seed) {
        std::mt19937 rng(seed);
        D x = D::uniform({2, 4, 5, 5}, rng, -1, 1);
        D w = D::uniform({6, 4, 3, 3}, rng, -0.5, 0.5);
        D b = D::uniform({6}, rng, -0.5, 0.5);
        D wg = D::uniform({4, 2, 3, 3}, rng, -0.5, 0.5);  // groups=2
        CHECK(gradcheck([&](const D& p) { return sum(silu(conv2d(p, w, b, 1, 1))); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(conv2d(x, p, b, 2, 1)); }, w) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(conv2d(x, w, p, 1, 1),
                                                         conv2d(x, w, p, 1, 1))); },
                        b) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(conv2d(p, wg, 1, 1, 2)); }, x) < kTol);
    }
}

TEST_CASE("gradcheck: batchnorm (training mode) wrt input and affine") {
    for (unsigned seed = 0; seed < 20; ++seed) {
        std::mt19937 rng(seed);
        D x = D::uniform({3, 4, 3, 3}, rng, -1, 1);
        D gamma = D::uniform({4}, rng, 0.5, 1.5);
        D beta = D::uniform({4}, rng, -0.5, 0.5);
        auto run = [&](const D& xi, const D& g, const D& bta) {
            std::vector<double> rm(4, 0), rv(4, 1);
            return sum(mul(batchnorm(xi, g, bta, rm, rv, 1e-5, true),
                           batchnorm(xi, g, bta, rm, rv, 1e-5, true)));
        };
        CHECK(gradcheck([&](const D& p) { return run(p, gamma, beta); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return run(x, p, beta); }, gamma) < kTol);
        CHECK(gradcheck([&](const D& p) { return run(x, gamma, p); }, beta) < kTol);
    }
}

TEST_CASE("gradcheck: pooling, resampling, layout ops") {
    for (unsigned seed = 0; seed < 20; ++seed) {
        D x = rand_away_from_zero({2, 3, 6, 6}, seed + 300);
        CHECK(gradcheck([&](const D& p) { return sum(maxpool2d(p, 3, 2, 1)); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(avgpool2d(p, 2), avgpool2d(p, 2))); },
                        x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(global_avg_pool(p),
                                                         global_avg_pool(p))); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(upsample_nearest(p, 2),
                                                         upsample_nearest(p, 2))); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(upsample_nearest_to(p, 2, 11, 9),
                                                         upsample_nearest_to(p, 2, 11, 9))); },
                        x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(slice_channels(p, 1, 3),
                                                         slice_channels(p, 1, 3))); }, x) < kTol);
        D other = rand_t({2, 2, 6, 6}, seed + 400);
        CHECK(gradcheck([&](const D& p) {
                  D c = concat<double>({p, other});
                  return sum(mul(c, c));
              }, x) < kTol);
    }
}

TEST_CASE("gradcheck: broadcast, normalization, attention, gather, bce") {
    for (unsigned seed = 0; seed < 20; ++seed) {
        std::mt19937 rng(seed + 500);
        D x = D::uniform({2, 4, 3, 3}, rng, -1, 1);
        D g = D::uniform({2, 4, 1, 1}, rng, -1, 1);
        D gamma = D::uniform({4}, rng, 0.5, 1.5);
        D beta = D::uniform({4}, rng, -0.5, 0.5);
        D alpha_raw = D::uniform({2, 1, 3, 3}, rng, -1, 1);
        D tgt = D::uniform({2, 4, 3, 3}, rng, 0, 1);
        CHECK(gradcheck([&](const D& p) { return sum(mul(mul_broadcast(p, g),
                                                         mul_broadcast(p, g))); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(mul_broadcast(x, p),
                                                         mul_broadcast(x, p))); }, g) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(add_broadcast(p, g),
                                                         add_broadcast(p, g))); }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return sum(mul(add_broadcast(x, p),
                                                         add_broadcast(x, p))); }, g) < kTol);
        D z = D::uniform({2, 4, 1, 1}, rng, -1, 1);
        CHECK(gradcheck([&](const D& p) {
                  D y = layernorm_channels(p, gamma, beta, 1e-5);
                  return sum(mul(y, y));
              }, z) < kTol);
        CHECK(gradcheck([&](const D& p) {
                  D y = channel_standardize(p, 1e-5);
                  return sum(mul(y, y));
              }, z) < kTol);
        CHECK(gradcheck([&](const D& p) {
                  D a = reshape(softmax(reshape(alpha_raw, {2, 9}), 1), {2, 1, 3, 3});
                  return sum(mul(attention_pool(p, a), attention_pool(p, a)));
              }, x) < kTol);
        CHECK(gradcheck([&](const D& p) {
                  D a = reshape(softmax(reshape(p, {2, 9}), 1), {2, 1, 3, 3});
                  return sum(mul(attention_pool(x, a), attention_pool(x, a)));
              }, alpha_raw) < kTol);
        std::vector<CellIndex> cells{{0, 1, 2}, {1, 0, 0}, {0, 1, 1}};
        CHECK(gradcheck([&](const D& p) {
                  D gc = gather_cells(p, cells);
                  return sum(mul(gc, gc));
              }, x) < kTol);
        CHECK(gradcheck([&](const D& p) { return bce_with_logits_mean(p, tgt); }, x) < kTol);
    }
}

TEST_CASE("composite graphs stay finite (no NaN) on random inputs") {
    for (unsigned seed = 0; seed < 10; ++seed) {
        std::mt19937 rng(seed);
        D x = D::uniform({1, 4, 8, 8}, rng, -3, 3);
        D w = D::uniform({4, 4, 3, 3}, rng, -1, 1);
        x.set_requires_grad();
        D y = sum(silu(conv2d(softmax(sigmoid(x), 1), w, 1, 1)));
        backward(y);
        CHECK(std::isfinite(y.item()));
        for (double gv : x.grad()) CHECK(std::isfinite(gv));
    }
}

TEST_CASE("backward accumulates through reused subexpressions") {
    D x({1}, {2.0});
    x.set_requires_grad();
    D y = mul(x, x);            // x^2
    D z = add(y, y);            // 2 x^2 -> dz/dx = 4x = 8
    backward(z);
    CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("channel_standardize: zero variance input maps to zero") {
    D z({1, 3, 1, 1}, {0.7, 0.7, 0.7});
    D y = channel_standardize(z, 1e-5);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("shape errors are rejected") {
    D a({2, 2}, {1, 2, 3, 4});
    D b({3}, {1, 2, 3});
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(reshape(a, {5}), std::invalid_argument);
    CHECK_THROWS_AS(softmax(a, 2), std::invalid_argument);
}
