#include <doctest.h>

#include <cmath>

#include "crowd/layers.hpp"
#include "crowd/train.hpp"
#include "support/gradcheck.hpp"
#include "support/random.hpp"

using namespace crowd;
using testing_support::random_tensor;

namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> copy(std::span<const double> s) { return {s.begin(), s.end()}; }

constexpr double kTol = 1e-4;

}  // namespace

// ------------------------------------------------------------------ conv

TEST_CASE("conv2d examples") {
    auto id = make_conv<float>(1, 1, 1, false);
    id.weight[0] = 1.0f;
    const Tensor4 x({1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor4 y = conv2d(x, id);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == x[i]);

    auto w = make_conv<float>(1, 1, 3, false);
    w.weight.fill(1.0f);
    const Tensor4 ones({1, 1, 3, 3}, 1.0f);
    const Tensor4 s = conv2d(ones, w);
    CHECK(s.at(0, 0, 1, 1) == 9.0f);
    CHECK(s.at(0, 0, 0, 1) == 6.0f);
    CHECK(s.at(0, 0, 1, 0) == 6.0f);
    CHECK(s.at(0, 0, 0, 0) == 4.0f);
    CHECK(s.at(0, 0, 2, 2) == 4.0f);

    auto any = make_conv<float>(4, 2, 3, false);
    any.weight = random_tensor<float>(any.weight.shape(), 1);
    const Tensor4 zero = conv2d(Tensor4({2, 2, 5, 5}), any);
    for (float v : zero.values()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d rejects bad shapes") {
    auto p = make_conv<float>(2, 3, 3, true);
    CHECK_THROWS_AS(conv2d(Tensor4({1, 2, 4, 4}), p), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor4({0, 3, 4, 4}), p), ShapeError);
    CHECK_THROWS_AS(make_conv<float>(1, 1, 5, false), std::invalid_argument);
    CHECK_THROWS_AS(conv2d_backward(Tensor4({1, 3, 4, 4}), Tensor4({1, 2, 3, 4}), p), ShapeError);
}

TEST_CASE("conv2d is linear") {
    auto p = make_conv<double>(3, 2, 3, false);
    p.weight = random_tensor<double>(p.weight.shape(), 2);
    const auto x = random_tensor<double>({2, 2, 4, 4}, 3);
    const auto y = random_tensor<double>({2, 2, 4, 4}, 4);
    const double a = 0.7, b = -1.3;
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const auto lhs = conv2d(mix, p);
    const auto cx = conv2d(x, p);
    const auto cy = conv2d(y, p);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        const double rhs = a * cx[i] + b * cy[i];
        CHECK(std::abs(lhs[i] - rhs) <= 1e-5 * std::max(1.0, std::abs(rhs)));
    }
}

TEST_CASE("conv2d backward accumulates") {
    auto p = make_conv<float>(2, 2, 3, true);
    p.weight = random_tensor<float>(p.weight.shape(), 5);
    const auto x = random_tensor<float>({1, 2, 4, 4}, 6);
    const auto g = random_tensor<float>({1, 2, 4, 4}, 7);
    conv2d_backward(x, g, p);
    const std::vector<float> once(p.weight.grad().begin(), p.weight.grad().end());
    conv2d_backward(x, g, p);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(p.weight.grad()[i] == 2.0f * once[i]);
}

TEST_CASE("conv2d gradients match finite differences") {
    for (std::size_t k : {1u, 3u}) {
        auto p = make_conv<double>(3, 2, k, true);
        p.weight = random_tensor<double>(p.weight.shape(), 8);
        *p.bias = random_tensor<double>(p.bias->shape(), 9);
        auto x = random_tensor<double>({2, 2, 4, 4}, 10);
        const auto r = random_tensor<double>({2, 3, 4, 4}, 11);
        const auto gx = conv2d_backward(x, r, p);
        auto loss = [&] { return dot(conv2d(x, p), r); };
        const auto gi = gradcheck::check(x.values(), gx.values(), loss);
        const auto gw = gradcheck::check(p.weight.values(), copy(p.weight.grad()), loss);
        const auto gb = gradcheck::check(p.bias->values(), copy(p.bias->grad()), loss);
        INFO(gi.str() << " / " << gw.str() << " / " << gb.str());
        CHECK(gi.max_error < kTol);
        CHECK(gw.max_error < kTol);
        CHECK(gb.max_error < kTol);
    }
}

// ------------------------------------------------------------ batchnorm

TEST_CASE("batchnorm examples") {
    auto p = make_batchnorm<float>(1);
    auto st = make_batchnorm_stats<float>(1);
    const Tensor4 flat({1, 1, 2, 2}, 3.0f);
    const Tensor4 flat_out = batchnorm(flat, p, st, Mode::train);
    for (float v : flat_out.values()) CHECK(std::abs(v) <= 1e-3f);

    auto exact = make_batchnorm<double>(1);
    exact.epsilon = 0.0;
    auto st2 = make_batchnorm_stats<double>(1);
    const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    const auto y = batchnorm(x, exact, st2, Mode::train);
    const double r5 = std::sqrt(5.0);
    CHECK(y[0] == doctest::Approx(-3.0 / r5).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(-1.0 / r5).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(1.0 / r5).epsilon(1e-12));
    CHECK(y[3] == doctest::Approx(3.0 / r5).epsilon(1e-12));

    auto affine = make_batchnorm<float>(2);
    affine.gamma.fill(0.0f);
    affine.beta.fill(7.0f);
    auto st3 = make_batchnorm_stats<float>(2);
    const auto rnd = random_tensor<float>({2, 2, 3, 3}, 12);
    const Tensor4 tr = batchnorm(rnd, affine, st3, Mode::train);
    const Tensor4 ev = batchnorm(rnd, affine, st3, Mode::eval);
    for (float v : tr.values()) CHECK(v == 7.0f);
    for (float v : ev.values()) CHECK(v == 7.0f);
}

TEST_CASE("batchnorm running statistics") {
    auto p = make_batchnorm<double>(1);
    auto st = make_batchnorm_stats<double>(1);
    const Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
    batchnorm(x, p, st, Mode::train);
    CHECK(st.running_mean[0] == doctest::Approx(0.99 * 0.0 + 0.01 * 2.5));
    CHECK(st.running_var[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 1.25));
    const auto before = st;
    batchnorm(x, p, st, Mode::eval);
    CHECK(st.running_mean == before.running_mean);
    CHECK(st.running_var == before.running_var);
    CHECK_THROWS_AS(batchnorm(Tensor<double>({1, 1, 1, 1}), p, st, Mode::train), ShapeError);
    CHECK_NOTHROW(batchnorm(Tensor<double>({1, 1, 1, 1}), p, st, Mode::eval));
}

TEST_CASE("batchnorm train output is standardized") {
    auto p = make_batchnorm<float>(3);
    auto st = make_batchnorm_stats<float>(3);
    const auto x = random_tensor<float>({4, 3, 4, 4}, 13, 5.0);
    const Tensor4 y = batchnorm(x, p, st, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
        double m = 0.0, v = 0.0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 16; ++i) m += y.at(n, c, i / 4, i % 4);
        m /= 64.0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 16; ++i) v += std::pow(y.at(n, c, i / 4, i % 4) - m, 2);
        v /= 64.0;
        CHECK(std::abs(m) < 1e-5);
        CHECK(std::abs(v - 1.0) < 1e-3);
    }
}

TEST_CASE("batchnorm gradients match finite differences in both modes") {
    for (Mode mode : {Mode::train, Mode::eval}) {
        auto p = make_batchnorm<double>(3);
        p.gamma = random_tensor<double>(p.gamma.shape(), 14);
        p.beta = random_tensor<double>(p.beta.shape(), 15);
        auto st = make_batchnorm_stats<double>(3);
        st.running_mean = {0.3, -0.2, 0.1};
        st.running_var = {1.5, 0.7, 2.0};
        auto x = random_tensor<double>({2, 3, 4, 4}, 16);
        const auto r = random_tensor<double>({2, 3, 4, 4}, 17);
        const auto frozen = st;
        auto forward = [&](BatchNormCache<double>* cache) {
            auto s = frozen;
            return batchnorm(x, p, s, mode, cache);
        };
        BatchNormCache<double> cache;
        forward(&cache);
        const auto gx = batchnorm_backward(r, cache, p);
        auto loss = [&] { return dot(forward(nullptr), r); };
        const auto gi = gradcheck::check(x.values(), gx.values(), loss);
        const auto gg = gradcheck::check(p.gamma.values(), copy(p.gamma.grad()), loss);
        const auto gb = gradcheck::check(p.beta.values(), copy(p.beta.grad()), loss);
        INFO(gi.str() << " / " << gg.str() << " / " << gb.str());
        CHECK(gi.max_error < kTol);
        CHECK(gg.max_error < kTol);
        CHECK(gb.max_error < kTol);
    }
}

// ------------------------------------------------------------------ relu

TEST_CASE("relu examples") {
    const Tensor4 x({1, 1, 1, 3}, {-1, 0, 2});
    const Tensor4 y = relu(x);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 0.0f);
    CHECK(y[2] == 2.0f);
    const Tensor4 gx = relu_backward(x, Tensor4({1, 1, 1, 3}, 1.0f));
    CHECK(gx[1] == 0.0f);
    const Tensor4 x2({1, 1, 1, 2}, {-1, 2});
    const Tensor4 g2 = relu_backward(x2, Tensor4({1, 1, 1, 2}, 5.0f));
    CHECK(g2[0] == 0.0f);
    CHECK(g2[1] == 5.0f);
    const Tensor4 neg({1, 2, 2, 2}, -3.0f);
    const Tensor4 out = relu(neg);
    const Tensor4 grad = relu_backward(neg, Tensor4(neg.shape(), 1.0f));
    for (float v : out.values()) CHECK(v == 0.0f);
    for (float v : grad.values()) CHECK(v == 0.0f);
}

TEST_CASE("relu gradient matches finite differences away from zero") {
    auto x = random_tensor<double>({2, 2, 4, 4}, 18);
    for (auto& v : x.values()) v += v > 0 ? 0.01 : -0.01;
    const auto r = random_tensor<double>(x.shape(), 19);
    const auto gx = relu_backward(x, r);
    const auto rep = gradcheck::check(x.values(), gx.values(), [&] { return dot(relu(x), r); });
    INFO(rep.str());
    CHECK(rep.max_error < kTol);
}

// --------------------------------------------------------------- maxpool

TEST_CASE("maxpool2 examples") {
    const Tensor4 a({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(maxpool2(a)[0] == 4.0f);

    const Tensor4 tall({1, 1, 4, 2}, {5, 1, 1, 1, 1, 1, 9, 1});
    const Tensor4 t = maxpool2(tall);
    CHECK(t.shape() == Shape4{1, 1, 2, 1});
    CHECK(t[0] == 5.0f);
    CHECK(t[1] == 9.0f);

    const Tensor4 flat({1, 1, 4, 4}, 2.0f);
    PoolIndices idx;
    const Tensor4 half = maxpool2(flat, &idx);
    CHECK(half.shape() == Shape4{1, 1, 2, 2});
    for (float v : half.values()) CHECK(v == 2.0f);
    const Tensor4 back = maxpool2_backward(Tensor4(half.shape(), 1.0f), idx);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            CHECK(back.at(0, 0, y, x) == ((y % 2 == 0 && x % 2 == 0) ? 1.0f : 0.0f));

    CHECK_THROWS_AS(maxpool2(Tensor4({1, 1, 3, 4})), ShapeError);
    CHECK_THROWS_AS(maxpool2(Tensor4({1, 1, 4, 5})), ShapeError);
}

TEST_CASE("maxpool2 sum and max properties") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = random_tensor<float>({2, 3, 6, 8}, seed);
        for (auto& v : x.values()) v = std::abs(v);
        const Tensor4 y = maxpool2(x);
        double sx = 0.0, sy = 0.0;
        for (float v : x.values()) sx += v;
        for (float v : y.values()) sy += v;
        CHECK(sy <= sx);
        CHECK(*std::max_element(y.values().begin(), y.values().end()) ==
              *std::max_element(x.values().begin(), x.values().end()));
    }
}

TEST_CASE("maxpool2 gradient matches finite differences") {
    auto x = random_tensor<double>({2, 2, 4, 4}, 20);
    const auto r = random_tensor<double>({2, 2, 2, 2}, 21);
    PoolIndices idx;
    maxpool2(x, &idx);
    const auto gx = maxpool2_backward(r, idx);
    const auto rep = gradcheck::check(x.values(), gx.values(), [&] { return dot(maxpool2(x), r); });
    INFO(rep.str());
    CHECK(rep.max_error < kTol);
}

// ------------------------------------------------------------------- add

TEST_CASE("add examples and gradient") {
    const Tensor4 a({1, 1, 1, 2}, {1, 2});
    const Tensor4 b({1, 1, 1, 2}, {3, 4});
    const Tensor4 s = add(a, b);
    CHECK(s[0] == 4.0f);
    CHECK(s[1] == 6.0f);
    const Tensor4 z = add(a, Tensor4(a.shape()));
    CHECK(z[0] == 1.0f);
    CHECK(z[1] == 2.0f);
    CHECK_THROWS_AS(add(a, Tensor4({1, 1, 2, 1})), ShapeError);

    const Tensor4 g({1, 1, 1, 2}, {0.5f, -2.0f});
    const auto [ga, gb] = add_backward(g);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(ga[i] == g[i]);
        CHECK(gb[i] == g[i]);
    }

    auto x = random_tensor<double>({1, 2, 3, 3}, 22);
    const auto y = random_tensor<double>(x.shape(), 23);
    const auto r = random_tensor<double>(x.shape(), 24);
    const auto rep = gradcheck::check(x.values(), add_backward(r).first.values(),
                                      [&] { return dot(add(x, y), r); });
    CHECK(rep.max_error < kTol);
}

// ------------------------------------------------------- compositions

TEST_CASE("conv-bn-relu-add block composition matches finite differences") {
    auto c = make_conv<double>(2, 2, 3, false);
    c.weight = random_tensor<double>(c.weight.shape(), 25, 0.5);
    auto bn = make_batchnorm<double>(2);
    auto x = random_tensor<double>({2, 2, 4, 4}, 26);
    const auto r = random_tensor<double>({2, 2, 2, 2}, 27);
    auto forward = [&](BatchNormCache<double>* cache, Tensor<double>* pre, PoolIndices* idx) {
        auto st = make_batchnorm_stats<double>(2);
        Tensor<double> h = batchnorm(conv2d(x, c), bn, st, Mode::train, cache);
        if (pre != nullptr) *pre = h;
        return maxpool2(add(relu(h), x), idx);
    };
    BatchNormCache<double> cache;
    Tensor<double> pre;
    PoolIndices idx;
    forward(&cache, &pre, &idx);
    const auto g_sum = maxpool2_backward(r, idx);
    const auto g_h = batchnorm_backward(relu_backward(pre, g_sum), cache, bn);
    auto g_x = conv2d_backward(x, g_h, c);
    for (std::size_t i = 0; i < g_x.size(); ++i) g_x[i] += g_sum[i];
    auto loss = [&] { return dot(forward(nullptr, nullptr, nullptr), r); };
    const auto gi = gradcheck::check(x.values(), g_x.values(), loss);
    const auto gw = gradcheck::check(c.weight.values(), copy(c.weight.grad()), loss);
    INFO(gi.str() << " / " << gw.str());
    CHECK(gi.max_error < kTol);
    CHECK(gw.max_error < kTol);
}

// ------------------------------------------------------------------ loss

TEST_CASE("euclidean loss gradient matches finite differences") {
    auto pred = random_tensor<double>({3, 1, 4, 4}, 28);
    const auto target = random_tensor<double>(pred.shape(), 29);
    const auto res = euclidean_loss(pred, target);
    const auto rep = gradcheck::check(pred.values(), res.grad.values(),
                                      [&] { return euclidean_loss(pred, target).loss; });
    CHECK(rep.max_error < kTol);
}
