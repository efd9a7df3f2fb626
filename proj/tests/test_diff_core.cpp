#include <cmath>

#include "doctest.h"
#include "df2am/autodiff.hpp"
#include "df2am/errors.hpp"
#include "df2am/rng.hpp"

using namespace df2am;
using namespace df2am::ad;

namespace {

Array random_array(Shape shape, Rng& rng) {
    Array a(std::move(shape));
    for (auto& v : a.values()) v = rng.normal();
    return a;
}

}  // namespace

TEST_CASE("array construction checks extents and data length") {
    CHECK_THROWS_AS(Array({2, 0}), ShapeError);
    CHECK_THROWS_AS(Array({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    Array m = Array::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(m.at(1, 2) == 6);
    CHECK(shape_str(m.shape()) == "[2x3]");
    CHECK_THROWS_AS(require_finite(Array::vector({1.0, NAN}), "test"), NumericalError);
}

TEST_CASE("rng is reproducible and streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    CHECK(Rng::derive(1, 0) != Rng::derive(1, 1));
    CHECK(Rng::worker_seed(5, 3) == (5u ^ 3u));
    Rng r(9);
    for (int i = 0; i < 1000; ++i) {
        const auto x = r.below(7);
        CHECK(x < 7);
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("x squared at 3 has value 9 and gradient 6") {
    ParamStore p;
    p.add("x", Array::scalar(3.0));
    const double v = forward_backward([](Tape& t, ParamStore& s) { return sum(square(t.param(s, "x"))); }, p);
    CHECK(v == 9.0);
    CHECK(p.grad("x")[0] == 6.0);
}

TEST_CASE("sum of squares of a 2x2 array of ones") {
    ParamStore p;
    p.add("x", Array({2, 2}, 1.0));
    const double v = forward_backward([](Tape& t, ParamStore& s) { return sum(square(t.param(s, "x"))); }, p);
    CHECK(v == 4.0);
    for (double g : p.grad("x").values()) CHECK(g == 2.0);
}

TEST_CASE("gradients accumulate until reset") {
    ParamStore p;
    p.add("x", Array::scalar(2.0));
    LossFn f = [](Tape& t, ParamStore& s) { return sum(square(t.param(s, "x"))); };
    forward_backward(f, p);
    forward_backward(f, p);
    CHECK(p.grad("x")[0] == 8.0);
    p.zero_grad();
    CHECK(p.grad("x")[0] == 0.0);
}

TEST_CASE("forward_backward is bit-identical across calls") {
    Rng rng(3);
    ParamStore p;
    p.add("w", random_array({4, 5}, rng));
    LossFn f = [](Tape& t, ParamStore& s) { return mean(softmax(t.param(s, "w"))); };
    const double a = forward_backward(f, p);
    const Array ga = p.grad("w");
    p.zero_grad();
    const double b = forward_backward(f, p);
    CHECK(a == b);
    CHECK(ga == p.grad("w"));
}

TEST_CASE("hinge values and subgradient convention") {
    ParamStore p;
    p.add("x", Array::vector({-1.0, 0.0, 2.0, 3.0}));
    Tape t;
    Var h = hinge(t.param(p, "x"));
    CHECK(h.value() == Array::vector({0.0, 0.0, 2.0, 3.0}));
    t.backward(sum(h));
    CHECK(p.grad("x") == Array::vector({0.0, 0.0, 1.0, 1.0}));

    ParamStore q;
    q.add("x", Array::vector({-3.0, -0.5}));
    Tape t2;
    Var h2 = hinge(t2.param(q, "x"));
    t2.backward(sum(h2));
    CHECK(h2.value() == Array::vector({0.0, 0.0}));
    CHECK(q.grad("x") == Array::vector({0.0, 0.0}));
}

TEST_CASE("finite differences are exact on a quadratic") {
    Rng rng(4);
    ParamStore p;
    p.add("x", random_array({30}, rng));
    LossFn f = [](Tape& t, ParamStore& s) { return sum(square(add_scalar(t.param(s, "x"), 0.5))); };
    for (double step : {1e-2, 1e-3}) {
        auto r = finite_diff_check(f, p, step, 30, 1);
        CHECK(r.max_error <= 1e-8);
        CHECK(r.checked == 30);
    }
}

TEST_CASE("softmax cross-entropy over 4 classes passes finite differences") {
    Rng rng(5);
    ParamStore p;
    p.add("logits", random_array({6, 4}, rng));
    const std::vector<std::size_t> labels{0, 1, 2, 3, 1, 2};
    LossFn f = [&](Tape& t, ParamStore& s) {
        return scale(sum(log(pick(softmax(t.param(s, "logits")), labels))), -1.0 / 6.0);
    };
    auto r = finite_diff_check(f, p, 1e-3, 24, 2);
    CHECK(r.max_error <= 1e-5);
}

TEST_CASE("finite-difference check reports a stencil straddling a hinge kink") {
    ParamStore p;
    p.add("x", Array::vector({0.0}));
    LossFn f = [](Tape& t, ParamStore& s) { return sum(hinge(t.param(s, "x"))); };
    auto skipped = finite_diff_check(f, p, 1e-3, 1, 1);
    CHECK(skipped.kink_crossings == 1);
    CHECK(skipped.checked == 0);
    auto nudged = finite_diff_check(f, p, 1e-3, 1, 1, 1e-2);
    CHECK(nudged.nudges == 1);
    CHECK(nudged.checked == 1);
    CHECK(nudged.max_error <= 1e-10);
    CHECK(p.value("x")[0] == 0.0);
}

TEST_CASE("finite_diff_check validates its arguments") {
    ParamStore p;
    p.add("x", Array::vector({1.0, 2.0}));
    LossFn f = [](Tape& t, ParamStore& s) { return sum(t.param(s, "x")); };
    CHECK_THROWS_AS(finite_diff_check(f, p, 0.0, 1, 1), ConfigError);
    CHECK_THROWS_AS(finite_diff_check(f, p, 1e-3, 3, 1), ConfigError);
}

TEST_CASE("non-finite intermediates name the primitive") {
    ParamStore p;
    p.add("x", Array::vector({1e200, 1e200}));
    try {
        forward_backward([](Tape& t, ParamStore& s) { return sum(square(t.param(s, "x"))); }, p);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("square") != std::string::npos);
    }
}

TEST_CASE("shape mismatches report both shapes") {
    Tape t;
    Var a = t.constant(Array({2, 3}));
    Var b = t.constant(Array({3, 2}));
    try {
        add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[3x2]") != std::string::npos);
    }
}

TEST_CASE("softmax rows are positive and sum to one") {
    Rng rng(6);
    Tape t(false);
    Array x = random_array({5, 7}, rng);
    x[0] = 700.0;
    Var s = softmax(t.constant(x));
    for (std::size_t i = 0; i < 5; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            CHECK(s.value().at(i, j) >= 0.0);
            total += s.value().at(i, j);
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("l2 normalization gives unit rows and guards tiny norms") {
    Rng rng(7);
    Tape t(false);
    Array x = random_array({6, 5}, rng);
    Var y = l2_normalize_rows(t.constant(x));
    for (std::size_t i = 0; i < 6; ++i) {
        double n = 0.0;
        for (std::size_t j = 0; j < 5; ++j) n += y.value().at(i, j) * y.value().at(i, j);
        CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-12);
    }
    Array z({2, 3}, 1.0);
    for (std::size_t j = 0; j < 3; ++j) z.at(1, j) = 0.0;
    try {
        l2_normalize_rows(t.constant(z));
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
    }
}

TEST_CASE("primitive gradients match finite differences") {
    Rng rng(8);
    ParamStore p;
    p.add("x", random_array({2, 2, 4, 3}, rng));
    p.add("w", random_array({3, 2, 3, 3}, rng));
    p.add("b", random_array({3}, rng));
    p.add("g", random_array({3}, rng));
    p.add("beta", random_array({3}, rng));
    p.add("o", random_array({2}, rng));
    LossFn f = [](Tape& t, ParamStore& s) {
        Var y = conv2d(t.param(s, "x"), t.param(s, "w"), t.param(s, "b"), 1, 1);
        Var pooled = spatial_mean(y);
        Var bn = batchnorm_train(pooled, t.param(s, "g"), t.param(s, "beta"), 1e-5).out;
        Var parts = band_means(y, 2);
        Var d = pairwise_distance(l2_normalize_rows(add(bn, weighted_parts(parts, softmax(t.param(s, "o"))))));
        return add(sum(d), sum(square(bn)));
    };
    auto r = finite_diff_check(f, p, 1e-4, 60, 3, 1e-2);
    CHECK(r.max_error <= 1e-5);
}

TEST_CASE("band means require P to divide H") {
    Tape t(false);
    CHECK_THROWS_AS(band_means(t.constant(Array({1, 1, 5, 2})), 2), ConfigError);
}

TEST_CASE("param store keeps insertion order and rejects duplicates") {
    ParamStore p;
    p.add("b", Array::scalar(1));
    p.add("a", Array::scalar(2));
    CHECK(p.names() == std::vector<std::string>{"b", "a"});
    CHECK_THROWS_AS(p.add("a", Array::scalar(3)), ConfigError);
    CHECK(p.total_size() == 2);
}
