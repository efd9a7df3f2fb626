#include <cmath>

#include "doctest.h"
#include "df2am/errors.hpp"
#include "df2am/losses.hpp"
#include "df2am/rng.hpp"
#include "oracles.hpp"

using namespace df2am;
using namespace df2am::ad;

namespace {

Array random_array(Shape shape, Rng& rng) {
    Array a(std::move(shape));
    for (auto& v : a.values()) v = rng.normal();
    return a;
}

std::vector<std::size_t> grouped(std::size_t ids, std::size_t per) {
    std::vector<std::size_t> l;
    for (std::size_t i = 0; i < ids; ++i)
        for (std::size_t j = 0; j < per; ++j) l.push_back(i);
    return l;
}

}  // namespace

TEST_CASE("id loss examples") {
    Tape t(false);
    CHECK(std::abs(losses::id_loss(t.constant(Array({2, 4}, 0.25)), {0, 3}).item() - std::log(4.0)) <= 1e-12);
    CHECK(losses::id_loss(t.constant(Array::matrix(2, 2, {1, 0, 0, 1})), {0, 1}).item() == 0.0);
    Var p = t.constant(Array::matrix(2, 2, {0.5, 0.5, 0.75, 0.25}));
    CHECK(std::abs(losses::id_loss(p, {0, 1}).item() - 1.5 * std::log(2.0)) <= 1e-12);
    CHECK_THROWS_AS(losses::id_loss(p, {0, 2}), LabelError);
}

TEST_CASE("id loss clamps zero probabilities and counts them") {
    Tape t(false);
    std::size_t clamped = 0;
    Var l = losses::id_loss(t.constant(Array::matrix(1, 2, {1, 0})), {1}, &clamped);
    CHECK(clamped == 1);
    CHECK(std::abs(l.item() + std::log(losses::kProbabilityFloor)) <= 1e-9);
}

TEST_CASE("batch hard triplet examples") {
    Tape t(false);
    Array collapsed = Array::matrix(4, 2, {0, 0, 0, 0, 10, 0, 10, 0});
    CHECK(losses::batch_hard_triplet(t.constant(collapsed), {0, 0, 1, 1}, 0.3).item() == 0.0);
    Array same({6, 3}, 1.25);
    CHECK(std::abs(losses::batch_hard_triplet(t.constant(same), grouped(3, 2), 0.3).item() - 6 * 0.3) <= 1e-12);

    Array pts = Array::matrix(4, 2, {0, 0, 1, 0, 0.5, 0.4, 3, 3});
    const std::vector<std::size_t> labels{0, 0, 1, 1};
    CHECK(std::abs(losses::batch_hard_triplet(t.constant(pts), labels, 0.3).item() -
                   oracle::exhaustive_triplet(pts, labels, 0.3)) <= 1e-12);
}

TEST_CASE("batch hard triplet needs two identities with two samples each") {
    Tape t(false);
    CHECK_THROWS_AS(losses::batch_hard_triplet(t.constant(Array({3, 2}, 1.0)), {0, 0, 1}, 0.3), LabelError);
    CHECK_THROWS_AS(losses::batch_hard_triplet(t.constant(Array({2, 2}, 1.0)), {0, 0}, 0.3), LabelError);
}

TEST_CASE("batch hard triplet matches the exhaustive oracle on random batches") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(3), m = 2 + rng.below(2);
        const auto labels = grouped(n, m);
        const Array emb = random_array({labels.size(), 4}, rng);
        Tape t(false);
        CHECK(std::abs(losses::batch_hard_triplet(t.constant(emb), labels, 0.3).item() -
                       oracle::exhaustive_triplet(emb, labels, 0.3)) <= 1e-10);
    }
}

TEST_CASE("baseline loss is the sum of its components") {
    Rng rng(18);
    Tape t(false);
    const auto labels = grouped(3, 2);
    Var probs = softmax(t.constant(random_array({6, 3}, rng)));
    Var emb = t.constant(random_array({6, 4}, rng));
    const double combined = losses::baseline_loss(probs, emb, labels, 0.3).item();
    const double parts = losses::id_loss(probs, labels).item() + losses::batch_hard_triplet(emb, labels, 0.3).item();
    CHECK(std::abs(combined - parts) <= 1e-12);

    Var uniform = t.constant(Array({4, 5}, 0.2));
    Var far = t.constant(Array::matrix(4, 1, {0, 0, 100, 100}));
    const double lb = losses::baseline_loss(uniform, far, {0, 0, 1, 1}, 0.3).item();
    CHECK(std::abs(2 * lb - 2 * std::log(5.0)) <= 1e-12);
}

TEST_CASE("affinity matrix examples") {
    Tape t(false);
    Array rgb = Array::matrix(2, 2, {1, 0, 0, 2});
    Array ir = Array::matrix(2, 2, {3, 0, -1, 0});
    const Array d = losses::affinity_matrix(rgb, ir);
    CHECK(d.shape() == Shape{4, 4});
    CHECK(std::abs(d.at(0, 2)) <= 1e-12);
    CHECK(std::abs(d.at(0, 1) - std::sqrt(2.0)) <= 1e-12);
    CHECK(std::abs(d.at(0, 3) - 2.0) <= 1e-12);
    CHECK_THROWS_AS(losses::affinity_matrix(Array::matrix(1, 2, {0, 0}), Array::matrix(1, 2, {1, 0})), NumericalError);
}

TEST_CASE("ground truth affinity examples") {
    CHECK(losses::ground_truth_affinity({0, 1, 2}) == Array::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    CHECK(losses::ground_truth_affinity({4, 4}) == Array({2, 2}, 1.0));
    CHECK(losses::ground_truth_affinity({1, 1, 2, 2}) ==
          Array::matrix(4, 4, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1}));
}

TEST_CASE("l1 affinity loss examples") {
    Tape t(false);
    const Array g = losses::ground_truth_affinity({0, 0, 1, 1});
    Array exact = g;
    for (auto& v : exact.values()) v = v > 0 ? 0.0 : 2.0;
    CHECK(losses::l1_affinity_loss(t.constant(exact), g, 2.0).item() == 0.0);
    CHECK(std::abs(losses::l1_affinity_loss(t.constant(Array({4, 4}, 0.0)), g, 2.0).item() - 2.0 * 0.5) <= 1e-12);

    Rng rng(19);
    Array d({4, 4});
    for (auto& v : d.values()) v = rng.uniform(0.0, 2.0);
    Array gr({4, 4});
    for (auto& v : gr.values()) v = static_cast<double>(rng.below(2));
    double hand = 0.0;
    for (std::size_t i = 0; i < 16; ++i) hand += std::abs(d[i] - (1.0 - gr[i]) * 2.0);
    CHECK(std::abs(losses::l1_affinity_loss(t.constant(d), gr, 2.0).item() - hand / 16.0) <= 1e-12);
    CHECK_THROWS_AS(losses::l1_affinity_loss(t.constant(Array({3, 3})), gr, 2.0), ShapeError);
}

TEST_CASE("margin affinity loss examples") {
    Tape t(false);
    const Array g = losses::ground_truth_affinity({0, 0, 1, 1});
    Array sep = g;
    for (auto& v : sep.values()) v = v > 0 ? 0.0 : 0.8;
    CHECK(losses::margin_affinity_loss(t.constant(sep), g, 0.6).item() == 0.0);

    Array gg({3, 3}, 1.0);
    gg.at(0, 2) = gg.at(2, 0) = 0.0;
    Array d({3, 3}, 0.0);
    d.at(0, 2) = d.at(2, 0) = 0.5;
    CHECK(std::abs(losses::margin_affinity_loss(t.constant(d), gg, 1.0).item() - 1.0) <= 1e-12);

    Rng rng(20);
    Array rd({6, 6});
    for (auto& v : rd.values()) v = rng.uniform(0.0, 2.0);
    const Array rg = losses::ground_truth_affinity({0, 1, 0, 2, 1, 2});
    CHECK(std::abs(losses::margin_affinity_loss(t.constant(rd), rg, 0.6).item() - oracle::margin_affinity(rd, rg, 0.6)) <=
          1e-12);
    CHECK_THROWS_AS(losses::margin_affinity_loss(t.constant(Array({3, 3})), rg, 0.6), ShapeError);
}

TEST_CASE("margin affinity loss is monotone in pair distances") {
    Rng rng(21);
    const Array g = losses::ground_truth_affinity({0, 0, 1, 1, 2});
    for (int trial = 0; trial < 50; ++trial) {
        Array d({5, 5});
        for (auto& v : d.values()) v = rng.uniform(0.0, 2.0);
        Tape t(false);
        const double base = losses::margin_affinity_loss(t.constant(d), g, 0.6).item();
        CHECK(base >= 0.0);
        Array neg = d;
        neg.at(0, 2) += 0.3;
        CHECK(losses::margin_affinity_loss(t.constant(neg), g, 0.6).item() <= base);
        Array pos = d;
        pos.at(0, 1) += 0.3;
        CHECK(losses::margin_affinity_loss(t.constant(pos), g, 0.6).item() >= base);
    }
}

TEST_CASE("final loss examples") {
    Tape t(false);
    losses::LossTerms terms;
    terms.baseline_rgb = t.constant(Array::scalar(1.25));
    terms.baseline_ir = t.constant(Array::scalar(0.75));
    terms.dff = t.constant(Array::scalar(1.0));
    terms.affinity = t.constant(Array::scalar(0.5));
    losses::LossWeights w;
    losses::LossBreakdown b;
    CHECK(std::abs(losses::final_loss(t, terms, w, &b).item() - 3.85) <= 1e-12);
    CHECK(b.baseline_rgb == 1.25);
    CHECK(b.dff == 1.0);
    CHECK(b.affinity == 0.5);
    w.lambda = w.zeta = 0.0;
    CHECK(losses::final_loss(t, terms, w).item() == 2.0);

    losses::LossTerms zeros;
    zeros.baseline_rgb = zeros.baseline_ir = zeros.dff = zeros.affinity = t.constant(Array::scalar(0.0));
    CHECK(losses::final_loss(t, zeros, losses::LossWeights{}).item() == 0.0);
}

TEST_CASE("loss weights validation") {
    losses::LossWeights w;
    w.lambda = -1;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w = {};
    w.delta = 0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("affinity losses pass finite differences on a random 8-sample batch") {
    Rng rng(22);
    ParamStore p;
    p.add("rgb", random_array({4, 6}, rng));
    p.add("ir", random_array({4, 6}, rng));
    const Array g = losses::ground_truth_affinity({0, 0, 1, 1, 0, 0, 1, 1});
    LossFn la = [&](Tape& t, ParamStore& s) {
        return losses::margin_affinity_loss(losses::affinity_matrix(t.param(s, "rgb"), t.param(s, "ir")), g, 0.6);
    };
    LossFn l1 = [&](Tape& t, ParamStore& s) {
        return losses::l1_affinity_loss(losses::affinity_matrix(t.param(s, "rgb"), t.param(s, "ir")), g, 2.0);
    };
    CHECK(finite_diff_check(la, p, 1e-3, 48, 1, 1e-2).max_error <= 1e-4);
    CHECK(finite_diff_check(l1, p, 1e-3, 48, 2, 1e-2).max_error <= 1e-4);
}
