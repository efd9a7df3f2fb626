#include <cmath>
#include <fstream>

#include "doctest.h"
#include "df2am/errors.hpp"
#include "df2am/evaluation.hpp"
#include "df2am/rng.hpp"
#include "oracles.hpp"

using namespace df2am;

namespace {

RankingProblem problem(std::size_t q, std::size_t g, std::vector<double> d, std::vector<std::size_t> ql,
                       std::vector<std::size_t> gl) {
    RankingProblem p;
    p.distances = Array({q, g}, std::move(d));
    p.query_labels = std::move(ql);
    p.gallery_labels = std::move(gl);
    return p;
}

}  // namespace

TEST_CASE("cmc examples") {
    CHECK(cmc_rank_k(problem(1, 3, {0.1, 0.5, 0.9}, {7}, {7, 1, 2}), {1})[0] == 1.0);
    const auto third = cmc_rank_k(problem(1, 5, {0.1, 0.2, 0.3, 0.4, 0.5}, {7}, {1, 2, 7, 3, 4}), {1, 5});
    CHECK(third[0] == 0.0);
    CHECK(third[1] == 1.0);

    auto p = problem(4, 4, {0.1, 0.4, 0.2, 0.9, 0.3, 0.3, 0.8, 0.1, 0.5, 0.2, 0.2, 0.7, 1.0, 0.0, 0.6, 0.6}, {0, 1, 0, 1},
                     {0, 1, 1, 0});
    const auto c = cmc_rank_k(p, {1, 2, 3, 4});
    for (std::size_t k = 1; k <= 4; ++k) CHECK(c[k - 1] == oracle::cmc(p.distances, p.query_labels, p.gallery_labels, k));
    CHECK_THROWS_AS(cmc_rank_k(p, {0}), ConfigError);
    CHECK_THROWS_AS(cmc_rank_k(p, {5}), ConfigError);
}

TEST_CASE("ties are broken by gallery index") {
    auto p = problem(1, 3, {0.5, 0.5, 0.5}, {2}, {1, 2, 2});
    CHECK(rank_gallery(p, 0) == std::vector<std::size_t>{0, 1, 2});
    CHECK(cmc_rank_k(p, {1})[0] == 0.0);
    CHECK(std::abs(mean_ap(p) - (0.5 + 2.0 / 3.0) / 2.0) <= 1e-15);
}

TEST_CASE("mean ap examples") {
    CHECK(mean_ap(problem(1, 3, {0.1, 0.2, 0.9}, {4}, {4, 4, 1})) == 1.0);
    CHECK(mean_ap(problem(1, 2, {0.1, 0.2}, {4}, {1, 4})) == 0.5);
    auto p = problem(3, 5, {0.3, 0.1, 0.5, 0.9, 0.2, 0.6, 0.4, 0.1, 0.3, 0.8, 0.2, 0.2, 0.9, 0.1, 0.5}, {0, 1, 2},
                     {0, 1, 2, 0, 1});
    CHECK(std::abs(mean_ap(p) - oracle::mean_ap(p.distances, p.query_labels, p.gallery_labels)) <= 1e-12);
}

TEST_CASE("missing query identity is a protocol error naming the query") {
    try {
        mean_ap(problem(2, 2, {0.1, 0.2, 0.3, 0.4}, {0, 5}, {0, 1}));
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.what()).find("query 1") != std::string::npos);
    }
}

TEST_CASE("metric properties on random problems") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        auto o = oracle::random_problem(rng, 10, 10, trial % 2 == 0);
        RankingProblem p{o.dist, o.query_labels, o.gallery_labels};
        std::vector<std::size_t> ks;
        for (std::size_t k = 1; k <= p.gallery(); ++k) ks.push_back(k);
        const auto c = cmc_rank_k(p, ks);
        for (std::size_t i = 1; i < c.size(); ++i) CHECK(c[i] >= c[i - 1]);
        CHECK(c.back() == 1.0);
        RankingProblem t = p;
        for (auto& v : t.distances.values()) v = std::exp(3.0 * v) + 1.0;
        CHECK(cmc_rank_k(t, ks) == c);
        CHECK(mean_ap(t) == mean_ap(p));
        const double m = mean_ap(p);
        CHECK(m > 0.0);
        CHECK(m <= 1.0);
    }
}

TEST_CASE("normalized distances are scale invariant and bounded") {
    Rng rng(32);
    Array q({3, 4}), g({5, 4});
    for (auto& v : q.values()) v = rng.normal();
    for (auto& v : g.values()) v = rng.normal();
    const Array d = normalized_distances(q, g);
    Array q2 = q;
    for (std::size_t j = 0; j < 4; ++j) q2.at(1, j) *= 7.0;
    const Array d2 = normalized_distances(q2, g);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(d[i] >= 0.0);
        CHECK(d[i] <= 2.0 + 1e-12);
        CHECK(std::abs(d[i] - d2[i]) <= 1e-12);
    }
}

TEST_CASE("evaluate_embeddings repetitions and determinism") {
    Rng rng(33);
    const std::size_t ids = 6, per = 4;
    Array q({ids, 5}), g({ids * per, 5});
    std::vector<std::size_t> ql, gl;
    for (std::size_t i = 0; i < ids; ++i) {
        ql.push_back(i);
        for (std::size_t j = 0; j < 5; ++j) q.at(i, j) = rng.normal();
        for (std::size_t k = 0; k < per; ++k) {
            gl.push_back(i);
            for (std::size_t j = 0; j < 5; ++j) g.at(i * per + k, j) = q.at(i, j) + 0.8 * rng.normal();
        }
    }
    EvalConfig c;
    c.repetitions = 1;
    c.gallery_per_id = 100;
    c.ks = {1, 5};
    const auto whole = evaluate_embeddings(q, ql, g, gl, c);
    RankingProblem p{normalized_distances(q, g), ql, gl};
    CHECK(whole.map == mean_ap(p));
    CHECK(whole.cmc == cmc_rank_k(p, {1, 5}));

    c.repetitions = 5;
    c.gallery_per_id = 2;
    c.seed = 9;
    const auto a = evaluate_embeddings(q, ql, g, gl, c), b = evaluate_embeddings(q, ql, g, gl, c);
    CHECK(a == b);
    CHECK(a.per_rep_map.size() == 5);
    double mean = 0.0;
    for (double v : a.per_rep_map) mean += v;
    CHECK(std::abs(mean / 5.0 - a.map) <= 1e-12);
}

TEST_CASE("report files round trip") {
    MetricsReport r;
    r.ks = {1, 5};
    r.cmc = {0.25, 0.75};
    r.map = 0.4;
    r.repetitions = 2;
    r.per_rep_cmc = {{0.2, 0.7}, {0.3, 0.8}};
    r.per_rep_map = {0.35, 0.45};
    r.config = R"({"seed":1})";
    write_report(r, "report_roundtrip.json");
    CHECK(read_report("report_roundtrip.json") == r);
    write_report_csv(r, "report_roundtrip.csv");
    std::ifstream is("report_roundtrip.csv");
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    CHECK(header == "repetition,rank1,rank5,mAP");
    CHECK(row == "0,0.2,0.7,0.35");
    CHECK_THROWS_AS(read_report("no_such_report.json"), IoError);
}
