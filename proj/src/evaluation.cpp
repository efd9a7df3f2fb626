#include "df2am/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "df2am/config_io.hpp"
#include "df2am/errors.hpp"
#include "df2am/losses.hpp"
#include "df2am/rng.hpp"

namespace df2am {

void RankingProblem::validate() const {
    if (distances.rank() != 2 || distances.dim(0) != queries() || distances.dim(1) != gallery()) {
        throw ShapeError("ranking problem: distances " + shape_str(distances.shape()) + " vs " +
                         std::to_string(queries()) + " queries and " + std::to_string(gallery()) + " gallery items");
    }
    require_finite(distances, "ranking problem distances");
    for (std::size_t q = 0; q < queries(); ++q) {
        if (std::find(gallery_labels.begin(), gallery_labels.end(), query_labels[q]) == gallery_labels.end()) {
            throw ProtocolError("query " + std::to_string(q) + " (identity " + std::to_string(query_labels[q]) +
                                ") has no match in the gallery");
        }
    }
}

std::vector<std::size_t> rank_gallery(const RankingProblem& problem, std::size_t q) {
    std::vector<std::size_t> order(problem.gallery());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return problem.distances.at(q, a) < problem.distances.at(q, b);
    });
    return order;
}

std::vector<double> cmc_rank_k(const RankingProblem& problem, const std::vector<std::size_t>& ks) {
    problem.validate();
    for (auto k : ks) {
        if (k == 0 || k > problem.gallery()) {
            throw ConfigError("cmc: k=" + std::to_string(k) + " outside [1, " + std::to_string(problem.gallery()) + "]");
        }
    }
    std::vector<double> hits(ks.size(), 0.0);
    for (std::size_t q = 0; q < problem.queries(); ++q) {
        const auto order = rank_gallery(problem, q);
        std::size_t first = 0;
        while (problem.gallery_labels[order[first]] != problem.query_labels[q]) ++first;
        for (std::size_t i = 0; i < ks.size(); ++i)
            if (first < ks[i]) hits[i] += 1.0;
    }
    for (auto& h : hits) h /= static_cast<double>(problem.queries());
    return hits;
}

double mean_ap(const RankingProblem& problem) {
    problem.validate();
    double total = 0.0;
    for (std::size_t q = 0; q < problem.queries(); ++q) {
        const auto order = rank_gallery(problem, q);
        double ap = 0.0;
        std::size_t relevant = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (problem.gallery_labels[order[pos]] != problem.query_labels[q]) continue;
            ++relevant;
            ap += static_cast<double>(relevant) / static_cast<double>(pos + 1);
        }
        total += ap / static_cast<double>(relevant);
    }
    return total / static_cast<double>(problem.queries());
}

Array normalized_distances(const Array& queries, const Array& gallery) {
    if (queries.rank() != 2 || gallery.rank() != 2 || queries.dim(1) != gallery.dim(1)) {
        throw ShapeError("normalized_distances: shape mismatch " + shape_str(queries.shape()) + " vs " +
                         shape_str(gallery.shape()));
    }
    ad::Tape tape(false);
    const Array qn = ad::l2_normalize_rows(tape.constant(queries)).value();
    const Array gn = ad::l2_normalize_rows(tape.constant(gallery)).value();
    const std::size_t nq = qn.dim(0), ng = gn.dim(0), d = qn.dim(1);
    Array out({nq, ng});
    for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < ng; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = qn.at(i, k) - gn.at(j, k);
                s += diff * diff;
            }
            out.at(i, j) = std::sqrt(s);
        }
    return out;
}

void EvalConfig::validate() const {
    if (repetitions == 0) throw ConfigError("evaluation: repetitions must be positive");
    if (gallery_per_id == 0) throw ConfigError("evaluation: gallery_per_id must be positive");
    if (ks.empty()) throw ConfigError("evaluation: ks must not be empty");
    for (auto k : ks)
        if (k == 0) throw ConfigError("evaluation: ks must be positive");
}

double MetricsReport::rank(std::size_t k) const {
    for (std::size_t i = 0; i < ks.size(); ++i)
        if (ks[i] == k) return cmc[i];
    throw ConfigError("report has no rank-" + std::to_string(k));
}

MetricsReport evaluate_embeddings(const Array& query_embeddings, const std::vector<std::size_t>& query_labels,
                                  const Array& gallery_embeddings, const std::vector<std::size_t>& gallery_labels,
                                  const EvalConfig& config) {
    config.validate();
    const Array full = normalized_distances(query_embeddings, gallery_embeddings);
    std::map<std::size_t, std::vector<std::size_t>> by_id;
    for (std::size_t g = 0; g < gallery_labels.size(); ++g) by_id[gallery_labels[g]].push_back(g);

    MetricsReport report;
    report.ks = config.ks;
    report.repetitions = config.repetitions;
    report.cmc.assign(config.ks.size(), 0.0);
    for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
        Rng rng(Rng::derive(config.seed, rep));
        std::vector<std::size_t> chosen;
        for (const auto& [id, items] : by_id) {
            std::vector<std::size_t> pool = items;
            const std::size_t take = std::min(config.gallery_per_id, pool.size());
            for (std::size_t i = 0; i < take; ++i) {
                std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
                std::swap(pool[i], pool[j]);
            }
            pool.resize(take);
            std::sort(pool.begin(), pool.end());
            chosen.insert(chosen.end(), pool.begin(), pool.end());
        }
        RankingProblem problem;
        problem.query_labels = query_labels;
        problem.distances = Array({query_labels.size(), chosen.size()});
        for (std::size_t j = 0; j < chosen.size(); ++j) {
            problem.gallery_labels.push_back(gallery_labels[chosen[j]]);
            for (std::size_t q = 0; q < query_labels.size(); ++q) problem.distances.at(q, j) = full.at(q, chosen[j]);
        }
        std::vector<std::size_t> ks;
        for (auto k : config.ks) ks.push_back(std::min(k, chosen.size()));
        auto cmc = cmc_rank_k(problem, ks);
        const double ap = mean_ap(problem);
        for (std::size_t i = 0; i < cmc.size(); ++i) report.cmc[i] += cmc[i];
        report.map += ap;
        report.per_rep_cmc.push_back(std::move(cmc));
        report.per_rep_map.push_back(ap);
    }
    for (auto& c : report.cmc) c /= static_cast<double>(config.repetitions);
    report.map /= static_cast<double>(config.repetitions);
    return report;
}

MetricsReport evaluate(Model& model, const Dataset& data, const RetrievalSet& set, const EvalConfig& config) {
    const Modality gallery_modality = set.query_modality == Modality::IR ? Modality::RGB : Modality::IR;
    const Array q = model.embed(data.stack(set.query), set.query_modality, config.embedding);
    const Array g = model.embed(data.stack(set.gallery), gallery_modality, config.embedding);
    return evaluate_embeddings(q, set.query_labels, g, set.gallery_labels, config);
}

// ---- files ------------------------------------------------------------------

void write_report(const MetricsReport& report, const std::string& path) {
    nlohmann::json j;
    j["format"] = "df2am-metrics/1";
    j["ks"] = report.ks;
    j["cmc"] = report.cmc;
    j["mAP"] = report.map;
    j["repetitions"] = report.repetitions;
    j["per_repetition"] = {{"cmc", report.per_rep_cmc}, {"mAP", report.per_rep_map}};
    j["config"] = report.config.empty() ? nlohmann::json::object() : nlohmann::json::parse(report.config);
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

MetricsReport read_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open metrics report: " + path);
    try {
        auto j = nlohmann::json::parse(is);
        if (j.at("format").get<std::string>() != "df2am-metrics/1") throw IoError("not a metrics report: " + path);
        MetricsReport r;
        r.ks = j.at("ks").get<std::vector<std::size_t>>();
        r.cmc = j.at("cmc").get<std::vector<double>>();
        r.map = j.at("mAP").get<double>();
        r.repetitions = j.at("repetitions").get<std::size_t>();
        r.per_rep_cmc = j.at("per_repetition").at("cmc").get<std::vector<std::vector<double>>>();
        r.per_rep_map = j.at("per_repetition").at("mAP").get<std::vector<double>>();
        const auto& cfg = j.at("config");
        r.config = cfg.empty() ? std::string() : cfg.dump();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed metrics report " + path + ": " + e.what());
    }
}

void write_report_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "repetition";
    for (auto k : report.ks) os << ",rank" << k;
    os << ",mAP\n";
    for (std::size_t r = 0; r < report.per_rep_map.size(); ++r) {
        os << r;
        for (double v : report.per_rep_cmc[r]) os << ',' << format_double(v);
        os << ',' << format_double(report.per_rep_map[r]) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace df2am
