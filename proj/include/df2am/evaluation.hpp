#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "df2am/array.hpp"
#include "df2am/model.hpp"
#include "df2am/synthdata.hpp"

namespace df2am {

// Q x G distances with labels. Every query label must occur in the gallery.
struct RankingProblem {
    Array distances;
    std::vector<std::size_t> query_labels;
    std::vector<std::size_t> gallery_labels;

    std::size_t queries() const { return query_labels.size(); }
    std::size_t gallery() const { return gallery_labels.size(); }
    // Throws ShapeError / NumericalError / ProtocolError (naming the query) on violations.
    void validate() const;
};

// Gallery indices of query q sorted by ascending distance, ties broken by gallery index.
std::vector<std::size_t> rank_gallery(const RankingProblem& problem, std::size_t q);

// Fraction of queries with a same-label gallery item in the top k, for each k (1 <= k <= G).
std::vector<double> cmc_rank_k(const RankingProblem& problem, const std::vector<std::size_t>& ks);

// Mean over queries of average precision of the ranked gallery list.
double mean_ap(const RankingProblem& problem);

// Euclidean distances between L2-normalized query rows and gallery rows.
Array normalized_distances(const Array& queries, const Array& gallery);

struct EvalConfig {
    std::size_t repetitions = 10;
    std::size_t gallery_per_id = 10;
    std::uint64_t seed = 0;
    MatchEmbedding embedding = MatchEmbedding::Fused;
    std::vector<std::size_t> ks{1, 5, 10, 20};

    void validate() const;
};

struct MetricsReport {
    std::vector<std::size_t> ks;
    std::vector<double> cmc;  // mean over repetitions, aligned with ks
    double map = 0.0;
    std::size_t repetitions = 0;
    std::vector<std::vector<double>> per_rep_cmc;
    std::vector<double> per_rep_map;
    std::string config;  // JSON snapshot of the experiment configuration

    double rank(std::size_t k) const;
    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Repeated gallery sampling over precomputed embeddings: each repetition keeps
// gallery_per_id random gallery items per identity (all of them when fewer exist).
// ks larger than the sampled gallery are evaluated at the gallery size.
MetricsReport evaluate_embeddings(const Array& query_embeddings, const std::vector<std::size_t>& query_labels,
                                  const Array& gallery_embeddings, const std::vector<std::size_t>& gallery_labels,
                                  const EvalConfig& config);

// Embeds the retrieval set with the frozen model (inference-phase BN) and runs
// evaluate_embeddings.
MetricsReport evaluate(Model& model, const Dataset& data, const RetrievalSet& set, const EvalConfig& config);

// Canonical JSON report and a per-repetition CSV (columns: repetition, rank1.., mAP).
void write_report(const MetricsReport& report, const std::string& path);
MetricsReport read_report(const std::string& path);
void write_report_csv(const MetricsReport& report, const std::string& path);

}  // namespace df2am
