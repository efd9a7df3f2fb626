#include "df2am/losses.hpp"

#include <cmath>
#include <map>

#include "df2am/errors.hpp"

namespace df2am::losses {

void LossWeights::validate() const {
    for (double v : {lambda, zeta, triplet_margin, margin, delta}) {
        if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and non-negative");
    }
    if (!(delta > 0)) throw ConfigError("delta must be positive");
}

ad::Var id_loss(ad::Var probabilities, const std::vector<std::size_t>& labels, std::size_t* clamp_count) {
    const Shape& s = probabilities.shape();
    if (s.size() != 2 || s[0] != labels.size()) {
        throw ShapeError("id_loss: probabilities " + shape_str(s) + " vs " + std::to_string(labels.size()) + " labels");
    }
    for (auto y : labels) {
        if (y >= s[1]) {
            throw LabelError("id_loss: label " + std::to_string(y) + " outside [0, " + std::to_string(s[1]) + ")");
        }
    }
    ad::Var logp = ad::log_clamped(ad::pick(probabilities, labels), kProbabilityFloor, clamp_count);
    return ad::scale(ad::mean(logp), -1.0);
}

namespace {

void check_triplet_batch(const std::vector<std::size_t>& labels) {
    std::map<std::size_t, std::size_t> counts;
    for (auto y : labels) ++counts[y];
    if (counts.size() < 2) throw LabelError("batch_hard_triplet: batch needs at least two identities");
    for (const auto& [id, n] : counts) {
        if (n < 2) {
            throw LabelError("batch_hard_triplet: identity " + std::to_string(id) +
                             " has a single sample (no positive)");
        }
    }
}

}  // namespace

ad::Var batch_hard_triplet(ad::Var embeddings, const std::vector<std::size_t>& labels, double margin) {
    const Shape& s = embeddings.shape();
    if (s.size() != 2 || s[0] != labels.size()) {
        throw ShapeError("batch_hard_triplet: embeddings " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                         " labels");
    }
    check_triplet_batch(labels);
    const std::size_t n = labels.size();
    std::vector<bool> positive(n * n), negative(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            positive[i * n + j] = labels[i] == labels[j];
            negative[i * n + j] = labels[i] != labels[j];
        }
    ad::Var d = ad::pairwise_distance(embeddings);
    ad::Var hardest_pos = ad::masked_row_max(d, positive);
    ad::Var hardest_neg = ad::masked_row_min(d, negative);
    return ad::sum(ad::hinge(ad::add_scalar(ad::sub(hardest_pos, hardest_neg), margin)));
}

ad::Var baseline_loss(ad::Var probabilities, ad::Var embeddings, const std::vector<std::size_t>& labels,
                      double triplet_margin, std::size_t* clamp_count) {
    return ad::add(id_loss(probabilities, labels, clamp_count), batch_hard_triplet(embeddings, labels, triplet_margin));
}

ad::Var affinity_matrix(ad::Var rgb_globals, ad::Var ir_globals) {
    return ad::pairwise_distance(ad::l2_normalize_rows(ad::concat_rows(rgb_globals, ir_globals)));
}

Array affinity_matrix(const Array& rgb_globals, const Array& ir_globals) {
    ad::Tape tape(false);
    return affinity_matrix(tape.constant(rgb_globals), tape.constant(ir_globals)).value();
}

Array ground_truth_affinity(const std::vector<std::size_t>& labels) {
    const std::size_t n = labels.size();
    if (n == 0) throw ShapeError("ground_truth_affinity: empty label list");
    Array g({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) g.at(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
    return g;
}

ad::Var l1_affinity_loss(ad::Var distances, const Array& truth, double delta) {
    require_same_shape(distances.shape(), truth.shape(), "l1_affinity_loss");
    Array target(truth.shape());
    for (std::size_t i = 0; i < truth.size(); ++i) target[i] = (1.0 - truth[i]) * delta;
    ad::Tape& t = *distances.tape();
    return ad::mean(ad::abs(ad::sub(distances, t.constant(std::move(target)))));
}

ad::Var margin_affinity_loss(ad::Var distances, const Array& truth, double margin) {
    require_same_shape(distances.shape(), truth.shape(), "margin_affinity_loss");
    Array negative(truth.shape());
    for (std::size_t i = 0; i < truth.size(); ++i) negative[i] = 1.0 - truth[i];
    ad::Tape& t = *distances.tape();
    ad::Var pos = ad::mul(distances, t.constant(truth));
    ad::Var neg = ad::mul(ad::add_scalar(distances, -margin), t.constant(std::move(negative)));
    return ad::sum(ad::hinge(ad::sub(pos, neg)));
}

ad::Var final_loss(ad::Tape& tape, const LossTerms& terms, const LossWeights& weights, LossBreakdown* breakdown) {
    LossBreakdown b;
    ad::Var total = tape.constant(Array::scalar(0.0));
    if (terms.baseline_rgb.valid()) {
        b.baseline_rgb = terms.baseline_rgb.item();
        total = ad::add(total, terms.baseline_rgb);
    }
    if (terms.baseline_ir.valid()) {
        b.baseline_ir = terms.baseline_ir.item();
        total = ad::add(total, terms.baseline_ir);
    }
    if (terms.dff.valid()) {
        b.dff = terms.dff.item();
        total = ad::add(total, ad::scale(terms.dff, weights.lambda));
    }
    if (terms.affinity.valid()) {
        b.affinity = terms.affinity.item();
        total = ad::add(total, ad::scale(terms.affinity, weights.zeta));
    }
    b.total = total.item();
    if (breakdown) *breakdown = b;
    return total;
}

}  // namespace df2am::losses
