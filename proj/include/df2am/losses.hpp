#pragma once

#include <cstddef>
#include <vector>

#include "df2am/array.hpp"
#include "df2am/autodiff.hpp"

namespace df2am::losses {

enum class AffinityLoss { Margin, L1 };

struct LossWeights {
    double lambda = 1.1;          // weight of the fusion classification loss
    double zeta = 1.5;            // weight of the affinity loss
    double triplet_margin = 0.3;  // batch-hard triplet margin
    double margin = 0.6;          // affinity hinge margin m
    double delta = 2.0;           // L1 target distance for negative pairs
    AffinityLoss affinity = AffinityLoss::Margin;

    // Throws ConfigError unless every value is finite and non-negative and delta > 0.
    void validate() const;
};

// Probability floor applied before the log in the cross-entropy terms.
inline constexpr double kProbabilityFloor = 1e-30;

// -(1/K) sum_k log p(y_k). Probabilities at or below the floor are clamped and counted.
ad::Var id_loss(ad::Var probabilities, const std::vector<std::size_t>& labels, std::size_t* clamp_count = nullptr);

// sum over anchors of [margin + max_pos d(a, p) - min_neg d(a, n)]_+ with unnormalized
// Euclidean d. Every identity needs at least two samples and at least two identities.
ad::Var batch_hard_triplet(ad::Var embeddings, const std::vector<std::size_t>& labels, double margin);

// id_loss + batch_hard_triplet for one modality.
ad::Var baseline_loss(ad::Var probabilities, ad::Var embeddings, const std::vector<std::size_t>& labels,
                      double triplet_margin, std::size_t* clamp_count = nullptr);

// rgb [K, C], ir [K', C] -> [K+K', K+K'] distances between L2-normalized rows,
// RGB rows first. Throws NumericalError naming a sample whose norm is below 1e-12.
ad::Var affinity_matrix(ad::Var rgb_globals, ad::Var ir_globals);
Array affinity_matrix(const Array& rgb_globals, const Array& ir_globals);

// G[i][j] = 1 iff labels[i] == labels[j].
Array ground_truth_affinity(const std::vector<std::size_t>& labels);

// mean_ij |D_ij - (1 - G_ij) * delta|
ad::Var l1_affinity_loss(ad::Var distances, const Array& truth, double delta);

// sum_ij [D_ij * G_ij - (D_ij - m) * (1 - G_ij)]_+
ad::Var margin_affinity_loss(ad::Var distances, const Array& truth, double margin);

// Raw (unweighted) term values of one training step.
struct LossBreakdown {
    double baseline_rgb = 0.0;
    double baseline_ir = 0.0;
    double dff = 0.0;
    double affinity = 0.0;
    double total = 0.0;
};

// Terms that were not computed are passed as invalid Vars and contribute 0.
struct LossTerms {
    ad::Var baseline_rgb;
    ad::Var baseline_ir;
    ad::Var dff;
    ad::Var affinity;
};

// L_B^RGB + L_B^IR + lambda * L_D + zeta * L_A. Fills `breakdown` when given.
ad::Var final_loss(ad::Tape& tape, const LossTerms& terms, const LossWeights& weights,
                   LossBreakdown* breakdown = nullptr);

}  // namespace df2am::losses
