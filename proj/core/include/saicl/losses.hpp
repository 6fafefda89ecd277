#pragma once

#include <cstdint>
#include <optional>

#include "saicl/autodiff.hpp"
#include "saicl/data.hpp"
#include "saicl/rng.hpp"

namespace saicl {

struct LossConfig {
    double tau = 0.1;
    double lambda_self = 0.1;
    double lambda_sup = 1.0;
    int64_t anchor_subsample = 4096; // cap on anchors per batch; 0 disables
    bool future_only_positives = false;
    bool normalize_embeddings = true;
    bool mean_reduction = true; // divide by active anchors (training default;
                                // false gives the plain sum over anchors)

    void validate() const;
};

enum class ObjectiveMode { Self, Sup };
std::string objective_name(ObjectiveMode m);
ObjectiveMode objective_from_name(const std::string& name);

// Mean binary cross-entropy over positions where mask != 0. probs, labels and
// mask are index-aligned; probabilities are clamped at 1e-7.
Var cross_entropy(const Var& probs, const Tensor& labels, const Tensor& mask);

// Interaction-level objectives. Z and R are (B,L,Dp) source/target projection
// outputs aligned with the batch; anchors and candidates are its valid
// positions. Anchors with an empty positive set contribute zero. When the
// anchor count exceeds cfg.anchor_subsample and an rng is supplied, anchors
// are uniformly subsampled (the candidate set is never reduced).
//
// milcpc:   positives = other valid positions of the same user
// supcpc:   positives = valid positions with the same label (any user)
// c_supcpc: positives = same label and same conditioning item
Var milcpc(const Var& z, const Var& r, const SequenceBatch& batch, const LossConfig& cfg,
           Rng* rng = nullptr, int64_t* active_anchors = nullptr);
Var supcpc(const Var& z, const Var& r, const SequenceBatch& batch, const LossConfig& cfg,
           Rng* rng = nullptr, int64_t* active_anchors = nullptr);
Var c_supcpc(const Var& z, const Var& r, const SequenceBatch& batch, const LossConfig& cfg,
             Rng* rng = nullptr, int64_t* active_anchors = nullptr);

// Sample-level baselines over per-user global embeddings of two augmented
// views, (N,Dp) each. Rows i and N+i are positive pairs.
Var concat_infonce(const Var& z_view1, const Var& z_view2, const LossConfig& cfg);
// Positives are all views whose sequence label matches (DP only).
Var concat_supcontrast(const Var& z_view1, const Var& z_view2,
                       const std::vector<int8_t>& labels, const LossConfig& cfg);

// total = ce + lambda_self * self_term        (ObjectiveMode::Self)
// total = ce + lambda_sup * (sup + c_sup)     (ObjectiveMode::Sup)
// Null terms count as zero.
Var combined_loss(const Var& ce, const Var* self_term, const Var* sup_term, const Var* c_sup_term,
                  const LossConfig& cfg, ObjectiveMode mode);

} // namespace saicl
