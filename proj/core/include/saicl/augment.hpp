#pragma once

#include "saicl/data.hpp"
#include "saicl/rng.hpp"

namespace saicl {

// Stochastic sequence augmentations for the sample-level contrastive
// baselines. Probabilities/fractions all live in [0,1].
struct AugmentConfig {
    double gamma_mask = 0.0;
    double gamma_crop = 0.0;
    double gamma_replace = 0.0;
    double gamma_permute = 0.0;
    bool interaction_level = false; // also augment interaction-level CL inputs

    void validate() const;
    bool any() const {
        return gamma_mask > 0 || gamma_crop > 0 || gamma_replace > 0 || gamma_permute > 0;
    }
};

// Applies crop -> mask -> replace -> permute, in that order.
//  - crop keeps a random contiguous window of length ceil((1-gamma_crop)*len)
//  - mask sets each position's features to the reserved mask token with
//    probability gamma_mask (continuous features to 0)
//  - replace resamples each item uniformly with probability gamma_replace
//  - permute shuffles the features of a random contiguous segment of length
//    ceil(gamma_permute*len); timestamps keep their slots so ordering holds
StudentSequence augment(const StudentSequence& seq, const AugmentConfig& cfg,
                        const FeatureSchema& schema, Rng& rng);

} // namespace saicl
