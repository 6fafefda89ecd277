#include "saicl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "saicl/error.hpp"

namespace saicl {

void AugmentConfig::validate() const {
    for (double g : {gamma_mask, gamma_crop, gamma_replace, gamma_permute})
        if (g < 0.0 || g > 1.0)
            throw Error("config_error", "augmentation probabilities must lie in [0,1]");
}

StudentSequence augment(const StudentSequence& seq, const AugmentConfig& cfg,
                        const FeatureSchema& schema, Rng& rng) {
    cfg.validate();
    StudentSequence out;
    out.user_id = seq.user_id;
    out.sequence_label = seq.sequence_label;
    out.next_item = seq.next_item;

    // crop
    const int64_t n = static_cast<int64_t>(seq.interactions.size());
    int64_t keep = n;
    int64_t start = 0;
    if (cfg.gamma_crop > 0.0 && n > 0) {
        keep = std::max<int64_t>(1, static_cast<int64_t>(std::llround((1.0 - cfg.gamma_crop) * n)));
        start = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n - keep + 1)));
    }
    out.interactions.assign(seq.interactions.begin() + start,
                            seq.interactions.begin() + start + keep);

    // mask
    if (cfg.gamma_mask > 0.0) {
        for (auto& ev : out.interactions) {
            if (!rng.bernoulli(cfg.gamma_mask)) continue;
            ev.item = schema.item_mask();
            if (schema.has_correct) ev.correct = -2; // encoded as the mask token downstream
            for (size_t f = 0; f < ev.extra_cat.size(); ++f)
                ev.extra_cat[f] = schema.extra_cat[f].cardinality + 1;
            for (auto& v : ev.extra_cont) v = 0.0;
        }
    }

    // replace
    if (cfg.gamma_replace > 0.0) {
        for (auto& ev : out.interactions)
            if (rng.bernoulli(cfg.gamma_replace))
                ev.item = static_cast<int32_t>(rng.uniform_index(schema.n_items));
    }

    // permute a contiguous segment; timestamps stay in place so the sequence
    // remains time-ordered
    if (cfg.gamma_permute > 0.0 && out.interactions.size() > 1) {
        const int64_t len = static_cast<int64_t>(out.interactions.size());
        const int64_t seg = std::min<int64_t>(
            len, static_cast<int64_t>(std::ceil(cfg.gamma_permute * static_cast<double>(len))));
        if (seg > 1) {
            const int64_t s0 = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(len - seg + 1)));
            std::vector<int64_t> order(seg);
            for (int64_t i = 0; i < seg; ++i) order[i] = i;
            rng.shuffle(order);
            std::vector<Interaction> tmp(out.interactions.begin() + s0,
                                         out.interactions.begin() + s0 + seg);
            for (int64_t i = 0; i < seg; ++i) {
                const int64_t ts_slot = out.interactions[s0 + i].timestamp_ms;
                out.interactions[s0 + i] = tmp[order[i]];
                out.interactions[s0 + i].timestamp_ms = ts_slot;
            }
        }
    }
    return out;
}

} // namespace saicl
