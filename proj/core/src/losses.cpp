#include "saicl/losses.hpp"

#include <algorithm>

#include "saicl/error.hpp"

namespace saicl {

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw Error("config_error", "temperature must be positive");
    if (lambda_self < 0.0 || lambda_sup < 0.0)
        throw Error("config_error", "loss weights must be non-negative");
    if (anchor_subsample < 0) throw Error("config_error", "anchor_subsample must be >= 0");
}

std::string objective_name(ObjectiveMode m) { return m == ObjectiveMode::Self ? "self" : "sup"; }

ObjectiveMode objective_from_name(const std::string& name) {
    if (name == "self") return ObjectiveMode::Self;
    if (name == "sup") return ObjectiveMode::Sup;
    throw Error("config_error", "unknown objective '" + name + "'");
}

Var cross_entropy(const Var& probs, const Tensor& labels, const Tensor& mask) {
    return bce_mean(probs, labels, mask);
}

namespace {

struct ValidIndex {
    std::vector<int64_t> flat; // b*L + t, row-major order
    std::vector<int32_t> user;
    std::vector<int32_t> pos;
    std::vector<int8_t> label;
    std::vector<int32_t> item;
};

ValidIndex collect_valid(const SequenceBatch& batch) {
    ValidIndex v;
    for (int64_t b = 0; b < batch.B; ++b)
        for (int64_t t = 0; t < batch.L; ++t) {
            const int64_t i = batch.idx(b, t);
            if (!batch.valid[i]) continue;
            v.flat.push_back(i);
            v.user.push_back(static_cast<int32_t>(b));
            v.pos.push_back(static_cast<int32_t>(t));
            v.label.push_back(batch.anchor_label[i]);
            v.item.push_back(batch.anchor_item[i]);
        }
    return v;
}

enum class PositiveRule { SameUser, SameLabel, SameLabelItem };

Var interaction_cpc(const Var& z, const Var& r, const SequenceBatch& batch, PositiveRule rule,
                    const LossConfig& cfg, Rng* rng, int64_t* active_anchors) {
    cfg.validate();
    const ValidIndex vi = collect_valid(batch);
    const int64_t n = static_cast<int64_t>(vi.flat.size());
    if (active_anchors) *active_anchors = 0;
    if (n == 0) return constant(Tensor::scalar(0.0));

    const int64_t dp = z->value.shape().back();
    Var z_rows = gather_rows(reshape(z, {batch.B * batch.L, dp}), vi.flat);
    Var r_rows = gather_rows(reshape(r, {batch.B * batch.L, dp}), vi.flat);
    if (cfg.normalize_embeddings) {
        z_rows = l2_normalize_rows(z_rows);
        r_rows = l2_normalize_rows(r_rows);
    }

    // Anchor set: all valid positions, optionally subsampled. Candidates stay
    // the full valid set.
    std::vector<int64_t> anchors(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) anchors[static_cast<size_t>(i)] = i;
    if (cfg.anchor_subsample > 0 && n > cfg.anchor_subsample && rng != nullptr) {
        rng->shuffle(anchors);
        anchors.resize(static_cast<size_t>(cfg.anchor_subsample));
        std::sort(anchors.begin(), anchors.end());
    }
    const int64_t a_count = static_cast<int64_t>(anchors.size());

    Var z_anchor = (a_count == n) ? z_rows : gather_rows(z_rows, anchors);
    Var sim = scale(matmul_nt(z_anchor, r_rows), 1.0 / cfg.tau);

    std::vector<std::vector<int32_t>> positives(static_cast<size_t>(a_count));
    std::vector<int64_t> excluded(static_cast<size_t>(a_count));
    for (int64_t a = 0; a < a_count; ++a) {
        const int64_t ai = anchors[static_cast<size_t>(a)];
        excluded[static_cast<size_t>(a)] = ai;
        auto& pos = positives[static_cast<size_t>(a)];
        switch (rule) {
            case PositiveRule::SameUser:
                for (int64_t c = 0; c < n; ++c) {
                    if (c == ai || vi.user[c] != vi.user[ai]) continue;
                    if (cfg.future_only_positives && vi.pos[c] <= vi.pos[ai]) continue;
                    pos.push_back(static_cast<int32_t>(c));
                }
                break;
            case PositiveRule::SameLabel:
                if (vi.label[ai] < 0) break;
                for (int64_t c = 0; c < n; ++c)
                    if (c != ai && vi.label[c] == vi.label[ai]) pos.push_back(static_cast<int32_t>(c));
                break;
            case PositiveRule::SameLabelItem:
                if (vi.label[ai] < 0 || vi.item[ai] < 0) break;
                for (int64_t c = 0; c < n; ++c)
                    if (c != ai && vi.label[c] == vi.label[ai] && vi.item[c] == vi.item[ai])
                        pos.push_back(static_cast<int32_t>(c));
                break;
        }
    }

    int64_t active = 0;
    Var loss = grouped_infonce(sim, positives, excluded, &active);
    if (active_anchors) *active_anchors = active;
    if (cfg.mean_reduction && active > 0) loss = scale(loss, 1.0 / static_cast<double>(active));
    return loss;
}

} // namespace

Var milcpc(const Var& z, const Var& r, const SequenceBatch& batch, const LossConfig& cfg, Rng* rng,
           int64_t* active_anchors) {
    return interaction_cpc(z, r, batch, PositiveRule::SameUser, cfg, rng, active_anchors);
}

Var supcpc(const Var& z, const Var& r, const SequenceBatch& batch, const LossConfig& cfg, Rng* rng,
           int64_t* active_anchors) {
    return interaction_cpc(z, r, batch, PositiveRule::SameLabel, cfg, rng, active_anchors);
}

Var c_supcpc(const Var& z, const Var& r, const SequenceBatch& batch, const LossConfig& cfg, Rng* rng,
             int64_t* active_anchors) {
    return interaction_cpc(z, r, batch, PositiveRule::SameLabelItem, cfg, rng, active_anchors);
}

namespace {

Var concat_pairwise(const Var& z_view1, const Var& z_view2, const std::vector<int8_t>* labels,
                    const LossConfig& cfg) {
    cfg.validate();
    const int64_t n_users = z_view1->value.shape()[0];
    if (n_users != z_view2->value.shape()[0])
        throw Error("degenerate_batch", "view embedding counts differ");
    if (n_users < 2) throw Error("degenerate_batch", "sample-level contrast needs >= 2 users");

    Var stacked = concat_rows(z_view1, z_view2); // rows i and n_users+i pair up
    if (cfg.normalize_embeddings) stacked = l2_normalize_rows(stacked);
    Var sim = scale(matmul_nt(stacked, stacked), 1.0 / cfg.tau);

    const int64_t total = 2 * n_users;
    std::vector<std::vector<int32_t>> positives(static_cast<size_t>(total));
    std::vector<int64_t> excluded(static_cast<size_t>(total));
    for (int64_t a = 0; a < total; ++a) {
        excluded[static_cast<size_t>(a)] = a;
        auto& pos = positives[static_cast<size_t>(a)];
        if (labels == nullptr) {
            pos.push_back(static_cast<int32_t>(a < n_users ? a + n_users : a - n_users));
        } else {
            const int8_t y = (*labels)[static_cast<size_t>(a % n_users)];
            if (y < 0) continue;
            for (int64_t c = 0; c < total; ++c)
                if (c != a && (*labels)[static_cast<size_t>(c % n_users)] == y)
                    pos.push_back(static_cast<int32_t>(c));
        }
    }
    int64_t active = 0;
    Var loss = grouped_infonce(sim, positives, excluded, &active);
    if (cfg.mean_reduction && active > 0) loss = scale(loss, 1.0 / static_cast<double>(active));
    return loss;
}

} // namespace

Var concat_infonce(const Var& z_view1, const Var& z_view2, const LossConfig& cfg) {
    return concat_pairwise(z_view1, z_view2, nullptr, cfg);
}

Var concat_supcontrast(const Var& z_view1, const Var& z_view2, const std::vector<int8_t>& labels,
                       const LossConfig& cfg) {
    return concat_pairwise(z_view1, z_view2, &labels, cfg);
}

Var combined_loss(const Var& ce, const Var* self_term, const Var* sup_term, const Var* c_sup_term,
                  const LossConfig& cfg, ObjectiveMode mode) {
    Var total = ce;
    if (mode == ObjectiveMode::Self) {
        if (self_term) total = add(total, scale(*self_term, cfg.lambda_self));
    } else {
        if (sup_term) total = add(total, scale(*sup_term, cfg.lambda_sup));
        if (c_sup_term) total = add(total, scale(*c_sup_term, cfg.lambda_sup));
    }
    return total;
}

} // namespace saicl
