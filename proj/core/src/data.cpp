#include "saicl/data.hpp"

#include "saicl/error.hpp"
#include "saicl/rng.hpp"

namespace saicl {

std::string task_name(Task t) {
    switch (t) {
        case Task::KT: return "kt";
        case Task::DP: return "dp";
        case Task::CondDP: return "conddp";
    }
    return "kt";
}

Task task_from_name(const std::string& name) {
    if (name == "kt") return Task::KT;
    if (name == "dp") return Task::DP;
    if (name == "conddp") return Task::CondDP;
    throw Error("config_error", "unknown task '" + name + "'");
}

void TaskKind::validate() const {
    if (task != Task::KT && (t_h_days <= 0 || t_p_days <= 0))
        throw Error("config_error", "dropout tasks require positive history/prediction windows");
}

Tensor SequenceBatch::valid_mask_tensor() const {
    Tensor m({B, L});
    for (int64_t i = 0; i < B * L; ++i) m[i] = valid[i] ? 1.0 : 0.0;
    return m;
}

int64_t SequenceBatch::n_valid() const {
    int64_t n = 0;
    for (uint8_t v : valid) n += v ? 1 : 0;
    return n;
}

SequenceBatch build_batch(const std::vector<StudentSequence>& sequences, int64_t L,
                          const TaskKind& task, const FeatureSchema& schema, uint64_t rng_seed) {
    if (sequences.empty()) throw Error("empty_batch", "build_batch on an empty sequence list");
    if (L < 1) throw Error("config_error", "window length must be >= 1");

    const int64_t B = static_cast<int64_t>(sequences.size());
    SequenceBatch batch;
    batch.B = B;
    batch.L = L;
    batch.task = task;
    batch.user_ids.reserve(B);
    batch.items.assign(B * L, schema.item_pad());
    if (schema.has_correct) batch.correct.assign(B * L, 2); // pad index for the 0/1 feature
    batch.extra_cat.resize(schema.extra_cat.size());
    for (size_t f = 0; f < schema.extra_cat.size(); ++f)
        batch.extra_cat[f].assign(B * L, schema.extra_cat[f].cardinality); // pad index
    batch.extra_cont.resize(schema.extra_cont.size());
    for (auto& v : batch.extra_cont) v.assign(B * L, 0.0);
    batch.valid.assign(B * L, 0);
    batch.anchor_label.assign(B * L, -1);
    batch.anchor_item.assign(B * L, -1);

    Rng rng(rng_seed);
    for (int64_t b = 0; b < B; ++b) {
        const StudentSequence& seq = sequences[b];
        batch.user_ids.push_back(seq.user_id);
        const int64_t n = static_cast<int64_t>(seq.interactions.size());
        int64_t start = 0;
        int64_t len = n;
        if (n > L) {
            start = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n - L + 1)));
            len = L;
        }
        for (int64_t t = 0; t < len; ++t) {
            const Interaction& ev = seq.interactions[start + t];
            const int64_t i = batch.idx(b, t);
            // mask token (n_items + 1) is a legal input after augmentation
            if (ev.item < 0 || ev.item >= schema.n_items + FeatureSchema::kReserved)
                throw Error("embedding_oob", "item index out of range for user " + seq.user_id);
            batch.items[i] = ev.item;
            // correct encodes as {0,1}, pad = 2, mask token = 3 (-2 sentinel)
            if (schema.has_correct) batch.correct[i] = ev.correct >= 0 ? ev.correct : (ev.correct == -2 ? 3 : 2);
            for (size_t f = 0; f < schema.extra_cat.size(); ++f)
                batch.extra_cat[f][i] = ev.extra_cat[f];
            for (size_t f = 0; f < schema.extra_cont.size(); ++f)
                batch.extra_cont[f][i] = ev.extra_cont[f];
            batch.valid[i] = 1;
            batch.anchor_item[i] = ev.item;
            if (task.task == Task::KT) {
                if (ev.correct >= 0) batch.anchor_label[i] = ev.correct;
            } else {
                if (seq.sequence_label >= 0) batch.anchor_label[i] = seq.sequence_label;
            }
        }
    }
    return batch;
}

} // namespace saicl
