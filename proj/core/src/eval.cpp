#include "saicl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "saicl/error.hpp"
#include "saicl/threads.hpp"

namespace saicl {

nlohmann::json report_to_json(const EvalReport& r) {
    return {{"task", r.task}, {"split", r.split}, {"auc", r.auc}, {"acc", r.acc},
            {"n_predictions", r.n_predictions}};
}

double auc_score(const std::vector<double>& scores, const std::vector<int8_t>& labels) {
    const size_t n = scores.size();
    int64_t n_pos = 0;
    for (int8_t y : labels) n_pos += y > 0 ? 1 : 0;
    const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw Error("undefined_auc", "AUC needs both classes present");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] > 0) rank_sum_pos += midrank;
        i = j + 1;
    }
    return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double accuracy_score(const std::vector<double>& scores, const std::vector<int8_t>& labels,
                      double threshold) {
    if (scores.empty()) throw Error("no_labels", "accuracy over an empty prediction set");
    int64_t hit = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const int pred = scores[i] >= threshold ? 1 : 0;
        if (pred == labels[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(scores.size());
}

namespace {

// One scoring row: a window of interactions plus the positions to read out.
struct EvalRow {
    StudentSequence window;
    std::vector<int32_t> target_positions; // labeled positions inside the window
    std::vector<int64_t> global_targets;   // same positions, user-sequence indices
};

std::vector<EvalRow> make_eval_rows(const std::vector<StudentSequence>& seqs, const TaskKind& task,
                                    int64_t L) {
    std::vector<EvalRow> rows;
    for (const auto& s : seqs) {
        const int64_t T = static_cast<int64_t>(s.interactions.size());
        if (T == 0) continue;
        if (!task.causal()) {
            // sequence classification: one row, most recent window
            if (s.sequence_label < 0) continue;
            EvalRow row;
            row.window.user_id = s.user_id;
            row.window.sequence_label = s.sequence_label;
            const int64_t start = std::max<int64_t>(0, T - L);
            row.window.interactions.assign(s.interactions.begin() + start, s.interactions.end());
            row.target_positions.push_back(0); // unused for DP scoring
            row.global_targets.push_back(0);
            rows.push_back(std::move(row));
            continue;
        }
        auto labeled = [&](int64_t j) {
            return task.task == Task::KT ? s.interactions[j].correct >= 0 : s.sequence_label >= 0;
        };
        // head window covers targets 0..min(T,L)-1 in one pass
        EvalRow head;
        head.window.user_id = s.user_id;
        head.window.sequence_label = s.sequence_label;
        const int64_t head_len = std::min(T, L);
        head.window.interactions.assign(s.interactions.begin(), s.interactions.begin() + head_len);
        for (int64_t j = 0; j < head_len; ++j)
            if (labeled(j)) {
                head.target_positions.push_back(static_cast<int32_t>(j));
                head.global_targets.push_back(j);
            }
        if (!head.target_positions.empty()) rows.push_back(std::move(head));
        // each later target gets its own trailing window ending at the target
        for (int64_t j = L; j < T; ++j) {
            if (!labeled(j)) continue;
            EvalRow row;
            row.window.user_id = s.user_id;
            row.window.sequence_label = s.sequence_label;
            row.window.interactions.assign(s.interactions.begin() + (j - L + 1),
                                           s.interactions.begin() + (j + 1));
            row.target_positions.push_back(static_cast<int32_t>(L - 1));
            row.global_targets.push_back(j);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

struct ScoredChunk {
    std::vector<double> scores;
    std::vector<int8_t> labels;
    std::vector<std::string> users;
    std::vector<int64_t> targets;
};

ScoredChunk score_chunk(const std::vector<EvalRow>& rows, size_t begin, size_t end,
                        ParamStore& store, HeadKind head, const EncoderConfig& enc,
                        const FeatureSchema& schema, const TaskKind& task) {
    std::vector<StudentSequence> windows;
    windows.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) windows.push_back(rows[i].window);
    const SequenceBatch batch = build_batch(windows, enc.seq_len, task, schema, /*rng_seed=*/0);

    GraphParams gp(store, /*trainable=*/false);
    Rng rng(0); // eval mode draws nothing
    const EncodeOut encd = encode_batch(batch, enc, schema, gp, /*training=*/false, rng);

    ScoredChunk out;
    if (!task.causal()) {
        const Tensor valid = batch.valid_mask_tensor();
        Var logits = dp_sequence_logits(encd.H, valid, gp);
        Var probs = sigmoid(logits);
        for (size_t i = begin; i < end; ++i) {
            out.scores.push_back(probs->value[static_cast<int64_t>(i - begin)]);
            out.labels.push_back(rows[i].window.sequence_label);
            out.users.push_back(rows[i].window.user_id);
            out.targets.push_back(rows[i].global_targets[0]);
        }
        return out;
    }
    const int64_t Hd = enc.enc_dim();
    std::vector<int64_t> flat;
    std::vector<int64_t> items;
    std::vector<int8_t> labels;
    for (size_t i = begin; i < end; ++i) {
        const int64_t b = static_cast<int64_t>(i - begin);
        for (size_t k = 0; k < rows[i].target_positions.size(); ++k) {
            const int64_t pos = batch.idx(b, rows[i].target_positions[k]);
            flat.push_back(pos);
            items.push_back(batch.anchor_item[pos]);
            labels.push_back(batch.anchor_label[pos]);
            out.users.push_back(rows[i].window.user_id);
            out.targets.push_back(rows[i].global_targets[k]);
        }
    }
    if (flat.empty()) return out;
    Var h_rows = gather_rows(reshape(encd.H, {batch.B * batch.L, Hd}), flat);
    Var logits = item_logits(h_rows, head, gp, schema.n_items);
    Var picked = gather_cols_per_row(logits, items);
    Var probs = sigmoid(picked);
    out.scores.assign(probs->value.vec().begin(), probs->value.vec().end());
    out.labels = std::move(labels);
    return out;
}

} // namespace

EvalReport evaluate_params(ParamStore& store, HeadKind head, const EncoderConfig& enc,
                           const FeatureSchema& schema, const TaskKind& task,
                           const std::vector<StudentSequence>& seqs, const std::string& split_name,
                           std::vector<Prediction>* predictions) {
    const std::vector<EvalRow> rows = make_eval_rows(seqs, task, enc.seq_len);
    EvalReport report;
    report.task = task_name(task.task);
    report.split = split_name;
    if (rows.empty()) throw Error("no_labels", "no labeled predictions in split " + split_name);

    constexpr size_t kChunk = 256;
    const size_t n_chunks = (rows.size() + kChunk - 1) / kChunk;
    std::vector<ScoredChunk> chunks(n_chunks);
    parallel_for(static_cast<int64_t>(n_chunks), [&](int64_t c) {
        const size_t begin = static_cast<size_t>(c) * kChunk;
        const size_t end = std::min(rows.size(), begin + kChunk);
        chunks[static_cast<size_t>(c)] = score_chunk(rows, begin, end, store, head, enc, schema, task);
    });

    std::vector<double> scores;
    std::vector<int8_t> labels;
    for (auto& ch : chunks) {
        scores.insert(scores.end(), ch.scores.begin(), ch.scores.end());
        labels.insert(labels.end(), ch.labels.begin(), ch.labels.end());
        if (predictions)
            for (size_t i = 0; i < ch.scores.size(); ++i)
                predictions->push_back({ch.users[i], ch.targets[i], ch.scores[i], ch.labels[i]});
    }
    report.n_predictions = static_cast<int64_t>(scores.size());
    report.auc = auc_score(scores, labels);
    report.acc = accuracy_score(scores, labels);
    return report;
}

EvalReport evaluate_split(Checkpoint& ckpt, const std::vector<StudentSequence>& seqs,
                          const std::string& split_name) {
    return evaluate_params(ckpt.store, ckpt.head, ckpt.encoder, ckpt.schema, ckpt.task, seqs,
                           split_name);
}

DatasetStats dataset_stats(const std::vector<StudentSequence>& seqs) {
    DatasetStats st;
    std::set<int32_t> items;
    std::set<std::pair<std::string, int32_t>> pairs;
    for (const auto& s : seqs) {
        ++st.users;
        st.interactions += static_cast<int64_t>(s.interactions.size());
        for (const auto& ev : s.interactions) {
            items.insert(ev.item);
            pairs.insert({s.user_id, ev.item});
        }
    }
    st.items = static_cast<int64_t>(items.size());
    if (st.users > 0 && st.items > 0)
        st.pair_sparsity = 1.0 - static_cast<double>(pairs.size()) /
                                     (static_cast<double>(st.users) * static_cast<double>(st.items));
    return st;
}

nlohmann::json stats_to_json(const DatasetStats& s) {
    return {{"interactions", s.interactions}, {"users", s.users}, {"items", s.items},
            {"pair_sparsity", s.pair_sparsity}};
}

void export_embeddings(Checkpoint& ckpt, const std::vector<StudentSequence>& seqs, int n_users,
                       uint64_t seed, const std::string& csv_path) {
    std::vector<size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(mix_seed(seed, 0xE3B0));
    rng.shuffle(order);
    order.resize(std::min<size_t>(order.size(), static_cast<size_t>(n_users)));

    std::ofstream out(csv_path);
    if (!out) throw Error("io_error", "cannot write '" + csv_path + "'");
    const int64_t Hd = ckpt.encoder.enc_dim();
    out << "user_id,position,label,item";
    for (int64_t d = 0; d < Hd; ++d) out << ",h" << d;
    out << '\n';

    const int64_t L = ckpt.encoder.seq_len;
    for (size_t oi : order) {
        const StudentSequence& s = seqs[oi];
        if (s.interactions.empty()) continue;
        StudentSequence window;
        window.user_id = s.user_id;
        window.sequence_label = s.sequence_label;
        const int64_t T = static_cast<int64_t>(s.interactions.size());
        const int64_t start = std::max<int64_t>(0, T - L);
        window.interactions.assign(s.interactions.begin() + start, s.interactions.end());

        const SequenceBatch batch = build_batch({window}, L, ckpt.task, ckpt.schema, 0);
        GraphParams gp(ckpt.store, false);
        Rng noise(0);
        const EncodeOut encd = encode_batch(batch, ckpt.encoder, ckpt.schema, gp, false, noise);
        for (int64_t t = 0; t < L; ++t) {
            const int64_t i = batch.idx(0, t);
            if (!batch.valid[i]) continue;
            out << s.user_id << ',' << t << ',' << static_cast<int>(batch.anchor_label[i]) << ','
                << batch.anchor_item[i];
            for (int64_t d = 0; d < Hd; ++d) out << ',' << encd.H->value.at(0, t, d);
            out << '\n';
        }
    }
}

} // namespace saicl
