#include "saicl/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "saicl/augment.hpp"
#include "saicl/error.hpp"
#include "saicl/eval.hpp"
#include "saicl/losses.hpp"
#include "saicl/optimizer.hpp"

namespace saicl {

namespace {

HeadKind primary_head(const TaskKind& task) {
    return task.task == Task::DP ? HeadKind::DpAttention : HeadKind::MlpItem;
}

HeadKind pretrain_head(const TaskKind& task) {
    return task.task == Task::DP ? HeadKind::DpAttention : HeadKind::SharedItem;
}

std::vector<std::string> head_param_names(HeadKind head) {
    switch (head) {
        case HeadKind::SharedItem: return {};
        case HeadKind::MlpItem: return {"head.l1.w", "head.l1.b", "head.l2.w", "head.l2.b"};
        case HeadKind::DpAttention:
            return {"dpatt.l.w", "dpatt.l.b", "dpatt.v.w", "dpatt.v.b",
                    "head.l1.w", "head.l1.b", "head.l2.w", "head.l2.b"};
    }
    return {};
}

// Cross-entropy part of a step. Returns nullptr when the batch carries no
// labels (the step is skipped by the caller).
Var ce_term(const SequenceBatch& batch, const EncodeOut& encd, HeadKind head, GraphParams& gp,
            const FeatureSchema& schema) {
    if (batch.task.task == Task::DP) {
        std::vector<int8_t> row_label(static_cast<size_t>(batch.B), -1);
        for (int64_t b = 0; b < batch.B; ++b)
            for (int64_t t = 0; t < batch.L; ++t) {
                const int64_t i = batch.idx(b, t);
                if (batch.valid[i] && batch.anchor_label[i] >= 0) {
                    row_label[static_cast<size_t>(b)] = batch.anchor_label[i];
                    break;
                }
            }
        Tensor labels({batch.B}), mask({batch.B});
        bool any = false;
        for (int64_t b = 0; b < batch.B; ++b) {
            if (row_label[static_cast<size_t>(b)] < 0) continue;
            labels[b] = row_label[static_cast<size_t>(b)];
            mask[b] = 1.0;
            any = true;
        }
        if (!any) return nullptr;
        Var probs = sigmoid(dp_sequence_logits(encd.H, batch.valid_mask_tensor(), gp));
        return cross_entropy(probs, labels, mask);
    }

    std::vector<int64_t> flat, items;
    std::vector<double> labels;
    for (int64_t i = 0; i < batch.B * batch.L; ++i) {
        if (!batch.valid[i] || batch.anchor_label[i] < 0 || batch.anchor_item[i] < 0) continue;
        flat.push_back(i);
        items.push_back(batch.anchor_item[i]);
        labels.push_back(batch.anchor_label[i]);
    }
    if (flat.empty()) return nullptr;
    const int64_t Hd = encd.H->value.shape().back();
    Var h_rows = gather_rows(reshape(encd.H, {batch.B * batch.L, Hd}), flat);
    Var logits = item_logits(h_rows, head, gp, schema.n_items);
    Var probs = sigmoid(gather_cols_per_row(logits, items));
    Tensor label_t({static_cast<int64_t>(labels.size())}, labels);
    Tensor mask_t({static_cast<int64_t>(labels.size())}, 1.0);
    return cross_entropy(probs, label_t, mask_t);
}

struct StepLoss {
    Var total;
    double ce = 0.0;
    double con = 0.0;
    bool skipped = false;
};

struct StageSetup {
    std::string name;
    int stage_id = 0;
    HeadKind head = HeadKind::MlpItem;
    int epochs = 0;
    int batch_size = 0;
    double weight_decay = 0.0;
    bool contrastive = false;
};

StepLoss build_step_loss(const std::vector<StudentSequence>& chunk, const RunConfig& cfg,
                         const FeatureSchema& schema, const StageSetup& stage, GraphParams& gp,
                         uint64_t batch_seed, Rng& step_rng) {
    StepLoss out;
    const TaskKind& task = cfg.dataset.task;

    std::vector<StudentSequence> base = chunk;
    if (stage.contrastive && !cfg.train.sample_level && cfg.aug.interaction_level) {
        for (auto& s : base) s = augment(s, cfg.aug, schema, step_rng);
    }
    const SequenceBatch batch = build_batch(base, cfg.encoder.seq_len, task, schema, batch_seed);
    const EncodeOut encd = encode_batch(batch, cfg.encoder, schema, gp, /*training=*/true, step_rng);

    Var ce = ce_term(batch, encd, stage.head, gp, schema);
    if (!ce) {
        out.skipped = true;
        return out;
    }
    out.ce = ce->value[0];

    if (!stage.contrastive) {
        out.total = ce;
        return out;
    }

    if (cfg.train.sample_level) {
        if (chunk.size() < 2) { // sample-level contrast undefined for one user
            out.total = ce;
            return out;
        }
        auto encode_view = [&](uint64_t salt) {
            std::vector<StudentSequence> view;
            view.reserve(chunk.size());
            for (const auto& s : chunk) view.push_back(augment(s, cfg.aug, schema, step_rng));
            const SequenceBatch vb =
                build_batch(view, cfg.encoder.seq_len, task, schema, mix_seed(batch_seed, salt));
            const EncodeOut ve = encode_batch(vb, cfg.encoder, schema, gp, true, step_rng);
            Var pooled = masked_mean_pool(ve.H, vb.valid_mask_tensor());
            return project_out(pooled, gp);
        };
        Var z1 = encode_view(1);
        Var z2 = encode_view(2);
        Var con;
        if (cfg.train.objective == ObjectiveMode::Sup) {
            if (task.task != Task::DP)
                throw Error("config_error",
                            "sample-level supervised contrast needs sequence labels (dp only)");
            std::vector<int8_t> labels;
            labels.reserve(chunk.size());
            for (const auto& s : chunk) labels.push_back(s.sequence_label);
            con = concat_supcontrast(z1, z2, labels, cfg.loss);
        } else {
            con = concat_infonce(z1, z2, cfg.loss);
        }
        out.con = con->value[0];
        out.total = add(ce, scale(con, cfg.loss.lambda_self));
        return out;
    }

    Var z = project_out(encd.H, gp);
    Var r = project_inter(encd.P, gp);
    if (cfg.train.objective == ObjectiveMode::Self) {
        Var mil = milcpc(z, r, batch, cfg.loss, &step_rng);
        out.con = mil->value[0];
        out.total = combined_loss(ce, &mil, nullptr, nullptr, cfg.loss, ObjectiveMode::Self);
    } else {
        Var sup = supcpc(z, r, batch, cfg.loss, &step_rng);
        Var csup = c_supcpc(z, r, batch, cfg.loss, &step_rng);
        out.con = sup->value[0] + csup->value[0];
        out.total = combined_loss(ce, nullptr, &sup, &csup, cfg.loss, ObjectiveMode::Sup);
    }
    return out;
}

struct StageOutcome {
    ParamStore best;
    double best_auc = -1.0;
    int best_epoch = -1;
    bool diverged = false;
};

StageOutcome run_stage(ParamStore store, const StageSetup& stage, const RunConfig& cfg,
                       const Splits& splits, const FeatureSchema& schema,
                       std::vector<EpochRecord>& history, std::ofstream* jsonl, int& epoch_counter) {
    RAdam opt(cfg.train.lr, stage.weight_decay);
    StageOutcome outcome;
    outcome.best = store;
    int stall = 0;

    for (int epoch = 0; epoch < stage.epochs; ++epoch) {
        ++epoch_counter;
        Rng epoch_rng(mix_seed(cfg.seed, static_cast<uint64_t>(stage.stage_id),
                               static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(splits.train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        epoch_rng.shuffle(order);

        double sum_total = 0.0, sum_ce = 0.0, sum_con = 0.0;
        int64_t n_steps = 0;
        bool finite = true;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(stage.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(stage.batch_size));
            std::vector<StudentSequence> chunk;
            chunk.reserve(end - start);
            for (size_t i = start; i < end; ++i) chunk.push_back(splits.train[order[i]]);

            const uint64_t batch_seed =
                mix_seed(cfg.seed, static_cast<uint64_t>(stage.stage_id) * 1000003ULL +
                                       static_cast<uint64_t>(epoch),
                         static_cast<uint64_t>(start));
            Rng step_rng(mix_seed(batch_seed, 0xD20));

            GraphParams gp(store, /*trainable=*/true);
            StepLoss loss = build_step_loss(chunk, cfg, schema, stage, gp, batch_seed, step_rng);
            if (loss.skipped) continue;
            const double total_value = loss.total->value[0];
            if (!std::isfinite(total_value)) {
                finite = false;
                break;
            }
            backward(loss.total);
            opt.step(store, gp.leaves());
            sum_total += total_value;
            sum_ce += loss.ce;
            sum_con += loss.con;
            ++n_steps;
        }
        if (!finite) {
            outcome.diverged = true;
            break;
        }

        EpochRecord rec;
        rec.epoch = epoch_counter;
        rec.stage = stage.name;
        rec.loss_total = n_steps ? sum_total / static_cast<double>(n_steps) : 0.0;
        rec.loss_ce = n_steps ? sum_ce / static_cast<double>(n_steps) : 0.0;
        rec.loss_con = n_steps ? sum_con / static_cast<double>(n_steps) : 0.0;

        const EvalReport val = evaluate_params(store, stage.head, cfg.encoder, schema,
                                               cfg.dataset.task, splits.valid, "valid");
        rec.val_auc = val.auc;
        rec.val_acc = val.acc;
        history.push_back(rec);
        if (jsonl && jsonl->is_open()) {
            nlohmann::json train_line = {{"epoch", rec.epoch}, {"stage", rec.stage},
                                         {"split", "train"}, {"loss_total", rec.loss_total},
                                         {"loss_ce", rec.loss_ce}, {"loss_con", rec.loss_con}};
            nlohmann::json val_line = {{"epoch", rec.epoch}, {"stage", rec.stage},
                                       {"split", "valid"}, {"auc", rec.val_auc},
                                       {"acc", rec.val_acc}};
            *jsonl << train_line.dump() << '\n' << val_line.dump() << '\n';
            jsonl->flush();
        }

        if (val.auc > outcome.best_auc + 1e-12) {
            outcome.best_auc = val.auc;
            outcome.best_epoch = epoch_counter;
            outcome.best = store;
            stall = 0;
        } else if (++stall >= cfg.train.patience) {
            break;
        }
    }
    // keep the pre-stage snapshot when divergence hit before any evaluation
    if (outcome.best_epoch < 0 && !outcome.diverged) outcome.best = std::move(store);
    return outcome;
}

} // namespace

TrainRun train(const RunConfig& cfg, const Splits& splits, const FeatureSchema& schema,
               const std::string& out_dir) {
    cfg.validate();
    if (splits.train.empty() || splits.valid.empty())
        throw Error("empty_batch", "training requires non-empty train and valid splits");

    std::ofstream jsonl;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        jsonl.open(out_dir + "/metrics.jsonl");
    }

    const TaskKind& task = cfg.dataset.task;
    TrainRun run;
    int epoch_counter = 0;

    const int main_epochs = cfg.train.epochs;
    const int pre_epochs = cfg.train.pretrain_epochs > 0 ? cfg.train.pretrain_epochs : main_epochs;

    switch (cfg.train.mode) {
        case TrainMode::CeOnly: {
            run.head = primary_head(task);
            ParamStore store = init_params(cfg.encoder, schema, task, run.head, cfg.seed);
            StageSetup stage{"main", 2, run.head, main_epochs, cfg.train.batch_size_main,
                             cfg.train.weight_decay_main, /*contrastive=*/false};
            StageOutcome o = run_stage(std::move(store), stage, cfg, splits, schema, run.history,
                                       &jsonl, epoch_counter);
            run.params = std::move(o.best);
            run.best_val_auc = o.best_auc;
            run.best_epoch = o.best_epoch;
            run.diverged = o.diverged;
            break;
        }
        case TrainMode::Multitask: {
            run.head = primary_head(task);
            ParamStore store = init_params(cfg.encoder, schema, task, run.head, cfg.seed);
            StageSetup stage{"main", 2, run.head, main_epochs, cfg.train.batch_size_main,
                             cfg.train.weight_decay_main, /*contrastive=*/true};
            StageOutcome o = run_stage(std::move(store), stage, cfg, splits, schema, run.history,
                                       &jsonl, epoch_counter);
            run.params = std::move(o.best);
            run.best_val_auc = o.best_auc;
            run.best_epoch = o.best_epoch;
            run.diverged = o.diverged;
            break;
        }
        case TrainMode::PretrainFinetune: {
            const HeadKind pre_head = pretrain_head(task);
            ParamStore store = init_params(cfg.encoder, schema, task, pre_head, cfg.seed);
            StageSetup pre{"pretrain", 1, pre_head, pre_epochs, cfg.train.batch_size_pretrain,
                           cfg.train.weight_decay_pretrain, /*contrastive=*/true};
            StageOutcome o1 = run_stage(std::move(store), pre, cfg, splits, schema, run.history,
                                        &jsonl, epoch_counter);

            // Finetune from the best pretrained encoder: both contrastive
            // projections are dropped and a fresh task head is attached.
            ParamStore ft = std::move(o1.best);
            for (const char* name : {"po.l1.w", "po.l1.b", "po.l2.w", "po.l2.b", "pi.l.w", "pi.l.b"})
                ft.params.erase(name);
            run.head = primary_head(task);
            for (const auto& name : head_param_names(pre_head)) ft.params.erase(name);
            ParamStore fresh = init_params(cfg.encoder, schema, task, run.head,
                                           mix_seed(cfg.seed, 0xF17E));
            for (const auto& name : head_param_names(run.head))
                ft.params[name] = fresh.param(name);

            StageSetup main{"main", 2, run.head, main_epochs, cfg.train.batch_size_main,
                            cfg.train.weight_decay_main, /*contrastive=*/false};
            StageOutcome o2 = run_stage(std::move(ft), main, cfg, splits, schema, run.history,
                                        &jsonl, epoch_counter);
            run.params = std::move(o2.best);
            run.best_val_auc = o2.best_auc;
            run.best_epoch = o2.best_epoch;
            run.diverged = o1.diverged || o2.diverged;
            break;
        }
    }
    return run;
}

Checkpoint make_checkpoint(const RunConfig& cfg, const FeatureSchema& schema, TrainRun run) {
    Checkpoint ckpt;
    ckpt.encoder = cfg.encoder;
    ckpt.schema = schema;
    ckpt.task = cfg.dataset.task;
    ckpt.head = run.head;
    ckpt.run_config = to_json(cfg);
    ckpt.store = std::move(run.params);
    for (const char* name : {"po.l1.w", "po.l1.b", "po.l2.w", "po.l2.b", "pi.l.w", "pi.l.b"})
        ckpt.store.params.erase(name);
    return ckpt;
}

std::vector<LambdaResult> sweep_lambda(const RunConfig& base, const Splits& splits,
                                       const FeatureSchema& schema, const std::vector<double>& grid,
                                       const std::string& out_dir) {
    std::vector<LambdaResult> results;
    for (double lambda : grid) {
        RunConfig cfg = base;
        cfg.loss.lambda_self = lambda;
        cfg.loss.lambda_sup = lambda;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", lambda);
        const std::string run_dir = out_dir.empty() ? "" : out_dir + "/lambda_" + buf;
        TrainRun run = train(cfg, splits, schema, run_dir);
        Checkpoint ckpt = make_checkpoint(cfg, schema, std::move(run));
        LambdaResult res;
        res.lambda = lambda;
        res.valid = evaluate_split(ckpt, splits.valid, "valid");
        res.test = evaluate_split(ckpt, splits.test, "test");
        if (!run_dir.empty()) save_checkpoint(ckpt, run_dir + "/checkpoint.bin");
        results.push_back(res);
    }
    return results;
}

} // namespace saicl
