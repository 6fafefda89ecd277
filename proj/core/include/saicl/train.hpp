#pragma once

#include <string>
#include <vector>

#include "saicl/checkpoint.hpp"
#include "saicl/config.hpp"
#include "saicl/ingest.hpp"

namespace saicl {

struct EpochRecord {
    int epoch = 0;
    std::string stage; // "pretrain" | "main"
    double loss_total = 0.0;
    double loss_ce = 0.0;
    double loss_con = 0.0;
    double val_auc = 0.0;
    double val_acc = 0.0;
};

struct TrainRun {
    ParamStore params; // best-validation snapshot of the final stage
    HeadKind head = HeadKind::MlpItem;
    double best_val_auc = 0.0;
    int best_epoch = -1;
    std::vector<EpochRecord> history;
    bool diverged = false;
};

// Runs the configured schedule:
//   ce_only            one stage minimizing cross-entropy
//   pretrain_finetune  stage 1 adds the contrastive term (batch
//                      batch_size_pretrain, weight_decay_pretrain, item scores
//                      through the embedding-tied head); stage 2 drops both
//                      contrastive projections, re-initializes the task head
//                      and minimizes cross-entropy at batch_size_main
//   multitask          one stage minimizing the combined loss
// The best checkpoint per stage is selected on validation AUC; early stopping
// uses train.patience. When out_dir is non-empty, metric history streams to
// out_dir/metrics.jsonl. On divergence the last good snapshot is returned
// with diverged = true.
TrainRun train(const RunConfig& cfg, const Splits& splits, const FeatureSchema& schema,
               const std::string& out_dir);

// Packages a finished run; contrastive projection arrays are dropped.
Checkpoint make_checkpoint(const RunConfig& cfg, const FeatureSchema& schema, TrainRun run);

} // namespace saicl
