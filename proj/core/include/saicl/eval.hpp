#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "saicl/checkpoint.hpp"
#include "saicl/config.hpp"
#include "saicl/data.hpp"

namespace saicl {

struct EvalReport {
    std::string task;
    std::string split;
    double auc = 0.0;
    double acc = 0.0;
    int64_t n_predictions = 0;
};

nlohmann::json report_to_json(const EvalReport& r);

// Rank-based (Mann-Whitney) AUC with midranks for ties. Throws
// "undefined_auc" unless both classes are present.
double auc_score(const std::vector<double>& scores, const std::vector<int8_t>& labels);
double accuracy_score(const std::vector<double>& scores, const std::vector<int8_t>& labels,
                      double threshold = 0.5);

struct Prediction {
    std::string user_id;
    int64_t target = 0; // index into the user's interaction list
    double score = 0.0;
    int8_t label = 0;
};

// Per-interaction protocol for KT/CondDP: every labeled interaction t is
// predicted from the start token plus its most recent (seq_len - 1) context
// interactions. DP scores one prediction per sequence from the most recent
// seq_len interactions.
EvalReport evaluate_params(ParamStore& store, HeadKind head, const EncoderConfig& enc,
                           const FeatureSchema& schema, const TaskKind& task,
                           const std::vector<StudentSequence>& seqs, const std::string& split_name,
                           std::vector<Prediction>* predictions = nullptr);

EvalReport evaluate_split(Checkpoint& ckpt, const std::vector<StudentSequence>& seqs,
                          const std::string& split_name);

struct DatasetStats {
    int64_t interactions = 0;
    int64_t users = 0;
    int64_t items = 0;           // distinct items observed
    double pair_sparsity = 0.0;  // 1 - distinct(user,item) / (users * items)
};

DatasetStats dataset_stats(const std::vector<StudentSequence>& seqs);
nlohmann::json stats_to_json(const DatasetStats& s);

// Hidden-state export for external projection plots: one CSV row per valid
// position of each sampled user (user_id, position, label, item, h columns).
// Rows never include padding; vectors are the pre-projection hidden states.
void export_embeddings(Checkpoint& ckpt, const std::vector<StudentSequence>& seqs, int n_users,
                       uint64_t seed, const std::string& csv_path);

struct LambdaResult {
    double lambda = 0.0;
    EvalReport valid;
    EvalReport test;
};

// Trains one run per grid value (lambda_self and lambda_sup both set) and
// reports validation/test metrics per value. Run artifacts land under
// out_dir/lambda_<value>/ when out_dir is non-empty.
std::vector<LambdaResult> sweep_lambda(const RunConfig& base, const Splits& splits,
                                       const FeatureSchema& schema, const std::vector<double>& grid,
                                       const std::string& out_dir);

} // namespace saicl
