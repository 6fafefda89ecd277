#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saicl/data.hpp"
#include "saicl/ingest.hpp"

namespace saicl {

// Deterministic student simulator: one-parameter logistic response model
// with incremental learning for KT, geometric daily-retention streams for
// the dropout tasks.
struct SynthConfig {
    int n_students = 200;
    int n_items = 50;
    double ability_std = 1.0;
    double difficulty_std = 1.0;
    double learning_rate = 0.02;     // ability gain per correct answer
    double dropout_hazard = 0.05;    // per-day probability of quitting
    int min_len = 20;
    int max_len = 120;
    int events_per_day_min = 1;      // dropout streams
    int events_per_day_max = 5;
    int t_h_days = 30;
    int t_p_days = 7;
    uint64_t seed = 1;

    void validate() const;
};

// Correctness ~ Bernoulli(sigmoid(ability - difficulty)); ability increases
// by learning_rate after each correct answer. When true_probs is given it
// receives the generating probability of every interaction, in sequence
// order, for oracle-scoring checks.
std::vector<StudentSequence> generate_kt(const SynthConfig& cfg,
                                         std::vector<double>* true_probs = nullptr);

// Students stay active day by day with retention (1 - hazard); labels come
// from derive_dropout_labels so generator and labeler agree by construction.
// P(label = 1) = 1 - (1 - hazard)^t_h.
std::vector<StudentSequence> generate_dp(const SynthConfig& cfg, const TaskKind& task);

FeatureSchema synth_schema(const SynthConfig& cfg);

// Writes the canonical CSV (user_id,item_id,timestamp_ms,correct).
void write_csv(const std::vector<StudentSequence>& seqs, const std::string& path);

} // namespace saicl
