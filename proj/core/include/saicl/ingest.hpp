#pragma once

#include <string>
#include <vector>

#include "saicl/data.hpp"

namespace saicl {

// Maps CSV columns onto the canonical schema. user/item/timestamp are
// required; correct and the extra feature columns are optional.
struct ColumnMap {
    std::string user = "user_id";
    std::string item = "item_id";
    std::string timestamp = "timestamp_ms";
    std::string correct = "correct"; // empty string disables
    std::vector<std::string> categorical;
    struct ContCol {
        std::string name;
        double min = 0.0;
        double max = 1.0;
    };
    std::vector<ContCol> continuous;
};

struct DatasetSpec {
    std::string path;
    ColumnMap columns;
    TaskKind task;
    int min_interactions = 1;
    int min_active_days = 0;

    void validate() const;
};

struct Dataset {
    std::vector<StudentSequence> sequences;
    FeatureSchema schema;
};

struct Splits {
    std::vector<StudentSequence> train, valid, test;
};

// One StudentSequence per user, interactions sorted by timestamp. Item (and
// extra categorical) vocabularies are dense indices in first-seen file order,
// built over the whole file (splits share one vocabulary).
Dataset parse_dataset(const DatasetSpec& spec);

std::vector<StudentSequence> filter_users(std::vector<StudentSequence> seqs,
                                          int min_interactions, int min_active_days);

// Truncates each user to the [0, t_h) day window relative to their first
// event and sets sequence_label = 1 iff no event falls in [t_h, t_h + t_p).
// For CondDP, next_item is the first item at or after day t_h when present.
std::vector<StudentSequence> derive_dropout_labels(std::vector<StudentSequence> seqs,
                                                   int t_h_days, int t_p_days, const TaskKind& task);

Splits split_users(std::vector<StudentSequence> seqs, double train_ratio, double valid_ratio,
                   double test_ratio, uint64_t seed);

// In-place min-max normalization of the declared continuous features,
// clamped to [0, 1]. Applied before batching so padding values stay 0.
void normalize_continuous(std::vector<StudentSequence>& seqs, const FeatureSchema& schema);

// Full ingestion: parse -> filter -> (dropout labels) -> normalize.
Dataset load_dataset(const DatasetSpec& spec);

} // namespace saicl
