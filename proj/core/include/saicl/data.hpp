#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "saicl/tensor.hpp"

namespace saicl {

enum class Task { KT, DP, CondDP };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

// Task selector plus the day windows used by the dropout tasks.
struct TaskKind {
    Task task = Task::KT;
    int t_h_days = 30; // history window
    int t_p_days = 7;  // prediction window

    bool causal() const { return task != Task::DP; }
    void validate() const;
};

// One timestamped (item, response) event. Extra feature values are stored
// positionally; their names/cardinalities live in FeatureSchema so that a
// million interactions do not each carry a map.
struct Interaction {
    int32_t item = 0;
    int64_t timestamp_ms = 0;
    int8_t correct = -1; // -1 = absent
    std::vector<int32_t> extra_cat;
    std::vector<double> extra_cont;
};

struct StudentSequence {
    std::string user_id;
    std::vector<Interaction> interactions; // time-ordered
    int8_t sequence_label = -1;            // dropout label, -1 = absent
    int32_t next_item = -1;                // first item after the history window
};

// Declares every embedded feature: name, cardinality for categoricals (real
// values only; pad = cardinality, mask token = cardinality + 1) and
// normalization bounds for continuous features.
struct FeatureSchema {
    struct Cat {
        std::string name;
        int32_t cardinality = 0;
    };
    struct Cont {
        std::string name;
        double min = 0.0;
        double max = 1.0;
    };
    int32_t n_items = 0;           // Q
    bool has_correct = false;
    std::vector<Cat> extra_cat;
    std::vector<Cont> extra_cont;

    static constexpr int32_t kReserved = 2; // pad + mask token
    int32_t item_pad() const { return n_items; }
    int32_t item_mask() const { return n_items + 1; }
};

// Fixed-length padded window batch. Index layout is row-major (b * L + t).
// anchor_label/anchor_item use -1 for "absent"; label present implies valid.
struct SequenceBatch {
    int64_t B = 0;
    int64_t L = 0;
    TaskKind task;
    std::vector<std::string> user_ids;      // per row
    std::vector<int32_t> items;             // B*L, pad index at padding
    std::vector<int32_t> correct;           // B*L (cat feature), empty if absent
    std::vector<std::vector<int32_t>> extra_cat;  // per schema feature, B*L
    std::vector<std::vector<double>> extra_cont;  // per schema feature, B*L
    std::vector<uint8_t> valid;             // B*L
    std::vector<int8_t> anchor_label;       // B*L, -1 absent
    std::vector<int32_t> anchor_item;       // B*L, -1 absent

    int64_t idx(int64_t b, int64_t t) const { return b * L + t; }
    Tensor valid_mask_tensor() const; // (B,L) of 0/1 doubles
    int64_t n_valid() const;
};

// Windows, pads and labels a set of sequences. Sequences longer than L are
// cropped to a random contiguous window (deterministic per seed); shorter
// ones are end-padded. Labels: KT/CondDP take the per-interaction label at
// each position, DP broadcasts the sequence label to every valid position.
SequenceBatch build_batch(const std::vector<StudentSequence>& sequences, int64_t L,
                          const TaskKind& task, const FeatureSchema& schema, uint64_t rng_seed);

} // namespace saicl
