#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "saicl/augment.hpp"
#include "saicl/data.hpp"
#include "saicl/encoder.hpp"
#include "saicl/ingest.hpp"
#include "saicl/losses.hpp"
#include "saicl/synth.hpp"

namespace saicl {

enum class TrainMode { CeOnly, PretrainFinetune, Multitask };
std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
    TrainMode mode = TrainMode::CeOnly;
    ObjectiveMode objective = ObjectiveMode::Self;
    bool sample_level = false; // concat baselines (two augmented views) instead
    int epochs = 20;
    int pretrain_epochs = 0; // 0 = same as epochs
    int batch_size_pretrain = 64;
    int batch_size_main = 128;
    double lr = 1e-3;
    double weight_decay_main = 1e-6;
    double weight_decay_pretrain = 1e-6;
    int patience = 10; // early stopping on validation AUC
    std::vector<double> lambda_grid = {0.001, 0.01, 0.1, 1.0};

    void validate() const;
};

struct RunConfig {
    std::string data_source = "csv"; // "csv" | "synthetic"
    DatasetSpec dataset;
    SynthConfig synth;
    EncoderConfig encoder;
    LossConfig loss;
    AugmentConfig aug;
    TrainConfig train;
    std::string out_dir = "out";
    uint64_t seed = 1;
    double split_train = 0.72, split_valid = 0.08, split_test = 0.20;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Defaults -> deep-merge of the config file -> dotted-path overrides
// ("loss.tau=0.05"). Unknown fields fail with their full path.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);
RunConfig run_config_from_merged(nlohmann::json merged);
nlohmann::json default_config_json();

// Shared small-type serializers (checkpoints reuse them).
nlohmann::json encoder_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json(const FeatureSchema& s);
FeatureSchema schema_from_json(const nlohmann::json& j);
nlohmann::json task_to_json(const TaskKind& t);
TaskKind task_from_json(const nlohmann::json& j);

} // namespace saicl
