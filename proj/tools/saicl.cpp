// Command-line entry point: data generation, dataset statistics, training,
// evaluation, lambda sweeps and embedding export, all driven by one JSON
// config plus dotted-path overrides (e.g. loss.tau=0.05).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "saicl/checkpoint.hpp"
#include "saicl/config.hpp"
#include "saicl/error.hpp"
#include "saicl/eval.hpp"
#include "saicl/ingest.hpp"
#include "saicl/synth.hpp"
#include "saicl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed;
    std::vector<std::string> overrides;
};

saicl::RunConfig resolve_config(const CommonArgs& args) {
    saicl::RunConfig cfg = saicl::load_run_config(args.config_path, args.overrides);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed) cfg.seed = *args.seed;
    return cfg;
}

void write_resolved(const saicl::RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(cfg.out_dir + "/config.resolved.json");
    out << saicl::to_json(cfg).dump(2) << '\n';
}

// Loads sequences + schema for the configured source. Synthetic data flows
// through the same ingestion contracts as CSV files.
saicl::Dataset load_input(const saicl::RunConfig& cfg) {
    if (cfg.data_source == "synthetic") {
        saicl::Dataset ds;
        saicl::SynthConfig synth = cfg.synth;
        synth.t_h_days = cfg.dataset.task.t_h_days;
        synth.t_p_days = cfg.dataset.task.t_p_days;
        ds.sequences = cfg.dataset.task.task == saicl::Task::KT
                           ? saicl::generate_kt(synth)
                           : saicl::generate_dp(synth, cfg.dataset.task);
        ds.schema = saicl::synth_schema(synth);
        return ds;
    }
    return saicl::load_dataset(cfg.dataset);
}

int cmd_generate(const CommonArgs& args) {
    saicl::RunConfig cfg = resolve_config(args);
    saicl::SynthConfig synth = cfg.synth;
    synth.t_h_days = cfg.dataset.task.t_h_days;
    synth.t_p_days = cfg.dataset.task.t_p_days;
    const auto seqs = cfg.dataset.task.task == saicl::Task::KT
                          ? saicl::generate_kt(synth)
                          : saicl::generate_dp(synth, cfg.dataset.task);
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/synthetic.csv";
    saicl::write_csv(seqs, path);
    write_resolved(cfg);
    const saicl::DatasetStats st = saicl::dataset_stats(seqs);
    json summary = {{"status", "ok"}, {"command", "generate"}, {"path", path},
                    {"users", st.users}, {"interactions", st.interactions}};
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_stats(const CommonArgs& args) {
    const saicl::RunConfig cfg = resolve_config(args);
    const saicl::Dataset ds = load_input(cfg);
    json summary = {{"status", "ok"}, {"command", "stats"}};
    summary.update(saicl::stats_to_json(saicl::dataset_stats(ds.sequences)));
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_train(const CommonArgs& args) {
    saicl::RunConfig cfg = resolve_config(args);
    write_resolved(cfg);
    const saicl::Dataset ds = load_input(cfg);
    const saicl::Splits splits = saicl::split_users(ds.sequences, cfg.split_train, cfg.split_valid,
                                                    cfg.split_test, cfg.seed);
    saicl::TrainRun run = saicl::train(cfg, splits, ds.schema, cfg.out_dir);
    const double best_auc = run.best_val_auc;
    const int best_epoch = run.best_epoch;
    const bool diverged = run.diverged;
    saicl::Checkpoint ckpt = saicl::make_checkpoint(cfg, ds.schema, std::move(run));
    const std::string ckpt_path = cfg.out_dir + "/checkpoint.bin";
    saicl::save_checkpoint(ckpt, ckpt_path);

    json summary = {{"status", "ok"}, {"command", "train"}, {"out_dir", cfg.out_dir},
                    {"checkpoint", ckpt_path}, {"best_val_auc", best_auc},
                    {"best_epoch", best_epoch}, {"diverged", diverged}};
    if (!splits.test.empty()) {
        const saicl::EvalReport test = saicl::evaluate_split(ckpt, splits.test, "test");
        summary["test_auc"] = test.auc;
        summary["test_acc"] = test.acc;
    }
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& ckpt_path, const std::string& split) {
    saicl::Checkpoint ckpt = saicl::load_checkpoint(ckpt_path);
    // Default to the config embedded in the checkpoint; an explicit --config
    // or override re-resolves from scratch.
    saicl::RunConfig cfg;
    if (!args.config_path.empty() || !args.overrides.empty()) {
        cfg = resolve_config(args);
    } else {
        cfg = saicl::run_config_from_merged(ckpt.run_config);
        if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
        if (args.seed) cfg.seed = *args.seed;
    }
    const saicl::Dataset ds = load_input(cfg);
    const saicl::Splits splits = saicl::split_users(ds.sequences, cfg.split_train, cfg.split_valid,
                                                    cfg.split_test, cfg.seed);
    const std::vector<saicl::StudentSequence>* seqs = &splits.test;
    if (split == "train")
        seqs = &splits.train;
    else if (split == "valid")
        seqs = &splits.valid;
    else if (split != "test")
        throw saicl::Error("config_error", "split must be train, valid or test");
    const saicl::EvalReport report = saicl::evaluate_split(ckpt, *seqs, split);
    fs::create_directories(cfg.out_dir);
    std::ofstream rep(cfg.out_dir + "/report_" + split + ".json");
    rep << saicl::report_to_json(report).dump(2) << '\n';
    json summary = {{"status", "ok"}, {"command", "evaluate"}};
    summary.update(saicl::report_to_json(report));
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_sweep(const CommonArgs& args) {
    saicl::RunConfig cfg = resolve_config(args);
    write_resolved(cfg);
    const saicl::Dataset ds = load_input(cfg);
    const saicl::Splits splits = saicl::split_users(ds.sequences, cfg.split_train, cfg.split_valid,
                                                    cfg.split_test, cfg.seed);
    const auto results =
        saicl::sweep_lambda(cfg, splits, ds.schema, cfg.train.lambda_grid, cfg.out_dir);
    json table = json::array();
    for (const auto& r : results)
        table.push_back({{"lambda", r.lambda}, {"valid_auc", r.valid.auc},
                         {"valid_acc", r.valid.acc}, {"test_auc", r.test.auc},
                         {"test_acc", r.test.acc}});
    {
        std::ofstream out(cfg.out_dir + "/sweep.json");
        out << table.dump(2) << '\n';
    }
    json summary = {{"status", "ok"}, {"command", "sweep-lambda"}, {"out_dir", cfg.out_dir},
                    {"table", table}};
    std::cout << summary.dump() << '\n';
    return 0;
}

int cmd_export(const CommonArgs& args, const std::string& ckpt_path, const std::string& split,
               int n_users) {
    saicl::Checkpoint ckpt = saicl::load_checkpoint(ckpt_path);
    saicl::RunConfig cfg = saicl::run_config_from_merged(ckpt.run_config);
    if (!args.config_path.empty() || !args.overrides.empty()) cfg = resolve_config(args);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed) cfg.seed = *args.seed;
    const saicl::Dataset ds = load_input(cfg);
    const saicl::Splits splits = saicl::split_users(ds.sequences, cfg.split_train, cfg.split_valid,
                                                    cfg.split_test, cfg.seed);
    const std::vector<saicl::StudentSequence>* seqs = &splits.test;
    if (split == "train")
        seqs = &splits.train;
    else if (split == "valid")
        seqs = &splits.valid;
    else if (split != "test")
        throw saicl::Error("config_error", "split must be train, valid or test");
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/embeddings_" + split + ".csv";
    saicl::export_embeddings(ckpt, *seqs, n_users, cfg.seed, path);
    json summary = {{"status", "ok"}, {"command", "export-embeddings"}, {"path", path}};
    std::cout << summary.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"student-model training and evaluation toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string ckpt_path, split = "test";
    int n_users = 100;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "JSON config file");
        sub->add_option("--out", args.out_dir, "output directory (overrides config)");
        sub->add_option("--seed", args.seed, "run seed (overrides config)");
        sub->add_option("overrides", args.overrides, "dotted overrides, e.g. loss.tau=0.05");
    };

    CLI::App* c_generate = app.add_subcommand("generate", "write a synthetic dataset CSV");
    add_common(c_generate);
    CLI::App* c_stats = app.add_subcommand("stats", "dataset statistics after preprocessing");
    add_common(c_stats);
    CLI::App* c_train = app.add_subcommand("train", "train a model");
    add_common(c_train);
    CLI::App* c_eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(c_eval);
    c_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    c_eval->add_option("--split", split, "train | valid | test");
    CLI::App* c_sweep = app.add_subcommand("sweep-lambda", "train one run per lambda grid value");
    add_common(c_sweep);
    CLI::App* c_export = app.add_subcommand("export-embeddings", "dump hidden states to CSV");
    add_common(c_export);
    c_export->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    c_export->add_option("--split", split, "train | valid | test");
    c_export->add_option("--n-users", n_users, "number of sampled users");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_generate->parsed()) return cmd_generate(args);
        if (c_stats->parsed()) return cmd_stats(args);
        if (c_train->parsed()) return cmd_train(args);
        if (c_eval->parsed()) return cmd_evaluate(args, ckpt_path, split);
        if (c_sweep->parsed()) return cmd_sweep(args);
        if (c_export->parsed()) return cmd_export(args, ckpt_path, split, n_users);
    } catch (const saicl::Error& e) {
        json err = {{"status", "error"}, {"code", e.code()}, {"detail", e.what()}};
        std::cout << err.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        json err = {{"status", "error"}, {"code", "internal_error"}, {"detail", e.what()}};
        std::cout << err.dump() << '\n';
        return 1;
    }
    return 0;
}
