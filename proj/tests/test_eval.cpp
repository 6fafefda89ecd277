#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "saicl/error.hpp"
#include "saicl/eval.hpp"
#include "saicl/synth.hpp"
#include "saicl/train.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace saicl;

namespace {

RunConfig tiny_kt_config() {
    RunConfig cfg;
    cfg.data_source = "synthetic";
    cfg.synth.n_students = 30;
    cfg.synth.n_items = 8;
    cfg.synth.min_len = 8;
    cfg.synth.max_len = 20;
    cfg.synth.seed = 3;
    cfg.encoder.hidden_dim = 12;
    cfg.encoder.seq_len = 16;
    cfg.encoder.dropout_rate = 0.0;
    cfg.train.epochs = 2;
    cfg.train.batch_size_main = 8;
    cfg.seed = 3;
    return cfg;
}

} // namespace

TEST_CASE("auc closed forms and pairwise oracle") {
    CHECK(auc_score({0.9, 0.1}, {1, 0}) == 1.0);
    CHECK(auc_score({0.4, 0.4, 0.4}, {1, 0, 1}) == 0.5);
    CHECK_THROWS_WITH_AS(auc_score({0.2, 0.3}, {1, 1}), doctest::Contains("undefined_auc"), Error);

    Rng rng(61);
    std::vector<double> scores;
    std::vector<int8_t> labels;
    for (int i = 0; i < 200; ++i) {
        // coarse quantization forces plenty of ties
        scores.push_back(std::round(rng.uniform() * 20.0) / 20.0);
        labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
    labels[0] = 1;
    labels[1] = 0;
    CHECK(auc_score(scores, labels) ==
          doctest::Approx(oracles::auc_pairwise(scores, labels)).epsilon(1e-12));
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
    Rng rng(62);
    std::vector<double> scores;
    std::vector<int8_t> labels;
    for (int i = 0; i < 100; ++i) {
        scores.push_back(rng.uniform(-2.0, 2.0));
        labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    labels[0] = 1;
    labels[1] = 0;
    std::vector<double> warped = scores;
    for (double& s : warped) s = std::exp(0.5 * s) + 3.0;
    CHECK(auc_score(scores, labels) == doctest::Approx(auc_score(warped, labels)).epsilon(1e-12));
}

TEST_CASE("a constant predictor scores auc one half and acc at prevalence") {
    const RunConfig cfg = tiny_kt_config();
    const auto seqs = generate_kt(cfg.synth);
    const FeatureSchema schema = synth_schema(cfg.synth);
    ParamStore store = init_params(cfg.encoder, schema, cfg.dataset.task, HeadKind::MlpItem, 1);
    for (auto& [name, t] : store.params) t.fill(0.0); // all logits 0 -> p = 0.5

    const EvalReport rep = evaluate_params(store, HeadKind::MlpItem, cfg.encoder, schema,
                                           cfg.dataset.task, seqs, "train");
    CHECK(rep.auc == doctest::Approx(0.5).epsilon(1e-12));
    int64_t pos = 0, total = 0;
    for (const auto& s : seqs)
        for (const auto& ev : s.interactions) {
            pos += ev.correct > 0;
            ++total;
        }
    CHECK(rep.n_predictions == total);
    CHECK(rep.acc == doctest::Approx(static_cast<double>(pos) / static_cast<double>(total))
                         .epsilon(1e-12));
}

TEST_CASE("prediction count equals labeled interactions (kt) or sequences (dp)") {
    RunConfig cfg = tiny_kt_config();
    const auto kt_seqs = generate_kt(cfg.synth);
    const FeatureSchema schema = synth_schema(cfg.synth);
    ParamStore store = init_params(cfg.encoder, schema, cfg.dataset.task, HeadKind::MlpItem, 2);
    int64_t labeled = 0;
    for (const auto& s : kt_seqs) labeled += static_cast<int64_t>(s.interactions.size());
    CHECK(evaluate_params(store, HeadKind::MlpItem, cfg.encoder, schema, cfg.dataset.task, kt_seqs,
                          "x")
              .n_predictions == labeled);

    TaskKind dp;
    dp.task = Task::DP;
    dp.t_h_days = 8;
    dp.t_p_days = 4;
    SynthConfig scfg = cfg.synth;
    scfg.dropout_hazard = 0.1;
    const auto dp_seqs = generate_dp(scfg, dp);
    EncoderConfig enc = cfg.encoder;
    enc.backbone = Backbone::SaedpDp;
    enc.conv_channels = {6, 4, 6};
    enc.heads = 2;
    ParamStore dps = init_params(enc, schema, dp, HeadKind::DpAttention, 3);
    CHECK(evaluate_params(dps, HeadKind::DpAttention, enc, schema, dp, dp_seqs, "x").n_predictions ==
          static_cast<int64_t>(dp_seqs.size()));
}

TEST_CASE("evaluation never reads interactions at or after the target") {
    RunConfig cfg = tiny_kt_config();
    cfg.encoder.seq_len = 6; // force sliding windows
    const auto seqs = generate_kt(cfg.synth);
    const FeatureSchema schema = synth_schema(cfg.synth);
    ParamStore store = init_params(cfg.encoder, schema, cfg.dataset.task, HeadKind::MlpItem, 4);

    const StudentSequence& probe = seqs.front();
    const int64_t cut = static_cast<int64_t>(probe.interactions.size()) - 3;
    REQUIRE(cut > 1);
    StudentSequence truncated = probe;
    truncated.interactions.resize(static_cast<size_t>(cut));

    std::vector<Prediction> full, part;
    evaluate_params(store, HeadKind::MlpItem, cfg.encoder, schema, cfg.dataset.task, {probe}, "x",
                    &full);
    evaluate_params(store, HeadKind::MlpItem, cfg.encoder, schema, cfg.dataset.task, {truncated},
                    "x", &part);
    REQUIRE(static_cast<int64_t>(part.size()) == cut);
    for (const auto& p : part) {
        bool matched = false;
        for (const auto& f : full)
            if (f.target == p.target) {
                CHECK(f.score == p.score); // bit-identical
                matched = true;
            }
        CHECK(matched);
    }
}

TEST_CASE("a memorizing model overfits its own training data") {
    RunConfig cfg = tiny_kt_config();
    cfg.synth.n_students = 12;
    cfg.synth.min_len = 6;
    cfg.synth.max_len = 10;
    cfg.encoder.hidden_dim = 24;
    cfg.encoder.seq_len = 12;
    cfg.train.epochs = 150;
    cfg.train.batch_size_main = 12;
    cfg.train.lr = 0.01;
    cfg.train.patience = 1000;
    const auto seqs = generate_kt(cfg.synth);
    const FeatureSchema schema = synth_schema(cfg.synth);
    Splits splits;
    splits.train = seqs;
    splits.valid = seqs; // evaluate on the training data on purpose
    const TrainRun run = train(cfg, splits, schema, "");
    CHECK(run.best_val_auc >= 0.95);
}

TEST_CASE("dataset stats count users, items and pair sparsity") {
    StudentSequence s = testutil::make_sequence("solo", {0, 0}, {1, 0});
    const DatasetStats st = dataset_stats({s});
    CHECK(st.interactions == 2);
    CHECK(st.users == 1);
    CHECK(st.items == 1);
    CHECK(st.pair_sparsity == 0.0);

    SynthConfig scfg;
    scfg.n_students = 40;
    scfg.n_items = 9;
    scfg.seed = 8;
    const auto seqs = generate_kt(scfg);
    const DatasetStats st2 = dataset_stats(seqs);
    // brute-force recount
    int64_t inter = 0;
    std::set<int32_t> items;
    std::set<std::pair<std::string, int32_t>> pairs;
    for (const auto& q : seqs) {
        inter += static_cast<int64_t>(q.interactions.size());
        for (const auto& ev : q.interactions) {
            items.insert(ev.item);
            pairs.insert({q.user_id, ev.item});
        }
    }
    CHECK(st2.interactions == inter);
    CHECK(st2.users == 40);
    CHECK(st2.items == static_cast<int64_t>(items.size()));
    CHECK(st2.pair_sparsity ==
          doctest::Approx(1.0 - static_cast<double>(pairs.size()) /
                                    (40.0 * static_cast<double>(items.size())))
              .epsilon(1e-12));
}

TEST_CASE("embedding export writes one row per valid position") {
    RunConfig cfg = tiny_kt_config();
    const FeatureSchema schema = synth_schema(cfg.synth);
    Checkpoint ckpt;
    ckpt.encoder = cfg.encoder;
    ckpt.schema = schema;
    ckpt.task = cfg.dataset.task;
    ckpt.head = HeadKind::MlpItem;
    ckpt.run_config = to_json(cfg);
    ckpt.store = init_params(cfg.encoder, schema, cfg.dataset.task, HeadKind::MlpItem, 5);

    const auto seq = testutil::make_sequence("only", {0, 1, 2}, {1, 0, 1});
    const std::string path =
        (std::filesystem::temp_directory_path() / "saicl_export_test.csv").string();
    export_embeddings(ckpt, {seq}, 1, 9, path);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line); // header
    CHECK(line.rfind("user_id,position,label,item", 0) == 0);
    int rows = 0;
    size_t cols = 0;
    while (std::getline(in, line)) {
        ++rows;
        cols = static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    }
    CHECK(rows == 3); // no pad rows
    CHECK(cols == 4 + static_cast<size_t>(cfg.encoder.enc_dim()));
}
