#include "saicl/config.hpp"

#include <fstream>

#include "saicl/error.hpp"

namespace saicl {

using nlohmann::json;

std::string train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::CeOnly: return "ce_only";
        case TrainMode::PretrainFinetune: return "pretrain_finetune";
        case TrainMode::Multitask: return "multitask";
    }
    return "ce_only";
}

TrainMode train_mode_from_name(const std::string& name) {
    if (name == "ce_only") return TrainMode::CeOnly;
    if (name == "pretrain_finetune") return TrainMode::PretrainFinetune;
    if (name == "multitask") return TrainMode::Multitask;
    throw Error("config_error", "unknown train mode '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw Error("config_error", "train.epochs must be >= 1");
    if (batch_size_pretrain < 1 || batch_size_main < 1)
        throw Error("config_error", "batch sizes must be >= 1");
    if (weight_decay_main < 0 || weight_decay_pretrain < 0)
        throw Error("config_error", "weight decay must be >= 0");
    if (!(lr > 0)) throw Error("config_error", "train.lr must be positive");
}

void RunConfig::validate() const {
    if (data_source != "csv" && data_source != "synthetic")
        throw Error("config_error", "data_source must be 'csv' or 'synthetic'");
    encoder.validate();
    loss.validate();
    aug.validate();
    train.validate();
    synth.validate();
    dataset.task.validate();
    if (std::abs(split_train + split_valid + split_test - 1.0) > 1e-9)
        throw Error("config_error", "split ratios must sum to 1");
}

json task_to_json(const TaskKind& t) {
    return {{"kind", task_name(t.task)}, {"t_h_days", t.t_h_days}, {"t_p_days", t.t_p_days}};
}

TaskKind task_from_json(const json& j) {
    TaskKind t;
    t.task = task_from_name(j.at("kind").get<std::string>());
    t.t_h_days = j.at("t_h_days").get<int>();
    t.t_p_days = j.at("t_p_days").get<int>();
    return t;
}

json encoder_to_json(const EncoderConfig& cfg) {
    return {{"backbone", backbone_name(cfg.backbone)},
            {"hidden_dim", cfg.hidden_dim},
            {"seq_len", cfg.seq_len},
            {"heads", cfg.heads},
            {"ffn_dim", cfg.ffn_dim},
            {"dropout", cfg.dropout_rate},
            {"conv_channels", cfg.conv_channels},
            {"conv_kernel", cfg.conv_kernel},
            {"use_position", cfg.use_position},
            {"proj_dim", cfg.proj_dim},
            {"bn_momentum", cfg.bn_momentum}};
}

EncoderConfig encoder_from_json(const json& j) {
    EncoderConfig cfg;
    cfg.backbone = backbone_from_name(j.at("backbone").get<std::string>());
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.seq_len = j.at("seq_len").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.ffn_dim = j.at("ffn_dim").get<int>();
    cfg.dropout_rate = j.at("dropout").get<double>();
    const auto cc = j.at("conv_channels").get<std::vector<int>>();
    if (cc.size() != 3) throw Error("config_error", "encoder.conv_channels needs 3 entries");
    std::copy(cc.begin(), cc.end(), cfg.conv_channels.begin());
    cfg.conv_kernel = j.at("conv_kernel").get<int>();
    cfg.use_position = j.at("use_position").get<bool>();
    cfg.proj_dim = j.at("proj_dim").get<int>();
    cfg.bn_momentum = j.at("bn_momentum").get<double>();
    return cfg;
}

json schema_to_json(const FeatureSchema& s) {
    json cats = json::array();
    for (const auto& c : s.extra_cat) cats.push_back({{"name", c.name}, {"cardinality", c.cardinality}});
    json conts = json::array();
    for (const auto& c : s.extra_cont)
        conts.push_back({{"name", c.name}, {"min", c.min}, {"max", c.max}});
    return {{"n_items", s.n_items}, {"has_correct", s.has_correct}, {"extra_cat", cats},
            {"extra_cont", conts}};
}

FeatureSchema schema_from_json(const json& j) {
    FeatureSchema s;
    s.n_items = j.at("n_items").get<int32_t>();
    s.has_correct = j.at("has_correct").get<bool>();
    for (const auto& c : j.at("extra_cat"))
        s.extra_cat.push_back({c.at("name").get<std::string>(), c.at("cardinality").get<int32_t>()});
    for (const auto& c : j.at("extra_cont"))
        s.extra_cont.push_back({c.at("name").get<std::string>(), c.at("min").get<double>(),
                                c.at("max").get<double>()});
    return s;
}

namespace {

json dataset_to_json(const DatasetSpec& d) {
    json conts = json::array();
    for (const auto& c : d.columns.continuous)
        conts.push_back({{"name", c.name}, {"min", c.min}, {"max", c.max}});
    return {{"path", d.path},
            {"columns",
             {{"user", d.columns.user},
              {"item", d.columns.item},
              {"timestamp", d.columns.timestamp},
              {"correct", d.columns.correct},
              {"categorical", d.columns.categorical},
              {"continuous", conts}}},
            {"task", task_to_json(d.task)},
            {"min_interactions", d.min_interactions},
            {"min_active_days", d.min_active_days}};
}

DatasetSpec dataset_from_json(const json& j) {
    DatasetSpec d;
    d.path = j.at("path").get<std::string>();
    const json& c = j.at("columns");
    d.columns.user = c.at("user").get<std::string>();
    d.columns.item = c.at("item").get<std::string>();
    d.columns.timestamp = c.at("timestamp").get<std::string>();
    d.columns.correct = c.at("correct").get<std::string>();
    d.columns.categorical = c.at("categorical").get<std::vector<std::string>>();
    for (const auto& cc : c.at("continuous"))
        d.columns.continuous.push_back({cc.at("name").get<std::string>(), cc.at("min").get<double>(),
                                        cc.at("max").get<double>()});
    d.task = task_from_json(j.at("task"));
    d.min_interactions = j.at("min_interactions").get<int>();
    d.min_active_days = j.at("min_active_days").get<int>();
    return d;
}

json synth_to_json(const SynthConfig& s) {
    return {{"n_students", s.n_students}, {"n_items", s.n_items}, {"ability_std", s.ability_std},
            {"difficulty_std", s.difficulty_std}, {"learning_rate", s.learning_rate},
            {"dropout_hazard", s.dropout_hazard}, {"min_len", s.min_len}, {"max_len", s.max_len},
            {"events_per_day_min", s.events_per_day_min}, {"events_per_day_max", s.events_per_day_max},
            {"t_h_days", s.t_h_days}, {"t_p_days", s.t_p_days}, {"seed", s.seed}};
}

SynthConfig synth_from_json(const json& j) {
    SynthConfig s;
    s.n_students = j.at("n_students").get<int>();
    s.n_items = j.at("n_items").get<int>();
    s.ability_std = j.at("ability_std").get<double>();
    s.difficulty_std = j.at("difficulty_std").get<double>();
    s.learning_rate = j.at("learning_rate").get<double>();
    s.dropout_hazard = j.at("dropout_hazard").get<double>();
    s.min_len = j.at("min_len").get<int>();
    s.max_len = j.at("max_len").get<int>();
    s.events_per_day_min = j.at("events_per_day_min").get<int>();
    s.events_per_day_max = j.at("events_per_day_max").get<int>();
    s.t_h_days = j.at("t_h_days").get<int>();
    s.t_p_days = j.at("t_p_days").get<int>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

json loss_to_json(const LossConfig& l) {
    return {{"tau", l.tau}, {"lambda_self", l.lambda_self}, {"lambda_sup", l.lambda_sup},
            {"anchor_subsample", l.anchor_subsample},
            {"future_only_positives", l.future_only_positives},
            {"normalize_embeddings", l.normalize_embeddings},
            {"mean_reduction", l.mean_reduction}};
}

LossConfig loss_from_json(const json& j) {
    LossConfig l;
    l.tau = j.at("tau").get<double>();
    l.lambda_self = j.at("lambda_self").get<double>();
    l.lambda_sup = j.at("lambda_sup").get<double>();
    l.anchor_subsample = j.at("anchor_subsample").get<int64_t>();
    l.future_only_positives = j.at("future_only_positives").get<bool>();
    l.normalize_embeddings = j.at("normalize_embeddings").get<bool>();
    l.mean_reduction = j.at("mean_reduction").get<bool>();
    return l;
}

json aug_to_json(const AugmentConfig& a) {
    return {{"gamma_mask", a.gamma_mask}, {"gamma_crop", a.gamma_crop},
            {"gamma_replace", a.gamma_replace}, {"gamma_permute", a.gamma_permute},
            {"interaction_level", a.interaction_level}};
}

AugmentConfig aug_from_json(const json& j) {
    AugmentConfig a;
    a.gamma_mask = j.at("gamma_mask").get<double>();
    a.gamma_crop = j.at("gamma_crop").get<double>();
    a.gamma_replace = j.at("gamma_replace").get<double>();
    a.gamma_permute = j.at("gamma_permute").get<double>();
    a.interaction_level = j.at("interaction_level").get<bool>();
    return a;
}

json train_to_json(const TrainConfig& t) {
    return {{"mode", train_mode_name(t.mode)}, {"objective", objective_name(t.objective)},
            {"sample_level", t.sample_level}, {"epochs", t.epochs},
            {"pretrain_epochs", t.pretrain_epochs}, {"batch_size_pretrain", t.batch_size_pretrain},
            {"batch_size_main", t.batch_size_main}, {"lr", t.lr},
            {"weight_decay_main", t.weight_decay_main},
            {"weight_decay_pretrain", t.weight_decay_pretrain}, {"patience", t.patience},
            {"lambda_grid", t.lambda_grid}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.mode = train_mode_from_name(j.at("mode").get<std::string>());
    t.objective = objective_from_name(j.at("objective").get<std::string>());
    t.sample_level = j.at("sample_level").get<bool>();
    t.epochs = j.at("epochs").get<int>();
    t.pretrain_epochs = j.at("pretrain_epochs").get<int>();
    t.batch_size_pretrain = j.at("batch_size_pretrain").get<int>();
    t.batch_size_main = j.at("batch_size_main").get<int>();
    t.lr = j.at("lr").get<double>();
    t.weight_decay_main = j.at("weight_decay_main").get<double>();
    t.weight_decay_pretrain = j.at("weight_decay_pretrain").get<double>();
    t.patience = j.at("patience").get<int>();
    t.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    return t;
}

void check_known_fields(const json& defaults, const json& given, const std::string& path) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!defaults.contains(key)) throw Error("config_error", "unknown field '" + full + "'");
        if (defaults.at(key).is_object()) check_known_fields(defaults.at(key), value, full);
    }
}

void deep_merge(json& base, const json& patch) {
    if (!patch.is_object()) {
        base = patch;
        return;
    }
    for (const auto& [key, value] : patch.items()) {
        if (base.contains(key) && base.at(key).is_object() && value.is_object())
            deep_merge(base.at(key), value);
        else
            base[key] = value;
    }
}

} // namespace

json to_json(const RunConfig& cfg) {
    return {{"data_source", cfg.data_source}, {"dataset", dataset_to_json(cfg.dataset)},
            {"synth", synth_to_json(cfg.synth)}, {"encoder", encoder_to_json(cfg.encoder)},
            {"loss", loss_to_json(cfg.loss)}, {"aug", aug_to_json(cfg.aug)},
            {"train", train_to_json(cfg.train)}, {"out_dir", cfg.out_dir}, {"seed", cfg.seed},
            {"split", {{"train", cfg.split_train}, {"valid", cfg.split_valid}, {"test", cfg.split_test}}}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    try {
        cfg.data_source = j.at("data_source").get<std::string>();
        cfg.dataset = dataset_from_json(j.at("dataset"));
        cfg.synth = synth_from_json(j.at("synth"));
        cfg.encoder = encoder_from_json(j.at("encoder"));
        cfg.loss = loss_from_json(j.at("loss"));
        cfg.aug = aug_from_json(j.at("aug"));
        cfg.train = train_from_json(j.at("train"));
        cfg.out_dir = j.at("out_dir").get<std::string>();
        cfg.seed = j.at("seed").get<uint64_t>();
        cfg.split_train = j.at("split").at("train").get<double>();
        cfg.split_valid = j.at("split").at("valid").get<double>();
        cfg.split_test = j.at("split").at("test").get<double>();
    } catch (const json::exception& e) {
        throw Error("config_error", e.what());
    }
    cfg.validate();
    return cfg;
}

json default_config_json() { return to_json(RunConfig{}); }

RunConfig run_config_from_merged(json merged) { return run_config_from_json(merged); }

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    json merged = default_config_json();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw Error("config_error", "cannot open config file '" + path + "'");
        json file_json;
        try {
            in >> file_json;
        } catch (const json::exception& e) {
            throw Error("config_error", std::string("config parse failure: ") + e.what());
        }
        check_known_fields(merged, file_json, "");
        deep_merge(merged, file_json);
    }
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw Error("config_error", "override '" + ov + "' must look like key.path=value");
        const std::string key = ov.substr(0, eq);
        const std::string raw = ov.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw; // plain string
        }
        json* node = &merged;
        size_t start = 0;
        std::vector<std::string> parts;
        while (true) {
            const size_t dot = key.find('.', start);
            parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        for (size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->contains(parts[i]))
                throw Error("config_error", "unknown field '" + key + "'");
            node = &(*node)[parts[i]];
        }
        if (!node->contains(parts.back()))
            throw Error("config_error", "unknown field '" + key + "'");
        (*node)[parts.back()] = value;
    }
    return run_config_from_json(merged);
}

} // namespace saicl
