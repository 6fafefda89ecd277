#include "saicl/synth.hpp"

#include <cmath>
#include <fstream>

#include "saicl/error.hpp"
#include "saicl/rng.hpp"

namespace saicl {

namespace {
constexpr int64_t kMsPerDay = 86'400'000;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
} // namespace

void SynthConfig::validate() const {
    if (n_students < 1 || n_items < 1) throw Error("config_error", "synth counts must be >= 1");
    if (ability_std < 0 || difficulty_std < 0) throw Error("config_error", "synth std must be >= 0");
    if (min_len < 1 || max_len < min_len) throw Error("config_error", "bad synth length range");
    if (dropout_hazard < 0.0 || dropout_hazard > 1.0)
        throw Error("config_error", "dropout hazard must lie in [0,1]");
}

std::vector<StudentSequence> generate_kt(const SynthConfig& cfg, std::vector<double>* true_probs) {
    cfg.validate();
    Rng master(cfg.seed);
    std::vector<double> difficulty(cfg.n_items);
    for (int q = 0; q < cfg.n_items; ++q) difficulty[q] = master.normal(0.0, cfg.difficulty_std);

    std::vector<StudentSequence> seqs;
    seqs.reserve(cfg.n_students);
    for (int i = 0; i < cfg.n_students; ++i) {
        Rng rng = master.fork(static_cast<uint64_t>(i) + 1);
        StudentSequence s;
        s.user_id = "u" + std::to_string(i);
        double ability = rng.normal(0.0, cfg.ability_std);
        const int len = rng.uniform_int(cfg.min_len, cfg.max_len);
        int64_t ts = static_cast<int64_t>(rng.uniform_index(kMsPerDay));
        s.interactions.reserve(len);
        for (int t = 0; t < len; ++t) {
            Interaction ev;
            ev.item = static_cast<int32_t>(rng.uniform_index(cfg.n_items));
            ev.timestamp_ms = ts;
            const double p = sigmoid(ability - difficulty[ev.item]);
            if (true_probs) true_probs->push_back(p);
            ev.correct = rng.bernoulli(p) ? 1 : 0;
            if (ev.correct) ability += cfg.learning_rate;
            s.interactions.push_back(ev);
            ts += 60'000 + static_cast<int64_t>(rng.uniform_index(8 * 3'600'000));
        }
        seqs.push_back(std::move(s));
    }
    return seqs;
}

std::vector<StudentSequence> generate_dp(const SynthConfig& cfg, const TaskKind& task) {
    cfg.validate();
    Rng master(cfg.seed);
    std::vector<StudentSequence> seqs;
    seqs.reserve(cfg.n_students);
    for (int i = 0; i < cfg.n_students; ++i) {
        Rng rng = master.fork(static_cast<uint64_t>(i) + 1);
        StudentSequence s;
        s.user_id = "u" + std::to_string(i);
        const int64_t start = static_cast<int64_t>(rng.uniform_index(kMsPerDay / 2));
        // Active on days 0..A-1; each day continues with probability 1-hazard.
        for (int64_t day = 0;; ++day) {
            const int n_events = rng.uniform_int(cfg.events_per_day_min, cfg.events_per_day_max);
            for (int e = 0; e < n_events; ++e) {
                Interaction ev;
                ev.item = static_cast<int32_t>(rng.uniform_index(cfg.n_items));
                ev.timestamp_ms = start + day * kMsPerDay +
                                  static_cast<int64_t>(rng.uniform_index(kMsPerDay / 2));
                ev.correct = rng.bernoulli(0.6) ? 1 : 0;
                s.interactions.push_back(ev);
            }
            if (cfg.dropout_hazard >= 1.0 || rng.bernoulli(cfg.dropout_hazard)) break;
            // Hard horizon so hazard 0 still terminates, comfortably past the label window.
            if (day > task.t_h_days + task.t_p_days + 30) break;
        }
        std::stable_sort(s.interactions.begin(), s.interactions.end(),
                         [](const Interaction& a, const Interaction& b) {
                             return a.timestamp_ms < b.timestamp_ms;
                         });
        seqs.push_back(std::move(s));
    }
    return derive_dropout_labels(std::move(seqs), task.t_h_days, task.t_p_days, task);
}

FeatureSchema synth_schema(const SynthConfig& cfg) {
    FeatureSchema schema;
    schema.n_items = cfg.n_items;
    schema.has_correct = true;
    return schema;
}

void write_csv(const std::vector<StudentSequence>& seqs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("io_error", "cannot write '" + path + "'");
    out << "user_id,item_id,timestamp_ms,correct\n";
    for (const auto& s : seqs)
        for (const auto& ev : s.interactions) {
            out << s.user_id << ',' << ev.item << ',' << ev.timestamp_ms << ',';
            if (ev.correct >= 0) out << static_cast<int>(ev.correct);
            out << '\n';
        }
}

} // namespace saicl
