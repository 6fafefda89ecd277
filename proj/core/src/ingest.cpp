#include "saicl/ingest.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <unordered_map>

#include "saicl/error.hpp"
#include "saicl/rng.hpp"

namespace saicl {

namespace {

constexpr int64_t kMsPerDay = 86'400'000;

// Minimal strict CSV: comma separated, double quotes for embedded commas.
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

int64_t parse_int(const std::string& s, size_t line_no, const std::string& col) {
    int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw Error("row_error",
                    "line " + std::to_string(line_no) + ": bad integer '" + s + "' in column " + col);
    return v;
}

double parse_real(const std::string& s, size_t line_no, const std::string& col) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error("row_error",
                    "line " + std::to_string(line_no) + ": bad real '" + s + "' in column " + col);
    }
}

int32_t intern(std::unordered_map<std::string, int32_t>& vocab, const std::string& key) {
    const auto [it, inserted] = vocab.emplace(key, static_cast<int32_t>(vocab.size()));
    (void)inserted;
    return it->second;
}

int64_t user_day(int64_t ts_ms) {
    // floor division that is correct for negative timestamps too
    return ts_ms >= 0 ? ts_ms / kMsPerDay : -((-ts_ms + kMsPerDay - 1) / kMsPerDay);
}

} // namespace

void DatasetSpec::validate() const {
    for (const auto& c : columns.continuous)
        if (!(c.max > c.min))
            throw Error("config_error", "continuous column '" + c.name + "' needs max > min");
    task.validate();
}

Dataset parse_dataset(const DatasetSpec& spec) {
    spec.validate();
    std::ifstream in(spec.path);
    if (!in) throw Error("io_error", "cannot open dataset file '" + spec.path + "'");

    std::string line;
    if (!std::getline(in, line)) throw Error("schema_error", "empty file, header row required");
    const std::vector<std::string> header = split_csv_line(line);
    auto col_index = [&](const std::string& name) -> int {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    auto required = [&](const std::string& name) {
        const int i = col_index(name);
        if (i < 0) throw Error("schema_error", "missing column '" + name + "'");
        return i;
    };

    const int ci_user = required(spec.columns.user);
    const int ci_item = required(spec.columns.item);
    const int ci_ts = required(spec.columns.timestamp);
    const int ci_correct = spec.columns.correct.empty() ? -1 : col_index(spec.columns.correct);
    std::vector<int> ci_cat, ci_cont;
    for (const auto& name : spec.columns.categorical) ci_cat.push_back(required(name));
    for (const auto& c : spec.columns.continuous) ci_cont.push_back(required(c.name));

    std::unordered_map<std::string, int32_t> item_vocab;
    std::vector<std::unordered_map<std::string, int32_t>> cat_vocabs(ci_cat.size());
    std::unordered_map<std::string, size_t> user_slot;
    std::vector<StudentSequence> seqs;

    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> row = split_csv_line(line);
        if (row.size() != header.size())
            throw Error("row_error", "line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(header.size()) + " fields, got " +
                                         std::to_string(row.size()));
        Interaction ev;
        ev.item = intern(item_vocab, row[ci_item]);
        ev.timestamp_ms = parse_int(row[ci_ts], line_no, spec.columns.timestamp);
        if (ci_correct >= 0 && !row[ci_correct].empty()) {
            const int64_t c = parse_int(row[ci_correct], line_no, spec.columns.correct);
            if (c != 0 && c != 1)
                throw Error("row_error",
                            "line " + std::to_string(line_no) + ": correct must be 0 or 1");
            ev.correct = static_cast<int8_t>(c);
        }
        ev.extra_cat.reserve(ci_cat.size());
        for (size_t f = 0; f < ci_cat.size(); ++f)
            ev.extra_cat.push_back(intern(cat_vocabs[f], row[ci_cat[f]]));
        ev.extra_cont.reserve(ci_cont.size());
        for (size_t f = 0; f < ci_cont.size(); ++f)
            ev.extra_cont.push_back(parse_real(row[ci_cont[f]], line_no, spec.columns.continuous[f].name));

        const std::string& uid = row[ci_user];
        const auto [it, inserted] = user_slot.emplace(uid, seqs.size());
        if (inserted) {
            seqs.emplace_back();
            seqs.back().user_id = uid;
        }
        seqs[it->second].interactions.push_back(std::move(ev));
    }

    for (auto& s : seqs)
        std::stable_sort(s.interactions.begin(), s.interactions.end(),
                         [](const Interaction& a, const Interaction& b) {
                             return a.timestamp_ms < b.timestamp_ms;
                         });

    Dataset ds;
    ds.sequences = std::move(seqs);
    ds.schema.n_items = static_cast<int32_t>(item_vocab.size());
    ds.schema.has_correct = ci_correct >= 0;
    for (size_t f = 0; f < ci_cat.size(); ++f)
        ds.schema.extra_cat.push_back(
            {spec.columns.categorical[f], static_cast<int32_t>(cat_vocabs[f].size())});
    for (const auto& c : spec.columns.continuous)
        ds.schema.extra_cont.push_back({c.name, c.min, c.max});
    return ds;
}

std::vector<StudentSequence> filter_users(std::vector<StudentSequence> seqs,
                                          int min_interactions, int min_active_days) {
    std::vector<StudentSequence> kept;
    kept.reserve(seqs.size());
    for (auto& s : seqs) {
        if (static_cast<int>(s.interactions.size()) < min_interactions) continue;
        if (min_active_days > 0) {
            std::set<int64_t> days;
            for (const auto& ev : s.interactions) days.insert(user_day(ev.timestamp_ms));
            if (static_cast<int>(days.size()) < min_active_days) continue;
        }
        kept.push_back(std::move(s));
    }
    return kept;
}

std::vector<StudentSequence> derive_dropout_labels(std::vector<StudentSequence> seqs,
                                                   int t_h_days, int t_p_days,
                                                   const TaskKind& task) {
    if (t_h_days <= 0 || t_p_days <= 0)
        throw Error("config_error", "history/prediction windows must be positive");
    std::vector<StudentSequence> out;
    out.reserve(seqs.size());
    size_t dropped = 0;
    for (auto& s : seqs) {
        if (s.interactions.empty()) continue;
        const int64_t t0 = s.interactions.front().timestamp_ms;
        std::vector<Interaction> history;
        bool active_in_window = false;
        int32_t next_item = -1;
        for (auto& ev : s.interactions) {
            const int64_t day = (ev.timestamp_ms - t0) / kMsPerDay;
            if (day < t_h_days) {
                history.push_back(std::move(ev));
            } else {
                if (next_item < 0) next_item = ev.item;
                if (day < t_h_days + t_p_days) active_in_window = true;
            }
        }
        if (history.empty()) {
            ++dropped;
            continue;
        }
        s.interactions = std::move(history);
        s.sequence_label = active_in_window ? 0 : 1;
        s.next_item = (task.task == Task::CondDP && s.sequence_label == 0) ? next_item : -1;
        out.push_back(std::move(s));
    }
    if (dropped > 0)
        std::cerr << "warning: dropped " << dropped << " users with no events in the history window\n";
    return out;
}

Splits split_users(std::vector<StudentSequence> seqs, double train_ratio, double valid_ratio,
                   double test_ratio, uint64_t seed) {
    const double sum = train_ratio + valid_ratio + test_ratio;
    if (std::abs(sum - 1.0) > 1e-9) throw Error("config_error", "split ratios must sum to 1");
    Rng rng(mix_seed(seed, 0x59711));
    std::vector<size_t> order(seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const int64_t n = static_cast<int64_t>(seqs.size());
    int64_t n_train = std::llround(train_ratio * static_cast<double>(n));
    int64_t n_valid = std::llround(valid_ratio * static_cast<double>(n));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);
    Splits sp;
    for (int64_t i = 0; i < n; ++i) {
        StudentSequence& s = seqs[order[i]];
        if (i < n_train)
            sp.train.push_back(std::move(s));
        else if (i < n_train + n_valid)
            sp.valid.push_back(std::move(s));
        else
            sp.test.push_back(std::move(s));
    }
    return sp;
}

void normalize_continuous(std::vector<StudentSequence>& seqs, const FeatureSchema& schema) {
    if (schema.extra_cont.empty()) return;
    for (auto& s : seqs)
        for (auto& ev : s.interactions)
            for (size_t f = 0; f < schema.extra_cont.size(); ++f) {
                const auto& b = schema.extra_cont[f];
                const double v = (ev.extra_cont[f] - b.min) / (b.max - b.min);
                ev.extra_cont[f] = std::clamp(v, 0.0, 1.0);
            }
}

Dataset load_dataset(const DatasetSpec& spec) {
    Dataset ds = parse_dataset(spec);
    ds.sequences = filter_users(std::move(ds.sequences), spec.min_interactions, spec.min_active_days);
    if (spec.task.task != Task::KT)
        ds.sequences = derive_dropout_labels(std::move(ds.sequences), spec.task.t_h_days,
                                             spec.task.t_p_days, spec.task);
    normalize_continuous(ds.sequences, ds.schema);
    return ds;
}

} // namespace saicl
