#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "saicl/error.hpp"
#include "saicl/ingest.hpp"
#include "saicl/rng.hpp"
#include "support/oracles.hpp"

using namespace saicl;

namespace {

constexpr int64_t kDay = 86'400'000;

std::string write_temp_csv(const std::string& name, const std::string& content) {
    const std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << content;
    return path;
}

DatasetSpec basic_spec(const std::string& path) {
    DatasetSpec spec;
    spec.path = path;
    return spec;
}

StudentSequence seq_with_days(const std::string& uid, const std::vector<int>& days) {
    StudentSequence s;
    s.user_id = uid;
    for (int d : days) {
        Interaction ev;
        ev.item = 0;
        ev.timestamp_ms = static_cast<int64_t>(d) * kDay + 1000;
        s.interactions.push_back(ev);
    }
    return s;
}

} // namespace

TEST_CASE("two rows for one user become one length-2 sequence") {
    const auto path = write_temp_csv("ingest_two_rows.csv",
                                     "user_id,item_id,timestamp_ms,correct\n"
                                     "a,q1,1000,1\n"
                                     "a,q2,2000,0\n");
    const Dataset ds = parse_dataset(basic_spec(path));
    REQUIRE(ds.sequences.size() == 1);
    CHECK(ds.sequences[0].interactions.size() == 2);
    CHECK(ds.schema.n_items == 2);
    CHECK(ds.sequences[0].interactions[0].item == 0); // first-seen order
    CHECK(ds.sequences[0].interactions[1].item == 1);
}

TEST_CASE("rows out of timestamp order are sorted ascending") {
    const auto path = write_temp_csv("ingest_order.csv",
                                     "user_id,item_id,timestamp_ms,correct\n"
                                     "a,q1,5000,1\n"
                                     "a,q2,1000,0\n"
                                     "a,q3,3000,1\n");
    const Dataset ds = parse_dataset(basic_spec(path));
    const auto& evs = ds.sequences[0].interactions;
    CHECK(evs[0].timestamp_ms == 1000);
    CHECK(evs[1].timestamp_ms == 3000);
    CHECK(evs[2].timestamp_ms == 5000);
}

TEST_CASE("missing column raises schema_error") {
    const auto path = write_temp_csv("ingest_missing.csv", "user_id,timestamp_ms\na,1\n");
    CHECK_THROWS_WITH_AS(parse_dataset(basic_spec(path)), doctest::Contains("schema_error"), Error);
}

TEST_CASE("bad rows raise row_error with the line number") {
    const auto path = write_temp_csv("ingest_badrow.csv",
                                     "user_id,item_id,timestamp_ms,correct\n"
                                     "a,q1,1000,1\n"
                                     "a,q2,not_a_number,0\n");
    CHECK_THROWS_WITH_AS(parse_dataset(basic_spec(path)), doctest::Contains("line 3"), Error);
}

TEST_CASE("filter keeps length >= min and enough active days") {
    std::vector<StudentSequence> seqs;
    seqs.push_back(seq_with_days("len4", {0, 0, 0, 0}));
    seqs.push_back(seq_with_days("len5", {0, 1, 2, 3, 4}));
    auto kept = filter_users(seqs, 5, 0);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].user_id == "len5");

    std::vector<StudentSequence> by_days;
    by_days.push_back(seq_with_days("d6", {0, 1, 2, 3, 4, 5}));
    by_days.push_back(seq_with_days("d7", {0, 1, 2, 3, 4, 5, 6}));
    kept = filter_users(by_days, 0, 7);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].user_id == "d7");

    kept = filter_users(seqs, 0, 0);
    CHECK(kept.size() == 2);
}

TEST_CASE("dropout labels follow the day-window definition") {
    TaskKind task;
    task.task = Task::DP;

    auto out = derive_dropout_labels({seq_with_days("a", {1, 5, 29})}, 30, 7, task);
    REQUIRE(out.size() == 1);
    CHECK(out[0].sequence_label == 1); // relative days {0,4,28}: nothing in [30,37)

    out = derive_dropout_labels({seq_with_days("b", {1, 33})}, 30, 7, task);
    REQUIRE(out.size() == 1);
    CHECK(out[0].sequence_label == 0); // relative day 32 falls inside the window
    CHECK(out[0].interactions.size() == 1);
}

TEST_CASE("dropout labels match a brute-force window scan on random streams") {
    Rng rng(31);
    TaskKind task;
    task.task = Task::DP;
    for (int rep = 0; rep < 100; ++rep) {
        StudentSequence s;
        s.user_id = "r";
        const int n = rng.uniform_int(1, 30);
        int64_t ts = static_cast<int64_t>(rng.uniform_index(kDay));
        for (int i = 0; i < n; ++i) {
            Interaction ev;
            ev.item = 0;
            ev.timestamp_ms = ts;
            s.interactions.push_back(ev);
            ts += static_cast<int64_t>(rng.uniform_index(3 * kDay));
        }
        const int t_h = rng.uniform_int(1, 20), t_p = rng.uniform_int(1, 10);
        std::vector<int64_t> stamps;
        for (const auto& ev : s.interactions) stamps.push_back(ev.timestamp_ms);
        const auto out = derive_dropout_labels({s}, t_h, t_p, task);
        REQUIRE(out.size() == 1);
        CHECK(static_cast<int>(out[0].sequence_label) ==
              oracles::dropout_label_scan(stamps, t_h, t_p));
    }
}

TEST_CASE("conddp stores the first item after the history window") {
    TaskKind task;
    task.task = Task::CondDP;
    StudentSequence s = seq_with_days("a", {0, 1, 31});
    s.interactions[2].item = 42;
    auto out = derive_dropout_labels({s}, 30, 7, task);
    REQUIRE(out.size() == 1);
    CHECK(out[0].sequence_label == 0);
    CHECK(out[0].next_item == 42);
}

TEST_CASE("user split matches the requested ratios") {
    std::vector<StudentSequence> seqs;
    for (int i = 0; i < 100; ++i) seqs.push_back(seq_with_days("u" + std::to_string(i), {0}));
    const Splits sp = split_users(seqs, 0.72, 0.08, 0.20, 5);
    CHECK(sp.train.size() == 72);
    CHECK(sp.valid.size() == 8);
    CHECK(sp.test.size() == 20);

    // user-disjoint cover
    std::set<std::string> seen;
    for (const auto* part : {&sp.train, &sp.valid, &sp.test})
        for (const auto& s : *part) CHECK(seen.insert(s.user_id).second);
    CHECK(seen.size() == 100);
}

TEST_CASE("one user lands in exactly one split") {
    const Splits sp = split_users({seq_with_days("solo", {0})}, 0.72, 0.08, 0.20, 1);
    CHECK(sp.train.size() + sp.valid.size() + sp.test.size() == 1);
}

TEST_CASE("same seed gives an identical partition") {
    std::vector<StudentSequence> seqs;
    for (int i = 0; i < 37; ++i) seqs.push_back(seq_with_days("u" + std::to_string(i), {0}));
    const Splits a = split_users(seqs, 0.72, 0.08, 0.20, 99);
    const Splits b = split_users(seqs, 0.72, 0.08, 0.20, 99);
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].user_id == b.train[i].user_id);
}

TEST_CASE("min-max normalization clamps to [0,1]") {
    FeatureSchema schema;
    schema.n_items = 1;
    schema.extra_cont.push_back({"lag_ms", 0.0, 604'800'000.0});
    schema.extra_cont.push_back({"elapsed_ms", 0.0, 180'000.0});

    StudentSequence s;
    s.user_id = "a";
    Interaction ev;
    ev.item = 0;
    ev.extra_cont = {604'800'000.0, 360'000.0};
    s.interactions.push_back(ev);
    ev.extra_cont = {0.0, 90'000.0};
    s.interactions.push_back(ev);
    std::vector<StudentSequence> seqs{s};
    normalize_continuous(seqs, schema);
    CHECK(seqs[0].interactions[0].extra_cont[0] == 1.0); // at the declared max
    CHECK(seqs[0].interactions[0].extra_cont[1] == 1.0); // clipped to the max
    CHECK(seqs[0].interactions[1].extra_cont[0] == 0.0); // at the min
    CHECK(seqs[0].interactions[1].extra_cont[1] == doctest::Approx(0.5));

    // idempotent on already-normalized data with (0,1) bounds
    FeatureSchema unit;
    unit.n_items = 1;
    unit.extra_cont.push_back({"lag_ms", 0.0, 1.0});
    unit.extra_cont.push_back({"elapsed_ms", 0.0, 1.0});
    auto again = seqs;
    normalize_continuous(again, unit);
    CHECK(again[0].interactions[1].extra_cont[1] == seqs[0].interactions[1].extra_cont[1]);
}

TEST_CASE("config invariants are enforced") {
    DatasetSpec spec;
    spec.path = "x.csv";
    spec.columns.continuous.push_back({"lag", 5.0, 5.0}); // max == min
    CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("config_error"), Error);

    CHECK_THROWS_WITH_AS(split_users({seq_with_days("a", {0})}, 0.5, 0.1, 0.1, 1),
                         doctest::Contains("config_error"), Error);
}

TEST_CASE("dropout labels are invariant to event order within a day") {
    TaskKind task;
    task.task = Task::DP;
    StudentSequence s;
    s.user_id = "a";
    for (int64_t off : {2000, 1000, 3000}) {
        Interaction ev;
        ev.item = 0;
        ev.timestamp_ms = 31 * kDay + off;
        s.interactions.push_back(ev);
    }
    Interaction first;
    first.item = 0;
    first.timestamp_ms = 500;
    s.interactions.insert(s.interactions.begin(), first);
    auto sorted = s;
    std::sort(sorted.interactions.begin(), sorted.interactions.end(),
              [](const Interaction& a, const Interaction& b) { return a.timestamp_ms < b.timestamp_ms; });
    const auto out1 = derive_dropout_labels({s}, 30, 7, task);
    const auto out2 = derive_dropout_labels({sorted}, 30, 7, task);
    CHECK(out1[0].sequence_label == out2[0].sequence_label);
}
