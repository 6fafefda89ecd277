#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "saicl/augment.hpp"
#include "support/testutil.hpp"

using namespace saicl;
using testutil::make_sequence;

namespace {
FeatureSchema schema_q(int32_t q) {
    FeatureSchema s;
    s.n_items = q;
    s.has_correct = true;
    return s;
}
} // namespace

TEST_CASE("all-zero gammas are the identity") {
    const auto seq = make_sequence("u", {0, 1, 2, 3}, {1, 0, 1, 0});
    Rng rng(1);
    const auto out = augment(seq, AugmentConfig{}, schema_q(5), rng);
    REQUIRE(out.interactions.size() == seq.interactions.size());
    for (size_t i = 0; i < out.interactions.size(); ++i) {
        CHECK(out.interactions[i].item == seq.interactions[i].item);
        CHECK(out.interactions[i].correct == seq.interactions[i].correct);
    }
}

TEST_CASE("crop keeps a contiguous half") {
    const auto seq = make_sequence("u", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9},
                                   {1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    AugmentConfig cfg;
    cfg.gamma_crop = 0.5;
    Rng rng(2);
    const auto out = augment(seq, cfg, schema_q(10), rng);
    REQUIRE(out.interactions.size() == 5);
    const int32_t first = out.interactions[0].item;
    for (size_t i = 0; i < 5; ++i) CHECK(out.interactions[i].item == first + static_cast<int32_t>(i));
}

TEST_CASE("full permutation preserves the item multiset") {
    const auto seq = make_sequence("u", {3, 1, 4, 1, 5, 9, 2, 6}, {1, 0, 1, 0, 1, 0, 1, 0});
    AugmentConfig cfg;
    cfg.gamma_permute = 1.0;
    Rng rng(3);
    const auto out = augment(seq, cfg, schema_q(10), rng);
    std::vector<int32_t> a, b;
    for (const auto& ev : seq.interactions) a.push_back(ev.item);
    for (const auto& ev : out.interactions) b.push_back(ev.item);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(out.user_id == seq.user_id);
    // timestamps keep their slots, so ordering still holds
    for (size_t i = 1; i < out.interactions.size(); ++i)
        CHECK(out.interactions[i].timestamp_ms >= out.interactions[i - 1].timestamp_ms);
}

TEST_CASE("mask tokens appear only where masking applied") {
    const auto seq = make_sequence("u", {0, 1, 2, 3, 4, 5}, {1, 1, 1, 1, 1, 1});
    AugmentConfig cfg;
    cfg.gamma_mask = 0.5;
    Rng rng(4);
    const FeatureSchema schema = schema_q(6);
    const auto out = augment(seq, cfg, schema, rng);
    CHECK(out.interactions.size() == seq.interactions.size());
    int masked = 0;
    for (size_t i = 0; i < out.interactions.size(); ++i) {
        if (out.interactions[i].item == schema.item_mask()) {
            ++masked;
            CHECK(out.interactions[i].correct == -2);
        } else {
            CHECK(out.interactions[i].item == seq.interactions[i].item);
        }
    }
    CHECK(masked > 0);
}

TEST_CASE("replacement keeps items inside the vocabulary") {
    const auto seq = make_sequence("u", {0, 0, 0, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 1, 1, 1, 1});
    AugmentConfig cfg;
    cfg.gamma_replace = 1.0;
    Rng rng(5);
    const auto out = augment(seq, cfg, schema_q(4), rng);
    CHECK(out.interactions.size() <= seq.interactions.size());
    for (const auto& ev : out.interactions) {
        CHECK(ev.item >= 0);
        CHECK(ev.item < 4);
    }
}
