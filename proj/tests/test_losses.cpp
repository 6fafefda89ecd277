#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saicl/error.hpp"
#include "saicl/losses.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace saicl;
using testutil::random_batch;
using testutil::random_tensor;

namespace {

LossConfig sum_cfg(double tau = 0.1, bool normalize = true) {
    LossConfig cfg;
    cfg.tau = tau;
    cfg.normalize_embeddings = normalize;
    cfg.mean_reduction = false; // plain sum over anchors for oracle comparisons
    return cfg;
}

// batch of identical embeddings at every position
std::pair<Var, Var> constant_zr(const SequenceBatch& batch, int64_t d, double value) {
    Tensor z({batch.B, batch.L, d}, value);
    Tensor r({batch.B, batch.L, d}, value);
    return {make_leaf(z, false), make_leaf(r, false)};
}

SequenceBatch grid_batch(int64_t B, int64_t L, std::vector<int8_t> labels,
                         std::vector<int32_t> items) {
    SequenceBatch b;
    b.B = B;
    b.L = L;
    b.task.task = Task::KT;
    for (int64_t i = 0; i < B; ++i) b.user_ids.push_back("u" + std::to_string(i));
    b.valid.assign(B * L, 1);
    b.items = items;
    b.anchor_item = std::move(items);
    b.anchor_label = std::move(labels);
    return b;
}

} // namespace

TEST_CASE("cross entropy closed forms") {
    Tensor labels({1});
    Tensor mask({1}, 1.0);
    labels[0] = 1.0;
    Var p = make_leaf(Tensor({1}, 0.5), false);
    CHECK(cross_entropy(p, labels, mask)->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Var exact = make_leaf(Tensor({1}, 1.0), false);
    CHECK(cross_entropy(exact, labels, mask)->value[0] ==
          doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-9));

    CHECK_THROWS_WITH_AS(cross_entropy(p, labels, Tensor({1}, 0.0)),
                         doctest::Contains("no_labels"), Error);
}

TEST_CASE("cross entropy matches the scalar loop oracle") {
    Rng rng(41);
    const int64_t n = 64;
    std::vector<double> probs(n), labels(n);
    for (int64_t i = 0; i < n; ++i) {
        probs[static_cast<size_t>(i)] = rng.uniform(0.02, 0.98);
        labels[static_cast<size_t>(i)] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    Var pv = make_leaf(Tensor({n}, probs), false);
    const double got = cross_entropy(pv, Tensor({n}, labels), Tensor({n}, 1.0))->value[0];
    CHECK(got == doctest::Approx(oracles::bce_loop(probs, labels)).epsilon(1e-7));
}

TEST_CASE("sample-level contrast closed forms") {
    const LossConfig cfg = sum_cfg(1.0);

    SUBCASE("all four views identical -> 4 ln 3") {
        Tensor z({2, 3}, 1.0);
        const double loss = concat_infonce(make_leaf(z, false), make_leaf(z, false), cfg)->value[0];
        CHECK(loss == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-9));
    }
    SUBCASE("orthogonal users with identical positive pairs") {
        Tensor z1({2, 2});
        z1.at(0, 0) = 1.0; // user 0 on axis x
        z1.at(1, 1) = 1.0; // user 1 on axis y
        const Tensor z2 = z1;
        const double loss =
            concat_infonce(make_leaf(z1, false), make_leaf(z2, false), cfg)->value[0];
        const double per_anchor = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
        CHECK(per_anchor == doctest::Approx(0.5514).epsilon(1e-4));
        CHECK(loss == doctest::Approx(4.0 * per_anchor).epsilon(1e-9));
        CHECK(loss == doctest::Approx(2.2057).epsilon(1e-4));
    }
    SUBCASE("degenerate single-user batch") {
        Tensor z({1, 2}, 1.0);
        CHECK_THROWS_WITH_AS(concat_infonce(make_leaf(z, false), make_leaf(z, false), cfg),
                             doctest::Contains("degenerate_batch"), Error);
    }
}

TEST_CASE("concat infonce matches enumeration on random instances") {
    Rng rng(43);
    for (int rep = 0; rep < 25; ++rep) {
        const int64_t n = rng.uniform_int(2, 6), d = rng.uniform_int(2, 8);
        const double tau = std::vector<double>{0.05, 0.1, 1.0}[rng.uniform_index(3)];
        Tensor z1 = random_tensor({n, d}, rng);
        Tensor z2 = random_tensor({n, d}, rng);
        LossConfig cfg = sum_cfg(tau);
        const double got = concat_infonce(make_leaf(z1, false), make_leaf(z2, false), cfg)->value[0];
        const double want =
            oracles::concat_contrast(z1.vec(), z2.vec(), n, d, tau, true, nullptr);
        CHECK(got == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("concat supcontrast uses label positives") {
    Rng rng(44);
    const int64_t n = 5, d = 4;
    Tensor z1 = random_tensor({n, d}, rng);
    Tensor z2 = random_tensor({n, d}, rng);
    std::vector<int8_t> labels{1, 0, 1, 0, 1};
    LossConfig cfg = sum_cfg(0.1);
    const double got =
        concat_supcontrast(make_leaf(z1, false), make_leaf(z2, false), labels, cfg)->value[0];
    const double want = oracles::concat_contrast(z1.vec(), z2.vec(), n, d, 0.1, true, &labels);
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("milcpc closed forms") {
    SUBCASE("two users, two positions, identical embeddings") {
        SequenceBatch b = grid_batch(2, 2, {1, 1, 1, 1}, {0, 0, 0, 0});
        auto [z, r] = constant_zr(b, 3, 0.7);
        const double loss = milcpc(z, r, b, sum_cfg(0.5))->value[0];
        CHECK(loss == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-9));
    }
    SUBCASE("single user single position has no positives") {
        SequenceBatch b = grid_batch(1, 1, {1}, {0});
        auto [z, r] = constant_zr(b, 3, 0.7);
        int64_t active = -1;
        const double loss = milcpc(z, r, b, sum_cfg(), nullptr, &active)->value[0];
        CHECK(loss == 0.0);
        CHECK(active == 0);
    }
}

TEST_CASE("supcpc closed forms") {
    SUBCASE("all labels equal and embeddings identical") {
        SequenceBatch b = grid_batch(2, 2, {1, 1, 1, 1}, {0, 1, 2, 3});
        auto [z, r] = constant_zr(b, 4, -0.3);
        CHECK(supcpc(z, r, b, sum_cfg(0.2))->value[0] ==
              doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-9));
    }
    SUBCASE("a lone label is skipped") {
        SequenceBatch b = grid_batch(2, 2, {1, 0, 0, 0}, {0, 0, 0, 0});
        Rng rng(45);
        Var z = make_leaf(random_tensor({2, 2, 4}, rng), false);
        Var r = make_leaf(random_tensor({2, 2, 4}, rng), false);
        const double got = supcpc(z, r, b, sum_cfg())->value[0];
        const double want = oracles::interaction_cpc(
            z->value.vec(), r->value.vec(), 2, 2, 4, b.valid, b.anchor_label, b.anchor_item,
            oracles::Rule::SameLabel, 0.1, true, false);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
        // anchor 0 (label 1, no matching candidates) contributes nothing:
        // flipping its embedding leaves only denominator appearances
        SequenceBatch all_zero = b;
        all_zero.anchor_label = {0, 0, 0, 0};
        CHECK(supcpc(z, r, all_zero, sum_cfg())->value[0] > got);
    }
}

TEST_CASE("c_supcpc closed forms") {
    SUBCASE("distinct items empty every conditional positive set") {
        SequenceBatch b = grid_batch(2, 2, {1, 1, 1, 1}, {0, 1, 2, 3});
        auto [z, r] = constant_zr(b, 3, 0.4);
        int64_t active = -1;
        CHECK(c_supcpc(z, r, b, sum_cfg(), nullptr, &active)->value[0] == 0.0);
        CHECK(active == 0);
    }
    SUBCASE("uniform items reduce to supcpc exactly") {
        Rng rng(46);
        SequenceBatch b = grid_batch(2, 3, {1, 0, 1, 0, 1, 0}, {5, 5, 5, 5, 5, 5});
        Var z = make_leaf(random_tensor({2, 3, 4}, rng), false);
        Var r = make_leaf(random_tensor({2, 3, 4}, rng), false);
        CHECK(c_supcpc(z, r, b, sum_cfg())->value[0] ==
              doctest::Approx(supcpc(z, r, b, sum_cfg())->value[0]).epsilon(1e-12));
    }
}

TEST_CASE("interaction losses match index-set enumeration on random instances") {
    Rng rng(47);
    for (int rep = 0; rep < 30; ++rep) {
        const int64_t B = rng.uniform_int(2, 4), L = rng.uniform_int(2, 6),
                      D = rng.uniform_int(2, 8);
        const double tau = std::vector<double>{0.05, 0.1, 1.0}[rng.uniform_index(3)];
        const bool normalize = rng.bernoulli(0.7);
        SequenceBatch b = random_batch(B, L, 6, rng);
        Var z = make_leaf(random_tensor({B, L, D}, rng), false);
        Var r = make_leaf(random_tensor({B, L, D}, rng), false);
        LossConfig cfg = sum_cfg(tau, normalize);

        const double mil = milcpc(z, r, b, cfg)->value[0];
        const double mil_want = oracles::interaction_cpc(
            z->value.vec(), r->value.vec(), B, L, D, b.valid, b.anchor_label, b.anchor_item,
            oracles::Rule::SameUser, tau, normalize, false);
        CHECK(mil == doctest::Approx(mil_want).epsilon(1e-6));

        const double sup = supcpc(z, r, b, cfg)->value[0];
        const double sup_want = oracles::interaction_cpc(
            z->value.vec(), r->value.vec(), B, L, D, b.valid, b.anchor_label, b.anchor_item,
            oracles::Rule::SameLabel, tau, normalize, false);
        CHECK(sup == doctest::Approx(sup_want).epsilon(1e-6));

        const double csup = c_supcpc(z, r, b, cfg)->value[0];
        const double csup_want = oracles::interaction_cpc(
            z->value.vec(), r->value.vec(), B, L, D, b.valid, b.anchor_label, b.anchor_item,
            oracles::Rule::SameLabelItem, tau, normalize, false);
        CHECK(csup == doctest::Approx(csup_want).epsilon(1e-6));

        cfg.future_only_positives = true;
        const double mil_future = milcpc(z, r, b, cfg)->value[0];
        const double mil_future_want = oracles::interaction_cpc(
            z->value.vec(), r->value.vec(), B, L, D, b.valid, b.anchor_label, b.anchor_item,
            oracles::Rule::SameUser, tau, normalize, true);
        CHECK(mil_future == doctest::Approx(mil_future_want).epsilon(1e-6));
    }
}

TEST_CASE("losses are non-negative and user-permutation invariant") {
    Rng rng(48);
    for (int rep = 0; rep < 10; ++rep) {
        const int64_t B = 3, L = 4, D = 5;
        SequenceBatch b = random_batch(B, L, 5, rng);
        Tensor zt = random_tensor({B, L, D}, rng);
        Tensor rt = random_tensor({B, L, D}, rng);
        const LossConfig cfg = sum_cfg();
        const double mil = milcpc(make_leaf(zt, false), make_leaf(rt, false), b, cfg)->value[0];
        const double sup = supcpc(make_leaf(zt, false), make_leaf(rt, false), b, cfg)->value[0];
        CHECK(mil >= 0.0);
        CHECK(sup >= 0.0);

        // permute the user rows
        const std::vector<int64_t> perm{2, 0, 1};
        SequenceBatch pb = b;
        Tensor pz(zt.shape()), pr(rt.shape());
        for (int64_t nb = 0; nb < B; ++nb) {
            const int64_t ob = perm[static_cast<size_t>(nb)];
            pb.user_ids[nb] = b.user_ids[ob];
            for (int64_t t = 0; t < L; ++t) {
                pb.valid[nb * L + t] = b.valid[ob * L + t];
                pb.items[nb * L + t] = b.items[ob * L + t];
                pb.anchor_item[nb * L + t] = b.anchor_item[ob * L + t];
                pb.anchor_label[nb * L + t] = b.anchor_label[ob * L + t];
                for (int64_t d = 0; d < D; ++d) {
                    pz.at(nb, t, d) = zt.at(ob, t, d);
                    pr.at(nb, t, d) = rt.at(ob, t, d);
                }
            }
        }
        const double mil_p = milcpc(make_leaf(pz, false), make_leaf(pr, false), pb, cfg)->value[0];
        CHECK(mil_p == doctest::Approx(mil).epsilon(1e-9));
    }
}

TEST_CASE("appending padding changes no loss bit") {
    Rng rng(49);
    const int64_t B = 3, L = 4, D = 6, L2 = 7;
    SequenceBatch b = random_batch(B, L, 5, rng);
    Tensor zt = random_tensor({B, L, D}, rng);
    Tensor rt = random_tensor({B, L, D}, rng);

    SequenceBatch wide = b;
    wide.L = L2;
    wide.valid.assign(B * L2, 0);
    wide.items.assign(B * L2, 5);
    wide.anchor_item.assign(B * L2, -1);
    wide.anchor_label.assign(B * L2, -1);
    Tensor zw({B, L2, D}), rw({B, L2, D});
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t t = 0; t < L; ++t) {
            wide.valid[bb * L2 + t] = b.valid[bb * L + t];
            wide.items[bb * L2 + t] = b.items[bb * L + t];
            wide.anchor_item[bb * L2 + t] = b.anchor_item[bb * L + t];
            wide.anchor_label[bb * L2 + t] = b.anchor_label[bb * L + t];
            for (int64_t d = 0; d < D; ++d) {
                zw.at(bb, t, d) = zt.at(bb, t, d);
                rw.at(bb, t, d) = rt.at(bb, t, d);
            }
        }
    for (const bool normalize : {true, false}) {
        const LossConfig cfg = sum_cfg(0.1, normalize);
        CHECK(milcpc(make_leaf(zt, false), make_leaf(rt, false), b, cfg)->value[0] ==
              milcpc(make_leaf(zw, false), make_leaf(rw, false), wide, cfg)->value[0]);
        CHECK(supcpc(make_leaf(zt, false), make_leaf(rt, false), b, cfg)->value[0] ==
              supcpc(make_leaf(zw, false), make_leaf(rw, false), wide, cfg)->value[0]);
        CHECK(c_supcpc(make_leaf(zt, false), make_leaf(rt, false), b, cfg)->value[0] ==
              c_supcpc(make_leaf(zw, false), make_leaf(rw, false), wide, cfg)->value[0]);
    }
}

TEST_CASE("normalized losses ignore positive rescaling of either side") {
    Rng rng(50);
    const int64_t B = 2, L = 4, D = 5;
    SequenceBatch b = random_batch(B, L, 4, rng);
    Tensor zt = random_tensor({B, L, D}, rng);
    Tensor rt = random_tensor({B, L, D}, rng);
    Tensor zs = zt, rs = rt;
    zs.scale_(7.25);
    rs.scale_(0.013);
    const LossConfig cfg = sum_cfg();
    const double base = milcpc(make_leaf(zt, false), make_leaf(rt, false), b, cfg)->value[0];
    const double scaled = milcpc(make_leaf(zs, false), make_leaf(rs, false), b, cfg)->value[0];
    CHECK(scaled == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("loss gradients w.r.t. z and r match finite differences") {
    Rng rng(51);
    const int64_t B = 3, L = 4, D = 4; // up to 12 anchors
    SequenceBatch b = random_batch(B, L, 5, rng);
    Tensor zt = random_tensor({B, L, D}, rng);
    Tensor rt = random_tensor({B, L, D}, rng);
    const LossConfig cfg = sum_cfg();

    using LossFn = Var (*)(const Var&, const Var&, const SequenceBatch&, const LossConfig&, Rng*,
                           int64_t*);
    for (LossFn fn : {static_cast<LossFn>(milcpc), static_cast<LossFn>(supcpc),
                      static_cast<LossFn>(c_supcpc)}) {
        auto build = [&]() {
            Var z = make_leaf(zt, true);
            Var r = make_leaf(rt, true);
            return std::pair{fn(z, r, b, cfg, nullptr, nullptr), std::vector<Var>{z, r}};
        };
        const auto res = oracles::check_gradients(build, {{&zt, "z"}, {&rt, "r"}});
        CHECK(res.max_rel < 1e-3);
    }

    Tensor z1 = random_tensor({3, D}, rng);
    Tensor z2 = random_tensor({3, D}, rng);
    auto build_cc = [&]() {
        Var a = make_leaf(z1, true);
        Var c = make_leaf(z2, true);
        return std::pair{concat_infonce(a, c, cfg), std::vector<Var>{a, c}};
    };
    CHECK(oracles::check_gradients(build_cc, {{&z1, "z1"}, {&z2, "z2"}}).max_rel < 1e-3);
}

TEST_CASE("anchor subsampling caps the anchor set but keeps all candidates") {
    Rng rng(52);
    const int64_t B = 4, L = 6, D = 4;
    SequenceBatch b = random_batch(B, L, 5, rng);
    for (auto& v : b.valid) v = 1;
    for (int64_t i = 0; i < B * L; ++i) {
        b.anchor_label[i] = rng.bernoulli(0.5) ? 1 : 0;
        b.items[i] = static_cast<int32_t>(rng.uniform_index(5));
        b.anchor_item[i] = b.items[i];
    }
    LossConfig cfg = sum_cfg();
    cfg.anchor_subsample = 8;
    Rng sub(7);
    int64_t active = 0;
    Var z = make_leaf(random_tensor({B, L, D}, rng), false);
    Var r = make_leaf(random_tensor({B, L, D}, rng), false);
    const double loss = milcpc(z, r, b, cfg, &sub, &active)->value[0];
    CHECK(active == 8);
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
}

TEST_CASE("combined loss composes the configured terms") {
    Rng rng(53);
    const int64_t B = 2, L = 3, D = 4;
    SequenceBatch b = random_batch(B, L, 4, rng);
    Var z = make_leaf(random_tensor({B, L, D}, rng), false);
    Var r = make_leaf(random_tensor({B, L, D}, rng), false);
    Var ce = make_leaf(Tensor::scalar(0.42), false);

    LossConfig cfg = sum_cfg();
    cfg.lambda_self = 0.0;
    Var mil = milcpc(z, r, b, cfg);
    CHECK(combined_loss(ce, &mil, nullptr, nullptr, cfg, ObjectiveMode::Self)->value[0] ==
          ce->value[0]);

    cfg.lambda_self = 0.1;
    const double combo =
        combined_loss(ce, &mil, nullptr, nullptr, cfg, ObjectiveMode::Self)->value[0];
    CHECK(combo - ce->value[0] == doctest::Approx(0.1 * mil->value[0]).epsilon(1e-15));

    // distinct conditioning items zero the conditional term
    SequenceBatch distinct = grid_batch(2, 2, {1, 1, 1, 1}, {0, 1, 2, 3});
    Var z2 = make_leaf(random_tensor({2, 2, D}, rng), false);
    Var r2 = make_leaf(random_tensor({2, 2, D}, rng), false);
    cfg.lambda_sup = 0.7;
    Var sup = supcpc(z2, r2, distinct, cfg);
    Var csup = c_supcpc(z2, r2, distinct, cfg);
    const double sup_combo =
        combined_loss(ce, nullptr, &sup, &csup, cfg, ObjectiveMode::Sup)->value[0];
    CHECK(sup_combo == doctest::Approx(0.42 + 0.7 * sup->value[0]).epsilon(1e-12));
}
