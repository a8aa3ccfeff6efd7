// Loss functions: elementwise regression losses, the two-branch loss, and
// the permutation-invariant ADPIT loss, each with gradient checks.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "seld3d/codec.hpp"
#include "seld3d/losses.hpp"
#include "seld3d/rng.hpp"

using namespace seld3d;

namespace {

TensorD scalar_tensor(double v) {
    TensorD t({1});
    t[0] = v;
    return t;
}

// random prediction kept a safe margin away from the targets so the MAE/MAPE
// kinks never sit inside a finite-difference step
TensorD jittered(const TensorD& target, Rng& rng, double lo, double hi) {
    TensorD out(target.shape);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double off = rng.uniform(lo, hi);
        out[i] = target[i] + (rng.uniform() < 0.5 ? -off : off);
    }
    return out;
}

// Independent ADPIT reference: per cell, enumerate permutations with
// std::next_permutation and take the minimum of the track-averaged loss.
double adpit_reference(const TensorD& pred, const TensorD& targets, LossKind kind,
                       double dist_weight) {
    const int classes = static_cast<int>(pred.dim(1));
    const int frames = static_cast<int>(pred.dim(2));
    double total = 0.0;
    for (int c = 0; c < classes; ++c)
        for (int t = 0; t < frames; ++t) {
            std::vector<int> perm = {0, 1, 2};
            double best = std::numeric_limits<double>::infinity();
            do {
                double acc = 0.0;
                for (int n = 0; n < 3; ++n) {
                    double s = 0.0;
                    for (int j = 0; j < 4; ++j) {
                        const double d = pred.at(n, c, t, j) - targets.at(perm[n], c, t, j);
                        double term = kind == LossKind::MSE ? d * d : std::abs(d);
                        if (j == 3) term *= dist_weight;
                        s += term;
                    }
                    acc += s / 4.0;
                }
                best = std::min(best, acc / 3.0);
            } while (std::next_permutation(perm.begin(), perm.end()));
            total += best;
        }
    return total / (static_cast<double>(classes) * frames);
}

TensorD random_adpit_tensor(Rng& rng, int classes, int frames) {
    TensorD t({3, static_cast<std::size_t>(classes), static_cast<std::size_t>(frames), 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.5, 1.5);
    return t;
}

} // namespace

TEST_CASE("loss kind names round trip") {
    for (LossKind k : {LossKind::MSE, LossKind::MAE, LossKind::MSPE, LossKind::MAPE})
        CHECK(parse_loss_kind(loss_kind_name(k)) == k);
    CHECK_THROWS_AS(parse_loss_kind("rmse"), std::invalid_argument);
}

TEST_CASE("elementwise losses match hand values") {
    // single element: prediction 1 against target 2
    const TensorD p = scalar_tensor(1.0), y = scalar_tensor(2.0);
    CHECK(elementwise_loss(LossKind::MSE, p, y).value == Catch::Approx(1.0));
    CHECK(elementwise_loss(LossKind::MAE, p, y).value == Catch::Approx(1.0));
    CHECK(elementwise_loss(LossKind::MSPE, p, y).value == Catch::Approx(0.25));
    CHECK(elementwise_loss(LossKind::MAPE, p, y).value == Catch::Approx(0.5));

    // two elements: predictions (1, 4) against targets (2, 2)
    TensorD p2({2}), y2({2});
    p2[0] = 1.0;
    p2[1] = 4.0;
    y2.fill(2.0);
    CHECK(elementwise_loss(LossKind::MSE, p2, y2).value == Catch::Approx(2.5));
    CHECK(elementwise_loss(LossKind::MAE, p2, y2).value == Catch::Approx(1.5));
    CHECK(elementwise_loss(LossKind::MSPE, p2, y2).value == Catch::Approx(0.625));
    CHECK(elementwise_loss(LossKind::MAPE, p2, y2).value == Catch::Approx(0.75));
}

TEST_CASE("relative losses are scale invariant, absolute ones are not") {
    Rng rng(81);
    TensorD y({16});
    for (auto& v : y.data) v = rng.uniform(0.5, 5.0);
    TensorD p = jittered(y, rng, 0.05, 0.4);

    const double mse = elementwise_loss(LossKind::MSE, p, y).value;
    const double mae = elementwise_loss(LossKind::MAE, p, y).value;
    const double mspe = elementwise_loss(LossKind::MSPE, p, y).value;
    const double mape = elementwise_loss(LossKind::MAPE, p, y).value;

    for (double lambda : {0.5, 2.0, 10.0}) {
        TensorD ps(p.shape), ys(y.shape);
        for (std::size_t i = 0; i < p.size(); ++i) {
            ps[i] = lambda * p[i];
            ys[i] = lambda * y[i];
        }
        CHECK(std::abs(elementwise_loss(LossKind::MSPE, ps, ys).value - mspe) < 1e-12);
        CHECK(std::abs(elementwise_loss(LossKind::MAPE, ps, ys).value - mape) < 1e-12);
        CHECK(elementwise_loss(LossKind::MSE, ps, ys).value ==
              Catch::Approx(lambda * lambda * mse).epsilon(1e-12));
        CHECK(elementwise_loss(LossKind::MAE, ps, ys).value ==
              Catch::Approx(lambda * mae).epsilon(1e-12));
    }
}

TEST_CASE("elementwise loss gradients pass a finite-difference check") {
    Rng rng(83);
    TensorD y({12});
    for (auto& v : y.data) v = rng.uniform(0.5, 4.0);
    const TensorD p = jittered(y, rng, 0.02, 0.5);

    for (LossKind kind : {LossKind::MSE, LossKind::MAE, LossKind::MSPE, LossKind::MAPE}) {
        const double err = grad_check(
            [&](const TensorD& x) { return elementwise_loss(kind, x, y); }, p);
        INFO("kind " << loss_kind_name(kind));
        CHECK(err < 1e-5);
    }
}

TEST_CASE("relative losses reject non-positive targets") {
    const TensorD p = scalar_tensor(1.0);
    CHECK_THROWS_AS(elementwise_loss(LossKind::MSPE, p, scalar_tensor(0.0)),
                    ZeroTargetDenominator);
    CHECK_THROWS_AS(elementwise_loss(LossKind::MAPE, p, scalar_tensor(-2.0)),
                    ZeroTargetDenominator);
    CHECK_NOTHROW(elementwise_loss(LossKind::MSE, p, scalar_tensor(0.0)));

    TensorD q({2});
    CHECK_THROWS_AS(elementwise_loss(LossKind::MSE, p, q), ShapeMismatch);
}

TEST_CASE("two-branch loss composes the ACCDOA and distance terms") {
    // one class, one frame, hand-computed
    TensorD pa({3, 1, 1}), ya({3, 1, 1}), pd({1, 1}), yd({1, 1});
    pa[0] = 0.1;
    pa[1] = 0.2;
    pa[2] = 0.3;
    ya[0] = 0.4;
    ya[1] = 0.6;
    ya[2] = 0.9;
    pd[0] = 2.0;
    yd[0] = 1.0;
    const double seld = (0.09 + 0.16 + 0.36) / 3.0;

    CHECK(mt_loss(pa, pd, ya, yd, LossKind::MSE).value == Catch::Approx(seld + 1.0));
    CHECK(mt_loss(pa, pd, ya, yd, LossKind::MAE).value == Catch::Approx(seld + 1.0));
    CHECK(mt_loss(pa, pd, ya, yd, LossKind::MAPE).value == Catch::Approx(seld + 1.0));
    CHECK(mt_loss(pa, pd, ya, yd, LossKind::MSPE).value == Catch::Approx(seld + 1.0));

    // with an inactive distance target the relative kinds skip the cell
    yd[0] = 0.0;
    CHECK(mt_loss(pa, pd, ya, yd, LossKind::MSPE).value == Catch::Approx(seld));
    const auto masked = mt_loss(pa, pd, ya, yd, LossKind::MAPE);
    CHECK(masked.dist_grad[0] == 0.0);
    // ...while the absolute kinds keep pulling the prediction toward zero
    CHECK(mt_loss(pa, pd, ya, yd, LossKind::MSE).value == Catch::Approx(seld + 4.0));
}

TEST_CASE("two-branch loss gradients pass a finite-difference check") {
    Rng rng(87);
    TensorD ya({3, 4, 6}), yd({4, 6});
    for (auto& v : ya.data) v = rng.uniform(-0.8, 0.8);
    for (auto& v : yd.data) v = rng.uniform(0.5, 5.0);
    const TensorD pa = jittered(ya, rng, 0.02, 0.4);
    const TensorD pd = jittered(yd, rng, 0.02, 0.4);

    for (LossKind kind : {LossKind::MSE, LossKind::MAE, LossKind::MSPE, LossKind::MAPE}) {
        INFO("kind " << loss_kind_name(kind));
        const double acc_err = grad_check(
            [&](const TensorD& x) {
                auto r = mt_loss(x, pd, ya, yd, kind);
                return LossResult{r.value, r.accdoa_grad};
            },
            pa);
        CHECK(acc_err < 1e-5);
        const double dist_err = grad_check(
            [&](const TensorD& x) {
                auto r = mt_loss(pa, x, ya, yd, kind);
                return LossResult{r.value, r.dist_grad};
            },
            pd);
        CHECK(dist_err < 1e-5);
    }
}

TEST_CASE("adpit loss agrees with a brute-force permutation search") {
    Rng rng(91);
    for (int trial = 0; trial < 40; ++trial) {
        const TensorD targets = random_adpit_tensor(rng, 5, 7);
        const TensorD pred = random_adpit_tensor(rng, 5, 7);
        for (LossKind kind : {LossKind::MSE, LossKind::MAE}) {
            AdpitConfig cfg;
            cfg.base_kind = kind;
            const double expect = adpit_reference(pred, targets, kind, cfg.dist_weight);
            const double got = adpit_loss(pred, targets, cfg).value;
            CHECK(got == Catch::Approx(expect).epsilon(1e-13));
        }
    }
}

TEST_CASE("adpit loss is zero when tracks are permuted") {
    Rng rng(93);
    std::vector<EventRecord> events;
    for (int i = 0; i < 12; ++i) {
        EventRecord e;
        e.frame = static_cast<int>(rng.uniform_index(10));
        e.class_id = static_cast<int>(rng.uniform_index(4));
        e.track_id = static_cast<int>(rng.uniform_index(3));
        e.azimuth = rng.uniform(-180.0, 180.0);
        e.elevation = rng.uniform(-85.0, 85.0);
        e.distance = rng.uniform(0.5, 5.0);
        bool dup = false;
        for (const auto& o : events)
            dup |= o.frame == e.frame && o.class_id == e.class_id && o.track_id == e.track_id;
        if (!dup) events.push_back(e);
    }
    const TensorD targets = adpit_targets<double>(events, 10);

    // permute the track slots independently in every cell
    TensorD pred = targets;
    for (int c = 0; c < kNumClasses; ++c)
        for (int t = 0; t < 10; ++t) {
            const auto& perm = kTrackPerms[rng.uniform_index(6)];
            for (int n = 0; n < 3; ++n)
                for (int j = 0; j < 4; ++j)
                    pred.at(n, c, t, j) = targets.at(perm[n], c, t, j);
        }

    for (LossKind kind : {LossKind::MSE, LossKind::MAE}) {
        AdpitConfig cfg;
        cfg.base_kind = kind;
        CHECK(adpit_loss(pred, targets, cfg).value == 0.0);
    }
}

TEST_CASE("adpit gradient follows the winning permutation") {
    Rng rng(97);
    TensorD targets = random_adpit_tensor(rng, 3, 4);
    TensorD pred = random_adpit_tensor(rng, 3, 4);
    for (LossKind kind : {LossKind::MSE, LossKind::MAE}) {
        AdpitConfig cfg;
        cfg.base_kind = kind;
        cfg.dist_weight = 0.7;
        const double err = grad_check(
            [&](const TensorD& x) { return adpit_loss(x, targets, cfg); }, pred);
        INFO("kind " << loss_kind_name(kind));
        CHECK(err < 1e-5);
    }
}

TEST_CASE("adpit permutation ties resolve to the lowest index") {
    // Two identical inactive/active target pairs make permutations 0 and 2
    // tie exactly; the gradient must follow the identity permutation, which
    // pairs prediction track 0 with the inactive slot.
    TensorD targets({3, 1, 1, 4});
    targets.at(1, 0, 0, 0) = 2.0;   // slot 1 active at +2
    targets.at(2, 0, 0, 0) = 9.0;   // slot 2 far away
    TensorD pred({3, 1, 1, 4});
    pred.at(0, 0, 0, 0) = 1.0;
    pred.at(1, 0, 0, 0) = 1.0;
    pred.at(2, 0, 0, 0) = 9.0;

    AdpitConfig cfg;
    cfg.base_kind = LossKind::MAE;
    const auto res = adpit_loss(pred, targets, cfg);
    // |1-0| + |1-2| either way -> tied; identity must win
    CHECK(res.grad.at(0, 0, 0, 0) > 0.0);
    CHECK(res.grad.at(1, 0, 0, 0) < 0.0);
}

TEST_CASE("adpit distance weight scales only the distance term") {
    TensorD targets({3, 1, 1, 4});
    TensorD pred = targets;
    pred.at(0, 0, 0, 3) = 2.0;  // distance-only error
    AdpitConfig cfg;
    const double base = adpit_loss(pred, targets, cfg).value;
    cfg.dist_weight = 2.0;
    CHECK(adpit_loss(pred, targets, cfg).value == Catch::Approx(2.0 * base));

    pred.at(0, 0, 0, 0) = 1.0;  // add a DOA error; that part must not scale
    cfg.dist_weight = 1.0;
    const double mixed = adpit_loss(pred, targets, cfg).value;
    cfg.dist_weight = 2.0;
    CHECK(adpit_loss(pred, targets, cfg).value == Catch::Approx(mixed + base));
}

TEST_CASE("adpit loss validates its inputs") {
    TensorD ok({3, 2, 2, 4});
    TensorD wrong_tracks({2, 2, 2, 4});
    CHECK_THROWS_AS(adpit_loss(wrong_tracks, wrong_tracks), BadTrackCount);
    TensorD wrong_rank({3, 2, 2});
    CHECK_THROWS_AS(adpit_loss(wrong_rank, wrong_rank), ShapeMismatch);
    TensorD other({3, 2, 3, 4});
    CHECK_THROWS_AS(adpit_loss(ok, other), ShapeMismatch);

    AdpitConfig cfg;
    cfg.base_kind = LossKind::MSPE;
    CHECK_THROWS_AS(adpit_loss(ok, ok, cfg), std::invalid_argument);
}
