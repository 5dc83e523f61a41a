#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mvcl/errors.hpp"
#include "mvcl/metrics.hpp"

using namespace mvcl;
using namespace mvcl::metrics;

namespace {

// Independent recomputation straight from the confusion counts.
Report naive_report(const std::vector<std::int64_t>& preds, const std::vector<std::int64_t>& labels,
                    std::size_t C) {
    Report r;
    r.per_class_precision.assign(C, 0);
    r.per_class_recall.assign(C, 0);
    r.per_class_f1.assign(C, 0);
    r.support.assign(C, 0);
    std::vector<std::size_t> tp(C, 0), fp(C, 0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ++r.support[static_cast<std::size_t>(labels[i])];
        if (preds[i] == labels[i]) {
            ++hits;
            ++tp[static_cast<std::size_t>(preds[i])];
        } else {
            ++fp[static_cast<std::size_t>(preds[i])];
        }
    }
    r.acc = static_cast<double>(hits) / static_cast<double>(preds.size());
    std::size_t supported = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const double predicted = static_cast<double>(tp[c] + fp[c]);
        const double p = predicted > 0 ? static_cast<double>(tp[c]) / predicted : 0.0;
        const double rec = r.support[c] > 0
                               ? static_cast<double>(tp[c]) / static_cast<double>(r.support[c])
                               : 0.0;
        const double f1 = (p + rec) > 0 ? 2 * p * rec / (p + rec) : 0.0;
        r.per_class_precision[c] = p;
        r.per_class_recall[c] = rec;
        r.per_class_f1[c] = f1;
        const double w = static_cast<double>(r.support[c]) / static_cast<double>(preds.size());
        r.weighted_f1 += w * f1;
        r.weighted_precision += w * p;
        if (r.support[c] > 0) {
            r.macro_recall += rec;
            ++supported;
        }
    }
    r.macro_recall /= static_cast<double>(supported);
    return r;
}

}  // namespace

TEST_CASE("perfect predictor scores 1 everywhere") {
    std::vector<std::int64_t> y{0, 1, 2, 1, 0, 2};
    auto r = classification_report(y, y, 3);
    CHECK(r.acc == 1.0);
    CHECK(r.weighted_f1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.weighted_precision == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.macro_recall == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hand-computed 2x2 example") {
    std::vector<std::int64_t> preds{0, 0, 1, 1}, labels{0, 1, 1, 1};
    auto r = classification_report(preds, labels, 2);
    CHECK(r.acc == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(r.weighted_f1 == doctest::Approx(1.0 / 6 + 0.6).epsilon(1e-9));       // 0.76667
    CHECK(r.weighted_precision == doctest::Approx(0.875).epsilon(1e-12));
    CHECK(r.macro_recall == doctest::Approx(5.0 / 6).epsilon(1e-9));            // 0.83333
}

TEST_CASE("zero-support class excluded from weighting and macro recall") {
    // Class 2 never appears as a true label.
    std::vector<std::int64_t> preds{0, 2, 1}, labels{0, 0, 1};
    auto r = classification_report(preds, labels, 3);
    CHECK(r.support[2] == 0);
    auto base = classification_report({0, 1, 1}, {0, 0, 1}, 2);  // same confusion, no class 2
    // Predicting into class 2 hurts class 0's recall but the absent class
    // itself contributes nothing.
    CHECK(r.macro_recall == doctest::Approx((0.5 + 1.0) / 2).epsilon(1e-12));
    CHECK(base.macro_recall == doctest::Approx((0.5 + 1.0) / 2).epsilon(1e-12));
}

TEST_CASE("relabeling invariance") {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::int64_t> cls(0, 3);
    std::vector<std::int64_t> preds(60), labels(60);
    for (auto& p : preds) p = cls(rng);
    for (auto& y : labels) y = cls(rng);
    auto r = classification_report(preds, labels, 4);

    std::vector<std::int64_t> perm{2, 0, 3, 1};
    auto pp = preds, pl = labels;
    for (auto& p : pp) p = perm[static_cast<std::size_t>(p)];
    for (auto& y : pl) y = perm[static_cast<std::size_t>(y)];
    auto r2 = classification_report(pp, pl, 4);
    CHECK(r2.acc == doctest::Approx(r.acc).epsilon(1e-15));
    CHECK(r2.weighted_f1 == doctest::Approx(r.weighted_f1).epsilon(1e-12));
    CHECK(r2.weighted_precision == doctest::Approx(r.weighted_precision).epsilon(1e-12));
    CHECK(r2.macro_recall == doctest::Approx(r.macro_recall).epsilon(1e-12));
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(r2.per_class_f1[static_cast<std::size_t>(perm[c])] ==
              doctest::Approx(r.per_class_f1[c]).epsilon(1e-12));
    }
}

TEST_CASE("randomized agreement with independent recomputation") {
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<std::size_t> nc(2, 6), len(1, 40);
        const std::size_t C = nc(rng), n = len(rng);
        std::uniform_int_distribution<std::int64_t> cls(0, static_cast<std::int64_t>(C) - 1);
        std::vector<std::int64_t> preds(n), labels(n);
        for (auto& p : preds) p = cls(rng);
        for (auto& y : labels) y = cls(rng);
        auto got = classification_report(preds, labels, C);
        auto want = naive_report(preds, labels, C);
        CHECK(std::abs(got.acc - want.acc) < 1e-12);
        CHECK(std::abs(got.weighted_f1 - want.weighted_f1) < 1e-12);
        CHECK(std::abs(got.weighted_precision - want.weighted_precision) < 1e-12);
        CHECK(std::abs(got.macro_recall - want.macro_recall) < 1e-12);
        // Weighted F1 equals the support-weighted mean of per-class F1.
        double wf1 = 0;
        for (std::size_t c = 0; c < C; ++c) {
            wf1 += got.per_class_f1[c] * static_cast<double>(got.support[c]) /
                   static_cast<double>(n);
        }
        CHECK(std::abs(got.weighted_f1 - wf1) < 1e-12);
    }
}

TEST_CASE("length mismatch rejected") {
    CHECK_THROWS_AS(classification_report({0, 1}, {0}, 2), ValueError);
    CHECK_THROWS_AS(classification_report({}, {}, 2), ValueError);
}

TEST_CASE("silhouette: tight far-apart clusters score > 0.9") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> jitter(0.0, 0.001);
    const std::size_t per = 10;
    Tensor emb({2 * per, 3});
    std::vector<std::int64_t> labels(2 * per);
    for (std::size_t i = 0; i < per; ++i) {
        emb.at(i, 0) = 1.0 + jitter(rng);
        emb.at(i, 1) = jitter(rng);
        emb.at(i, 2) = jitter(rng);
        labels[i] = 0;
        emb.at(per + i, 0) = jitter(rng);
        emb.at(per + i, 1) = -1.0 + jitter(rng);
        emb.at(per + i, 2) = jitter(rng);
        labels[per + i] = 1;
    }
    CHECK(silhouette(emb, labels) > 0.9);
}

TEST_CASE("silhouette: permuted labels score near zero") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = 40;
    Tensor emb({n, 4});
    for (auto& v : emb.values()) v = normal(rng);
    std::vector<std::int64_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int64_t>(i % 2);
    for (int p = 0; p < 20; ++p) {
        std::shuffle(labels.begin(), labels.end(), rng);
        CHECK(std::abs(silhouette(emb, labels)) < 0.1);
    }
}

TEST_CASE("silhouette errors and degenerate cases") {
    Tensor one_class({4, 2}, {1, 0, 0, 1, 1, 1, 0.5, 0.5});
    CHECK_THROWS_AS(silhouette(one_class, {0, 0, 0, 0}), ValueError);
    Tensor tiny({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_AS(silhouette(tiny, {0, 1}), ValueError);
}
