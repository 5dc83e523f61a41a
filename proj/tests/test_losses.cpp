#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "mvcl/errors.hpp"
#include "mvcl/losses.hpp"

using namespace mvcl;
using namespace mvcl::losses;

namespace {

Tensor random_rows(std::size_t rows, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor t({rows, d});
    for (auto& v : t.values()) v = normal(rng);
    return t;
}

double cosine(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    const std::size_t d = a.dim(1);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t z = 0; z < d; ++z) {
        dot += a.at(i, z) * b.at(j, z);
        na += a.at(i, z) * a.at(i, z);
        nb += b.at(j, z) * b.at(j, z);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Brute-force in-batch InfoNCE: anchor i vs all positives, double loop.
double infonce_oracle(const Tensor& anchor, const Tensor& positive, double tau) {
    const std::size_t B = anchor.dim(0);
    double total = 0;
    for (std::size_t i = 0; i < B; ++i) {
        double denom = 0;
        for (std::size_t j = 0; j < B; ++j) denom += std::exp(cosine(anchor, i, positive, j) / tau);
        total += -std::log(std::exp(cosine(anchor, i, positive, i) / tau) / denom);
    }
    return total / static_cast<double>(B);
}

}  // namespace

TEST_CASE("prototypes: singleton class is the normalized embedding") {
    auto h = ag::constant(Tensor({1, 2}, {3.0, 4.0}));
    auto protos = compute_prototypes(h, {2}, 4);
    CHECK(protos.present == std::vector<std::uint8_t>{0, 0, 1, 0});
    REQUIRE(protos.row_of_class[2] >= 0);
    const auto r = static_cast<std::size_t>(protos.row_of_class[2]);
    CHECK(protos.prototypes->value.at(r, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(protos.prototypes->value.at(r, 1) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("prototypes: symmetric pair averages to the diagonal") {
    auto h = ag::constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    auto protos = compute_prototypes(h, {0, 0}, 1);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(protos.prototypes->value.at(0, 0) == doctest::Approx(inv_sqrt2).epsilon(1e-9));
    CHECK(protos.prototypes->value.at(0, 1) == doctest::Approx(inv_sqrt2).epsilon(1e-9));
}

TEST_CASE("prototypes: brute-force mean+normalize oracle") {
    std::mt19937_64 rng(5);
    Tensor h = random_rows(6, 4, rng);
    std::vector<std::int64_t> y{0, 1, 2, 0, 1, 0};
    auto protos = compute_prototypes(ag::constant(h), y, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> mean(4, 0.0);
        std::size_t n = 0;
        for (std::size_t i = 0; i < 6; ++i) {
            if (static_cast<std::size_t>(y[i]) != c) continue;
            ++n;
            for (std::size_t z = 0; z < 4; ++z) mean[z] += h.at(i, z);
        }
        double norm = 0;
        for (auto& v : mean) {
            v /= static_cast<double>(n);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        const auto r = static_cast<std::size_t>(protos.row_of_class[c]);
        double unit = 0;
        for (std::size_t z = 0; z < 4; ++z) {
            CHECK(std::abs(protos.prototypes->value.at(r, z) - mean[z] / norm) < 1e-12);
            unit += protos.prototypes->value.at(r, z) * protos.prototypes->value.at(r, z);
        }
        CHECK(std::abs(std::sqrt(unit) - 1.0) < 1e-9);
    }
}

TEST_CASE("degenerate class mean rejected") {
    auto h = ag::constant(Tensor({2, 2}, {1.0, 1.0, -1.0, -1.0}));
    CHECK_THROWS_AS(compute_prototypes(h, {0, 0}, 1), NumericError);
}

TEST_CASE("prototype loss: uniform similarities give ln C_present") {
    const std::size_t C = 20, d = 4;
    // All prototypes identical: every class similarity equals every other.
    PrototypeSet protos;
    Tensor rows({C, d});
    for (std::size_t c = 0; c < C; ++c) rows.at(c, 0) = 1.0;
    protos.prototypes = ag::constant(rows);
    protos.present.assign(C, 1);
    protos.class_of_row.resize(C);
    protos.row_of_class.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        protos.class_of_row[c] = static_cast<std::int64_t>(c);
        protos.row_of_class[c] = static_cast<std::int64_t>(c);
    }
    auto h = ag::constant(Tensor({2, d}, {0.3, 0.1, 0, 0, -0.2, 0.9, 0, 0}));
    auto loss = prototype_loss(h, {0, 7}, protos, 0.1);
    CHECK(loss->value[0] == doctest::Approx(std::log(20.0)).epsilon(1e-10));
}

TEST_CASE("prototype loss: two-class saturated case") {
    PrototypeSet protos;
    protos.prototypes = ag::constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    protos.present = {1, 1};
    protos.class_of_row = {0, 1};
    protos.row_of_class = {0, 1};
    auto h = ag::constant(Tensor({1, 2}, {1.0, 0.0}));
    auto loss = prototype_loss(h, {0}, protos, 0.1);
    const double want = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
    CHECK(loss->value[0] == doctest::Approx(want).epsilon(1e-9));
    CHECK(loss->value[0] < 1e-4);

    // Own class missing from the prototype set is inconsistent.
    CHECK_THROWS_AS(prototype_loss(h, {1}, [] {
        PrototypeSet p;
        p.prototypes = ag::constant(Tensor({1, 2}, {1.0, 0.0}));
        p.present = {1, 0};
        p.class_of_row = {0};
        p.row_of_class = {0, -1};
        return p;
    }(), 0.1), ValueError);
}

TEST_CASE("prototype loss matches brute-force enumeration") {
    std::mt19937_64 rng(11);
    const std::size_t B = 8, C = 5, d = 4;
    Tensor h = random_rows(B, d, rng);
    std::vector<std::int64_t> y{0, 1, 1, 3, 0, 3, 3, 1};  // classes 2 and 4 absent
    auto hn = ag::constant(h);
    auto protos = compute_prototypes(hn, y, C);
    auto loss = prototype_loss(hn, y, protos, 0.1);

    const Tensor& rc = protos.prototypes->value;
    double want = 0;
    for (std::size_t i = 0; i < B; ++i) {
        double denom = 0, own = 0;
        for (std::size_t r = 0; r < rc.dim(0); ++r) {
            const double s = std::exp(cosine(h, i, rc, r) / 0.1);
            denom += s;
            if (protos.class_of_row[r] == y[i]) own = s;
        }
        want += -std::log(own / denom);
    }
    want /= static_cast<double>(B);
    CHECK(std::abs(loss->value[0] - want) < 1e-10);
}

TEST_CASE("prototype loss gradient flows through prototype construction") {
    std::mt19937_64 rng(13);
    auto h = ag::leaf(random_rows(3, 3, rng), true);
    std::vector<std::int64_t> y{0, 1, 0};
    auto res = mvcl::testing::gradcheck({h}, [&] {
        auto protos = compute_prototypes(h, y, 2);
        return prototype_loss(h, y, protos, 0.5);
    });
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("prototype loss decreases toward the own prototype") {
    // Instance 0 starts far from its class-0 prototype, near class 1.
    Tensor h({4, 3}, {0.1, 0.95, 0.05,
                      0.0, 1.0, 0.1,
                      0.1, 0.9, 0.0,
                      1.0, 0.05, 0.0});
    std::vector<std::int64_t> y{0, 1, 1, 0};
    auto base_protos = compute_prototypes(ag::constant(h), y, 2);
    const Tensor proto_vals = base_protos.prototypes->value;
    const auto own = static_cast<std::size_t>(base_protos.row_of_class[0]);

    // Slerp instance 0 toward its class prototype on the unit sphere.
    double n0 = 0;
    for (std::size_t z = 0; z < 3; ++z) n0 += h.at(0, z) * h.at(0, z);
    n0 = std::sqrt(n0);
    double dot = 0;
    for (std::size_t z = 0; z < 3; ++z) dot += h.at(0, z) / n0 * proto_vals.at(own, z);
    const double omega = std::acos(std::clamp(dot, -1.0, 1.0));

    double prev = prototype_loss(ag::constant(h), y, base_protos, 0.1)->value[0];
    for (int step = 1; step <= 5; ++step) {
        Tensor moved = h;
        const double t = 0.18 * step;
        const double wa = std::sin((1 - t) * omega) / std::sin(omega);
        const double wb = std::sin(t * omega) / std::sin(omega);
        for (std::size_t z = 0; z < 3; ++z) {
            moved.at(0, z) = wa * h.at(0, z) / n0 + wb * proto_vals.at(own, z);
        }
        // Keep the prototype set fixed: evaluate against the original anchors.
        double cur = prototype_loss(ag::constant(moved), y, base_protos, 0.1)->value[0];
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("infonce: orthogonal two-row case") {
    auto a = ag::constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    auto loss = infonce(a, a, 0.1);
    const double want = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
    CHECK(loss->value[0] == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("infonce: identical rows give ln B") {
    Tensor t({4, 3});
    for (std::size_t i = 0; i < 4; ++i) {
        t.at(i, 0) = 0.4;
        t.at(i, 1) = -1.0;
        t.at(i, 2) = 0.2;
    }
    auto loss = infonce(ag::constant(t), ag::constant(t), 0.1);
    CHECK(loss->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-10));
}

TEST_CASE("infonce: brute-force oracle and B=1 short-circuit") {
    std::mt19937_64 rng(19);
    auto anchor = random_rows(6, 8, rng);
    auto positive = random_rows(6, 8, rng);
    auto loss = infonce(ag::constant(anchor), ag::constant(positive), 0.07);
    CHECK(std::abs(loss->value[0] - infonce_oracle(anchor, positive, 0.07)) < 1e-10);

    auto single = infonce(ag::constant(random_rows(1, 4, rng)),
                          ag::constant(random_rows(1, 4, rng)), 0.1);
    CHECK(single->value[0] == 0.0);
}

TEST_CASE("infonce is invariant to a shared rotation") {
    std::mt19937_64 rng(23);
    auto anchor = random_rows(5, 2, rng);
    auto positive = random_rows(5, 2, rng);
    const double base = infonce(ag::constant(anchor), ag::constant(positive), 0.2)->value[0];

    const double th = 0.83;
    auto rotate = [&](const Tensor& t) {
        Tensor r({5, 2});
        for (std::size_t i = 0; i < 5; ++i) {
            r.at(i, 0) = std::cos(th) * t.at(i, 0) - std::sin(th) * t.at(i, 1);
            r.at(i, 1) = std::sin(th) * t.at(i, 0) + std::cos(th) * t.at(i, 1);
        }
        return r;
    };
    const double rotated =
        infonce(ag::constant(rotate(anchor)), ag::constant(rotate(positive)), 0.2)->value[0];
    CHECK(std::abs(base - rotated) < 1e-9);
}

TEST_CASE("multiview stack and total loss identities") {
    std::mt19937_64 rng(29);
    const std::size_t B = 4, d = 6, C = 3;
    RepresentationBundle bundle;
    bundle.text_labeled.h = ag::constant(random_rows(B, d, rng));
    bundle.text_masked.h = ag::constant(random_rows(B, d, rng));
    bundle.visual.h = ag::constant(random_rows(B, d, rng));
    bundle.acoustic.h = ag::constant(random_rows(B, d, rng));
    fusion::FusionOutputs fo;
    fo.h_f = ag::constant(random_rows(B, d, rng));
    auto logits = ag::constant(random_rows(B, C, rng));
    std::vector<std::int64_t> y{0, 2, 1, 2};

    const double tau = 0.1;
    auto mv = multiview_contrastive(bundle, fo, tau);
    CHECK(std::abs(mv.text->value[0] -
                   infonce_oracle(bundle.text_labeled.h->value, bundle.text_masked.h->value, tau)) <
          1e-10);
    CHECK(std::abs(mv.vis->value[0] -
                   infonce_oracle(bundle.text_labeled.h->value, bundle.visual.h->value, tau)) < 1e-10);
    CHECK(std::abs(mv.aud->value[0] -
                   infonce_oracle(bundle.text_labeled.h->value, bundle.acoustic.h->value, tau)) <
          1e-10);
    CHECK(std::abs(mv.fine->value[0] -
                   infonce_oracle(bundle.text_labeled.h->value, fo.h_f->value, tau)) < 1e-10);
    const double sum4 =
        mv.text->value[0] + mv.vis->value[0] + mv.aud->value[0] + mv.fine->value[0];
    CHECK(std::abs(mv.sum->value[0] - sum4) < 1e-12);

    TemperatureConfig temp{tau};
    auto full = total_loss(logits, y, bundle, fo, temp, AblationMask{true, true, true});
    CHECK(std::abs(full.values.l_contrastive -
                   (full.values.l_text + full.values.l_vis + full.values.l_aud +
                    full.values.l_fine)) < 1e-12);
    CHECK(std::abs(full.values.total -
                   (full.values.l_cls + full.values.l_proto + full.values.l_contrastive)) < 1e-12);
    CHECK(full.values.total >= full.values.l_cls);

    auto cls_only = total_loss(logits, y, bundle, fo, temp, AblationMask{true, false, false});
    CHECK(cls_only.total->value[0] == cls_only.values.l_cls);
    CHECK(cls_only.values.l_cls == full.values.l_cls);

    auto no_proto = total_loss(logits, y, bundle, fo, temp, AblationMask{true, true, false});
    CHECK(std::abs(no_proto.total->value[0] -
                   (no_proto.values.l_cls + no_proto.values.l_contrastive)) < 1e-12);

    CHECK_THROWS_AS(total_loss(logits, y, bundle, fo, temp, AblationMask{false, false, false}),
                    ConfigError);
}

TEST_CASE("per-view prototype option averages the four view losses") {
    std::mt19937_64 rng(31);
    const std::size_t B = 5, d = 4, C = 3;
    RepresentationBundle bundle;
    bundle.text_labeled.h = ag::constant(random_rows(B, d, rng));
    bundle.text_masked.h = ag::constant(random_rows(B, d, rng));
    bundle.visual.h = ag::constant(random_rows(B, d, rng));
    bundle.acoustic.h = ag::constant(random_rows(B, d, rng));
    fusion::FusionOutputs fo;
    fo.h_f = ag::constant(random_rows(B, d, rng));
    auto logits = ag::constant(random_rows(B, C, rng));
    std::vector<std::int64_t> y{0, 1, 2, 1, 0};

    TemperatureConfig temp{0.1};
    auto per_view = total_loss(logits, y, bundle, fo, temp, AblationMask{false, false, true}, true);
    double want = 0;
    for (const auto& h : {bundle.acoustic.h, bundle.visual.h, bundle.text_masked.h,
                          bundle.text_labeled.h}) {
        auto protos = compute_prototypes(h, y, C);
        want += prototype_loss(h, y, protos, 0.1)->value[0];
    }
    CHECK(std::abs(per_view.values.l_proto - 0.25 * want) < 1e-12);
}
