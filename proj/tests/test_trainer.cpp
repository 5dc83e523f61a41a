#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "mvcl/config.hpp"
#include "mvcl/errors.hpp"
#include "mvcl/trainer.hpp"

using namespace mvcl;

namespace {

data::Dataset tiny_dataset(std::uint64_t seed = 0) {
    data::DatasetSpec spec;
    spec.num_classes = 3;
    spec.train_size = 36;
    spec.val_size = 9;
    spec.test_size = 9;
    spec.text_len = 6;
    spec.kv_len = 4;
    spec.d_v = 4;
    spec.d_a = 4;
    spec.vocab_size = 40;
    spec.latent_dim = 6;
    spec.seed = seed;
    return data::generate(spec);
}

TrainConfig tiny_config(const data::Dataset& ds) {
    TrainConfig cfg;
    cfg.batch_size = 12;
    cfg.max_epochs = 3;
    cfg.patience = 10;
    cfg.model.d_model = 8;
    cfg.model.heads = 2;
    cfg.model.n_enc_blocks = 1;
    cfg.model.n_coarse_blocks = 1;
    cfg.model.vocab_size = ds.spec.vocab_size;
    cfg.model.d_v = ds.spec.d_v;
    cfg.model.d_a = ds.spec.d_a;
    cfg.model.num_classes = ds.spec.num_classes;
    return cfg;
}

std::string param_bytes(const std::map<std::string, Tensor>& params) {
    std::ostringstream os;
    for (const auto& [name, t] : params) {
        os << name << ':';
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    return os.str();
}

}  // namespace

TEST_CASE("adamw: zero gradient with zero decay leaves weights alone") {
    Params params;
    params["w"] = ag::leaf(Tensor({2}, {1.5, -2.0}), true);
    AdamW opt({.lr = 0.1, .weight_decay = 0.0});
    opt.step(params);
    CHECK(params["w"]->value.values() == std::vector<double>{1.5, -2.0});
}

TEST_CASE("adamw: first bias-corrected step moves by about lr") {
    Params params;
    auto w = ag::leaf(Tensor({1}, {1.0}), true);
    params["w"] = w;
    w->ensure_grad();
    w->grad[0] = 1.0;
    AdamW opt({.lr = 0.1, .weight_decay = 0.0});
    opt.step(params);
    CHECK(w->value[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: decoupled decay shrinks zero-gradient weights geometrically") {
    Params params;
    auto w = ag::leaf(Tensor({1}, {2.0}), true);
    params["w"] = w;
    AdamW opt({.lr = 0.01, .weight_decay = 0.2});
    opt.step(params);
    CHECK(w->value[0] == doctest::Approx(2.0 * (1 - 0.01 * 0.2)).epsilon(1e-12));
    opt.step(params);
    CHECK(w->value[0] == doctest::Approx(2.0 * std::pow(1 - 0.01 * 0.2, 2)).epsilon(1e-12));
}

TEST_CASE("adamw: NaN gradient aborts naming the parameter") {
    Params params;
    auto w = ag::leaf(Tensor({1}, {1.0}), true);
    params["bad.weight"] = w;
    w->ensure_grad();
    w->grad[0] = std::numeric_limits<double>::quiet_NaN();
    AdamW opt({});
    try {
        opt.step(params);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("bad.weight") != std::string::npos);
    }
}

TEST_CASE("patience=0 stops after exactly one epoch") {
    auto ds = tiny_dataset();
    auto cfg = tiny_config(ds);
    cfg.max_epochs = 50;
    cfg.patience = 0;
    Trainer trainer(cfg, ds);
    auto result = trainer.run();
    CHECK(result.epochs_run == 1);
}

TEST_CASE("identical runs produce bitwise-identical traces") {
    auto ds = tiny_dataset();
    auto cfg = tiny_config(ds);
    std::ostringstream log1, log2;
    Trainer t1(cfg, ds), t2(cfg, ds);
    auto r1 = t1.run(&log1);
    auto r2 = t2.run(&log2);
    CHECK(log1.str() == log2.str());
    CHECK(r1.best_wf1 == r2.best_wf1);
    CHECK(param_bytes(r1.best_params) == param_bytes(r2.best_params));
    for (std::size_t e = 0; e < r1.epochs.size(); ++e) {
        CHECK(r1.epochs[e].val_wf1 == r2.epochs[e].val_wf1);
        CHECK(r1.epochs[e].mean_loss.total == r2.epochs[e].mean_loss.total);
    }
}

TEST_CASE("lr=0 freezes validation WF1") {
    auto ds = tiny_dataset();
    auto cfg = tiny_config(ds);
    cfg.opt.lr = 0.0;
    cfg.opt.weight_decay = 0.0;
    cfg.max_epochs = 3;
    Trainer trainer(cfg, ds);
    auto result = trainer.run();
    REQUIRE(result.epochs.size() >= 2);
    for (std::size_t e = 1; e < result.epochs.size(); ++e) {
        CHECK(result.epochs[e].val_wf1 == result.epochs[0].val_wf1);
    }
}

TEST_CASE("checkpoint round-trip resumes bitwise") {
    auto ds = tiny_dataset(4);
    auto cfg = tiny_config(ds);

    // Straight-through reference: 4 epochs.
    cfg.max_epochs = 4;
    Trainer straight(cfg, ds);
    auto ref = straight.run();
    const auto ref_bytes = param_bytes(straight.model().snapshot());

    // 2 epochs, checkpoint to disk, reload, 2 more.
    cfg.max_epochs = 2;
    Trainer first(cfg, ds);
    first.run();
    auto dir = std::filesystem::temp_directory_path() / "mvcl_test_ck";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "ck.mvck").string();
    save_checkpoint(path, first.make_checkpoint());
    auto ck = load_checkpoint(path);

    cfg.max_epochs = 4;
    Trainer resumed(cfg, ds, ck);
    auto cont = resumed.run();
    CHECK(param_bytes(resumed.model().snapshot()) == ref_bytes);
    CHECK(cont.best_wf1 == ref.best_wf1);
}

TEST_CASE("corrupted checkpoint rejected") {
    auto dir = std::filesystem::temp_directory_path() / "mvcl_test_ck2";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "bad.mvck").string();
    std::ofstream(path, std::ios::binary) << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("ablation masking contributes no hidden gradients") {
    auto ds = tiny_dataset(1);
    auto cfg = tiny_config(ds);
    auto model = Model::init(cfg.model, 0);
    auto batch = data::make_batch(ds.train, ds.spec, {0, 1, 2, 3, 4, 5});

    auto grads_for = [&](const losses::AblationMask& mask) {
        std::mt19937_64 rng(9);
        auto fwd = model.forward(batch, rng);
        auto loss = losses::total_loss(fwd.logits, batch.labels, fwd.bundle, fwd.fusion,
                                       losses::TemperatureConfig{0.1}, mask);
        ag::backward(loss.total);
        std::map<std::string, Tensor> grads;
        for (const auto& [name, node] : model.params) grads[name] = node->grad;
        return grads;
    };

    // cls-only gradients equal those of the bare cross-entropy loss.
    auto masked = grads_for({true, false, false});
    std::mt19937_64 rng(9);
    auto fwd = model.forward(batch, rng);
    auto bare = ag::cross_entropy_from_logits(fwd.logits, batch.labels);
    ag::backward(bare);
    for (const auto& [name, node] : model.params) {
        const auto& got = masked.at(name);
        if (node->grad.size() == 0 && got.size() == 0) continue;
        REQUIRE(got.size() == node->grad.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == node->grad[i]);
    }
}

TEST_CASE("ablation grid shape and single-seed averaging") {
    auto masks = ablation_masks();
    REQUIRE(masks.size() == 4);
    CHECK(masks[0].label() == "cls");
    CHECK(masks[3].label() == "cls+contrastive+proto");

    auto ds = tiny_dataset(2);
    auto cfg = tiny_config(ds);
    cfg.max_epochs = 1;
    auto cells = run_ablation_grid(cfg, ds, {5});
    REQUIRE(cells.size() == 4);
    for (const auto& c : cells) CHECK(c.seed == 5);

    // A single seed's "average" is that seed's own result.
    TrainConfig single = cfg;
    single.mask = masks[0];
    single.seed = 5;
    Trainer t(single, ds);
    auto r = t.run();
    t.model().restore(r.best_params);
    auto test = evaluate(t.model(), ds.test, ds.spec, single.batch_size);
    CHECK(cells[0].test_report.weighted_f1 == test.report.weighted_f1);
}

TEST_CASE("train config parsing round trip and unknown keys") {
    std::stringstream ss(
        "lr = 0.005\nweight_decay = 0.1\nbatch_size = 8\ntau = 0.2\nmax_epochs = 7\n"
        "patience = 3\nseed = 11\nmask_proto = false\nd_model = 16\nproto_views = per-view-mean\n");
    auto cfg = parse_train_config(ss);
    CHECK(cfg.opt.lr == 0.005);
    CHECK(cfg.temp.tau == 0.2);
    CHECK(cfg.max_epochs == 7);
    CHECK_FALSE(cfg.mask.proto);
    CHECK(cfg.model.proto_per_view);

    std::stringstream out;
    write_train_config(out, cfg);
    auto back = parse_train_config(out);
    CHECK(back.opt.lr == cfg.opt.lr);
    CHECK(back.mask.proto == cfg.mask.proto);
    CHECK(back.model.d_model == cfg.model.d_model);

    std::stringstream bad("lr = 0.1\nmomentum = 0.9\n");
    CHECK_THROWS_AS(parse_train_config(bad), ConfigError);
}
