// mvcl command-line driver: dataset generation, training, evaluation,
// the loss-ablation grid, and attention/embedding diagnostics.
//
// Exit codes: 0 success, 2 usage/config error, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvcl/config.hpp"
#include "mvcl/data.hpp"
#include "mvcl/errors.hpp"
#include "mvcl/metrics.hpp"
#include "mvcl/trainer.hpp"

namespace fs = std::filesystem;
using namespace mvcl;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            seeds.push_back(std::stoull(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad seed '" + tok + "' in --seeds");
        }
    }
    if (seeds.empty()) throw ConfigError("--seeds parsed to an empty list");
    return seeds;
}

// Model hyperparameters come from the config; shape-determining fields
// come from the dataset that will be trained on.
void bind_model_to_data(TrainConfig& cfg, const data::DatasetSpec& spec) {
    cfg.model.vocab_size = spec.vocab_size;
    cfg.model.d_v = spec.d_v;
    cfg.model.d_a = spec.d_a;
    cfg.model.num_classes = spec.num_classes;
}

void check_compat(const ModelConfig& ck, const data::DatasetSpec& spec) {
    if (ck.vocab_size != spec.vocab_size || ck.d_v != spec.d_v || ck.d_a != spec.d_a ||
        ck.num_classes != spec.num_classes) {
        throw DimensionError("checkpoint and dataset are incompatible (vocab/d_v/d_a/classes)");
    }
}

RunManifest base_manifest(const std::string& command, const TrainConfig& cfg,
                          const std::string& data_dir) {
    RunManifest m;
    m.command = command;
    m.config = cfg;
    m.dataset_path = data_dir;
    m.dataset_hash = hash_file(data_dir + "/train.mvds");
    m.seed = cfg.seed;
    return m;
}

void write_results(const std::string& path, const metrics::Report& r, const std::string& prefix) {
    std::ofstream os(path, std::ios::app);
    os << prefix << "_acc = " << fmt(r.acc) << "\n";
    os << prefix << "_weighted_f1 = " << fmt(r.weighted_f1) << "\n";
    os << prefix << "_weighted_precision = " << fmt(r.weighted_precision) << "\n";
    os << prefix << "_macro_recall = " << fmt(r.macro_recall) << "\n";
}

const data::Split& pick_split(const data::Dataset& ds, const std::string& name) {
    if (name == "train") return ds.train;
    if (name == "val") return ds.val;
    if (name == "test") return ds.test;
    throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

// Forward a whole split in inference mode, collecting pooled fused
// embeddings, DAF gate weights, and argmax predictions.
struct SplitForward {
    Tensor h_f;          // [N,d]
    Tensor daf1;         // [N,3]
    Tensor daf2;         // [N,2]
    std::vector<std::int64_t> preds;
};

SplitForward forward_split(const Model& model, const data::Split& split,
                           const data::DatasetSpec& spec, std::size_t batch_size) {
    ag::NoGradGuard no_grad;
    std::mt19937_64 unused_rng(0);
    const std::size_t n = split.size();
    SplitForward out;
    out.daf1 = Tensor({n, 3});
    out.daf2 = Tensor({n, 2});
    out.preds.reserve(n);
    bool sized = false;
    for (std::size_t start = 0; start < n; start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, n - start));
        std::iota(idx.begin(), idx.end(), start);
        auto batch = data::make_batch(split, spec, idx);
        auto fwd = model.forward(batch, unused_rng);
        const Tensor& hf = fwd.fusion.h_f->value;
        if (!sized) {
            out.h_f = Tensor({n, hf.dim(1)});
            sized = true;
        }
        for (std::size_t r = 0; r < batch.batch; ++r) {
            for (std::size_t j = 0; j < hf.dim(1); ++j) out.h_f.at(start + r, j) = hf.at(r, j);
            for (std::size_t j = 0; j < 3; ++j)
                out.daf1.at(start + r, j) = fwd.fusion.daf1_alpha->value.at(r, j);
            for (std::size_t j = 0; j < 2; ++j)
                out.daf2.at(start + r, j) = fwd.fusion.daf2_alpha->value.at(r, j);
            const Tensor& logits = fwd.logits->value;
            const double* row = logits.data() + r * logits.dim(1);
            out.preds.push_back(static_cast<std::int64_t>(
                std::max_element(row, row + logits.dim(1)) - row));
        }
    }
    return out;
}

Model model_from_checkpoint(const Checkpoint& ck, const data::DatasetSpec& spec,
                            bool prefer_best) {
    check_compat(ck.model_cfg, spec);
    ModelConfig cfg = ck.model_cfg;
    cfg.p_mask = 0.0;  // diagnostics run on the unmasked view
    Model model = Model::init(cfg, 0);
    const auto& params = (prefer_best && !ck.best_params.empty()) ? ck.best_params : ck.params;
    model.restore(params);
    return model;
}

int cmd_gen(const std::string& spec_path, const std::string& preset, const std::string& out_dir,
            std::int64_t seed_override) {
    data::DatasetSpec spec;
    if (!preset.empty()) {
        if (preset == "clean") spec = data::preset_clean();
        else if (preset == "noisy-longtail") spec = data::preset_noisy_longtail();
        else throw ConfigError("unknown preset '" + preset + "' (expected clean|noisy-longtail)");
    } else if (!spec_path.empty()) {
        spec = data::load_spec_file(spec_path);
    } else {
        throw ConfigError("gen requires --spec or --preset");
    }
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    spec.validate();
    fs::create_directories(out_dir);
    auto ds = data::generate(spec);
    data::save_dataset(ds, out_dir);
    std::cout << "wrote " << out_dir << "/{train,val,test}.mvds + dataset.meta"
              << " (classes=" << spec.num_classes << ", train=" << ds.train.size() << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    TrainConfig cfg = load_train_config(config_path);
    auto ds = data::load_dataset(data_dir);
    bind_model_to_data(cfg, ds.spec);
    cfg.validate();
    fs::create_directories(out_dir);

    std::ofstream log(out_dir + "/train.log");
    Trainer trainer(cfg, ds);
    auto result = trainer.run(&log);
    for (const auto& e : result.epochs) {
        log << "epoch " << e.epoch << " total=" << fmt(e.mean_loss.total)
            << " val_wf1=" << fmt(e.val_wf1) << "\n";
    }
    save_checkpoint(out_dir + "/checkpoint.mvck", trainer.make_checkpoint());

    Model best = trainer.model();
    best.restore(result.best_params);
    auto val = evaluate(best, ds.val, ds.spec, cfg.batch_size);
    auto test = evaluate(best, ds.test, ds.spec, cfg.batch_size);

    const std::string results = out_dir + "/results.txt";
    {
        std::ofstream os(results);
        os << "best_val_wf1 = " << fmt(result.best_wf1) << "\n";
        os << "best_epoch = " << result.best_epoch << "\n";
        os << "epochs_run = " << result.epochs_run << "\n";
    }
    write_results(results, val.report, "val");
    write_results(results, test.report, "test");

    auto m = base_manifest("train", cfg, data_dir);
    m.artifacts = {"train.log", "checkpoint.mvck", "results.txt"};
    write_manifest(out_dir + "/manifest.txt", m);
    std::cout << "best_val_wf1 = " << fmt(result.best_wf1) << " (epoch " << result.best_epoch
              << "), test_wf1 = " << fmt(test.report.weighted_f1) << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& out_dir,
             const std::string& split_name, std::size_t batch_size) {
    auto ck = load_checkpoint(ckpt_path);
    auto ds = data::load_dataset(data_dir);
    Model model = model_from_checkpoint(ck, ds.spec, /*prefer_best=*/true);
    auto res = evaluate(model, pick_split(ds, split_name), ds.spec, batch_size);

    fs::create_directories(out_dir);
    const std::string results = out_dir + "/eval.txt";
    {
        std::ofstream os(results);
        os << "split = " << split_name << "\n";
    }
    write_results(results, res.report, split_name);

    TrainConfig cfg;
    cfg.model = ck.model_cfg;
    auto m = base_manifest("eval", cfg, data_dir);
    m.artifacts = {"eval.txt"};
    write_manifest(out_dir + "/manifest.txt", m);
    std::cout << split_name << "_acc = " << fmt(res.report.acc) << "\n"
              << split_name << "_weighted_f1 = " << fmt(res.report.weighted_f1) << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, const std::string& seeds_arg) {
    TrainConfig cfg = load_train_config(config_path);
    auto seeds = parse_seeds(seeds_arg);
    auto ds = data::load_dataset(data_dir);
    bind_model_to_data(cfg, ds.spec);
    cfg.validate();
    fs::create_directories(out_dir);

    std::ofstream progress(out_dir + "/ablate.log");
    auto cells = run_ablation_grid(cfg, ds, seeds, &progress);

    std::ofstream detail(out_dir + "/ablation_cells.tsv");
    detail << "mask\tseed\ttest_wf1\ttest_acc\tbest_val_wf1\tepochs_run\n";
    for (const auto& c : cells) {
        detail << c.mask.label() << "\t" << c.seed << "\t" << fmt(c.test_report.weighted_f1)
               << "\t" << fmt(c.test_report.acc) << "\t" << fmt(c.best_val_wf1) << "\t"
               << c.epochs_run << "\n";
    }

    std::ofstream table(out_dir + "/ablation.tsv");
    table << "mask\ttest_wf1_mean\ttest_wf1_std\ttest_acc_mean\ttest_acc_std\n";
    std::cout << "mask\ttest_wf1_mean\ttest_wf1_std\ttest_acc_mean\ttest_acc_std\n";
    for (const auto& mask : ablation_masks()) {
        std::vector<double> wf1, acc;
        for (const auto& c : cells) {
            if (c.mask.cls == mask.cls && c.mask.contrastive == mask.contrastive &&
                c.mask.proto == mask.proto) {
                wf1.push_back(c.test_report.weighted_f1);
                acc.push_back(c.test_report.acc);
            }
        }
        auto mean = [](const std::vector<double>& v) {
            return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        };
        auto stddev = [&](const std::vector<double>& v) {
            if (v.size() < 2) return 0.0;
            const double m = mean(v);
            double s = 0;
            for (double x : v) s += (x - m) * (x - m);
            return std::sqrt(s / static_cast<double>(v.size() - 1));
        };
        std::ostringstream row;
        row << mask.label() << "\t" << fmt(mean(wf1)) << "\t" << fmt(stddev(wf1)) << "\t"
            << fmt(mean(acc)) << "\t" << fmt(stddev(acc)) << "\n";
        table << row.str();
        std::cout << row.str();
    }

    auto m = base_manifest("ablate", cfg, data_dir);
    m.artifacts = {"ablation.tsv", "ablation_cells.tsv", "ablate.log"};
    write_manifest(out_dir + "/manifest.txt", m);
    return 0;
}

int cmd_attn_stats(const std::string& ckpt_path, const std::string& data_dir,
                   const std::string& out_dir, const std::string& split_name,
                   std::size_t batch_size) {
    auto ck = load_checkpoint(ckpt_path);
    auto ds = data::load_dataset(data_dir);
    Model model = model_from_checkpoint(ck, ds.spec, true);
    const auto& split = pick_split(ds, split_name);
    auto fwd = forward_split(model, split, ds.spec, batch_size);

    fs::create_directories(out_dir);
    std::ofstream os(out_dir + "/attn_weights.tsv");
    os << "instance\tgate\tstream\tweight\n";
    for (std::size_t i = 0; i < split.size(); ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            os << i << "\tdaf1\t" << fusion::kDaf1Streams[j] << "\t" << fmt(fwd.daf1.at(i, j)) << "\n";
        }
        for (std::size_t j = 0; j < 2; ++j) {
            os << i << "\tdaf2\t" << fusion::kDaf2Streams[j] << "\t" << fmt(fwd.daf2.at(i, j)) << "\n";
        }
    }

    auto quartiles = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        auto at = [&](double q) {
            const double pos = q * static_cast<double>(v.size() - 1);
            const auto lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, v.size() - 1);
            const double frac = pos - static_cast<double>(lo);
            return v[lo] + frac * (v[hi] - v[lo]);
        };
        return std::array<double, 3>{at(0.25), at(0.5), at(0.75)};
    };
    std::cout << "gate\tstream\tq25\tmedian\tq75\n";
    for (std::size_t j = 0; j < 3; ++j) {
        std::vector<double> col(split.size());
        for (std::size_t i = 0; i < split.size(); ++i) col[i] = fwd.daf1.at(i, j);
        auto q = quartiles(col);
        std::cout << "daf1\t" << fusion::kDaf1Streams[j] << "\t" << fmt(q[0]) << "\t" << fmt(q[1])
                  << "\t" << fmt(q[2]) << "\n";
    }
    for (std::size_t j = 0; j < 2; ++j) {
        std::vector<double> col(split.size());
        for (std::size_t i = 0; i < split.size(); ++i) col[i] = fwd.daf2.at(i, j);
        auto q = quartiles(col);
        std::cout << "daf2\t" << fusion::kDaf2Streams[j] << "\t" << fmt(q[0]) << "\t" << fmt(q[1])
                  << "\t" << fmt(q[2]) << "\n";
    }

    TrainConfig cfg;
    cfg.model = ck.model_cfg;
    auto m = base_manifest("attn-stats", cfg, data_dir);
    m.artifacts = {"attn_weights.tsv"};
    write_manifest(out_dir + "/manifest.txt", m);
    return 0;
}

int cmd_dump_embeddings(const std::string& ckpt_path, const std::string& data_dir,
                        const std::string& out_dir, const std::string& split_name,
                        std::size_t batch_size) {
    auto ck = load_checkpoint(ckpt_path);
    auto ds = data::load_dataset(data_dir);
    Model model = model_from_checkpoint(ck, ds.spec, true);
    const auto& split = pick_split(ds, split_name);
    auto fwd = forward_split(model, split, ds.spec, batch_size);

    const std::size_t n = split.size();
    const std::size_t d = fwd.h_f.dim(1);
    const std::size_t C = ds.spec.num_classes;

    // Full-split class prototypes: mean of member embeddings, unit norm.
    Tensor protos({C, d});
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(split.labels[i]);
        ++counts[c];
        for (std::size_t j = 0; j < d; ++j) protos.at(c, j) += fwd.h_f.at(i, j);
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] == 0) continue;
        double norm2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
            protos.at(c, j) /= static_cast<double>(counts[c]);
            norm2 += protos.at(c, j) * protos.at(c, j);
        }
        if (norm2 < 1e-24) throw NumericError("degenerate prototype for class " + std::to_string(c));
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t j = 0; j < d; ++j) protos.at(c, j) *= inv;
    }

    fs::create_directories(out_dir);
    std::ofstream os(out_dir + "/embeddings.tsv");
    os << "kind\tlabel";
    for (std::size_t j = 0; j < d; ++j) os << "\te" << j;
    os << "\n";
    for (std::size_t i = 0; i < n; ++i) {
        os << "instance\t" << split.labels[i];
        for (std::size_t j = 0; j < d; ++j) os << "\t" << fmt(fwd.h_f.at(i, j));
        os << "\n";
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] == 0) continue;
        os << "prototype\t" << c;
        for (std::size_t j = 0; j < d; ++j) os << "\t" << fmt(protos.at(c, j));
        os << "\n";
    }

    const double sil = metrics::silhouette(fwd.h_f, split.labels);
    std::cout << "silhouette = " << fmt(sil) << "\n";

    TrainConfig cfg;
    cfg.model = ck.model_cfg;
    auto m = base_manifest("dump-embeddings", cfg, data_dir);
    m.artifacts = {"embeddings.tsv"};
    write_manifest(out_dir + "/manifest.txt", m);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal intent model: data generation, training, diagnostics"};
    app.require_subcommand(1);

    std::string spec_path, preset, config_path, data_dir, out_dir, ckpt_path;
    std::string seeds_arg = "0";
    std::string split_name = "test";
    std::size_t batch_size = 32;
    std::int64_t gen_seed = -1;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
    gen->add_option("--spec", spec_path, "dataset spec file (key = value)");
    gen->add_option("--preset", preset, "named regime: clean | noisy-longtail");
    gen->add_option("--seed", gen_seed, "override the spec seed");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model and write checkpoint + results");
    train->add_option("--config", config_path, "training config file")->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_option("--split", split_name, "train | val | test (default test)");
    eval->add_option("--batch-size", batch_size, "evaluation batch size");

    auto* ablate = app.add_subcommand("ablate", "run the 4-row loss-mask grid over seeds");
    ablate->add_option("--config", config_path, "training config file")->required();
    ablate->add_option("--data", data_dir, "dataset directory")->required();
    ablate->add_option("--out", out_dir, "output directory")->required();
    ablate->add_option("--seeds", seeds_arg, "comma-separated seed list (default 0)");

    auto* attn = app.add_subcommand("attn-stats", "dump per-instance fusion gate weights");
    attn->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    attn->add_option("--data", data_dir, "dataset directory")->required();
    attn->add_option("--out", out_dir, "output directory")->required();
    attn->add_option("--split", split_name, "train | val | test (default test)");
    attn->add_option("--batch-size", batch_size, "forward batch size");

    auto* dump = app.add_subcommand("dump-embeddings", "dump fused embeddings + class prototypes");
    dump->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    dump->add_option("--data", data_dir, "dataset directory")->required();
    dump->add_option("--out", out_dir, "output directory")->required();
    dump->add_option("--split", split_name, "train | val | test (default test)");
    dump->add_option("--batch-size", batch_size, "forward batch size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(spec_path, preset, out_dir, gen_seed);
        if (train->parsed()) return cmd_train(config_path, data_dir, out_dir);
        if (eval->parsed()) return cmd_eval(ckpt_path, data_dir, out_dir, split_name, batch_size);
        if (ablate->parsed()) return cmd_ablate(config_path, data_dir, out_dir, seeds_arg);
        if (attn->parsed()) return cmd_attn_stats(ckpt_path, data_dir, out_dir, split_name, batch_size);
        if (dump->parsed())
            return cmd_dump_embeddings(ckpt_path, data_dir, out_dir, split_name, batch_size);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
