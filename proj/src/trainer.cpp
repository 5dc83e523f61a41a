#include "mvcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mvcl/errors.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

namespace {

std::mt19937_64 rng_from_state(const std::string& state) {
    std::mt19937_64 rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw FormatError("checkpoint: invalid RNG state");
    return rng;
}

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void check_breakdown_identities(const losses::LossBreakdown& v, const losses::AblationMask& mask) {
    const double sum4 = v.l_text + v.l_vis + v.l_aud + v.l_fine;
    if (std::abs(v.l_contrastive - sum4) > 1e-12) {
        throw NumericError("loss breakdown: contrastive sum identity violated");
    }
    double expect = 0;
    if (mask.cls) expect += v.l_cls;
    if (mask.proto) expect += v.l_proto;
    if (mask.contrastive) expect += v.l_contrastive;
    if (std::abs(v.total - expect) > 1e-12) {
        throw NumericError("loss breakdown: total identity violated");
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (!(opt.lr >= 0)) throw ConfigError("learning rate must be >= 0");
    if (opt.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    temp.validate();
    model.validate();
}

EvalResult evaluate(const Model& model, const data::Split& split, const data::DatasetSpec& spec,
                    std::size_t batch_size) {
    if (split.size() == 0) throw ConfigError("evaluate: empty split");
    ag::NoGradGuard no_grad;
    std::mt19937_64 unused_rng(0);  // masked view is not consulted at eval
    EvalResult res;
    res.preds.reserve(split.size());
    for (std::size_t start = 0; start < split.size(); start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, split.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        auto batch = data::make_batch(split, spec, idx);
        auto fwd = model.forward(batch, unused_rng);
        const Tensor& logits = fwd.logits->value;
        for (std::size_t r = 0; r < batch.batch; ++r) {
            const double* row = logits.data() + r * logits.dim(1);
            res.preds.push_back(static_cast<std::int64_t>(
                std::max_element(row, row + logits.dim(1)) - row));
        }
    }
    res.report = metrics::classification_report(res.preds, split.labels, spec.num_classes);
    return res;
}

Trainer::Trainer(TrainConfig cfg, const data::Dataset& dataset)
    : cfg_(cfg),
      dataset_(dataset),
      model_(Model::init(cfg.model, cfg.seed)),
      opt_(cfg.opt),
      shuffle_rng_(SplitRng(cfg.seed).stream("shuffle")),
      mask_rng_(SplitRng(cfg.seed).stream("textmask")) {
    cfg_.validate();
    if (dataset.train.size() == 0 || dataset.val.size() == 0) {
        throw ConfigError("trainer: train and val splits must be non-empty");
    }
}

Trainer::Trainer(TrainConfig cfg, const data::Dataset& dataset, const Checkpoint& resume)
    : Trainer(cfg, dataset) {
    model_.restore(resume.params);
    opt_.restore(resume.opt_state, resume.opt_steps);
    shuffle_rng_ = rng_from_state(resume.shuffle_rng_state);
    mask_rng_ = rng_from_state(resume.mask_rng_state);
    result_.best_params = resume.best_params;
    result_.best_wf1 = resume.best_wf1;
    result_.best_epoch = resume.best_epoch;
    result_.epochs_run = resume.epochs_done;
    since_best_ = resume.since_best;
    step_counter_ = static_cast<std::size_t>(resume.opt_steps);
}

losses::LossBreakdown Trainer::train_step(const data::MultimodalBatch& batch) {
    auto fwd = model_.forward(batch, mask_rng_);
    auto loss = losses::total_loss(fwd.logits, batch.labels, fwd.bundle, fwd.fusion, cfg_.temp,
                                   cfg_.mask, cfg_.model.proto_per_view);
    check_breakdown_identities(loss.values, cfg_.mask);
    if (!std::isfinite(loss.values.total)) {
        throw NumericError("training step " + std::to_string(step_counter_) + ": non-finite loss");
    }
    ag::backward(loss.total);
    opt_.step(model_.params);
    return loss.values;
}

TrainResult Trainer::run(std::ostream* step_log) {
    const auto& spec = dataset_.spec;
    std::vector<std::size_t> order(dataset_.train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = result_.epochs_run; epoch < cfg_.max_epochs; ++epoch) {
        // order resets to identity so a resumed run shuffles exactly as
        // the uninterrupted one would
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng_);

        losses::LossBreakdown mean{};
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(std::min(start + cfg_.batch_size, order.size())));
            auto batch = data::make_batch(dataset_.train, spec, idx);
            auto v = train_step(batch);
            ++step_counter_;
            ++steps;
            mean.l_cls += v.l_cls;
            mean.l_proto += v.l_proto;
            mean.l_text += v.l_text;
            mean.l_vis += v.l_vis;
            mean.l_aud += v.l_aud;
            mean.l_fine += v.l_fine;
            mean.l_contrastive += v.l_contrastive;
            mean.total += v.total;
            if (step_log) {
                char buf[512];
                std::snprintf(buf, sizeof(buf),
                              "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                              step_counter_, v.l_cls, v.l_proto, v.l_text, v.l_vis, v.l_aud,
                              v.l_fine, v.total);
                *step_log << buf;
            }
        }
        const double inv = 1.0 / static_cast<double>(steps);
        mean.l_cls *= inv;
        mean.l_proto *= inv;
        mean.l_text *= inv;
        mean.l_vis *= inv;
        mean.l_aud *= inv;
        mean.l_fine *= inv;
        mean.l_contrastive *= inv;
        mean.total *= inv;

        auto val = evaluate(model_, dataset_.val, spec, cfg_.batch_size);
        result_.epochs.push_back({epoch + 1, mean, val.report.weighted_f1});
        result_.epochs_run = epoch + 1;

        if (val.report.weighted_f1 > result_.best_wf1) {
            result_.best_wf1 = val.report.weighted_f1;
            result_.best_epoch = epoch + 1;
            result_.best_params = model_.snapshot();
            since_best_ = 0;
        } else {
            ++since_best_;
        }
        if (since_best_ >= cfg_.patience) break;
    }
    if (result_.best_params.empty()) result_.best_params = model_.snapshot();
    return result_;
}

Checkpoint Trainer::make_checkpoint() const {
    Checkpoint ck;
    ck.model_cfg = cfg_.model;
    ck.params = model_.snapshot();
    ck.opt_state = opt_.state();
    ck.opt_steps = opt_.steps_taken();
    ck.epochs_done = result_.epochs_run;
    ck.best_wf1 = result_.best_wf1;
    ck.best_epoch = result_.best_epoch;
    ck.since_best = since_best_;
    ck.best_params = result_.best_params;
    ck.shuffle_rng_state = rng_state(shuffle_rng_);
    ck.mask_rng_state = rng_state(mask_rng_);
    return ck;
}

std::vector<losses::AblationMask> ablation_masks() {
    return {
        {.cls = true, .contrastive = false, .proto = false},
        {.cls = true, .contrastive = true, .proto = false},
        {.cls = true, .contrastive = false, .proto = true},
        {.cls = true, .contrastive = true, .proto = true},
    };
}

std::vector<AblationCell> run_ablation_grid(const TrainConfig& base, const data::Dataset& dataset,
                                            const std::vector<std::uint64_t>& seeds,
                                            std::ostream* progress) {
    if (seeds.empty()) throw ConfigError("ablation grid: seed list must be non-empty");
    std::vector<AblationCell> cells;
    for (const auto& mask : ablation_masks()) {
        for (auto seed : seeds) {
            TrainConfig cfg = base;
            cfg.mask = mask;
            cfg.seed = seed;
            Trainer trainer(cfg, dataset);
            auto result = trainer.run();
            trainer.model().restore(result.best_params);
            auto test = evaluate(trainer.model(), dataset.test, dataset.spec, cfg.batch_size);
            cells.push_back({mask, seed, test.report, result.best_wf1, result.epochs_run});
            if (progress) {
                *progress << "cell mask=" << mask.label() << " seed=" << seed
                          << " epochs=" << result.epochs_run << " test_wf1=" << test.report.weighted_f1
                          << "\n";
                progress->flush();
            }
        }
    }
    return cells;
}

}  // namespace mvcl
