#pragma once

// End-to-end optimization loop: AdamW, early stopping on validation
// weighted F1, ablation masks over loss terms, checkpoint state.

#include <iosfwd>
#include <optional>

#include "mvcl/losses.hpp"
#include "mvcl/metrics.hpp"
#include "mvcl/model.hpp"
#include "mvcl/optimizer.hpp"

namespace mvcl {

struct TrainConfig {
    // Desk-scale default lr; the original fine-tuning value 2e-5 stays
    // reachable through the config file.
    AdamWConfig opt{.lr = 1e-3, .weight_decay = 0.2};
    std::size_t batch_size = 32;
    losses::TemperatureConfig temp{.tau = 0.1};
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    losses::AblationMask mask;
    ModelConfig model;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    losses::LossBreakdown mean_loss;  // averaged over steps
    double val_wf1 = 0;
};

struct TrainResult {
    std::map<std::string, Tensor> best_params;
    double best_wf1 = -1;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::vector<EpochRecord> epochs;
};

struct Checkpoint {
    ModelConfig model_cfg;
    std::map<std::string, Tensor> params;
    std::map<std::string, AdamW::Slot> opt_state;
    std::int64_t opt_steps = 0;
    std::size_t epochs_done = 0;
    double best_wf1 = -1;
    std::size_t best_epoch = 0;
    std::size_t since_best = 0;
    std::map<std::string, Tensor> best_params;
    std::string shuffle_rng_state;
    std::string mask_rng_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

struct EvalResult {
    metrics::Report report;
    std::vector<std::int64_t> preds;
};

EvalResult evaluate(const Model& model, const data::Split& split, const data::DatasetSpec& spec,
                    std::size_t batch_size);

class Trainer {
  public:
    Trainer(TrainConfig cfg, const data::Dataset& dataset);
    Trainer(TrainConfig cfg, const data::Dataset& dataset, const Checkpoint& resume);

    // Runs until early stop or max_epochs; per-step LossBreakdown lines
    // go to step_log when provided.
    TrainResult run(std::ostream* step_log = nullptr);

    Checkpoint make_checkpoint() const;
    const Model& model() const { return model_; }
    Model& model() { return model_; }

  private:
    losses::LossBreakdown train_step(const data::MultimodalBatch& batch);

    TrainConfig cfg_;
    const data::Dataset& dataset_;
    Model model_;
    AdamW opt_;
    std::mt19937_64 shuffle_rng_;
    std::mt19937_64 mask_rng_;
    TrainResult result_;
    std::size_t since_best_ = 0;
    std::size_t step_counter_ = 0;
};

// The four ablation loss configurations, in report row order.
std::vector<losses::AblationMask> ablation_masks();

struct AblationCell {
    losses::AblationMask mask;
    std::uint64_t seed = 0;
    metrics::Report test_report;
    double best_val_wf1 = 0;
    std::size_t epochs_run = 0;
};

std::vector<AblationCell> run_ablation_grid(const TrainConfig& base, const data::Dataset& dataset,
                                            const std::vector<std::uint64_t>& seeds,
                                            std::ostream* progress = nullptr);

}  // namespace mvcl
