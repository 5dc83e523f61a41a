#pragma once

// Synthetic three-modality datasets: class-anchored token sequences with
// controllable class count, Zipf long-tail imbalance, and per-modality
// noise. Stands in for the real intent corpora at desk scale.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvcl/tensor.hpp"

namespace mvcl::data {

// Token id conventions shared with the text encoder.
constexpr std::int64_t kPadToken = 0;
constexpr std::int64_t kMaskToken = 1;
constexpr std::int64_t kFirstRealToken = 2;

struct DatasetSpec {
    std::size_t num_classes = 4;
    std::size_t train_size = 400;
    std::size_t val_size = 100;
    std::size_t test_size = 100;
    double zipf_s = 0.0;          // 0 = uniform classes; >0 = long tail
    double text_noise = 0.1;      // probability a token is drawn off-class
    double instance_spread = 0.5; // per-instance latent scatter around the class anchor
    double visual_noise = 0.3;    // gaussian std around the class anchor
    double acoustic_noise = 0.3;
    std::size_t d_v = 16;
    std::size_t d_a = 12;
    std::size_t vocab_size = 200;  // includes PAD and MASK
    std::size_t text_len = 12;
    std::size_t kv_len = 8;        // visual/acoustic length (shared grid)
    std::size_t latent_dim = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Split {
    std::vector<std::int64_t> text;       // [N x L_t], PAD-filled tail
    std::vector<std::int64_t> text_len;   // valid prefix per instance
    Tensor visual;                        // [N, L_kv, d_v]
    Tensor acoustic;                      // [N, L_kv, d_a]
    std::vector<std::int64_t> kv_len;
    std::vector<std::int64_t> labels;

    std::size_t size() const { return labels.size(); }
};

struct Dataset {
    DatasetSpec spec;
    Split train, val, test;
};

// One training batch as the model consumes it. Masks flag valid (non-pad)
// positions.
struct MultimodalBatch {
    std::size_t batch = 0, text_len = 0, kv_len = 0, d_v = 0, d_a = 0;
    std::vector<std::int64_t> text;
    std::vector<std::uint8_t> text_mask;
    Tensor visual;
    Tensor acoustic;
    std::vector<std::uint8_t> kv_mask;
    std::vector<std::int64_t> labels;
};

std::vector<double> zipf_probs(std::size_t num_classes, double s);

// Deterministic largest-remainder allocation of n samples to classes.
std::vector<std::size_t> quota_counts(std::size_t n, const std::vector<double>& probs);

Dataset generate(const DatasetSpec& spec);

MultimodalBatch make_batch(const Split& split, const DatasetSpec& spec,
                           const std::vector<std::size_t>& indices);

// Versioned little-endian binary split files. A dataset on disk is a
// directory holding train.mvds / val.mvds / test.mvds plus a
// human-readable dataset.meta sidecar with the generating spec.
void save_split_file(const Split& split, const DatasetSpec& spec, const std::string& path);
Split load_split_file(const std::string& path, DatasetSpec* spec_out = nullptr);
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Named regimes used by the CLI and acceptance runs.
DatasetSpec preset_clean();
DatasetSpec preset_noisy_longtail();

void write_spec(std::ostream& os, const DatasetSpec& spec);
DatasetSpec parse_spec(std::istream& is);
DatasetSpec load_spec_file(const std::string& path);

}  // namespace mvcl::data
