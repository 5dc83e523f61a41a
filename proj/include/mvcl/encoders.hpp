#pragma once

// Modality encoders: embedding / linear input projection, sinusoidal
// positions, and a small self-attention encoder stack per stream.
// Produces the E -> M -> h representation hierarchy for text (labeled
// and masked views), visual, and acoustic inputs.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mvcl/autodiff.hpp"
#include "mvcl/data.hpp"

namespace mvcl {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t n_enc_blocks = 2;
    std::size_t n_coarse_blocks = 2;
    std::size_t ff_mult = 2;
    double p_mask = 0.15;        // Bernoulli token-mask rate for the masked text view
    std::size_t vocab_size = 200;
    std::size_t d_v = 16;
    std::size_t d_a = 12;
    std::size_t num_classes = 4;
    bool proto_per_view = false;  // prototype loss over per-view means instead of h_f

    void validate() const;
};

// Named parameter registry; map ordering fixes iteration order for the
// optimizer and checkpoints.
using Params = std::map<std::string, ag::NodePtr>;

// One stream's E / M / h triple.
struct StreamRep {
    ag::NodePtr E;  // [B,L,d]
    ag::NodePtr M;  // [B,L,d]
    ag::NodePtr h;  // [B,d]
};

struct RepresentationBundle {
    StreamRep text_labeled;  // E_tl / M_tl / h_tl
    StreamRep text_masked;   // E_tm / M_tm / h_tm
    StreamRep visual;
    StreamRep acoustic;
};

namespace enc {

Tensor sinusoidal_positions(std::size_t batch, std::size_t len, std::size_t d);

void init_encoder_stack(Params& params, const std::string& prefix, const ModelConfig& cfg,
                        std::mt19937_64& rng);
void init_text_embedding(Params& params, const ModelConfig& cfg, std::mt19937_64& rng);
void init_input_projection(Params& params, const std::string& prefix, std::size_t d_in,
                           const ModelConfig& cfg, std::mt19937_64& rng);

// Runs the self-attention stack named by prefix over x [B,L,d].
ag::NodePtr encoder_stack(const Params& params, const std::string& prefix, const ag::NodePtr& x,
                          const std::vector<std::uint8_t>& mask, const ModelConfig& cfg);

// mask_view=true replaces valid tokens by MASK with probability p_mask,
// consuming draws from mask_rng (untouched when p_mask == 0).
StreamRep encode_text(const Params& params, const ModelConfig& cfg,
                      const std::vector<std::int64_t>& tokens,
                      const std::vector<std::uint8_t>& mask, std::size_t batch, std::size_t len,
                      bool mask_view, std::mt19937_64& mask_rng);

StreamRep encode_features(const Params& params, const std::string& prefix, const ModelConfig& cfg,
                          const Tensor& features, const std::vector<std::uint8_t>& mask);

RepresentationBundle encode_batch(const Params& params, const ModelConfig& cfg,
                                  const data::MultimodalBatch& batch, std::mt19937_64& mask_rng);

}  // namespace enc

// Uniform Xavier-style init used by every parameter tensor.
ag::NodePtr init_param(Params& params, const std::string& name, Shape shape, double limit,
                       std::mt19937_64& rng);

}  // namespace mvcl
