#pragma once

// Full model wiring: modality encoders -> coarse encoder -> two DAF
// gates -> classifier head, over one parameter registry.

#include "mvcl/fusion.hpp"

namespace mvcl {

struct Model {
    ModelConfig cfg;
    Params params;

    struct Forward {
        RepresentationBundle bundle;
        fusion::FusionOutputs fusion;
        ag::NodePtr logits;
    };

    static Model init(const ModelConfig& cfg, std::uint64_t seed);

    Forward forward(const data::MultimodalBatch& batch, std::mt19937_64& mask_rng) const;

    // Deep copy of parameter values (graph detached).
    std::map<std::string, Tensor> snapshot() const;
    void restore(const std::map<std::string, Tensor>& values);
};

}  // namespace mvcl
