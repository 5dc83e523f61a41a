#pragma once

// Coarse cross-modal encoder (text queries, visual keys, acoustic
// values) and the two dynamic attention fusion gates producing the fine
// fused features M_f and the coarse-enhanced features M_cf, plus the
// classifier head.

#include "mvcl/encoders.hpp"

namespace mvcl::fusion {

struct FusionOutputs {
    ag::NodePtr M_c;         // [B,L_t,d]
    ag::NodePtr M_f;         // [B,L_t,d]
    ag::NodePtr h_f;         // [B,d]
    ag::NodePtr M_cf;        // [B,L_t,d]
    ag::NodePtr daf1_alpha;  // [B,3] weights over {text, visual, acoustic}
    ag::NodePtr daf2_alpha;  // [B,2] weights over {fine, coarse}
};

inline constexpr const char* kDaf1Streams[3] = {"text", "visual", "acoustic"};
inline constexpr const char* kDaf2Streams[2] = {"fine", "coarse"};

void init_fusion_params(Params& params, const ModelConfig& cfg, std::mt19937_64& rng);

// One DAF stream: token-level features on the fusion grid plus the
// pooled per-instance summary that drives its gate score.
struct DafStream {
    ag::NodePtr tokens;   // [B,L,d]
    ag::NodePtr summary;  // [B,d]
};

// Additive-attention gate: score_m = v . tanh(U s_m), alpha =
// softmax(scores / sqrt(d)). Returns the fused tokens and alpha [B,S].
std::pair<ag::NodePtr, ag::NodePtr> daf_fuse(const Params& params, const std::string& prefix,
                                             const std::vector<DafStream>& streams);

// Cross-modal coarse encoder; requires visual and acoustic on a shared
// key/value grid. Output keeps the text sequence length.
ag::NodePtr coarse_encode(const Params& params, const ModelConfig& cfg, const ag::NodePtr& m_text,
                          const ag::NodePtr& m_visual, const ag::NodePtr& m_acoustic,
                          const std::vector<std::uint8_t>& kv_mask);

FusionOutputs coarse_to_fine(const Params& params, const ModelConfig& cfg,
                             const RepresentationBundle& bundle,
                             const std::vector<std::uint8_t>& text_mask,
                             const std::vector<std::uint8_t>& kv_mask);

ag::NodePtr classify(const Params& params, const ag::NodePtr& m_cf,
                     const std::vector<std::uint8_t>& text_mask);

}  // namespace mvcl::fusion
