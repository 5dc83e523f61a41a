#include "mvcl/model.hpp"

#include "mvcl/errors.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    auto rng = SplitRng(seed).stream("init");
    enc::init_text_embedding(m.params, cfg, rng);
    enc::init_encoder_stack(m.params, "text.enc", cfg, rng);
    enc::init_input_projection(m.params, "visual", cfg.d_v, cfg, rng);
    enc::init_encoder_stack(m.params, "visual.enc", cfg, rng);
    enc::init_input_projection(m.params, "acoustic", cfg.d_a, cfg, rng);
    enc::init_encoder_stack(m.params, "acoustic.enc", cfg, rng);
    fusion::init_fusion_params(m.params, cfg, rng);
    return m;
}

Model::Forward Model::forward(const data::MultimodalBatch& batch, std::mt19937_64& mask_rng) const {
    if (batch.d_v != cfg.d_v || batch.d_a != cfg.d_a) {
        throw DimensionError("model: batch feature dims (" + std::to_string(batch.d_v) + "," +
                             std::to_string(batch.d_a) + ") do not match model (" +
                             std::to_string(cfg.d_v) + "," + std::to_string(cfg.d_a) + ")");
    }
    Forward f;
    f.bundle = enc::encode_batch(params, cfg, batch, mask_rng);
    f.fusion = fusion::coarse_to_fine(params, cfg, f.bundle, batch.text_mask, batch.kv_mask);
    f.logits = fusion::classify(params, f.fusion.M_cf, batch.text_mask);
    return f;
}

std::map<std::string, Tensor> Model::snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, node] : params) out.emplace(name, node->value);
    return out;
}

void Model::restore(const std::map<std::string, Tensor>& values) {
    for (auto& [name, node] : params) {
        auto it = values.find(name);
        if (it == values.end()) throw FormatError("restore: missing parameter '" + name + "'");
        if (!(it->second.shape() == node->value.shape())) {
            throw DimensionError("restore: shape mismatch for '" + name + "': " +
                                 shape_str(it->second.shape()) + " vs " +
                                 shape_str(node->value.shape()));
        }
        node->value = it->second;
    }
}

}  // namespace mvcl
