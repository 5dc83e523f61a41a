#include "mvcl/encoders.hpp"

#include <cmath>

#include "mvcl/errors.hpp"

namespace mvcl {

void ModelConfig::validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0) {
        throw ConfigError("d_model must be a positive multiple of heads");
    }
    if (n_enc_blocks == 0 || n_coarse_blocks == 0 || ff_mult == 0) {
        throw ConfigError("block counts and ff_mult must be positive");
    }
    if (p_mask < 0 || p_mask > 1) throw ConfigError("p_mask must lie in [0,1]");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

ag::NodePtr init_param(Params& params, const std::string& name, Shape shape, double limit,
                       std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = dist(rng);
    auto node = ag::leaf(std::move(t), true);
    params.emplace(name, node);
    return node;
}

namespace enc {

namespace {

double xavier(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

const ag::NodePtr& p(const Params& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
}

void init_block(Params& params, const std::string& prefix, const ModelConfig& cfg,
                std::mt19937_64& rng) {
    const std::size_t d = cfg.d_model, ff = cfg.ff_mult * d;
    const double la = xavier(d, d);
    init_param(params, prefix + ".wq", {d, d}, la, rng);
    init_param(params, prefix + ".wk", {d, d}, la, rng);
    init_param(params, prefix + ".wv", {d, d}, la, rng);
    init_param(params, prefix + ".wo", {d, d}, la, rng);
    init_param(params, prefix + ".bo", {d}, 0.0, rng);
    params[prefix + ".ln1.g"] = ag::leaf(Tensor({d}, 1.0), true);
    init_param(params, prefix + ".ln1.b", {d}, 0.0, rng);
    init_param(params, prefix + ".ff.w1", {d, ff}, xavier(d, ff), rng);
    init_param(params, prefix + ".ff.b1", {ff}, 0.0, rng);
    init_param(params, prefix + ".ff.w2", {ff, d}, xavier(ff, d), rng);
    init_param(params, prefix + ".ff.b2", {d}, 0.0, rng);
    params[prefix + ".ln2.g"] = ag::leaf(Tensor({d}, 1.0), true);
    init_param(params, prefix + ".ln2.b", {d}, 0.0, rng);
}

// Post-norm residual block body shared by self- and cross-attention.
ag::NodePtr block_forward(const Params& params, const std::string& prefix, const ag::NodePtr& x,
                          const ag::NodePtr& kv_src, const std::vector<std::uint8_t>& kv_mask,
                          const ag::NodePtr& v_src, const ModelConfig& cfg) {
    auto q = ag::linear(x, p(params, prefix + ".wq"), nullptr);
    auto k = ag::linear(kv_src, p(params, prefix + ".wk"), nullptr);
    auto v = ag::linear(v_src, p(params, prefix + ".wv"), nullptr);
    auto attn = ag::attention(q, k, v, kv_mask, cfg.heads);
    auto proj = ag::linear(attn, p(params, prefix + ".wo"), p(params, prefix + ".bo"));
    auto h1 = ag::layer_norm(ag::add(x, proj), p(params, prefix + ".ln1.g"), p(params, prefix + ".ln1.b"));
    auto ff = ag::linear(ag::vtanh(ag::linear(h1, p(params, prefix + ".ff.w1"), p(params, prefix + ".ff.b1"))),
                         p(params, prefix + ".ff.w2"), p(params, prefix + ".ff.b2"));
    return ag::layer_norm(ag::add(h1, ff), p(params, prefix + ".ln2.g"), p(params, prefix + ".ln2.b"));
}

}  // namespace

Tensor sinusoidal_positions(std::size_t batch, std::size_t len, std::size_t d) {
    Tensor t({batch, len, d});
    for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t j = 0; j < d; ++j) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
            const double angle = static_cast<double>(l) * rate;
            const double v = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
            for (std::size_t b = 0; b < batch; ++b) t.at(b, l, j) = v;
        }
    }
    return t;
}

void init_encoder_stack(Params& params, const std::string& prefix, const ModelConfig& cfg,
                        std::mt19937_64& rng) {
    for (std::size_t i = 0; i < cfg.n_enc_blocks; ++i) {
        init_block(params, prefix + ".block" + std::to_string(i), cfg, rng);
    }
}

void init_text_embedding(Params& params, const ModelConfig& cfg, std::mt19937_64& rng) {
    init_param(params, "text.embedding", {cfg.vocab_size, cfg.d_model},
               xavier(cfg.vocab_size, cfg.d_model), rng);
}

void init_input_projection(Params& params, const std::string& prefix, std::size_t d_in,
                           const ModelConfig& cfg, std::mt19937_64& rng) {
    init_param(params, prefix + ".proj.w", {d_in, cfg.d_model}, xavier(d_in, cfg.d_model), rng);
    init_param(params, prefix + ".proj.b", {cfg.d_model}, 0.0, rng);
}

ag::NodePtr encoder_stack(const Params& params, const std::string& prefix, const ag::NodePtr& x,
                          const std::vector<std::uint8_t>& mask, const ModelConfig& cfg) {
    auto h = x;
    for (std::size_t i = 0; i < cfg.n_enc_blocks; ++i) {
        const std::string bp = prefix + ".block" + std::to_string(i);
        h = block_forward(params, bp, h, h, mask, h, cfg);
    }
    return h;
}

StreamRep encode_text(const Params& params, const ModelConfig& cfg,
                      const std::vector<std::int64_t>& tokens,
                      const std::vector<std::uint8_t>& mask, std::size_t batch, std::size_t len,
                      bool mask_view, std::mt19937_64& mask_rng) {
    std::vector<std::int64_t> ids = tokens;
    if (mask_view && cfg.p_mask > 0) {
        std::bernoulli_distribution drop(cfg.p_mask);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (mask[i] && drop(mask_rng)) ids[i] = data::kMaskToken;
        }
    }
    StreamRep rep;
    auto emb = ag::embedding(p(params, "text.embedding"), ids, batch, len);
    rep.E = ag::add(emb, ag::constant(sinusoidal_positions(batch, len, cfg.d_model)));
    rep.M = encoder_stack(params, "text.enc", rep.E, mask, cfg);
    rep.h = ag::masked_mean_pool(rep.M, mask);
    return rep;
}

StreamRep encode_features(const Params& params, const std::string& prefix, const ModelConfig& cfg,
                          const Tensor& features, const std::vector<std::uint8_t>& mask) {
    if (features.rank() != 3) {
        throw DimensionError(prefix + ": expected [B,L,d] features, got " + shape_str(features.shape()));
    }
    const std::size_t d_in = features.dim(2);
    if (p(params, prefix + ".proj.w")->value.dim(0) != d_in) {
        throw DimensionError(prefix + ": feature dim " + std::to_string(d_in) +
                             " does not match projection " +
                             shape_str(p(params, prefix + ".proj.w")->value.shape()));
    }
    StreamRep rep;
    auto projected = ag::linear(ag::constant(features), p(params, prefix + ".proj.w"),
                                p(params, prefix + ".proj.b"));
    rep.E = ag::add(projected,
                    ag::constant(sinusoidal_positions(features.dim(0), features.dim(1), cfg.d_model)));
    rep.M = encoder_stack(params, prefix + ".enc", rep.E, mask, cfg);
    rep.h = ag::masked_mean_pool(rep.M, mask);
    return rep;
}

RepresentationBundle encode_batch(const Params& params, const ModelConfig& cfg,
                                  const data::MultimodalBatch& batch, std::mt19937_64& mask_rng) {
    RepresentationBundle b;
    b.text_labeled = encode_text(params, cfg, batch.text, batch.text_mask, batch.batch,
                                 batch.text_len, false, mask_rng);
    b.text_masked = encode_text(params, cfg, batch.text, batch.text_mask, batch.batch,
                                batch.text_len, true, mask_rng);
    b.visual = encode_features(params, "visual", cfg, batch.visual, batch.kv_mask);
    b.acoustic = encode_features(params, "acoustic", cfg, batch.acoustic, batch.kv_mask);
    return b;
}

}  // namespace enc
}  // namespace mvcl
