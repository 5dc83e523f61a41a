#include "mvcl/fusion.hpp"

#include <cmath>

#include "mvcl/errors.hpp"

namespace mvcl::fusion {

namespace {

const ag::NodePtr& p(const Params& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
}

void init_cross_block(Params& params, const std::string& prefix, const ModelConfig& cfg,
                      std::mt19937_64& rng) {
    const std::size_t d = cfg.d_model, ff = cfg.ff_mult * d;
    const double la = std::sqrt(6.0 / static_cast<double>(2 * d));
    init_param(params, prefix + ".wq", {d, d}, la, rng);
    init_param(params, prefix + ".wk", {d, d}, la, rng);
    init_param(params, prefix + ".wv", {d, d}, la, rng);
    init_param(params, prefix + ".wo", {d, d}, la, rng);
    init_param(params, prefix + ".bo", {d}, 0.0, rng);
    params[prefix + ".ln1.g"] = ag::leaf(Tensor({d}, 1.0), true);
    init_param(params, prefix + ".ln1.b", {d}, 0.0, rng);
    init_param(params, prefix + ".ff.w1", {d, ff}, std::sqrt(6.0 / static_cast<double>(d + ff)), rng);
    init_param(params, prefix + ".ff.b1", {ff}, 0.0, rng);
    init_param(params, prefix + ".ff.w2", {ff, d}, std::sqrt(6.0 / static_cast<double>(d + ff)), rng);
    init_param(params, prefix + ".ff.b2", {d}, 0.0, rng);
    params[prefix + ".ln2.g"] = ag::leaf(Tensor({d}, 1.0), true);
    init_param(params, prefix + ".ln2.b", {d}, 0.0, rng);
}

}  // namespace

void init_fusion_params(Params& params, const ModelConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = cfg.d_model;
    for (std::size_t i = 0; i < cfg.n_coarse_blocks; ++i) {
        init_cross_block(params, "coarse.block" + std::to_string(i), cfg, rng);
    }
    const double la = std::sqrt(6.0 / static_cast<double>(2 * d));
    init_param(params, "daf1.u", {d, d}, la, rng);
    init_param(params, "daf1.v", {d, 1}, la, rng);
    init_param(params, "daf2.u", {d, d}, la, rng);
    init_param(params, "daf2.v", {d, 1}, la, rng);
    init_param(params, "classifier.w", {d, cfg.num_classes},
               std::sqrt(6.0 / static_cast<double>(d + cfg.num_classes)), rng);
    init_param(params, "classifier.b", {cfg.num_classes}, 0.0, rng);
}

std::pair<ag::NodePtr, ag::NodePtr> daf_fuse(const Params& params, const std::string& prefix,
                                             const std::vector<DafStream>& streams) {
    if (streams.empty()) throw DimensionError("daf_fuse: no streams to fuse");
    const auto& u = p(params, prefix + ".u");
    const auto& v = p(params, prefix + ".v");
    const std::size_t d = u->value.dim(0);

    std::vector<ag::NodePtr> scores;
    scores.reserve(streams.size());
    for (const auto& s : streams) {
        auto gate = ag::vtanh(ag::linear(s.summary, u, nullptr));  // [B,d]
        scores.push_back(ag::slice_col(ag::matmul(gate, v), 0));   // [B]
    }
    auto alpha = ag::softmax_last(
        ag::scale(ag::concat_cols(scores), 1.0 / std::sqrt(static_cast<double>(d))));

    ag::NodePtr fused;
    for (std::size_t m = 0; m < streams.size(); ++m) {
        auto weighted = ag::scale_rows(streams[m].tokens, ag::slice_col(alpha, m));
        fused = fused ? ag::add(fused, weighted) : weighted;
    }
    return {fused, alpha};
}

ag::NodePtr coarse_encode(const Params& params, const ModelConfig& cfg, const ag::NodePtr& m_text,
                          const ag::NodePtr& m_visual, const ag::NodePtr& m_acoustic,
                          const std::vector<std::uint8_t>& kv_mask) {
    const auto& vs = m_visual->value.shape();
    const auto& as = m_acoustic->value.shape();
    if (vs != as) {
        throw DimensionError("coarse_encode: visual " + shape_str(vs) + " and acoustic " +
                             shape_str(as) + " must share the key/value grid");
    }
    auto x = m_text;
    for (std::size_t i = 0; i < cfg.n_coarse_blocks; ++i) {
        const std::string bp = "coarse.block" + std::to_string(i);
        auto q = ag::linear(x, p(params, bp + ".wq"), nullptr);
        auto k = ag::linear(m_visual, p(params, bp + ".wk"), nullptr);
        auto v = ag::linear(m_acoustic, p(params, bp + ".wv"), nullptr);
        auto attn = ag::attention(q, k, v, kv_mask, cfg.heads);
        auto proj = ag::linear(attn, p(params, bp + ".wo"), p(params, bp + ".bo"));
        auto h1 = ag::layer_norm(ag::add(x, proj), p(params, bp + ".ln1.g"), p(params, bp + ".ln1.b"));
        auto ff = ag::linear(
            ag::vtanh(ag::linear(h1, p(params, bp + ".ff.w1"), p(params, bp + ".ff.b1"))),
            p(params, bp + ".ff.w2"), p(params, bp + ".ff.b2"));
        x = ag::layer_norm(ag::add(h1, ff), p(params, bp + ".ln2.g"), p(params, bp + ".ln2.b"));
    }
    return x;
}

FusionOutputs coarse_to_fine(const Params& params, const ModelConfig& cfg,
                             const RepresentationBundle& bundle,
                             const std::vector<std::uint8_t>& text_mask,
                             const std::vector<std::uint8_t>& kv_mask) {
    FusionOutputs out;
    out.M_c = coarse_encode(params, cfg, bundle.text_labeled.M, bundle.visual.M,
                            bundle.acoustic.M, kv_mask);

    const std::size_t text_len = bundle.text_labeled.M->value.dim(1);
    // Non-text streams enter DAF-1 via their pooled summary broadcast to
    // the text-length grid.
    std::vector<DafStream> fine_streams{
        {bundle.text_labeled.M, bundle.text_labeled.h},
        {ag::broadcast_rows(bundle.visual.h, text_len), bundle.visual.h},
        {ag::broadcast_rows(bundle.acoustic.h, text_len), bundle.acoustic.h},
    };
    auto [m_f, alpha1] = daf_fuse(params, "daf1", fine_streams);
    out.M_f = m_f;
    out.daf1_alpha = alpha1;
    out.h_f = ag::masked_mean_pool(out.M_f, text_mask);

    auto h_c = ag::masked_mean_pool(out.M_c, text_mask);
    std::vector<DafStream> cf_streams{
        {out.M_f, out.h_f},
        {out.M_c, h_c},
    };
    auto [m_cf, alpha2] = daf_fuse(params, "daf2", cf_streams);
    out.M_cf = m_cf;
    out.daf2_alpha = alpha2;
    return out;
}

ag::NodePtr classify(const Params& params, const ag::NodePtr& m_cf,
                     const std::vector<std::uint8_t>& text_mask) {
    auto pooled = ag::masked_mean_pool(m_cf, text_mask);
    return ag::linear(pooled, p(params, "classifier.w"), p(params, "classifier.b"));
}

}  // namespace mvcl::fusion
