#include "mvcl/losses.hpp"

#include <cstdio>

#include "mvcl/errors.hpp"

namespace mvcl::losses {

void TemperatureConfig::validate() const {
    if (!(tau > 0)) throw ConfigError("temperature tau must be positive");
}

std::string AblationMask::label() const {
    std::string s;
    if (cls) s += "cls";
    if (contrastive) s += (s.empty() ? "" : "+") + std::string("contrastive");
    if (proto) s += (s.empty() ? "" : "+") + std::string("proto");
    return s.empty() ? "none" : s;
}

PrototypeSet compute_prototypes(const ag::NodePtr& h, const std::vector<std::int64_t>& labels,
                                std::size_t num_classes) {
    if (h->value.rank() != 2) throw DimensionError("compute_prototypes: expected [B,d] embeddings");
    const std::size_t B = h->value.dim(0);
    if (labels.size() != B) throw ValueError("compute_prototypes: label count mismatch");
    if (B == 0) throw ValueError("compute_prototypes: empty batch");

    PrototypeSet set;
    set.present.assign(num_classes, 0);
    set.row_of_class.assign(num_classes, -1);
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < B; ++i) {
        auto y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw ValueError("compute_prototypes: label " + std::to_string(y) + " outside [0," +
                             std::to_string(num_classes) + ")");
        }
        auto c = static_cast<std::size_t>(y);
        if (!set.present[c]) {
            set.present[c] = 1;
            set.row_of_class[c] = static_cast<std::int64_t>(groups.size());
            set.class_of_row.push_back(y);
            groups.emplace_back();
        }
        groups[static_cast<std::size_t>(set.row_of_class[c])].push_back(i);
    }
    auto means = ag::group_means(h, groups);
    try {
        set.prototypes = ag::l2_normalize_rows(means);
    } catch (const NumericError&) {
        throw NumericError("compute_prototypes: degenerate class mean (norm below 1e-12)");
    }
    return set;
}

ag::NodePtr prototype_loss(const ag::NodePtr& h, const std::vector<std::int64_t>& labels,
                           const PrototypeSet& protos, double tau) {
    if (!(tau > 0)) throw ConfigError("prototype_loss: tau must be positive");
    std::vector<std::int64_t> rows(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= protos.row_of_class.size() ||
            protos.row_of_class[static_cast<std::size_t>(y)] < 0) {
            throw ValueError("prototype_loss: class " + std::to_string(y) +
                             " has no prototype in this batch");
        }
        rows[i] = protos.row_of_class[static_cast<std::size_t>(y)];
    }
    auto sims = ag::matmul_nt(ag::l2_normalize_rows(h), protos.prototypes);
    return ag::cross_entropy_from_logits(ag::scale(sims, 1.0 / tau), rows);
}

ag::NodePtr infonce(const ag::NodePtr& anchor, const ag::NodePtr& positive, double tau) {
    if (!(tau > 0)) throw ConfigError("infonce: tau must be positive");
    if (!anchor->value.same_shape(positive->value) || anchor->value.rank() != 2) {
        throw DimensionError("infonce: anchor " + shape_str(anchor->value.shape()) +
                             " and positive " + shape_str(positive->value.shape()) +
                             " must be matching [B,d]");
    }
    const std::size_t B = anchor->value.dim(0);
    if (B == 1) {
        std::fprintf(stderr, "warning: infonce over a single-instance batch has no negatives; returning 0\n");
        return ag::scalar(0.0);
    }
    auto sims = ag::matmul_nt(ag::l2_normalize_rows(anchor), ag::l2_normalize_rows(positive));
    std::vector<std::int64_t> diag(B);
    for (std::size_t i = 0; i < B; ++i) diag[i] = static_cast<std::int64_t>(i);
    return ag::cross_entropy_from_logits(ag::scale(sims, 1.0 / tau), diag);
}

MultiviewLosses multiview_contrastive(const RepresentationBundle& bundle,
                                      const fusion::FusionOutputs& fusion_out, double tau) {
    MultiviewLosses out;
    out.text = infonce(bundle.text_labeled.h, bundle.text_masked.h, tau);
    out.vis = infonce(bundle.text_labeled.h, bundle.visual.h, tau);
    out.aud = infonce(bundle.text_labeled.h, bundle.acoustic.h, tau);
    out.fine = infonce(bundle.text_labeled.h, fusion_out.h_f, tau);
    out.sum = ag::add(ag::add(out.text, out.vis), ag::add(out.aud, out.fine));
    return out;
}

LossNodes total_loss(const ag::NodePtr& logits, const std::vector<std::int64_t>& labels,
                     const RepresentationBundle& bundle, const fusion::FusionOutputs& fusion_out,
                     const TemperatureConfig& temp, const AblationMask& mask,
                     bool proto_per_view) {
    temp.validate();
    if (!mask.cls && !mask.contrastive && !mask.proto) {
        throw ConfigError("total_loss: at least one loss term must be enabled");
    }
    const std::size_t C = logits->value.dim(1);

    LossNodes out;
    auto l_cls = ag::cross_entropy_from_logits(logits, labels);

    ag::NodePtr l_proto;
    if (proto_per_view) {
        const ag::NodePtr views[4] = {bundle.acoustic.h, bundle.visual.h, bundle.text_masked.h,
                                      bundle.text_labeled.h};
        for (const auto& v : views) {
            auto protos = compute_prototypes(v, labels, C);
            auto term = prototype_loss(v, labels, protos, temp.tau);
            l_proto = l_proto ? ag::add(l_proto, term) : term;
        }
        l_proto = ag::scale(l_proto, 0.25);
    } else {
        auto protos = compute_prototypes(fusion_out.h_f, labels, C);
        l_proto = prototype_loss(fusion_out.h_f, labels, protos, temp.tau);
    }

    auto mv = multiview_contrastive(bundle, fusion_out, temp.tau);

    ag::NodePtr total;
    auto accumulate = [&total](const ag::NodePtr& term) {
        total = total ? ag::add(total, term) : term;
    };
    if (mask.cls) accumulate(l_cls);
    if (mask.proto) accumulate(l_proto);
    if (mask.contrastive) accumulate(mv.sum);
    out.total = total;

    out.values.l_cls = l_cls->value[0];
    out.values.l_proto = l_proto->value[0];
    out.values.l_text = mv.text->value[0];
    out.values.l_vis = mv.vis->value[0];
    out.values.l_aud = mv.aud->value[0];
    out.values.l_fine = mv.fine->value[0];
    out.values.l_contrastive = mv.sum->value[0];
    out.values.total = total->value[0];
    return out;
}

}  // namespace mvcl::losses
