#pragma once

// Training objectives: batch-local class prototypes, prototype-aware
// InfoNCE, pairwise in-batch InfoNCE, the four-view contrastive stack,
// and the combined classification + contrastive total.

#include "mvcl/fusion.hpp"

namespace mvcl::losses {

struct PrototypeSet {
    ag::NodePtr prototypes;                  // [P,d], L2-normalized rows, graph-attached
    std::vector<std::uint8_t> present;       // [C]
    std::vector<std::int64_t> class_of_row;  // P -> class id
    std::vector<std::int64_t> row_of_class;  // C -> row, -1 when absent
};

struct TemperatureConfig {
    double tau = 0.1;

    void validate() const;
};

struct AblationMask {
    bool cls = true;
    bool contrastive = true;
    bool proto = true;

    std::string label() const;  // e.g. "cls+contrastive+proto"
};

struct LossBreakdown {
    double l_cls = 0, l_proto = 0;
    double l_text = 0, l_vis = 0, l_aud = 0, l_fine = 0;
    double l_contrastive = 0;
    double total = 0;
};

struct LossNodes {
    ag::NodePtr total;  // only unmasked terms contribute
    LossBreakdown values;
};

PrototypeSet compute_prototypes(const ag::NodePtr& h, const std::vector<std::int64_t>& labels,
                                std::size_t num_classes);

// Mean over instances of -log softmax over present classes of
// cos(h_i, r_c)/tau. Every instance's own class must be present.
ag::NodePtr prototype_loss(const ag::NodePtr& h, const std::vector<std::int64_t>& labels,
                           const PrototypeSet& protos, double tau);

// In-batch InfoNCE with cosine similarity; anchor i's positive is row i
// of `positive`, negatives are the other in-batch positives. B == 1
// yields exactly 0 with a logged warning.
ag::NodePtr infonce(const ag::NodePtr& anchor, const ag::NodePtr& positive, double tau);

struct MultiviewLosses {
    ag::NodePtr text, vis, aud, fine, sum;
};

MultiviewLosses multiview_contrastive(const RepresentationBundle& bundle,
                                      const fusion::FusionOutputs& fusion_out, double tau);

LossNodes total_loss(const ag::NodePtr& logits, const std::vector<std::int64_t>& labels,
                     const RepresentationBundle& bundle, const fusion::FusionOutputs& fusion_out,
                     const TemperatureConfig& temp, const AblationMask& mask,
                     bool proto_per_view = false);

}  // namespace mvcl::losses
