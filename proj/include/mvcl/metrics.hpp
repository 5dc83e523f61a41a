#pragma once

// Evaluation metrics: accuracy, support-weighted F1/precision, macro
// recall, plus silhouette score over embedding clusters.

#include <cstdint>
#include <vector>

#include "mvcl/tensor.hpp"

namespace mvcl::metrics {

struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::size_t> counts;  // [C x C], rows = true class

    std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * num_classes + pred]; }
    std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
    std::size_t total() const;
};

ConfusionMatrix confusion(const std::vector<std::int64_t>& preds,
                          const std::vector<std::int64_t>& labels, std::size_t num_classes);

struct Report {
    double acc = 0;
    double weighted_f1 = 0;
    double weighted_precision = 0;
    double macro_recall = 0;  // classes without support are excluded
    std::vector<double> per_class_precision, per_class_recall, per_class_f1;
    std::vector<std::size_t> support;
};

Report classification_report(const std::vector<std::int64_t>& preds,
                             const std::vector<std::int64_t>& labels, std::size_t num_classes);

// Standard silhouette with Euclidean distance on L2-normalized rows.
// Singleton clusters score 0. Throws if fewer than two classes present.
double silhouette(const Tensor& embeddings, const std::vector<std::int64_t>& labels);

}  // namespace mvcl::metrics
