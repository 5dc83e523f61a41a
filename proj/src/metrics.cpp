#include "mvcl/metrics.hpp"

#include <cmath>
#include <map>

#include "mvcl/errors.hpp"
#include "mvcl/kernels.hpp"

namespace mvcl::metrics {

std::size_t ConfusionMatrix::total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

ConfusionMatrix confusion(const std::vector<std::int64_t>& preds,
                          const std::vector<std::int64_t>& labels, std::size_t num_classes) {
    if (preds.size() != labels.size()) {
        throw ValueError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    }
    if (preds.empty()) throw ValueError("confusion: empty input");
    ConfusionMatrix cm;
    cm.num_classes = num_classes;
    cm.counts.assign(num_classes * num_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto t = labels[i], p = preds[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes ||
            static_cast<std::size_t>(p) >= num_classes) {
            throw ValueError("confusion: class id out of range at index " + std::to_string(i));
        }
        ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return cm;
}

Report classification_report(const std::vector<std::int64_t>& preds,
                             const std::vector<std::int64_t>& labels, std::size_t num_classes) {
    auto cm = confusion(preds, labels, num_classes);
    const std::size_t C = num_classes;
    const auto total = static_cast<double>(cm.total());

    Report r;
    r.per_class_precision.assign(C, 0.0);
    r.per_class_recall.assign(C, 0.0);
    r.per_class_f1.assign(C, 0.0);
    r.support.assign(C, 0);

    double trace = 0, wf1 = 0, wp = 0, recall_sum = 0;
    std::size_t supported_classes = 0;
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t tp = cm.at(c, c), row = 0, col = 0;
        for (std::size_t j = 0; j < C; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        r.support[c] = row;
        trace += static_cast<double>(tp);
        // zero-denominator convention: empty classes score 0
        const double prec = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        const double rec = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        const double f1 = (prec + rec > 0) ? 2 * prec * rec / (prec + rec) : 0.0;
        r.per_class_precision[c] = prec;
        r.per_class_recall[c] = rec;
        r.per_class_f1[c] = f1;
        wf1 += static_cast<double>(row) * f1;
        wp += static_cast<double>(row) * prec;
        if (row) {
            recall_sum += rec;
            ++supported_classes;
        }
    }
    r.acc = trace / total;
    r.weighted_f1 = wf1 / total;
    r.weighted_precision = wp / total;
    r.macro_recall = supported_classes ? recall_sum / static_cast<double>(supported_classes) : 0.0;
    return r;
}

double silhouette(const Tensor& embeddings, const std::vector<std::int64_t>& labels) {
    if (embeddings.rank() != 2) throw DimensionError("silhouette: expected [N,d] embeddings");
    const std::size_t N = embeddings.dim(0), d = embeddings.dim(1);
    if (labels.size() != N) throw ValueError("silhouette: label count mismatch");
    if (N < 3) throw ValueError("silhouette: need at least 3 instances");

    // L2-normalize rows first; degenerate rows are rejected
    Tensor norm({N, d});
    for (std::size_t i = 0; i < N; ++i) {
        const double* row = embeddings.data() + i * d;
        double nrm = std::sqrt(kernels::dot(row, row, d));
        if (nrm <= 1e-12) throw NumericError("silhouette: zero-norm embedding at row " + std::to_string(i));
        kernels::scale(1.0 / nrm, row, norm.data() + i * d, d);
    }

    std::map<std::int64_t, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < N; ++i) clusters[labels[i]].push_back(i);
    if (clusters.size() < 2) {
        throw ValueError("silhouette: undefined with a single class");
    }

    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0;
        const double* a = norm.data() + i * d;
        const double* b = norm.data() + j * d;
        for (std::size_t k = 0; k < d; ++k) {
            double c = a[k] - b[k];
            s += c * c;
        }
        return std::sqrt(s);
    };

    double total = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const auto& own = clusters[labels[i]];
        if (own.size() == 1) continue;  // singleton scores 0
        double a = 0;
        for (auto j : own) {
            if (j != i) a += dist(i, j);
        }
        a /= static_cast<double>(own.size() - 1);
        double b = 1e300;
        for (const auto& [lab, members] : clusters) {
            if (lab == labels[i]) continue;
            double m = 0;
            for (auto j : members) m += dist(i, j);
            m /= static_cast<double>(members.size());
            b = std::min(b, m);
        }
        const double denom = std::max(a, b);
        if (denom > 0) total += (b - a) / denom;
    }
    return total / static_cast<double>(N);
}

}  // namespace mvcl::metrics
