#pragma once

// Reverse-mode automatic differentiation over dense tensors.
// Define-by-run: each tensor op records a node with its backward rule;
// the graph lives only as long as the NodePtrs referencing it and is
// rebuilt every training step.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mvcl/tensor.hpp"

namespace mvcl::ag {

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
  public:
    Tensor value;
    Tensor grad;  // allocated by backward(); empty until then
    bool requires_grad = false;

    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

    // Side outputs kept for diagnostics (attention probabilities etc.).
    Tensor aux;

    bool backward_done = false;

    double* grad_data() { return grad.data(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor::zeros(value.shape());
    }
};

NodePtr leaf(Tensor value, bool requires_grad);
NodePtr constant(Tensor value);
NodePtr scalar(double v);

// Gradient recording is on by default; disable for evaluation passes.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// Runs reverse accumulation from a scalar loss. Gradients of every
// reachable requires_grad node are zeroed, then filled. Calling twice on
// the same loss node throws (accumulation error).
void backward(const NodePtr& loss);

// ---- elementwise ----
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& x, double c);
NodePtr vtanh(const NodePtr& x);
NodePtr vexp(const NodePtr& x);
NodePtr vlog(const NodePtr& x);

// ---- linear algebra ----
NodePtr matmul(const NodePtr& a, const NodePtr& b);                       // [m,k]x[k,n]
NodePtr matmul_nt(const NodePtr& a, const NodePtr& b);                    // [m,k]x[n,k]^T
NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b);     // x[...,di] w[di,do] + b; b may be null
NodePtr embedding(const NodePtr& table, const std::vector<std::int64_t>& ids,
                  std::size_t batch, std::size_t seq_len);                // -> [B,L,d]

// ---- normalization / pooling ----
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias);  // last axis
NodePtr softmax_last(const NodePtr& x);
NodePtr l2_normalize_rows(const NodePtr& x);  // 1D treated as a single row
NodePtr masked_mean_pool(const NodePtr& x, const std::vector<std::uint8_t>& mask);  // [B,L,d]->[B,d]
NodePtr mean_pool(const NodePtr& x);                                                // [B,L,d]->[B,d]

// ---- attention ----
// Multi-head scaled dot-product attention. key_mask flags valid key
// positions (B*Lk, row-major); masked keys get exactly zero weight.
// Result aux holds attention probabilities [B*H, Lq, Lk] flattened.
NodePtr attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                  const std::vector<std::uint8_t>& key_mask, std::size_t heads);

// ---- shape plumbing ----
NodePtr concat_cols(const std::vector<NodePtr>& cols);        // S x [B] -> [B,S]
NodePtr slice_col(const NodePtr& x, std::size_t j);           // [B,S] -> [B]
NodePtr scale_rows(const NodePtr& x, const NodePtr& s);       // [B,L,d] * s[B]
NodePtr broadcast_rows(const NodePtr& h, std::size_t len);    // [B,d] -> [B,L,d]

// ---- reductions / losses ----
NodePtr cosine_sim(const NodePtr& a, const NodePtr& b);       // 1D x 1D -> scalar
NodePtr group_means(const NodePtr& h, const std::vector<std::vector<std::size_t>>& groups);  // [B,d] -> [P,d]
NodePtr cross_entropy_from_logits(const NodePtr& logits, const std::vector<std::int64_t>& labels);

}  // namespace mvcl::ag
