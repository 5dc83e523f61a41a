#include "mvcl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "mvcl/kernels.hpp"

namespace mvcl::ag {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kNormEps = 1e-12;

void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite values");
}

NodePtr make_op(Tensor out, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(out);
    bool need = g_grad_enabled;
    if (need) {
        need = false;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                need = true;
                break;
            }
        }
    }
    if (need) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return n;
}

// Accumulate g (same size as p->value) into p's gradient.
void accum(const NodePtr& p, const double* g, std::size_t n) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    kernels::axpy(1.0, g, p->grad_data(), n);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

NodePtr leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

NodePtr constant(Tensor value) { return leaf(std::move(value), false); }

NodePtr scalar(double v) { return constant(Tensor::scalar(v)); }

void backward(const NodePtr& loss) {
    if (loss->value.size() != 1) {
        throw DimensionError("backward: loss must be a scalar, got shape " +
                             shape_str(loss->value.shape()));
    }
    if (loss->backward_done) {
        throw Error("backward: already called on this loss; rebuild the graph before reusing it");
    }
    loss->backward_done = true;

    // Topological order over the requires_grad subgraph, iterative DFS.
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    if (loss->requires_grad) {
        stack.emplace_back(loss.get(), 0);
        seen.insert(loss.get());
    }
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : topo) {
        n->ensure_grad();
        n->grad.fill(0.0);
    }
    if (!loss->requires_grad) return;
    loss->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------- elementwise

NodePtr add(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out(a->value.shape());
    kernels::add(a->value.data(), b->value.data(), out.data(), out.size());
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        accum(a, self.grad.data(), self.grad.size());
        accum(b, self.grad.data(), self.grad.size());
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor out(a->value.shape());
    kernels::sub(a->value.data(), b->value.data(), out.data(), out.size());
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        accum(a, self.grad.data(), self.grad.size());
        if (b->requires_grad) {
            b->ensure_grad();
            kernels::axpy(-1.0, self.grad.data(), b->grad_data(), self.grad.size());
        }
    });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out(a->value.shape());
    kernels::mul(a->value.data(), b->value.data(), out.data(), out.size());
    return make_op(std::move(out), {a, b}, [a, b](Node& self) {
        const std::size_t n = self.grad.size();
        std::vector<double> tmp(n);
        if (a->requires_grad) {
            kernels::mul(self.grad.data(), b->value.data(), tmp.data(), n);
            accum(a, tmp.data(), n);
        }
        if (b->requires_grad) {
            kernels::mul(self.grad.data(), a->value.data(), tmp.data(), n);
            accum(b, tmp.data(), n);
        }
    });
}

NodePtr scale(const NodePtr& x, double c) {
    Tensor out(x->value.shape());
    kernels::scale(c, x->value.data(), out.data(), out.size());
    return make_op(std::move(out), {x}, [x, c](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        kernels::axpy(c, self.grad.data(), x->grad_data(), self.grad.size());
    });
}

NodePtr vtanh(const NodePtr& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x->value[i]);
    return make_op(std::move(out), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            x->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
        }
    });
}

NodePtr vexp(const NodePtr& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x->value[i]);
    check_finite(out, "exp");
    return make_op(std::move(out), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            x->grad[i] += self.grad[i] * self.value[i];
        }
    });
}

NodePtr vlog(const NodePtr& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x->value[i]);
    check_finite(out, "log");
    return make_op(std::move(out), {x}, [x](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            x->grad[i] += self.grad[i] / x->value[i];
        }
    });
}

// ------------------------------------------------------------- linear algebra

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                             shape_str(bv.shape()));
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    kernels::matmul_acc(av.data(), bv.data(), out.data(), m, k, n);
    return make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            kernels::matmul_nt_acc(self.grad.data(), b->value.data(), a->grad_data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kernels::matmul_tn_acc(a->value.data(), self.grad.data(), b->grad_data(), m, k, n);
        }
    });
}

NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
        throw DimensionError("matmul_nt: incompatible shapes " + shape_str(av.shape()) + " and " +
                             shape_str(bv.shape()));
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
    Tensor out({m, n});
    kernels::matmul_nt_acc(av.data(), bv.data(), out.data(), m, k, n);
    return make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            kernels::matmul_acc(self.grad.data(), b->value.data(), a->grad_data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kernels::matmul_tn_acc(self.grad.data(), a->value.data(), b->grad_data(), m, n, k);
        }
    });
}

NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.rank() < 1 || wv.rank() != 2 || xv.shape().back() != wv.dim(0)) {
        throw DimensionError("linear: incompatible shapes " + shape_str(xv.shape()) + " and " +
                             shape_str(wv.shape()));
    }
    const std::size_t di = wv.dim(0), dout = wv.dim(1);
    const std::size_t rows = xv.size() / di;
    if (b && b->value.size() != dout) {
        throw DimensionError("linear: bias shape " + shape_str(b->value.shape()) +
                             " does not match output dim " + std::to_string(dout));
    }
    Shape out_shape(xv.shape());
    out_shape.back() = dout;
    Tensor out(out_shape);
    kernels::matmul_acc(xv.data(), wv.data(), out.data(), rows, di, dout);
    if (b) {
        for (std::size_t r = 0; r < rows; ++r) {
            kernels::axpy(1.0, b->value.data(), out.data() + r * dout, dout);
        }
    }
    std::vector<NodePtr> parents{x, w};
    if (b) parents.push_back(b);
    return make_op(std::move(out), std::move(parents), [x, w, b, rows, di, dout](Node& self) {
        if (x->requires_grad) {
            x->ensure_grad();
            kernels::matmul_nt_acc(self.grad.data(), w->value.data(), x->grad_data(), rows, dout, di);
        }
        if (w->requires_grad) {
            w->ensure_grad();
            kernels::matmul_tn_acc(x->value.data(), self.grad.data(), w->grad_data(), rows, di, dout);
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                kernels::axpy(1.0, self.grad.data() + r * dout, b->grad_data(), dout);
            }
        }
    });
}

NodePtr embedding(const NodePtr& table, const std::vector<std::int64_t>& ids,
                  std::size_t batch, std::size_t seq_len) {
    const Tensor& tv = table->value;
    if (tv.rank() != 2) throw DimensionError("embedding: table must be 2D");
    if (ids.size() != batch * seq_len) {
        throw DimensionError("embedding: id count does not match batch x seq_len");
    }
    const std::size_t vocab = tv.dim(0), d = tv.dim(1);
    for (auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw ValueError("embedding: token id " + std::to_string(id) +
                             " out of vocabulary of size " + std::to_string(vocab));
        }
    }
    Tensor out({batch, seq_len, d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = tv.data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.data() + i * d);
    }
    return make_op(std::move(out), {table}, [table, ids, d](Node& self) {
        if (!table->requires_grad) return;
        table->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            kernels::axpy(1.0, self.grad.data() + i * d,
                          table->grad_data() + static_cast<std::size_t>(ids[i]) * d, d);
        }
    });
}

// ---------------------------------------------------- normalization / pooling

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias) {
    const Tensor& xv = x->value;
    const std::size_t d = xv.shape().back();
    const std::size_t rows = xv.size() / d;
    if (gain->value.size() != d || bias->value.size() != d) {
        throw DimensionError("layer_norm: gain/bias must match last axis " + std::to_string(d));
    }
    constexpr double eps = 1e-8;
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mean = kernels::sum(xr, d) / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        double* hr = xhat.data() + r * d;
        double* orow = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mean) * inv_std[r];
            orow[j] = gain->value[j] * hr[j] + bias->value[j];
        }
    }
    check_finite(out, "layer_norm");
    auto xhat_ptr = std::make_shared<Tensor>(std::move(xhat));
    auto inv_ptr = std::make_shared<std::vector<double>>(std::move(inv_std));
    return make_op(std::move(out), {x, gain, bias},
                   [x, gain, bias, xhat_ptr, inv_ptr, rows, d](Node& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* go = self.grad.data() + r * d;
            const double* hr = xhat_ptr->data() + r * d;
            if (gain->requires_grad) {
                gain->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gain->grad[j] += go[j] * hr[j];
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                kernels::axpy(1.0, go, bias->grad_data(), d);
            }
            if (x->requires_grad) {
                x->ensure_grad();
                double m1 = 0.0, m2 = 0.0;
                std::vector<double> dh(d);
                for (std::size_t j = 0; j < d; ++j) {
                    dh[j] = go[j] * gain->value[j];
                    m1 += dh[j];
                    m2 += dh[j] * hr[j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                double* gx = x->grad_data() + r * d;
                for (std::size_t j = 0; j < d; ++j) {
                    gx[j] += (*inv_ptr)[r] * (dh[j] - m1 - hr[j] * m2);
                }
            }
        }
    });
}

NodePtr softmax_last(const NodePtr& x) {
    check_finite(x->value, "softmax");
    const Tensor& xv = x->value;
    const std::size_t d = xv.shape().back();
    const std::size_t rows = xv.size() / d;
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double* orow = out.data() + r * d;
        double mx = *std::max_element(xr, xr + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            z += orow[j];
        }
        kernels::scale(1.0 / z, orow, orow, d);
    }
    return make_op(std::move(out), {x}, [x, rows, d](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * d;
            const double* gy = self.grad.data() + r * d;
            double s = kernels::dot(y, gy, d);
            double* gx = x->grad_data() + r * d;
            for (std::size_t j = 0; j < d; ++j) gx[j] += y[j] * (gy[j] - s);
        }
    });
}

NodePtr l2_normalize_rows(const NodePtr& x) {
    const Tensor& xv = x->value;
    const std::size_t d = xv.shape().back();
    const std::size_t rows = xv.size() / d;
    Tensor out(xv.shape());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double nrm = std::sqrt(kernels::dot(xr, xr, d));
        if (nrm <= kNormEps) {
            throw NumericError("l2_normalize: degenerate vector with norm " + std::to_string(nrm));
        }
        norms[r] = nrm;
        kernels::scale(1.0 / nrm, xr, out.data() + r * d, d);
    }
    auto norms_ptr = std::make_shared<std::vector<double>>(std::move(norms));
    return make_op(std::move(out), {x}, [x, norms_ptr, rows, d](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * d;
            const double* gy = self.grad.data() + r * d;
            double s = kernels::dot(y, gy, d);
            double inv = 1.0 / (*norms_ptr)[r];
            double* gx = x->grad_data() + r * d;
            for (std::size_t j = 0; j < d; ++j) gx[j] += inv * (gy[j] - y[j] * s);
        }
    });
}

NodePtr masked_mean_pool(const NodePtr& x, const std::vector<std::uint8_t>& mask) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw DimensionError("masked_mean_pool: expected [B,L,d], got " + shape_str(xv.shape()));
    const std::size_t B = xv.dim(0), L = xv.dim(1), d = xv.dim(2);
    if (mask.size() != B * L) throw DimensionError("masked_mean_pool: mask size mismatch");
    Tensor out({B, d});
    std::vector<double> inv_count(B);
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t cnt = 0;
        for (std::size_t l = 0; l < L; ++l) {
            if (mask[b * L + l]) {
                kernels::axpy(1.0, xv.data() + (b * L + l) * d, out.data() + b * d, d);
                ++cnt;
            }
        }
        if (cnt == 0) throw ValueError("masked_mean_pool: instance " + std::to_string(b) + " has no valid positions");
        inv_count[b] = 1.0 / static_cast<double>(cnt);
        kernels::scale(inv_count[b], out.data() + b * d, out.data() + b * d, d);
    }
    auto inv_ptr = std::make_shared<std::vector<double>>(std::move(inv_count));
    return make_op(std::move(out), {x}, [x, mask, inv_ptr, B, L, d](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t l = 0; l < L; ++l) {
                if (!mask[b * L + l]) continue;
                kernels::axpy((*inv_ptr)[b], self.grad.data() + b * d,
                              x->grad_data() + (b * L + l) * d, d);
            }
        }
    });
}

NodePtr mean_pool(const NodePtr& x) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw DimensionError("mean_pool: expected [B,L,d], got " + shape_str(xv.shape()));
    return masked_mean_pool(x, std::vector<std::uint8_t>(xv.dim(0) * xv.dim(1), 1));
}

// ------------------------------------------------------------------ attention

NodePtr attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                  const std::vector<std::uint8_t>& key_mask, std::size_t heads) {
    const Tensor& qv = q->value;
    const Tensor& kv = k->value;
    const Tensor& vv = v->value;
    if (qv.rank() != 3 || kv.rank() != 3 || vv.rank() != 3) {
        throw DimensionError("attention: Q, K, V must be [B,L,d]");
    }
    const std::size_t B = qv.dim(0), Lq = qv.dim(1), d = qv.dim(2);
    const std::size_t Lk = kv.dim(1);
    if (kv.dim(0) != B || vv.dim(0) != B || vv.dim(1) != Lk || kv.dim(2) != d || vv.dim(2) != d) {
        throw DimensionError("attention: inconsistent shapes Q" + shape_str(qv.shape()) + " K" +
                             shape_str(kv.shape()) + " V" + shape_str(vv.shape()));
    }
    if (heads == 0 || d % heads != 0) {
        throw DimensionError("attention: model dim " + std::to_string(d) +
                             " not divisible by head count " + std::to_string(heads));
    }
    if (key_mask.size() != B * Lk) throw DimensionError("attention: key mask size mismatch");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out({B, Lq, d});
    Tensor probs({B * heads, Lq, Lk});
    for (std::size_t b = 0; b < B; ++b) {
        const std::uint8_t* msk = key_mask.data() + b * Lk;
        bool any_key = false;
        for (std::size_t j = 0; j < Lk; ++j) any_key = any_key || msk[j];
        if (!any_key) throw ValueError("attention: instance " + std::to_string(b) + " has no valid keys");
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < Lq; ++i) {
                const double* qrow = qv.data() + (b * Lq + i) * d + off;
                double* prow = probs.data() + ((b * heads + h) * Lq + i) * Lk;
                double mx = -1e300;
                for (std::size_t j = 0; j < Lk; ++j) {
                    if (!msk[j]) continue;
                    prow[j] = inv_sqrt * kernels::dot(qrow, kv.data() + (b * Lk + j) * d + off, dh);
                    mx = std::max(mx, prow[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < Lk; ++j) {
                    prow[j] = msk[j] ? std::exp(prow[j] - mx) : 0.0;
                    z += prow[j];
                }
                kernels::scale(1.0 / z, prow, prow, Lk);
                double* orow = out.data() + (b * Lq + i) * d + off;
                for (std::size_t j = 0; j < Lk; ++j) {
                    if (prow[j] != 0.0) {
                        kernels::axpy(prow[j], vv.data() + (b * Lk + j) * d + off, orow, dh);
                    }
                }
            }
        }
    }
    check_finite(out, "attention");
    auto probs_ptr = std::make_shared<Tensor>(probs);
    auto node = make_op(std::move(out), {q, k, v},
                        [q, k, v, probs_ptr, key_mask, B, Lq, Lk, d, dh, heads, inv_sqrt](Node& self) {
        std::vector<double> dp(Lk), ds(Lk);
        for (std::size_t b = 0; b < B; ++b) {
            const std::uint8_t* msk = key_mask.data() + b * Lk;
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = 0; i < Lq; ++i) {
                    const double* prow = probs_ptr->data() + ((b * heads + h) * Lq + i) * Lk;
                    const double* go = self.grad.data() + (b * Lq + i) * d + off;
                    // dV[j] += P[i,j] * dO[i]; dP[j] = dO[i] . V[j]
                    for (std::size_t j = 0; j < Lk; ++j) {
                        if (!msk[j]) {
                            dp[j] = 0.0;
                            continue;
                        }
                        dp[j] = kernels::dot(go, v->value.data() + (b * Lk + j) * d + off, dh);
                        if (v->requires_grad && prow[j] != 0.0) {
                            v->ensure_grad();
                            kernels::axpy(prow[j], go, v->grad_data() + (b * Lk + j) * d + off, dh);
                        }
                    }
                    double srow = kernels::dot(dp.data(), prow, Lk);
                    for (std::size_t j = 0; j < Lk; ++j) ds[j] = prow[j] * (dp[j] - srow) * inv_sqrt;
                    const double* qrow = q->value.data() + (b * Lq + i) * d + off;
                    for (std::size_t j = 0; j < Lk; ++j) {
                        if (ds[j] == 0.0) continue;
                        if (q->requires_grad) {
                            q->ensure_grad();
                            kernels::axpy(ds[j], k->value.data() + (b * Lk + j) * d + off,
                                          q->grad_data() + (b * Lq + i) * d + off, dh);
                        }
                        if (k->requires_grad) {
                            k->ensure_grad();
                            kernels::axpy(ds[j], qrow, k->grad_data() + (b * Lk + j) * d + off, dh);
                        }
                    }
                }
            }
        }
    });
    node->aux = std::move(probs);
    return node;
}

// ------------------------------------------------------------- shape plumbing

NodePtr concat_cols(const std::vector<NodePtr>& cols) {
    if (cols.empty()) throw DimensionError("concat_cols: empty input list");
    const std::size_t B = cols[0]->value.size();
    const std::size_t S = cols.size();
    Tensor out({B, S});
    for (std::size_t j = 0; j < S; ++j) {
        if (cols[j]->value.size() != B) throw DimensionError("concat_cols: column length mismatch");
        for (std::size_t b = 0; b < B; ++b) out.at(b, j) = cols[j]->value[b];
    }
    return make_op(std::move(out), cols, [cols, B, S](Node& self) {
        for (std::size_t j = 0; j < S; ++j) {
            if (!cols[j]->requires_grad) continue;
            cols[j]->ensure_grad();
            for (std::size_t b = 0; b < B; ++b) cols[j]->grad[b] += self.grad.at(b, j);
        }
    });
}

NodePtr slice_col(const NodePtr& x, std::size_t j) {
    const Tensor& xv = x->value;
    if (xv.rank() != 2 || j >= xv.dim(1)) {
        throw DimensionError("slice_col: column " + std::to_string(j) + " out of range for " +
                             shape_str(xv.shape()));
    }
    const std::size_t B = xv.dim(0), S = xv.dim(1);
    Tensor out({B});
    for (std::size_t b = 0; b < B; ++b) out[b] = xv.at(b, j);
    return make_op(std::move(out), {x}, [x, j, B, S](Node& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) x->grad[b * S + j] += self.grad[b];
    });
}

NodePtr scale_rows(const NodePtr& x, const NodePtr& s) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3 || s->value.size() != xv.dim(0)) {
        throw DimensionError("scale_rows: expected [B,L,d] and [B], got " + shape_str(xv.shape()) +
                             " and " + shape_str(s->value.shape()));
    }
    const std::size_t B = xv.dim(0), LD = xv.dim(1) * xv.dim(2);
    Tensor out(xv.shape());
    for (std::size_t b = 0; b < B; ++b) {
        kernels::scale(s->value[b], xv.data() + b * LD, out.data() + b * LD, LD);
    }
    return make_op(std::move(out), {x, s}, [x, s, B, LD](Node& self) {
        for (std::size_t b = 0; b < B; ++b) {
            if (x->requires_grad) {
                x->ensure_grad();
                kernels::axpy(s->value[b], self.grad.data() + b * LD, x->grad_data() + b * LD, LD);
            }
            if (s->requires_grad) {
                s->ensure_grad();
                s->grad[b] += kernels::dot(self.grad.data() + b * LD, x->value.data() + b * LD, LD);
            }
        }
    });
}

NodePtr broadcast_rows(const NodePtr& h, std::size_t len) {
    const Tensor& hv = h->value;
    if (hv.rank() != 2) throw DimensionError("broadcast_rows: expected [B,d], got " + shape_str(hv.shape()));
    const std::size_t B = hv.dim(0), d = hv.dim(1);
    Tensor out({B, len, d});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t l = 0; l < len; ++l) {
            std::copy(hv.data() + b * d, hv.data() + (b + 1) * d, out.data() + (b * len + l) * d);
        }
    }
    return make_op(std::move(out), {h}, [h, B, len, d](Node& self) {
        if (!h->requires_grad) return;
        h->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t l = 0; l < len; ++l) {
                kernels::axpy(1.0, self.grad.data() + (b * len + l) * d, h->grad_data() + b * d, d);
            }
        }
    });
}

// ------------------------------------------------------- reductions / losses

NodePtr cosine_sim(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "cosine_sim");
    const std::size_t n = a->value.size();
    const double* av = a->value.data();
    const double* bv = b->value.data();
    double na = std::sqrt(kernels::dot(av, av, n));
    double nb = std::sqrt(kernels::dot(bv, bv, n));
    if (na <= kNormEps || nb <= kNormEps) {
        throw NumericError("cosine_sim: degenerate vector");
    }
    double c = kernels::dot(av, bv, n) / (na * nb);
    return make_op(Tensor::scalar(c), {a, b}, [a, b, na, nb, c, n](Node& self) {
        double g = self.grad[0];
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                a->grad[i] += g * (b->value[i] / (na * nb) - c * a->value[i] / (na * na));
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                b->grad[i] += g * (a->value[i] / (na * nb) - c * b->value[i] / (nb * nb));
            }
        }
    });
}

NodePtr group_means(const NodePtr& h, const std::vector<std::vector<std::size_t>>& groups) {
    const Tensor& hv = h->value;
    if (hv.rank() != 2) throw DimensionError("group_means: expected [B,d], got " + shape_str(hv.shape()));
    const std::size_t B = hv.dim(0), d = hv.dim(1);
    const std::size_t P = groups.size();
    if (P == 0) throw DimensionError("group_means: no groups");
    Tensor out({P, d});
    for (std::size_t p = 0; p < P; ++p) {
        if (groups[p].empty()) throw ValueError("group_means: empty group " + std::to_string(p));
        for (auto r : groups[p]) {
            if (r >= B) throw ValueError("group_means: row index out of range");
            kernels::axpy(1.0, hv.data() + r * d, out.data() + p * d, d);
        }
        kernels::scale(1.0 / static_cast<double>(groups[p].size()), out.data() + p * d,
                       out.data() + p * d, d);
    }
    return make_op(std::move(out), {h}, [h, groups, d](Node& self) {
        if (!h->requires_grad) return;
        h->ensure_grad();
        for (std::size_t p = 0; p < groups.size(); ++p) {
            const double w = 1.0 / static_cast<double>(groups[p].size());
            for (auto r : groups[p]) {
                kernels::axpy(w, self.grad.data() + p * d, h->grad_data() + r * d, d);
            }
        }
    });
}

NodePtr cross_entropy_from_logits(const NodePtr& logits, const std::vector<std::int64_t>& labels) {
    const Tensor& lv = logits->value;
    if (lv.rank() != 2) throw DimensionError("cross_entropy: expected [B,C], got " + shape_str(lv.shape()));
    const std::size_t B = lv.dim(0), C = lv.dim(1);
    if (labels.size() != B) throw DimensionError("cross_entropy: label count mismatch");
    for (auto y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= C) {
            throw ValueError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                             std::to_string(C) + ")");
        }
    }
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = lv.data() + b * C;
        double mx = *std::max_element(row, row + C);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        loss += std::log(z) + mx - row[static_cast<std::size_t>(labels[b])];
    }
    loss /= static_cast<double>(B);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    return make_op(Tensor::scalar(loss), {logits}, [logits, labels, B, C](Node& self) {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b) {
            const double* row = logits->value.data() + b * C;
            double mx = *std::max_element(row, row + C);
            double z = 0.0;
            for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
            double* grow = logits->grad_data() + b * C;
            for (std::size_t c = 0; c < C; ++c) {
                grow[c] += g * (std::exp(row[c] - mx) / z);
            }
            grow[static_cast<std::size_t>(labels[b])] -= g;
        }
    });
}

}  // namespace mvcl::ag
