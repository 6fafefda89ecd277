#include "saicl/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <unordered_set>

#include "saicl/error.hpp"

namespace saicl {

namespace {

void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
}

bool any_requires_grad(const std::vector<Var>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = any_requires_grad(parents);
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

} // namespace

Var make_leaf(Tensor value, bool requires_grad, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

Var constant(Tensor value) { return make_leaf(std::move(value), false); }

void backward(const Var& out) {
    if (!out->requires_grad)
        throw Error("no_grad", "backward() on a graph with no trainable leaves");
    // Iterative post-order DFS for the topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{out.get(), 0}};
    visited.insert(out.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* child = node->parents[next_child++].get();
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    ensure_grad(*out);
    out->grad.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise / shape
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    assert(a->value.same_shape(b->value));
    Tensor out = a->value;
    out.add_(b->value);
    return make_op(std::move(out), {a, b}, [](Node& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            ensure_grad(*p);
            p->grad.add_(n.grad);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    assert(a->value.same_shape(b->value));
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            ensure_grad(*n.parents[0]);
            n.parents[0]->grad.add_(n.grad);
        }
        if (n.parents[1]->requires_grad) {
            ensure_grad(*n.parents[1]);
            for (int64_t i = 0; i < n.grad.size(); ++i) n.parents[1]->grad[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    assert(a->value.same_shape(b->value));
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            ensure_grad(*n.parents[0]);
            for (int64_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            ensure_grad(*n.parents[1]);
            for (int64_t i = 0; i < n.grad.size(); ++i) n.parents[1]->grad[i] += n.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a->value;
    out.scale_(c);
    return make_op(std::move(out), {a}, [c](Node& n) {
        ensure_grad(*n.parents[0]);
        for (int64_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += c * n.grad[i];
    });
}

Var relu(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i)
        if (out[i] < 0.0) out[i] = 0.0;
    return make_op(std::move(out), {a}, [](Node& n) {
        ensure_grad(*n.parents[0]);
        const Tensor& x = n.parents[0]->value;
        for (int64_t i = 0; i < n.grad.size(); ++i)
            if (x[i] > 0.0) n.parents[0]->grad[i] += n.grad[i];
    });
}

Var tanh_op(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return make_op(std::move(out), {a}, [](Node& n) {
        ensure_grad(*n.parents[0]);
        const Tensor& y = n.value;
        for (int64_t i = 0; i < n.grad.size(); ++i)
            n.parents[0]->grad[i] += n.grad[i] * (1.0 - y[i] * y[i]);
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_op(std::move(out), {a}, [](Node& n) {
        ensure_grad(*n.parents[0]);
        const Tensor& y = n.value;
        for (int64_t i = 0; i < n.grad.size(); ++i)
            n.parents[0]->grad[i] += n.grad[i] * y[i] * (1.0 - y[i]);
    });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
    if (shape_numel(shape) != a->value.size())
        throw Error("shape_mismatch", "reshape element count mismatch");
    Tensor out(std::move(shape), a->value.vec());
    return make_op(std::move(out), {a}, [](Node& n) {
        ensure_grad(*n.parents[0]);
        for (int64_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
}

Var permute_0213(const Var& a) {
    const auto& s = a->value.shape();
    assert(s.size() == 4);
    const int64_t d0 = s[0], d1 = s[1], d2 = s[2], d3 = s[3];
    Tensor out({d0, d2, d1, d3});
    const double* src = a->value.data();
    double* dst = out.data();
    for (int64_t i = 0; i < d0; ++i)
        for (int64_t j = 0; j < d1; ++j)
            for (int64_t k = 0; k < d2; ++k) {
                const double* sp = src + (((i * d1 + j) * d2 + k) * d3);
                double* dp = dst + (((i * d2 + k) * d1 + j) * d3);
                std::copy(sp, sp + d3, dp);
            }
    return make_op(std::move(out), {a}, [d0, d1, d2, d3](Node& n) {
        ensure_grad(*n.parents[0]);
        const double* g = n.grad.data();
        double* pg = n.parents[0]->grad.data();
        for (int64_t i = 0; i < d0; ++i)
            for (int64_t j = 0; j < d1; ++j)
                for (int64_t k = 0; k < d2; ++k) {
                    const double* gp = g + (((i * d2 + k) * d1 + j) * d3);
                    double* dp = pg + (((i * d1 + j) * d2 + k) * d3);
                    for (int64_t x = 0; x < d3; ++x) dp[x] += gp[x];
                }
    });
}

Var slice_rows(const Var& a, int64_t start, int64_t count) {
    const auto& s = a->value.shape();
    assert(s.size() == 2 && start + count <= s[0]);
    const int64_t cols = s[1];
    Tensor out({count, cols});
    std::copy(a->value.data() + start * cols, a->value.data() + (start + count) * cols, out.data());
    return make_op(std::move(out), {a}, [start, cols, count](Node& n) {
        ensure_grad(*n.parents[0]);
        double* pg = n.parents[0]->grad.data() + start * cols;
        const double* g = n.grad.data();
        for (int64_t i = 0; i < count * cols; ++i) pg[i] += g[i];
    });
}

Var concat_rows(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    assert(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[1]);
    Tensor out({sa[0] + sb[0], sa[1]});
    std::copy(a->value.data(), a->value.data() + a->value.size(), out.data());
    std::copy(b->value.data(), b->value.data() + b->value.size(), out.data() + a->value.size());
    const int64_t na = a->value.size();
    return make_op(std::move(out), {a, b}, [na](Node& n) {
        if (n.parents[0]->requires_grad) {
            ensure_grad(*n.parents[0]);
            for (int64_t i = 0; i < na; ++i) n.parents[0]->grad[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            ensure_grad(*n.parents[1]);
            const int64_t nb = n.grad.size() - na;
            for (int64_t i = 0; i < nb; ++i) n.parents[1]->grad[i] += n.grad[na + i];
        }
    });
}

Var gather_rows(const Var& a, std::vector<int64_t> idx) {
    const auto& s = a->value.shape();
    assert(s.size() == 2);
    const int64_t cols = s[1];
    Tensor out({static_cast<int64_t>(idx.size()), cols});
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(a->value.data() + idx[i] * cols, a->value.data() + (idx[i] + 1) * cols,
                  out.data() + static_cast<int64_t>(i) * cols);
    return make_op(std::move(out), {a}, [idx = std::move(idx), cols](Node& n) {
        ensure_grad(*n.parents[0]);
        double* pg = n.parents[0]->grad.data();
        const double* g = n.grad.data();
        for (size_t i = 0; i < idx.size(); ++i) {
            double* dst = pg + idx[i] * cols;
            const double* src = g + static_cast<int64_t>(i) * cols;
            for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
    });
}

Var gather_cols_per_row(const Var& a, std::vector<int64_t> idx) {
    const auto& s = a->value.shape();
    assert(s.size() == 2 && static_cast<int64_t>(idx.size()) == s[0]);
    const int64_t cols = s[1];
    Tensor out({s[0]});
    for (int64_t i = 0; i < s[0]; ++i) out[i] = a->value.at(i, idx[i]);
    return make_op(std::move(out), {a}, [idx = std::move(idx), cols](Node& n) {
        ensure_grad(*n.parents[0]);
        for (size_t i = 0; i < idx.size(); ++i)
            n.parents[0]->grad[static_cast<int64_t>(i) * cols + idx[i]] += n.grad[static_cast<int64_t>(i)];
    });
}

Var mask_positions(const Var& a, const Tensor& mask) {
    const int64_t positions = mask.size();
    const int64_t stride = a->value.size() / positions;
    Tensor out = a->value;
    for (int64_t p = 0; p < positions; ++p)
        if (mask[p] == 0.0)
            std::fill(out.data() + p * stride, out.data() + (p + 1) * stride, 0.0);
    return make_op(std::move(out), {a}, [mask, positions, stride](Node& n) {
        ensure_grad(*n.parents[0]);
        for (int64_t p = 0; p < positions; ++p) {
            if (mask[p] == 0.0) continue;
            const double* g = n.grad.data() + p * stride;
            double* pg = n.parents[0]->grad.data() + p * stride;
            for (int64_t i = 0; i < stride; ++i) pg[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    assert(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0]);
    const int64_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out({m, n});
    gemm(false, false, m, n, k, a->value.data(), k, b->value.data(), n, out.data(), n, 0.0);
    return make_op(std::move(out), {a, b}, [m, n, k](Node& nd) {
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        if (nd.parents[0]->requires_grad) {
            ensure_grad(*nd.parents[0]);
            gemm(false, true, m, k, n, nd.grad.data(), n, bv.data(), n,
                 nd.parents[0]->grad.data(), k, 1.0);
        }
        if (nd.parents[1]->requires_grad) {
            ensure_grad(*nd.parents[1]);
            gemm(true, false, k, n, m, av.data(), k, nd.grad.data(), n,
                 nd.parents[1]->grad.data(), n, 1.0);
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    assert(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[1]);
    const int64_t m = sa[0], k = sa[1], n = sb[0];
    Tensor out({m, n});
    gemm(false, true, m, n, k, a->value.data(), k, b->value.data(), k, out.data(), n, 0.0);
    return make_op(std::move(out), {a, b}, [m, n, k](Node& nd) {
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        if (nd.parents[0]->requires_grad) {
            ensure_grad(*nd.parents[0]);
            gemm(false, false, m, k, n, nd.grad.data(), n, bv.data(), k,
                 nd.parents[0]->grad.data(), k, 1.0);
        }
        if (nd.parents[1]->requires_grad) {
            ensure_grad(*nd.parents[1]);
            gemm(true, false, n, k, m, nd.grad.data(), n, av.data(), k,
                 nd.parents[1]->grad.data(), k, 1.0);
        }
    });
}

namespace {

Var linear_impl(const Var& x, const Var& w, const Var* b) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    const int64_t in = sw[0], out_dim = sw[1];
    assert(sx.back() == in);
    const int64_t rows = x->value.size() / in;
    std::vector<int64_t> out_shape = sx;
    out_shape.back() = out_dim;
    Tensor out(out_shape);
    gemm(false, false, rows, out_dim, in, x->value.data(), in, w->value.data(), out_dim,
         out.data(), out_dim, 0.0);
    if (b) {
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += (*b)->value[c];
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(*b);
    return make_op(std::move(out), std::move(parents), [rows, in, out_dim](Node& nd) {
        const Var& xp = nd.parents[0];
        const Var& wp = nd.parents[1];
        if (xp->requires_grad) {
            ensure_grad(*xp);
            gemm(false, true, rows, in, out_dim, nd.grad.data(), out_dim, wp->value.data(), out_dim,
                 xp->grad.data(), in, 1.0);
        }
        if (wp->requires_grad) {
            ensure_grad(*wp);
            gemm(true, false, in, out_dim, rows, xp->value.data(), in, nd.grad.data(), out_dim,
                 wp->grad.data(), out_dim, 1.0);
        }
        if (nd.parents.size() == 3 && nd.parents[2]->requires_grad) {
            ensure_grad(*nd.parents[2]);
            double* bg = nd.parents[2]->grad.data();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < out_dim; ++c) bg[c] += nd.grad[r * out_dim + c];
        }
    });
}

} // namespace

Var linear(const Var& x, const Var& w, const Var& b) { return linear_impl(x, w, &b); }
Var linear_nobias(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }

Var bmm(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    assert(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1]);
    const int64_t g = sa[0], m = sa[1], k = sa[2], n = sb[2];
    Tensor out({g, m, n});
    for (int64_t i = 0; i < g; ++i)
        gemm(false, false, m, n, k, a->value.data() + i * m * k, k, b->value.data() + i * k * n, n,
             out.data() + i * m * n, n, 0.0);
    return make_op(std::move(out), {a, b}, [g, m, n, k](Node& nd) {
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        for (int64_t i = 0; i < g; ++i) {
            if (nd.parents[0]->requires_grad) {
                ensure_grad(*nd.parents[0]);
                gemm(false, true, m, k, n, nd.grad.data() + i * m * n, n, bv.data() + i * k * n, n,
                     nd.parents[0]->grad.data() + i * m * k, k, 1.0);
            }
            if (nd.parents[1]->requires_grad) {
                ensure_grad(*nd.parents[1]);
                gemm(true, false, k, n, m, av.data() + i * m * k, k, nd.grad.data() + i * m * n, n,
                     nd.parents[1]->grad.data() + i * k * n, n, 1.0);
            }
        }
    });
}

Var bmm_nt(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    assert(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2]);
    const int64_t g = sa[0], m = sa[1], k = sa[2], n = sb[1];
    Tensor out({g, m, n});
    for (int64_t i = 0; i < g; ++i)
        gemm(false, true, m, n, k, a->value.data() + i * m * k, k, b->value.data() + i * n * k, k,
             out.data() + i * m * n, n, 0.0);
    return make_op(std::move(out), {a, b}, [g, m, n, k](Node& nd) {
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        for (int64_t i = 0; i < g; ++i) {
            if (nd.parents[0]->requires_grad) {
                ensure_grad(*nd.parents[0]);
                gemm(false, false, m, k, n, nd.grad.data() + i * m * n, n, bv.data() + i * n * k, k,
                     nd.parents[0]->grad.data() + i * m * k, k, 1.0);
            }
            if (nd.parents[1]->requires_grad) {
                ensure_grad(*nd.parents[1]);
                gemm(true, false, n, k, m, nd.grad.data() + i * m * n, n, av.data() + i * m * k, k,
                     nd.parents[1]->grad.data() + i * n * k, k, 1.0);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// normalization / regularization
// ---------------------------------------------------------------------------

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const int64_t d = x->value.shape().back();
    const int64_t rows = x->value.size() / d;
    Tensor out(x->value.shape());
    Tensor xhat(x->value.shape());
    Tensor inv_std({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const double* xp = x->value.data() + r * d;
        double mean = 0.0;
        for (int64_t i = 0; i < d; ++i) mean += xp[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) var += (xp[i] - mean) * (xp[i] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int64_t i = 0; i < d; ++i) {
            const double xh = (xp[i] - mean) * is;
            xhat[r * d + i] = xh;
            out[r * d + i] = gamma->value[i] * xh + beta->value[i];
        }
    }
    return make_op(std::move(out), {x, gamma, beta},
                   [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& nd) {
        const Var& xp = nd.parents[0];
        const Var& gp = nd.parents[1];
        const Var& bp = nd.parents[2];
        if (gp->requires_grad) ensure_grad(*gp);
        if (bp->requires_grad) ensure_grad(*bp);
        if (xp->requires_grad) ensure_grad(*xp);
        for (int64_t r = 0; r < rows; ++r) {
            const double* g = nd.grad.data() + r * d;
            const double* xh = xhat.data() + r * d;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                const double dxhat = g[i] * gp->value[i];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh[i];
                if (gp->requires_grad) gp->grad[i] += g[i] * xh[i];
                if (bp->requires_grad) bp->grad[i] += g[i];
            }
            if (xp->requires_grad) {
                const double is = inv_std[r];
                for (int64_t i = 0; i < d; ++i) {
                    const double dxhat = g[i] * gp->value[i];
                    xp->grad[r * d + i] +=
                        is * (dxhat - sum_dxhat / static_cast<double>(d) -
                              xh[i] * sum_dxhat_xhat / static_cast<double>(d));
                }
            }
        }
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    const int64_t d = x->value.shape().back();
    const int64_t rows = x->value.size() / d;
    Tensor out(x->value.shape());
    Tensor norms({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const double* xp = x->value.data() + r * d;
        double ss = 0.0;
        for (int64_t i = 0; i < d; ++i) ss += xp[i] * xp[i];
        const double nrm = std::sqrt(ss);
        norms[r] = nrm;
        if (nrm <= eps) {
            std::copy(xp, xp + d, out.data() + r * d);
        } else {
            for (int64_t i = 0; i < d; ++i) out[r * d + i] = xp[i] / nrm;
        }
    }
    return make_op(std::move(out), {x}, [rows, d, eps, norms = std::move(norms)](Node& nd) {
        ensure_grad(*nd.parents[0]);
        const Tensor& xv = nd.parents[0]->value;
        for (int64_t r = 0; r < rows; ++r) {
            const double nrm = norms[r];
            const double* g = nd.grad.data() + r * d;
            double* pg = nd.parents[0]->grad.data() + r * d;
            if (nrm <= eps) {
                for (int64_t i = 0; i < d; ++i) pg[i] += g[i];
                continue;
            }
            const double* xp = xv.data() + r * d;
            double dot = 0.0;
            for (int64_t i = 0; i < d; ++i) dot += g[i] * xp[i];
            const double inv = 1.0 / nrm;
            const double inv3 = inv * inv * inv;
            for (int64_t i = 0; i < d; ++i) pg[i] += g[i] * inv - xp[i] * dot * inv3;
        }
    });
}

Var dropout(const Var& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    const double keep = 1.0 - p;
    Tensor mask(x->value.shape());
    for (int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : 1.0 / keep;
    Tensor out = x->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return make_op(std::move(out), {x}, [mask = std::move(mask)](Node& nd) {
        ensure_grad(*nd.parents[0]);
        for (int64_t i = 0; i < nd.grad.size(); ++i)
            nd.parents[0]->grad[i] += nd.grad[i] * mask[i];
    });
}

Var masked_softmax_last(const Var& scores, const Tensor& allowed, int64_t broadcast_groups) {
    // Layout contract: scores iterate as (G, H, Lq, C) with H = broadcast_groups
    // (the head axis the mask is shared across); allowed iterates as (G, Lq, C).
    const auto& sh = scores->value.shape();
    const int64_t cols = sh.back();
    const int64_t rows = scores->value.size() / cols;
    const int64_t mask_rows = allowed.size() / cols;
    const int64_t H = broadcast_groups > 0 ? broadcast_groups : 1;
    if (mask_rows * H != rows)
        throw Error("shape_mismatch", "masked_softmax_last mask does not tile scores");
    const int64_t Lq = sh.size() >= 2 ? sh[sh.size() - 2] : 1;

    Tensor probs(scores->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t q = r % Lq;
        const int64_t g = r / (H * Lq);
        const int64_t mrow = g * Lq + q;
        const double* s = scores->value.data() + r * cols;
        const double* m = allowed.data() + mrow * cols;
        double* o = probs.data() + r * cols;
        double mx = -1e308;
        bool any = false;
        for (int64_t c = 0; c < cols; ++c)
            if (m[c] != 0.0) {
                any = true;
                if (s[c] > mx) mx = s[c];
            }
        if (!any) {
            std::fill(o, o + cols, 0.0);
            continue;
        }
        double z = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            if (m[c] != 0.0) {
                o[c] = std::exp(s[c] - mx);
                z += o[c];
            } else {
                o[c] = 0.0;
            }
        }
        for (int64_t c = 0; c < cols; ++c) o[c] /= z;
    }
    return make_op(std::move(probs), {scores}, [rows, cols](Node& nd) {
        ensure_grad(*nd.parents[0]);
        const Tensor& y = nd.value;
        for (int64_t r = 0; r < rows; ++r) {
            const double* g = nd.grad.data() + r * cols;
            const double* p = y.data() + r * cols;
            double dot = 0.0;
            for (int64_t c = 0; c < cols; ++c) dot += g[c] * p[c];
            double* pg = nd.parents[0]->grad.data() + r * cols;
            for (int64_t c = 0; c < cols; ++c) pg[c] += p[c] * (g[c] - dot);
        }
    });
}

Var masked_mean_pool(const Var& x, const Tensor& mask) {
    const auto& s = x->value.shape();
    assert(s.size() == 3);
    const int64_t B = s[0], L = s[1], D = s[2];
    Tensor out({B, D});
    Tensor counts({B});
    for (int64_t b = 0; b < B; ++b) {
        double cnt = 0.0;
        for (int64_t t = 0; t < L; ++t) {
            if (mask[b * L + t] == 0.0) continue;
            cnt += 1.0;
            const double* xp = x->value.data() + (b * L + t) * D;
            double* op = out.data() + b * D;
            for (int64_t d = 0; d < D; ++d) op[d] += xp[d];
        }
        counts[b] = cnt;
        if (cnt > 0.0)
            for (int64_t d = 0; d < D; ++d) out[b * D + d] /= cnt;
    }
    return make_op(std::move(out), {x}, [B, L, D, mask, counts = std::move(counts)](Node& nd) {
        ensure_grad(*nd.parents[0]);
        for (int64_t b = 0; b < B; ++b) {
            if (counts[b] == 0.0) continue;
            const double inv = 1.0 / counts[b];
            const double* g = nd.grad.data() + b * D;
            for (int64_t t = 0; t < L; ++t) {
                if (mask[b * L + t] == 0.0) continue;
                double* pg = nd.parents[0]->grad.data() + (b * L + t) * D;
                for (int64_t d = 0; d < D; ++d) pg[d] += g[d] * inv;
            }
        }
    });
}

Var shift_right_with_token(const Var& x, const Var& token) {
    const auto& s = x->value.shape();
    assert(s.size() == 3 && token->value.size() == s[2]);
    const int64_t B = s[0], L = s[1], D = s[2];
    Tensor out({B, L, D});
    for (int64_t b = 0; b < B; ++b) {
        std::copy(token->value.data(), token->value.data() + D, out.data() + b * L * D);
        if (L > 1)
            std::copy(x->value.data() + b * L * D, x->value.data() + (b * L + L - 1) * D,
                      out.data() + (b * L + 1) * D);
    }
    return make_op(std::move(out), {x, token}, [B, L, D](Node& nd) {
        if (nd.parents[1]->requires_grad) {
            ensure_grad(*nd.parents[1]);
            for (int64_t b = 0; b < B; ++b) {
                const double* g = nd.grad.data() + b * L * D;
                for (int64_t d = 0; d < D; ++d) nd.parents[1]->grad[d] += g[d];
            }
        }
        if (nd.parents[0]->requires_grad) {
            ensure_grad(*nd.parents[0]);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 1; t < L; ++t) {
                    const double* g = nd.grad.data() + (b * L + t) * D;
                    double* pg = nd.parents[0]->grad.data() + (b * L + t - 1) * D;
                    for (int64_t d = 0; d < D; ++d) pg[d] += g[d];
                }
        }
    });
}

Var broadcast_add_rows(const Var& x, const Var& rows) {
    const auto& s = x->value.shape();
    assert(s.size() == 3 && rows->value.shape()[0] >= s[1] && rows->value.shape()[1] == s[2]);
    const int64_t B = s[0], L = s[1], D = s[2];
    Tensor out = x->value;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < L; ++t) {
            double* o = out.data() + (b * L + t) * D;
            const double* r = rows->value.data() + t * D;
            for (int64_t d = 0; d < D; ++d) o[d] += r[d];
        }
    return make_op(std::move(out), {x, rows}, [B, L, D](Node& nd) {
        if (nd.parents[0]->requires_grad) {
            ensure_grad(*nd.parents[0]);
            nd.parents[0]->grad.add_(nd.grad);
        }
        if (nd.parents[1]->requires_grad) {
            ensure_grad(*nd.parents[1]);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < L; ++t) {
                    const double* g = nd.grad.data() + (b * L + t) * D;
                    double* rg = nd.parents[1]->grad.data() + t * D;
                    for (int64_t d = 0; d < D; ++d) rg[d] += g[d];
                }
        }
    });
}

Var embedding_sum(const std::vector<std::vector<int32_t>>& index_sets, const std::vector<Var>& tables,
                  const std::vector<std::vector<double>>& value_sets, const std::vector<Var>& weights,
                  int64_t rows, int64_t dim) {
    assert(index_sets.size() == tables.size() && value_sets.size() == weights.size());
    Tensor out({rows, dim});
    for (size_t f = 0; f < tables.size(); ++f) {
        const int64_t card = tables[f]->value.shape()[0];
        const double* tab = tables[f]->value.data();
        for (int64_t r = 0; r < rows; ++r) {
            const int32_t idx = index_sets[f][r];
            if (idx < 0 || idx >= card)
                throw Error("embedding_oob", "feature index " + std::to_string(idx) +
                                                 " outside table of " + std::to_string(card));
            const double* src = tab + static_cast<int64_t>(idx) * dim;
            double* dst = out.data() + r * dim;
            for (int64_t d = 0; d < dim; ++d) dst[d] += src[d];
        }
    }
    for (size_t g = 0; g < weights.size(); ++g) {
        const double* w = weights[g]->value.data();
        for (int64_t r = 0; r < rows; ++r) {
            const double v = value_sets[g][r];
            if (v == 0.0) continue;
            double* dst = out.data() + r * dim;
            for (int64_t d = 0; d < dim; ++d) dst[d] += v * w[d];
        }
    }
    std::vector<Var> parents = tables;
    parents.insert(parents.end(), weights.begin(), weights.end());
    const size_t n_tables = tables.size();
    return make_op(std::move(out), std::move(parents),
                   [index_sets, value_sets, rows, dim, n_tables](Node& nd) {
        for (size_t f = 0; f < n_tables; ++f) {
            Var& tab = nd.parents[f];
            if (!tab->requires_grad) continue;
            ensure_grad(*tab);
            for (int64_t r = 0; r < rows; ++r) {
                double* dst = tab->grad.data() + static_cast<int64_t>(index_sets[f][r]) * dim;
                const double* g = nd.grad.data() + r * dim;
                for (int64_t d = 0; d < dim; ++d) dst[d] += g[d];
            }
        }
        for (size_t g = 0; g + n_tables < nd.parents.size(); ++g) {
            Var& w = nd.parents[n_tables + g];
            if (!w->requires_grad) continue;
            ensure_grad(*w);
            for (int64_t r = 0; r < rows; ++r) {
                const double v = value_sets[g][r];
                if (v == 0.0) continue;
                const double* gr = nd.grad.data() + r * dim;
                for (int64_t d = 0; d < dim; ++d) w->grad[d] += v * gr[d];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// fused sequence ops
// ---------------------------------------------------------------------------

Var lstm(const Var& x, const Var& w_ih, const Var& w_hh, const Var& bias) {
    const auto& s = x->value.shape();
    assert(s.size() == 3);
    const int64_t B = s[0], L = s[1], D = s[2];
    const int64_t H = w_hh->value.shape()[0];
    assert(w_ih->value.shape()[0] == D && w_ih->value.shape()[1] == 4 * H);
    assert(w_hh->value.shape()[1] == 4 * H);

    Tensor hs({B, L, H});
    Tensor cs({B, L, H});     // cell states post-update
    Tensor gates({B, L, 4 * H}); // activated gates (i,f,g,o)
    Tensor a({B, 4 * H});     // preactivation scratch per step

    std::vector<double> h_prev(static_cast<size_t>(B * H), 0.0);
    std::vector<double> c_prev(static_cast<size_t>(B * H), 0.0);

    for (int64_t t = 0; t < L; ++t) {
        // a = x_t W_ih + h_prev W_hh + b
        for (int64_t b = 0; b < B; ++b)
            for (int64_t j = 0; j < 4 * H; ++j) a.at(b, j) = bias->value[j];
        // x_t rows are strided inside x; gather via gemm on strided rows.
        gemm(false, false, B, 4 * H, D, x->value.data() + t * D, L * D,
             w_ih->value.data(), 4 * H, a.data(), 4 * H, 1.0);
        gemm(false, false, B, 4 * H, H, h_prev.data(), H, w_hh->value.data(), 4 * H,
             a.data(), 4 * H, 1.0);
        for (int64_t b = 0; b < B; ++b) {
            double* gt = gates.data() + (b * L + t) * 4 * H;
            const double* ab = a.data() + b * 4 * H;
            double* ht = hs.data() + (b * L + t) * H;
            double* ct = cs.data() + (b * L + t) * H;
            const double* cp = c_prev.data() + b * H;
            for (int64_t j = 0; j < H; ++j) {
                const double ig = 1.0 / (1.0 + std::exp(-ab[j]));
                const double fg = 1.0 / (1.0 + std::exp(-ab[H + j]));
                const double gg = std::tanh(ab[2 * H + j]);
                const double og = 1.0 / (1.0 + std::exp(-ab[3 * H + j]));
                gt[j] = ig;
                gt[H + j] = fg;
                gt[2 * H + j] = gg;
                gt[3 * H + j] = og;
                const double c = fg * cp[j] + ig * gg;
                ct[j] = c;
                ht[j] = og * std::tanh(c);
            }
        }
        for (int64_t b = 0; b < B; ++b) {
            std::copy(hs.data() + (b * L + t) * H, hs.data() + (b * L + t) * H + H,
                      h_prev.data() + b * H);
            std::copy(cs.data() + (b * L + t) * H, cs.data() + (b * L + t) * H + H,
                      c_prev.data() + b * H);
        }
    }

    Tensor out = hs;
    return make_op(std::move(out), {x, w_ih, w_hh, bias},
                   [B, L, D, H, gates = std::move(gates), cs = std::move(cs),
                    hs = std::move(hs)](Node& nd) {
        const Var& xp = nd.parents[0];
        const Var& wihp = nd.parents[1];
        const Var& whhp = nd.parents[2];
        const Var& bp = nd.parents[3];
        for (auto& p : nd.parents)
            if (p->requires_grad) ensure_grad(*p);

        Tensor dh({B, H});     // dL/dh_t carried backward
        Tensor dc({B, H});
        Tensor da({B, 4 * H}); // preactivation grads per step

        for (int64_t t = L - 1; t >= 0; --t) {
            for (int64_t b = 0; b < B; ++b) {
                const double* g = nd.grad.data() + (b * L + t) * H;
                const double* gt = gates.data() + (b * L + t) * 4 * H;
                const double* ct = cs.data() + (b * L + t) * H;
                double* dhb = dh.data() + b * H;
                double* dcb = dc.data() + b * H;
                double* dab = da.data() + b * 4 * H;
                for (int64_t j = 0; j < H; ++j) {
                    const double dht = dhb[j] + g[j];
                    const double tc = std::tanh(ct[j]);
                    const double o = gt[3 * H + j];
                    const double dct = dcb[j] + dht * o * (1.0 - tc * tc);
                    const double i = gt[j], f = gt[H + j], gg = gt[2 * H + j];
                    const double cprev =
                        (t > 0) ? cs[(b * L + t - 1) * H + j] : 0.0;
                    dab[j] = dct * gg * i * (1.0 - i);
                    dab[H + j] = dct * cprev * f * (1.0 - f);
                    dab[2 * H + j] = dct * i * (1.0 - gg * gg);
                    dab[3 * H + j] = dht * tc * o * (1.0 - o);
                    dcb[j] = dct * f; // becomes dc_{t-1}
                }
            }
            // dh_prev = da W_hh^T ; dx_t = da W_ih^T ; weight grads accumulate
            if (whhp->requires_grad && t > 0) {
                // h_{t-1} rows strided inside hs
                gemm(true, false, H, 4 * H, B, hs.data() + (t - 1) * H, L * H, da.data(), 4 * H,
                     whhp->grad.data(), 4 * H, 1.0);
            }
            if (wihp->requires_grad) {
                gemm(true, false, D, 4 * H, B, xp->value.data() + t * D, L * D, da.data(), 4 * H,
                     wihp->grad.data(), 4 * H, 1.0);
            }
            if (bp->requires_grad) {
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t j = 0; j < 4 * H; ++j) bp->grad[j] += da.at(b, j);
            }
            if (xp->requires_grad) {
                gemm(false, true, B, D, 4 * H, da.data(), 4 * H, wihp->value.data(), 4 * H,
                     xp->grad.data() + t * D, L * D, 1.0);
            }
            dh.fill(0.0);
            gemm(false, true, B, H, 4 * H, da.data(), 4 * H, whhp->value.data(), 4 * H,
                 dh.data(), H, 1.0);
        }
    });
}

Var conv1d_same(const Var& x, const Var& w, const Var& bias) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    assert(sx.size() == 3 && sw.size() == 3 && sw[1] == sx[2]);
    const int64_t B = sx[0], L = sx[1], Cin = sx[2];
    const int64_t Cout = sw[0], K = sw[2];
    const int64_t pad = K / 2;
    Tensor out({B, L, Cout});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < L; ++t) {
            double* o = out.data() + (b * L + t) * Cout;
            for (int64_t oc = 0; oc < Cout; ++oc) o[oc] = bias->value[oc];
            for (int64_t k = 0; k < K; ++k) {
                const int64_t src = t + k - pad;
                if (src < 0 || src >= L) continue;
                const double* xp = x->value.data() + (b * L + src) * Cin;
                for (int64_t oc = 0; oc < Cout; ++oc) {
                    const double* wp = w->value.data() + (oc * Cin) * K + k;
                    double acc = 0.0;
                    for (int64_t ic = 0; ic < Cin; ++ic) acc += wp[ic * K] * xp[ic];
                    o[oc] += acc;
                }
            }
        }
    return make_op(std::move(out), {x, w, bias}, [B, L, Cin, Cout, K, pad](Node& nd) {
        const Var& xp = nd.parents[0];
        const Var& wp = nd.parents[1];
        const Var& bp = nd.parents[2];
        for (auto& p : nd.parents)
            if (p->requires_grad) ensure_grad(*p);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < L; ++t) {
                const double* g = nd.grad.data() + (b * L + t) * Cout;
                if (bp->requires_grad)
                    for (int64_t oc = 0; oc < Cout; ++oc) bp->grad[oc] += g[oc];
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t src = t + k - pad;
                    if (src < 0 || src >= L) continue;
                    const double* xv = xp->value.data() + (b * L + src) * Cin;
                    double* xg = xp->requires_grad ? xp->grad.data() + (b * L + src) * Cin : nullptr;
                    for (int64_t oc = 0; oc < Cout; ++oc) {
                        const double go = g[oc];
                        if (go == 0.0) continue;
                        const double* wv = wp->value.data() + (oc * Cin) * K + k;
                        double* wg = wp->requires_grad ? wp->grad.data() + (oc * Cin) * K + k : nullptr;
                        for (int64_t ic = 0; ic < Cin; ++ic) {
                            if (xg) xg[ic] += go * wv[ic * K];
                            if (wg) wg[ic * K] += go * xv[ic];
                        }
                    }
                }
            }
    });
}

Var batch_norm_masked(const Var& x, const Var& gamma, const Var& beta,
                      const Tensor& mask, Tensor& running_mean, Tensor& running_var,
                      bool training, double momentum, double eps) {
    const auto& s = x->value.shape();
    assert(s.size() == 3);
    const int64_t B = s[0], L = s[1], C = s[2];
    Tensor mean({C}), var({C});
    int64_t n = 0;
    if (training) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < L; ++t) {
                if (mask[b * L + t] == 0.0) continue;
                ++n;
                const double* xp = x->value.data() + (b * L + t) * C;
                for (int64_t c = 0; c < C; ++c) mean[c] += xp[c];
            }
        if (n == 0) throw Error("empty_batch", "batch norm over a fully masked batch");
        for (int64_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(n);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < L; ++t) {
                if (mask[b * L + t] == 0.0) continue;
                const double* xp = x->value.data() + (b * L + t) * C;
                for (int64_t c = 0; c < C; ++c) {
                    const double d = xp[c] - mean[c];
                    var[c] += d * d;
                }
            }
        for (int64_t c = 0; c < C; ++c) var[c] /= static_cast<double>(n);
        const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        for (int64_t c = 0; c < C; ++c) {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] * unbias;
        }
    } else {
        mean = running_mean;
        var = running_var;
    }
    Tensor inv_std({C});
    for (int64_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    Tensor out({B, L, C});
    Tensor xhat({B, L, C});
    for (int64_t p = 0; p < B * L; ++p) {
        const double* xp = x->value.data() + p * C;
        double* op = out.data() + p * C;
        double* hp = xhat.data() + p * C;
        for (int64_t c = 0; c < C; ++c) {
            const double xh = (xp[c] - mean[c]) * inv_std[c];
            hp[c] = xh;
            op[c] = gamma->value[c] * xh + beta->value[c];
        }
    }
    // Backward assumes no gradient arrives at masked positions (they are
    // re-masked before any cross-position op consumes them), so the batch
    // statistics terms only involve valid positions.
    return make_op(std::move(out), {x, gamma, beta},
                   [B, L, C, n, training, mask, inv_std = std::move(inv_std),
                    xhat = std::move(xhat)](Node& nd) {
        const Var& xp = nd.parents[0];
        const Var& gp = nd.parents[1];
        const Var& bp = nd.parents[2];
        for (auto& p : nd.parents)
            if (p->requires_grad) ensure_grad(*p);
        Tensor sum_dxhat({C}), sum_dxhat_xhat({C});
        for (int64_t p = 0; p < B * L; ++p) {
            if (mask[p] == 0.0) continue;
            const double* g = nd.grad.data() + p * C;
            const double* xh = xhat.data() + p * C;
            for (int64_t c = 0; c < C; ++c) {
                const double dxh = g[c] * gp->value[c];
                sum_dxhat[c] += dxh;
                sum_dxhat_xhat[c] += dxh * xh[c];
                if (gp->requires_grad) gp->grad[c] += g[c] * xh[c];
                if (bp->requires_grad) bp->grad[c] += g[c];
            }
        }
        if (!xp->requires_grad) return;
        const double invn = training && n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
        for (int64_t p = 0; p < B * L; ++p) {
            const double* g = nd.grad.data() + p * C;
            const double* xh = xhat.data() + p * C;
            double* pg = xp->grad.data() + p * C;
            const bool valid = mask[p] != 0.0;
            for (int64_t c = 0; c < C; ++c) {
                const double dxh = g[c] * gp->value[c];
                double dx = dxh;
                if (training && valid)
                    dx -= invn * (sum_dxhat[c] + xh[c] * sum_dxhat_xhat[c]);
                pg[c] += dx * inv_std[c];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Var bce_mean(const Var& probs, const Tensor& labels, const Tensor& mask) {
    const int64_t n = probs->value.size();
    int64_t count = 0;
    double total = 0.0;
    constexpr double kClamp = 1e-7;
    for (int64_t i = 0; i < n; ++i) {
        if (mask[i] == 0.0) continue;
        ++count;
        const double p = std::min(std::max(probs->value[i], kClamp), 1.0 - kClamp);
        total += labels[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
    }
    if (count == 0) throw Error("no_labels", "cross-entropy over an empty valid set");
    Tensor out = Tensor::scalar(total / static_cast<double>(count));
    return make_op(std::move(out), {probs}, [labels, mask, count, n](Node& nd) {
        ensure_grad(*nd.parents[0]);
        const double g = nd.grad[0] / static_cast<double>(count);
        const Tensor& pv = nd.parents[0]->value;
        for (int64_t i = 0; i < n; ++i) {
            if (mask[i] == 0.0) continue;
            const double p = std::min(std::max(pv[i], 1e-7), 1.0 - 1e-7);
            // d/dp of clamped BCE is zero outside the clamp window
            if (pv[i] <= 1e-7 || pv[i] >= 1.0 - 1e-7) continue;
            nd.parents[0]->grad[i] += g * (labels[i] > 0.5 ? -1.0 / p : 1.0 / (1.0 - p));
        }
    });
}

Var grouped_infonce(const Var& sim, const std::vector<std::vector<int32_t>>& positives,
                    const std::vector<int64_t>& excluded_col, int64_t* active_anchors) {
    const auto& s = sim->value.shape();
    assert(s.size() == 2);
    const int64_t A = s[0], C = s[1];
    assert(static_cast<int64_t>(positives.size()) == A);
    double total = 0.0;
    int64_t active = 0;
    // Per anchor log-sum-exp over candidates (all columns except excluded).
    Tensor lse({A});
    Tensor has_pos({A});
    for (int64_t a = 0; a < A; ++a) {
        if (positives[a].empty()) continue;
        has_pos[a] = 1.0;
        ++active;
        const double* row = sim->value.data() + a * C;
        const int64_t ex = excluded_col[a];
        double mx = -1e308;
        for (int64_t c = 0; c < C; ++c)
            if (c != ex && row[c] > mx) mx = row[c];
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c)
            if (c != ex) z += std::exp(row[c] - mx);
        const double l = mx + std::log(z);
        lse[a] = l;
        double pos_sum = 0.0;
        for (int32_t p : positives[a]) pos_sum += row[p];
        total += l - pos_sum / static_cast<double>(positives[a].size());
    }
    if (active_anchors) *active_anchors = active;
    Tensor out = Tensor::scalar(total);
    return make_op(std::move(out), {sim},
                   [A, C, positives, excluded_col, lse = std::move(lse),
                    has_pos = std::move(has_pos)](Node& nd) {
        ensure_grad(*nd.parents[0]);
        const double g = nd.grad[0];
        const Tensor& sv = nd.parents[0]->value;
        for (int64_t a = 0; a < A; ++a) {
            if (has_pos[a] == 0.0) continue;
            const double* row = sv.data() + a * C;
            double* rg = nd.parents[0]->grad.data() + a * C;
            const int64_t ex = excluded_col[a];
            for (int64_t c = 0; c < C; ++c)
                if (c != ex) rg[c] += g * std::exp(row[c] - lse[a]);
            const double w = g / static_cast<double>(positives[a].size());
            for (int32_t p : positives[a]) rg[p] -= w;
        }
    });
}

} // namespace saicl
