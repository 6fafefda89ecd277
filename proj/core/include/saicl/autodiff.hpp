#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "saicl/rng.hpp"
#include "saicl/tensor.hpp"

namespace saicl {

// Reverse-mode autodiff over Tensor values. Ops build an implicit graph of
// shared Nodes; backward() runs the tape in reverse topological order.
//
// Gradients accumulate into Node::grad, so one leaf may feed the graph any
// number of times (parameter sharing).
struct Node {
    Tensor value;
    Tensor grad; // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn; // pushes grad into parents
    std::string name;                       // leaves only; used in diagnostics
};

using Var = std::shared_ptr<Node>;

Var make_leaf(Tensor value, bool requires_grad = false, std::string name = {});
Var constant(Tensor value);

// Seeds d(out)/d(out) = 1 (scalar outputs) and propagates to all leaves.
void backward(const Var& out);

// ---- elementwise / shape ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var relu(const Var& a);
Var tanh_op(const Var& a);
Var sigmoid(const Var& a);
Var reshape(const Var& a, std::vector<int64_t> shape);
// (d0,d1,d2,d3) -> (d0,d2,d1,d3); applying it twice is the identity.
Var permute_0213(const Var& a);
Var slice_rows(const Var& a, int64_t start, int64_t count);
Var concat_rows(const Var& a, const Var& b);
Var gather_rows(const Var& a, std::vector<int64_t> idx);
// out[i] = a[i, idx[i]]
Var gather_cols_per_row(const Var& a, std::vector<int64_t> idx);
// Zeroes positions where mask (leading dims of a) is 0; mask has no grad.
Var mask_positions(const Var& a, const Tensor& mask);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                 // (M,K)x(K,N)
Var matmul_nt(const Var& a, const Var& b);              // (M,K)x(N,K)^T
Var linear(const Var& x, const Var& w, const Var& b);   // rows x (in,out) + b
Var linear_nobias(const Var& x, const Var& w);
Var bmm(const Var& a, const Var& b);                    // (G,M,K)x(G,K,N)
Var bmm_nt(const Var& a, const Var& b);                 // (G,M,K)x(G,N,K)^T

// ---- normalization / regularization ----
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Rows with norm <= eps are passed through unchanged (zero rows stay zero).
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var dropout(const Var& x, double p, Rng& rng, bool training);

// Softmax over the last dim restricted to entries where allowed != 0.
// Disallowed entries get probability 0; fully disallowed rows stay all-zero.
// allowed is indexed modulo the leading dims so a (B,Lq,Lk) mask can serve a
// (B,h,Lq,Lk) score tensor: index layout must place broadcast dims in front.
Var masked_softmax_last(const Var& scores, const Tensor& allowed, int64_t broadcast_groups = 1);

// Masked mean over positions: x (B,L,D), mask (B,L) -> (B,D). Rows with no
// valid position yield zeros.
Var masked_mean_pool(const Var& x, const Tensor& mask);

// out[:,0,:] = token, out[:,t,:] = x[:,t-1,:]
Var shift_right_with_token(const Var& x, const Var& token);

// x (B,L,D) + rows (L,D) broadcast over the batch axis.
Var broadcast_add_rows(const Var& x, const Var& rows);

// Sum of table-row selections and weighted continuous contributions:
// out[r,:] = sum_f tables[f][idx[f][r],:] + sum_g weights[g][:] * values[g][r].
// Throws "embedding_oob" when an index exceeds its table.
Var embedding_sum(const std::vector<std::vector<int32_t>>& index_sets, const std::vector<Var>& tables,
                  const std::vector<std::vector<double>>& value_sets, const std::vector<Var>& weights,
                  int64_t rows, int64_t dim);

// ---- fused sequence ops ----
// Single-layer LSTM, zero initial state, gate order (i,f,g,o).
// x: (B,L,D); w_ih: (D,4H); w_hh: (H,4H); bias: (4H) -> (B,L,H)
Var lstm(const Var& x, const Var& w_ih, const Var& w_hh, const Var& bias);

// Same-length 1D convolution over the time axis, zero padding.
// x: (B,L,Cin); w: (Cout,Cin,K); bias: (Cout) -> (B,L,Cout)
Var conv1d_same(const Var& x, const Var& w, const Var& bias);

// Per-channel batch norm over valid (b,t) positions. Training mode uses
// batch statistics and updates running buffers in place; eval mode uses the
// running buffers. Invalid positions are normalized with the same statistics
// but must be masked before anything consumes them across positions.
Var batch_norm_masked(const Var& x, const Var& gamma, const Var& beta,
                      const Tensor& mask, Tensor& running_mean, Tensor& running_var,
                      bool training, double momentum = 0.1, double eps = 1e-5);

// ---- losses ----
// Mean binary cross-entropy over positions where mask != 0; probabilities
// clamped to [1e-7, 1-1e-7]. probs/labels/mask are index-aligned flat arrays.
Var bce_mean(const Var& probs, const Tensor& labels, const Tensor& mask);

// Shared core of the InfoNCE-family objectives. sim is an (A,C) matrix of
// scaled similarities; for anchor a the candidate set is every column except
// excluded_col[a] (pass -1 to keep all), and positives[a] lists positive
// columns. Anchors with empty positives contribute zero. Returns the sum over
// anchors of (-1/|P|) * sum_p [ sim[a,p] - logsumexp_candidates(sim[a,:]) ].
Var grouped_infonce(const Var& sim, const std::vector<std::vector<int32_t>>& positives,
                    const std::vector<int64_t>& excluded_col, int64_t* active_anchors = nullptr);

} // namespace saicl
