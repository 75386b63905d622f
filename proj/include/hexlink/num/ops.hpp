#pragma once

#include <span>
#include <vector>

#include "hexlink/num/sparse.hpp"
#include "hexlink/num/tape.hpp"

// Differentiable operations on tape values. Each op checks shapes (ShapeError)
// and registers its backward rule.
namespace hexlink::num {

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var add_n(const std::vector<Var>& xs);
Var scale(Var a, double s);
// Adds the 1 x cols row `bias` to every row of `a`.
Var add_bias(Var a, Var bias);
Var relu(Var a);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);

// Row lookup; an index of -1 yields a zero row.
Var gather_rows(Var table, std::span<const long> index);

Var softmax_rows(Var a);
// Softmax over the columns flagged attendable; other columns get probability 0.
Var masked_softmax_rows(Var a, const std::vector<bool>& attendable);

inline constexpr double kLayerNormEps = 1e-5;
// Per-row standardization followed by gamma * xhat + beta (gamma, beta 1 x cols).
Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = kLayerNormEps);

// sparse * h. The sparse matrix must outlive the tape's backward pass.
Var spmm(const SparseMatrix& sparse, Var h);

// Row i: [sin(w_0 t_i), cos(w_0 t_i), sin(w_1 t_i), cos(w_1 t_i), ...] where
// `freqs` is 1 x (d/2); output is times.size() x d.
Var temporal_encoding(Var freqs, std::span<const double> times);

// 1 x cols mean over the listed rows.
Var mean_rows(Var a, std::span<const std::size_t> rows);
Var sum_all(Var a);

// (1/rows) * sum_i weight_i * -log softmax(logits_i)[target_i], as 1x1.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const double> weights);

}  // namespace hexlink::num
