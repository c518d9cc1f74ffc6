#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "paratune/autograd.hpp"

// Differentiable primitives. Every function records its adjoint on the tape of its
// first operand when any operand requires grad. Matrices are rank 2 (rows x cols);
// vectors are rank 1 and behave as a single row where broadcasting applies.
namespace paratune::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var abs(Var a);
Var scale(Var a, double factor);

/// (n,k)x(k,m) -> (n,m); a rank-1 left operand gives a rank-1 result.
Var matmul(Var a, Var b);
/// a * b^T: (n,k)x(m,k) -> (n,m).
Var matmul_nt(Var a, Var b);
/// Adds a length-m vector to every row of x.
Var add_bias(Var x, Var bias);

/// Concatenate along the last axis. All parts must have equal row counts.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var row(Var x, std::size_t index);
Var gather_rows(Var x, std::span<const std::size_t> rows);

/// Row-wise softmax over the last axis, stabilized by subtracting the row maximum.
Var softmax(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-12);
/// Exact GELU: x * Phi(x).
Var gelu(Var x);
/// Inverted dropout: keeps each element with probability 1-p and scales it by 1/(1-p).
Var dropout(Var x, double p, std::mt19937_64& rng);
/// Rows of `table` selected by ids: (V,d) -> (n,d).
Var embedding(Var table, std::span<const int> ids);

/// Per-dimension maximum over rows begin..end inclusive. The adjoint goes to the first
/// argmax row of each dimension.
Var max_pool_span(Var h, std::size_t begin, std::size_t end);
/// Per-dimension mean over rows begin..end inclusive.
Var mean_pool_span(Var h, std::size_t begin, std::size_t end);

/// -log softmax(logits)[label], computed through log-sum-exp.
Var softmax_cross_entropy(Var logits, std::size_t label);
/// (pred - target)^2 for a single-element prediction.
Var mse_loss(Var pred, double target);

Var sum(std::span<const Var> scalars);
Var mean(std::span<const Var> scalars);

}  // namespace paratune::ops
