#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fedda/autodiff/tape.hpp"

namespace fedda::ad {

// Elementwise binary ops. `b` must match `a`'s shape, hold a single element,
// or match `a` on leading axes with extent 1 on every trailing axis.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

// Rank-2 only: [m,k] x [k,n] -> [m,n].
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
// Half-open range [begin, end) along `axis`.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

// Reductions over every element; result has rank 0.
Var sum(const Var& a);
Var mean(const Var& a);

Var relu(const Var& a);
// Exact (erf-based) GELU.
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
// Subgradient 0 at 0.
Var abs(const Var& a);

// Max-subtracted softmax along `axis`.
Var softmax(const Var& a, std::size_t axis);

// Normalizes over the last axis with biased variance, then gamma * xhat + beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// x [n,in], weight [out,in], bias [out] -> x * weight^T + bias, shape [n,out].
Var linear(const Var& x, const Var& weight, const std::optional<Var>& bias = std::nullopt);

// Pairwise squared Euclidean distances: [n,d] x [m,d] -> [n,m].
Var sq_dist(const Var& a, const Var& b);

// Sparse attention pattern: query row `query_rows[q]` attends to the
// `keys_per_query` rows keys[q * keys_per_query + j].
struct KeyTable {
  std::vector<std::uint32_t> query_rows;
  std::size_t keys_per_query = 0;
  std::vector<std::uint32_t> keys;

  std::size_t queries() const { return query_rows.size(); }
  void validate(std::size_t rows) const;
};
using KeyTablePtr = std::shared_ptr<const KeyTable>;

// Softmax(scale * q_row . k_key) over each query's key set:
// q, k [rows, d] -> weights [queries, keys_per_query].
Var attention_weights(const Var& q, const Var& k, const KeyTablePtr& table, double scale);

// out[query_rows[q]] += sum_j weights[q,j] * v[keys[q,j]]; rows not covered
// by the table stay zero. weights [queries, keys_per_query], v [rows, d].
Var attention_combine(const Var& weights, const Var& v, const KeyTablePtr& table);

}  // namespace fedda::ad
