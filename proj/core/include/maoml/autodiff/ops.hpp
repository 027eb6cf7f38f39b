#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maoml/autodiff/tape.hpp"

namespace maoml::ad {

// Differentiable primitives. All operands must live on the same live tape.
// Binary elementwise ops accept either equal shapes or a rank-2 left operand
// with a rank-1 right operand matching its trailing dimension (bias broadcast).

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var neg(const Var& x);

Var relu(const Var& x);
Var sigmoid(const Var& x);
/// Throws DomainError if any entry is <= 0.
Var log(const Var& x);
Var exp(const Var& x);
/// log(1 + e^x), evaluated without overflow.
Var softplus(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
/// Rank-2 [N, K] -> rank-1 [N]: log(sum_k exp(x[n, k])), max-shifted.
Var log_sum_exp_rows(const Var& x);
/// Rank-2 [N, K] -> rank-1 [N]: x[n, index[n]].
Var pick_rows(const Var& x, std::span<const std::size_t> index);

Var concat_rows(std::span<const Var> parts);
Var reshape(const Var& x, Shape shape);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& x) { return scale(x, s); }
inline Var operator-(const Var& x) { return neg(x); }

}  // namespace maoml::ad
