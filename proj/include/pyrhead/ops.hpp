#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pyrhead/tape.hpp"

// Differentiable operations recorded on a Tape. Binary elementwise ops
// broadcast in the matrix view (rows, cols): each dimension must match or be
// 1 on one side.
namespace pyrhead::num {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var neg(Var a);
Var scale(Var a, double s);
Var shift(Var a, double s);
/// 1 - a
Var one_minus(Var a);

Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
/// log(1 + e^a), overflow-safe.
Var softplus(Var a);
Var square(Var a);
/// Huber loss with unit transition: 0.5 a^2 for |a| < 1, |a| - 0.5 otherwise.
Var smooth_l1(Var a);
/// max(a, lo); zero gradient where the clamp is active (a < lo).
Var clamp_min(Var a, double lo);

/// [n,k] x [k,m]
Var matmul(Var a, Var b);
/// x W + b with x [n,in], W [in,out], b [out] or [1,out].
Var linear(Var x, Var weight, Var bias);

/// Sum of all elements, shape [1].
Var sum(Var a);
Var mean(Var a);
/// Column-wise mean over rows: [n,m] -> [1,m]. n must be >= 1.
Var mean_rows(Var a);

/// Softmax over all entries of a vector, shift-invariant.
Var softmax(Var a);

Var reshape(Var a, Shape shape);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> rows);

// Segmented ops: `offsets` has G+1 entries delimiting G contiguous row
// ranges of an [M, ...] input (offsets.front() == 0, offsets.back() == M).

/// Per-segment, per-column softmax over rows.
Var segment_softmax(Var logits, std::span<const std::size_t> offsets);
/// out[g, h*dh + c] = sum_{i in g} w[i,h] * v[i, h*dh + c], with
/// w [M,H], v [M,H*dh] -> [G,H*dh].
Var segment_weighted_sum(Var weights, Var values, std::span<const std::size_t> offsets);
/// Per-segment column max; empty segments yield zeros. Ties route the
/// gradient to the first row.
Var segment_max(Var values, std::span<const std::size_t> offsets);

}  // namespace pyrhead::num
