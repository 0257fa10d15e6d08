#ifndef SCRIBE_OPS_HPP
#define SCRIBE_OPS_HPP

#include <vector>

#include "scribe/autograd.hpp"

namespace scribe {

// input [N,C,H,W], kernel [F,C,kh,kw] -> [N,F,H',W'],
// H' = (H + 2*padding - kh) / stride + 1. Zero padding.
Variable conv2d(const Variable& input, const Variable& kernel, Index stride = 1, Index padding = 0);

Variable relu(const Variable& x);
Variable sigmoid(const Variable& x);

// Numpy-style broadcasting (shapes right-aligned, size-1 axes stretch).
Variable add(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable scale(const Variable& x, double factor);

// Same data, new shape (element count must match).
Variable reshape(const Variable& x, Shape shape);

Variable sum(const Variable& x);
Variable mean(const Variable& x);

// x [N,C,H,W]; gamma, beta [C]. Statistics per (sample, group).
Variable group_norm(const Variable& x, const Variable& gamma, const Variable& beta, Index groups,
                    double eps = 1e-5);

// x [N,C,H,W] -> [N,C]
Variable global_avg_pool(const Variable& x);

// logits [N,K]; mean over the batch of -log softmax(logits)[target].
Variable softmax_cross_entropy(const Variable& logits, const std::vector<int>& targets);

// Broadcast result shape, or DimensionError naming the offending axes.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace scribe

#endif  // SCRIBE_OPS_HPP
