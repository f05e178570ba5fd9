#pragma once

#include "gfm/tensor.hpp"

namespace gfm {

// Differentiable primitives. Each op validates shapes, computes the forward
// value, and (when a tape is active and an input requires grad) records the
// matching backward step. Gradients accumulate additively.

TensorPtr constant(Matrix v);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& x);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double c);
TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b);

/// out(i, j) = m(i, j) * alpha(i, 0); alpha is T x 1.
TensorPtr row_broadcast_mul(const TensorPtr& m, const TensorPtr& alpha);

/// out(i, j) = m(i, j) + b(0, j); b is 1 x C.
TensorPtr add_row_vector(const TensorPtr& m, const TensorPtr& b);

/// T x 1 column of per-row means.
TensorPtr mean_over_cols(const TensorPtr& m);

TensorPtr concat_rows(const TensorPtr& a, const TensorPtr& b);
TensorPtr slice_rows(const TensorPtr& x, Eigen::Index begin, Eigen::Index count);

/// Zeroes rows whose mask flag is false.
TensorPtr mask_rows(const TensorPtr& x, const Mask1D& mask);

/// Row-wise softmax over unmasked columns; masked columns are exactly 0.
/// Stabilized by row-max subtraction over the unmasked entries.
TensorPtr masked_softmax_rows(const TensorPtr& x, const Mask1D& col_mask);

/// out(i, j) = cos(a_i, b_j), defined as 0 when either row norm < eps.
TensorPtr cosine_rows(const TensorPtr& a, const TensorPtr& b, double eps = 1e-8);

/// Divides each row by sqrt(mean of squares + eps); zero rows stay zero.
TensorPtr rms_norm_rows(const TensorPtr& x, double eps = 1e-12);

TensorPtr tanh_t(const TensorPtr& x);
TensorPtr sigmoid_t(const TensorPtr& x);

/// 1 x 1 sum of all entries.
TensorPtr sum_all(const TensorPtr& x);

/// Gathers rows of `table` by id; gradient scatter-adds back into the table.
TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<int>& ids);

/// logits is 1 x N; returns 1 x 1 loss = logsumexp(logits) - logits[target].
TensorPtr cross_entropy_row(const TensorPtr& logits, int target);

}  // namespace gfm
