#include "gfm/groundflow.hpp"

#include <cmath>

namespace gfm {

TemporalState make_temporal_state() { return TemporalState{}; }

void reset(TemporalState& state) {
  state.prev_fused.reset();
  state.prev_raw.reset();
  state.long_term.reset();
  state.long_term_raw.reset();
  state.step_index = 1;
  state.token_mask = Mask1D{};
}

TensorPtr memory_retrieve(const TemporalState& state, const TensorPtr& j_t,
                          const MemoryConfig& config) {
  const int t = state.step_index;
  if (t < 2)
    throw std::logic_error("memory_retrieve: no history at step 1");
  if (!state.prev_fused || state.prev_fused->rows() != j_t->rows() ||
      state.prev_fused->cols() != j_t->cols())
    throw std::invalid_argument("memory_retrieve: state/input shape mismatch");

  // At t == 2 there is no long-term history yet; every mode returns the
  // previous fused embedding.
  if (t == 2) return state.prev_fused;

  // The relevance average runs over the task's real token positions;
  // padding columns carry zero cosine and are excluded from the divisor,
  // so extra padding cannot dilute alpha.
  const double real_tokens =
      static_cast<double>(state.token_mask.count_true());
  auto weighted = [&](const TensorPtr& long_mem) {
    auto relevance = cosine_rows(long_mem, j_t);
    auto alpha = scale(mean_over_cols(relevance),
                       static_cast<double>(j_t->rows()) / real_tokens);
    return row_broadcast_mul(long_mem, alpha);
  };

  switch (config.mode) {
    case MemoryMode::Full:
      return add(state.prev_fused, weighted(state.long_term));
    case MemoryMode::ShortOnly:
      return state.prev_fused;
    case MemoryMode::LongOnlyMerged:
      return add(state.prev_fused, state.long_term);
    case MemoryMode::RawShort:
      return add(state.prev_raw, weighted(state.long_term));
    case MemoryMode::RawLong:
      return add(state.prev_fused, weighted(state.long_term_raw));
  }
  throw std::logic_error("memory_retrieve: unknown mode");
}

TensorPtr fuse_step(TemporalState& state, const TensorPtr& j_t,
                    const Mask1D& step_mask, const MemoryConfig& config) {
  if (static_cast<Eigen::Index>(step_mask.size()) != j_t->rows())
    throw std::invalid_argument("fuse_step: mask length != token count");

  const int t = state.step_index;
  if (t == 1) {
    // First step: fused output is the input itself, bit for bit.
    state.prev_fused = j_t;
    state.prev_raw = j_t;
    state.long_term = Tensor2D::zeros(j_t->rows(), j_t->cols());
    state.long_term_raw = Tensor2D::zeros(j_t->rows(), j_t->cols());
    state.token_mask = step_mask;
    state.step_index = 2;
    return j_t;
  }

  if (state.prev_fused->rows() != j_t->rows() ||
      state.prev_fused->cols() != j_t->cols())
    throw std::invalid_argument("fuse_step: state/input shape mismatch");

  const Mask1D history_mask = state.token_mask;
  const Mask1D new_mask = Mask1D::unite(history_mask, step_mask);

  auto j_h = memory_retrieve(state, j_t, config);

  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(j_t->cols()));
  auto scores = scale(matmul(j_t, transpose(j_h)), inv_sqrt_h);
  auto attn = masked_softmax_rows(scores, history_mask);
  auto context = matmul(attn, j_h);
  // Rows that were padding in every step so far stay exactly zero.
  auto fused = add(j_t, mask_rows(context, new_mask));

  // Long-term memory picks up step t-1 once step t is underway.
  state.long_term = add(state.long_term, state.prev_fused);
  state.long_term_raw = add(state.long_term_raw, state.prev_raw);
  state.prev_fused = fused;
  state.prev_raw = j_t;
  state.token_mask = new_mask;
  state.step_index = t + 1;
  return fused;
}

}  // namespace gfm
