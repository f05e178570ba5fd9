#pragma once

#include "gfm/ops.hpp"
#include "gfm/tensor.hpp"

namespace gfm {

/// Memory configurations matching the short-/long-term ablation rows.
enum class MemoryMode {
  Full,            // J_h = prev_fused + long_term ⊙ γ(α)
  ShortOnly,       // J_h = prev_fused
  LongOnlyMerged,  // J_h = prev_fused + long_term (α forced to ones)
  RawShort,        // short side uses the unfused previous J
  RawLong,         // long side uses the sum of raw J_k
};

struct MemoryConfig {
  MemoryMode mode = MemoryMode::Full;
};

/// Per-task recurrent state. step_index is the step the NEXT fuse_step call
/// will process (1-based). long_term holds the exact sum of fused outputs
/// from step 1 through step_index - 2.
struct TemporalState {
  TensorPtr prev_fused;     // fused output of the previous step
  TensorPtr prev_raw;       // raw joint embedding of the previous step
  TensorPtr long_term;      // sum of fused outputs, steps 1 .. t-2
  TensorPtr long_term_raw;  // same sum over raw embeddings
  int step_index = 1;
  Mask1D token_mask;        // union of all step masks seen so far
};

TemporalState make_temporal_state();
void reset(TemporalState& state);

/// History embedding J_h for the step about to be fused. Only valid from
/// step 2 on; step 1 bypasses memory entirely.
TensorPtr memory_retrieve(const TemporalState& state, const TensorPtr& j_t,
                          const MemoryConfig& config);

/// One recurrent fusion step: returns the fused embedding and advances the
/// state. Gradients flow through the whole recurrence via the active tape.
TensorPtr fuse_step(TemporalState& state, const TensorPtr& j_t,
                    const Mask1D& step_mask, const MemoryConfig& config);

}  // namespace gfm
