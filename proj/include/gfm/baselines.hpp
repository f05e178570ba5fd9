#pragma once

#include "gfm/groundflow.hpp"
#include "gfm/ops.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace gfm {

enum class FusionKind {
  None,        // per-step independent grounding
  ConcatAll,   // all instructions joined into one input (handled upstream)
  Lstm,
  Gru,
  Transformer,
  GroundFlow,
};

const char* fusion_kind_name(FusionKind kind);
FusionKind fusion_kind_from_name(const std::string& name);

/// A fusion strategy: the kind plus, for GroundFlow, its memory setting.
struct FusionVariant {
  FusionKind kind = FusionKind::None;
  MemoryConfig memory;
};

const char* memory_mode_name(MemoryMode mode);
MemoryMode memory_mode_from_name(const std::string& name);

/// Canonical label, e.g. "groundflow-full" or "lstm".
std::string variant_label(const FusionVariant& v);
FusionVariant variant_from_label(const std::string& label);

/// Learnable weights for the recurrent-cell baselines. None/ConcatAll and
/// the transformer baseline carry no parameters.
struct BaselineParams {
  FusionKind kind = FusionKind::None;
  int hidden = 0;
  std::vector<std::pair<std::string, TensorPtr>> weights;

  TensorPtr get(const std::string& name) const;
};

struct BaselineState {
  FusionKind kind = FusionKind::None;
  TensorPtr hidden;  // lstm/gru, T x H
  TensorPtr cell;    // lstm only
  std::vector<TensorPtr> history;  // transformer: raw past embeddings
  std::vector<Mask1D> history_masks;
  Mask1D seen_mask;  // union of step masks seen so far
};

BaselineParams init_baseline(FusionKind kind, int hidden, std::uint64_t seed);

BaselineState make_baseline_state(FusionKind kind);
void reset(BaselineState& state, FusionKind kind);

/// Applies one fusion step; the cell baselines run per token row with
/// weights shared across rows, the transformer attends over the stored
/// raw history.
TensorPtr baseline_fuse(const BaselineParams& params, BaselineState& state,
                        const TensorPtr& j_t, const Mask1D& step_mask);

/// Learnable-parameter count of the fusion module alone.
long fusion_parameter_count(FusionKind kind, int hidden);

}  // namespace gfm
