#pragma once

#include "gfm/baselines.hpp"
#include "gfm/groundflow.hpp"
#include "gfm/ops.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace gfm {

/// Per-object feature rows standing in for a segmented 3D scene.
struct SceneEncoding {
  Matrix object_features;  // N_obj x F
  Eigen::Index object_count() const { return object_features.rows(); }
};

struct InstructionEncoding {
  std::vector<int> token_ids;

  bool operator==(const InstructionEncoding&) const = default;
};

struct GrounderConfig {
  int vocab_size = 0;
  int feature_dim = 0;
  int hidden = 32;
  int num_layers = 2;
  int max_instruction_len = 3;
};

struct MixingLayerParams {
  TensorPtr wq, wk, wv, wo;  // H x H attention weights
  TensorPtr wf, bf;          // H x H feedforward + 1 x H bias
};

struct GrounderParams {
  GrounderConfig config;
  TensorPtr token_embed;  // V x H
  TensorPtr obj_proj;     // F x H
  std::vector<MixingLayerParams> layers;
  TensorPtr head_w1;  // H x H
  TensorPtr head_b1;  // 1 x H
  TensorPtr head_w2;  // H x 1
  TensorPtr head_b2;  // 1 x 1

  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const;
  long parameter_count() const;
};

/// Fan-in scaled uniform init, deterministic in the seed.
GrounderParams init_grounder(const GrounderConfig& config, std::uint64_t seed);

/// Joint embedding for one step: object tokens first, then instruction
/// tokens, padded with zero rows (mask false) up to N_obj + L_max.
std::pair<TensorPtr, Mask1D> encode_step(const GrounderParams& params,
                                         const SceneEncoding& scene,
                                         const InstructionEncoding& instr);

/// Per-object logits (1 x n_obj) from the object-token rows of the fused
/// embedding. Argmax with lowest-index tie-break is the prediction.
TensorPtr ground(const GrounderParams& params, const TensorPtr& fused,
                 Eigen::Index n_obj);

int argmax_logits(const TensorPtr& logits);

/// Full pipeline over one task: encode each step, apply the selected fusion
/// strategy, score objects. State is fresh per call. baseline may be null
/// for parameter-free variants.
std::vector<TensorPtr> forward_task(const GrounderParams& params,
                                    const BaselineParams* baseline,
                                    const FusionVariant& variant,
                                    const SceneEncoding& scene,
                                    const std::vector<InstructionEncoding>& steps);

}  // namespace gfm
