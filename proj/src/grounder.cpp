#include "gfm/grounder.hpp"

#include <cmath>
#include <random>

namespace gfm {

std::vector<std::pair<std::string, TensorPtr>> GrounderParams::named_tensors()
    const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.emplace_back("token_embed", token_embed);
  out.emplace_back("obj_proj", obj_proj);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "wq", layers[l].wq);
    out.emplace_back(p + "wk", layers[l].wk);
    out.emplace_back(p + "wv", layers[l].wv);
    out.emplace_back(p + "wo", layers[l].wo);
    out.emplace_back(p + "wf", layers[l].wf);
    out.emplace_back(p + "bf", layers[l].bf);
  }
  out.emplace_back("head_w1", head_w1);
  out.emplace_back("head_b1", head_b1);
  out.emplace_back("head_w2", head_w2);
  out.emplace_back("head_b2", head_b2);
  return out;
}

long GrounderParams::parameter_count() const {
  long n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->value.size();
  return n;
}

namespace {

Matrix uniform_fan_in(std::mt19937_64& rng, Eigen::Index rows,
                      Eigen::Index cols, Eigen::Index fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

GrounderParams init_grounder(const GrounderConfig& config, std::uint64_t seed) {
  if (config.vocab_size <= 0 || config.feature_dim <= 0 || config.hidden <= 0)
    throw std::invalid_argument("init_grounder: invalid configuration");
  std::mt19937_64 rng(seed);
  const int h = config.hidden;
  GrounderParams p;
  p.config = config;
  p.token_embed = Tensor2D::create(
      uniform_fan_in(rng, config.vocab_size, h, h), true);
  p.obj_proj = Tensor2D::create(
      uniform_fan_in(rng, config.feature_dim, h, config.feature_dim), true);
  for (int l = 0; l < config.num_layers; ++l) {
    MixingLayerParams layer;
    layer.wq = Tensor2D::create(uniform_fan_in(rng, h, h, h), true);
    layer.wk = Tensor2D::create(uniform_fan_in(rng, h, h, h), true);
    layer.wv = Tensor2D::create(uniform_fan_in(rng, h, h, h), true);
    layer.wo = Tensor2D::create(uniform_fan_in(rng, h, h, h), true);
    layer.wf = Tensor2D::create(uniform_fan_in(rng, h, h, h), true);
    layer.bf = Tensor2D::zeros(1, h, true);
    p.layers.push_back(std::move(layer));
  }
  p.head_w1 = Tensor2D::create(uniform_fan_in(rng, h, h, h), true);
  p.head_b1 = Tensor2D::zeros(1, h, true);
  p.head_w2 = Tensor2D::create(uniform_fan_in(rng, h, 1, h), true);
  p.head_b2 = Tensor2D::zeros(1, 1, true);
  return p;
}

std::pair<TensorPtr, Mask1D> encode_step(const GrounderParams& params,
                                         const SceneEncoding& scene,
                                         const InstructionEncoding& instr) {
  const int l_max = params.config.max_instruction_len;
  const auto len = static_cast<int>(instr.token_ids.size());
  if (len > l_max)
    throw std::invalid_argument("encode_step: instruction longer than L_max");
  if (scene.object_features.cols() != params.config.feature_dim)
    throw std::invalid_argument("encode_step: feature dimension mismatch");

  const Eigen::Index n_obj = scene.object_count();
  const int h = params.config.hidden;

  auto obj_tokens = matmul(constant(scene.object_features), params.obj_proj);
  TensorPtr x;
  if (len > 0) {
    auto text = embedding_lookup(params.token_embed, instr.token_ids);
    x = concat_rows(obj_tokens, text);
  } else {
    x = obj_tokens;
  }
  if (l_max > len)
    x = concat_rows(x, Tensor2D::zeros(l_max - len, h));

  Mask1D mask(static_cast<std::size_t>(n_obj) + l_max, false);
  for (Eigen::Index i = 0; i < n_obj + len; ++i)
    mask.set(static_cast<std::size_t>(i), true);

  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
  for (const auto& layer : params.layers) {
    auto q = matmul(x, layer.wq);
    auto k = matmul(x, layer.wk);
    auto v = matmul(x, layer.wv);
    auto attn = masked_softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_h),
                                    mask);
    x = mask_rows(add(x, matmul(matmul(attn, v), layer.wo)), mask);
    auto ff = tanh_t(add_row_vector(matmul(x, layer.wf), layer.bf));
    x = mask_rows(add(x, ff), mask);
  }
  return {x, mask};
}

TensorPtr ground(const GrounderParams& params, const TensorPtr& fused,
                 Eigen::Index n_obj) {
  if (n_obj > fused->rows())
    throw std::invalid_argument("ground: n_obj exceeds token rows");
  // The recurrent fusion can inflate row magnitudes over long tasks; the
  // head scores scale-normalized rows so late steps cannot saturate it.
  auto rows = rms_norm_rows(slice_rows(fused, 0, n_obj));
  auto hid = tanh_t(add_row_vector(matmul(rows, params.head_w1), params.head_b1));
  auto logits = add_row_vector(matmul(hid, params.head_w2), params.head_b2);
  return transpose(logits);  // 1 x n_obj
}

int argmax_logits(const TensorPtr& logits) {
  int best = 0;
  for (Eigen::Index j = 1; j < logits->cols(); ++j)
    if (logits->value(0, j) > logits->value(0, best)) best = static_cast<int>(j);
  return best;
}

std::vector<TensorPtr> forward_task(
    const GrounderParams& params, const BaselineParams* baseline,
    const FusionVariant& variant, const SceneEncoding& scene,
    const std::vector<InstructionEncoding>& steps) {
  const Eigen::Index n_obj = scene.object_count();
  std::vector<TensorPtr> logits;
  logits.reserve(steps.size());

  if (variant.kind == FusionKind::ConcatAll) {
    // Re-encode with all instructions up to the current step joined,
    // truncated at the configured maximum.
    std::vector<int> joined;
    for (const auto& step : steps) {
      joined.insert(joined.end(), step.token_ids.begin(), step.token_ids.end());
      std::vector<int> ids = joined;
      if (static_cast<int>(ids.size()) > params.config.max_instruction_len)
        ids.erase(ids.begin(),
                  ids.end() - params.config.max_instruction_len);
      auto [j_t, mask] = encode_step(params, scene, InstructionEncoding{ids});
      logits.push_back(ground(params, j_t, n_obj));
    }
    return logits;
  }

  TemporalState flow_state = make_temporal_state();
  BaselineState base_state = make_baseline_state(variant.kind);
  for (const auto& step : steps) {
    auto [j_t, mask] = encode_step(params, scene, step);
    TensorPtr fused;
    if (variant.kind == FusionKind::GroundFlow) {
      fused = fuse_step(flow_state, j_t, mask, variant.memory);
    } else if (variant.kind == FusionKind::None) {
      fused = j_t;
    } else {
      if (!baseline)
        throw std::invalid_argument("forward_task: variant needs baseline params");
      fused = baseline_fuse(*baseline, base_state, j_t, mask);
    }
    logits.push_back(ground(params, fused, n_obj));
  }
  return logits;
}

}  // namespace gfm
