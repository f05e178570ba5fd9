#include "gfm/baselines.hpp"

#include <cmath>
#include <random>

namespace gfm {

const char* fusion_kind_name(FusionKind kind) {
  switch (kind) {
    case FusionKind::None: return "none";
    case FusionKind::ConcatAll: return "concat_all";
    case FusionKind::Lstm: return "lstm";
    case FusionKind::Gru: return "gru";
    case FusionKind::Transformer: return "transformer";
    case FusionKind::GroundFlow: return "groundflow";
  }
  return "unknown";
}

FusionKind fusion_kind_from_name(const std::string& name) {
  if (name == "none") return FusionKind::None;
  if (name == "concat_all") return FusionKind::ConcatAll;
  if (name == "lstm") return FusionKind::Lstm;
  if (name == "gru") return FusionKind::Gru;
  if (name == "transformer") return FusionKind::Transformer;
  if (name == "groundflow") return FusionKind::GroundFlow;
  throw std::invalid_argument("unknown fusion variant: " + name);
}

const char* memory_mode_name(MemoryMode mode) {
  switch (mode) {
    case MemoryMode::Full: return "full";
    case MemoryMode::ShortOnly: return "short_only";
    case MemoryMode::LongOnlyMerged: return "long_only_merged";
    case MemoryMode::RawShort: return "raw_short";
    case MemoryMode::RawLong: return "raw_long";
  }
  return "unknown";
}

MemoryMode memory_mode_from_name(const std::string& name) {
  if (name == "full") return MemoryMode::Full;
  if (name == "short_only") return MemoryMode::ShortOnly;
  if (name == "long_only_merged") return MemoryMode::LongOnlyMerged;
  if (name == "raw_short") return MemoryMode::RawShort;
  if (name == "raw_long") return MemoryMode::RawLong;
  throw std::invalid_argument("unknown memory mode: " + name);
}

std::string variant_label(const FusionVariant& v) {
  if (v.kind == FusionKind::GroundFlow)
    return std::string("groundflow-") + memory_mode_name(v.memory.mode);
  return fusion_kind_name(v.kind);
}

FusionVariant variant_from_label(const std::string& label) {
  FusionVariant v;
  const std::string prefix = "groundflow-";
  if (label.rfind(prefix, 0) == 0) {
    v.kind = FusionKind::GroundFlow;
    v.memory.mode = memory_mode_from_name(label.substr(prefix.size()));
  } else if (label == "groundflow") {
    v.kind = FusionKind::GroundFlow;
    v.memory.mode = MemoryMode::Full;
  } else {
    v.kind = fusion_kind_from_name(label);
  }
  return v;
}

TensorPtr BaselineParams::get(const std::string& name) const {
  for (const auto& [n, t] : weights)
    if (n == name) return t;
  throw std::logic_error("BaselineParams: missing weight " + name);
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

const char* kLstmGates[] = {"i", "f", "g", "o"};
const char* kGruGates[] = {"z", "r", "h"};

}  // namespace

BaselineParams init_baseline(FusionKind kind, int hidden, std::uint64_t seed) {
  BaselineParams p;
  p.kind = kind;
  p.hidden = hidden;
  std::mt19937_64 rng(seed);
  auto make = [&](const std::string& name, Eigen::Index r, Eigen::Index c,
                  Eigen::Index fan_in) {
    p.weights.emplace_back(
        name, Tensor2D::create(uniform_fan_in(rng, r, c, fan_in), true));
  };
  auto make_zero = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    p.weights.emplace_back(name, Tensor2D::zeros(r, c, true));
  };
  const int h = hidden;
  if (kind == FusionKind::Lstm) {
    for (const char* g : kLstmGates) {
      make(std::string("wx_") + g, h, h, h);
      make(std::string("wh_") + g, h, h, h);
      make_zero(std::string("b_") + g, 1, h);
    }
  } else if (kind == FusionKind::Gru) {
    for (const char* g : kGruGates) {
      make(std::string("wx_") + g, h, h, h);
      make(std::string("wh_") + g, h, h, h);
      make_zero(std::string("b_") + g, 1, h);
    }
  }
  return p;
}

long fusion_parameter_count(FusionKind kind, int hidden) {
  const long h = hidden;
  switch (kind) {
    case FusionKind::Lstm: return 4 * (2 * h * h + h);
    case FusionKind::Gru: return 3 * (2 * h * h + h);
    default: return 0;
  }
}

BaselineState make_baseline_state(FusionKind kind) {
  BaselineState s;
  s.kind = kind;
  return s;
}

void reset(BaselineState& state, FusionKind kind) {
  state = BaselineState{};
  state.kind = kind;
}

namespace {

TensorPtr gate(const BaselineParams& p, const std::string& g,
               const TensorPtr& x, const TensorPtr& h) {
  return add_row_vector(
      add(matmul(x, p.get("wx_" + g)), matmul(h, p.get("wh_" + g))),
      p.get("b_" + g));
}

TensorPtr lstm_step(const BaselineParams& p, BaselineState& s,
                    const TensorPtr& x, const Mask1D& mask) {
  if (!s.hidden) {
    s.hidden = Tensor2D::zeros(x->rows(), x->cols());
    s.cell = Tensor2D::zeros(x->rows(), x->cols());
  }
  auto i = sigmoid_t(gate(p, "i", x, s.hidden));
  auto f = sigmoid_t(gate(p, "f", x, s.hidden));
  auto g = tanh_t(gate(p, "g", x, s.hidden));
  auto o = sigmoid_t(gate(p, "o", x, s.hidden));
  auto c = add(hadamard(f, s.cell), hadamard(i, g));
  auto h = hadamard(o, tanh_t(c));
  s.cell = mask_rows(c, mask);
  s.hidden = mask_rows(h, mask);
  return s.hidden;
}

TensorPtr gru_step(const BaselineParams& p, BaselineState& s,
                   const TensorPtr& x, const Mask1D& mask) {
  if (!s.hidden) s.hidden = Tensor2D::zeros(x->rows(), x->cols());
  auto z = sigmoid_t(gate(p, "z", x, s.hidden));
  auto r = sigmoid_t(gate(p, "r", x, s.hidden));
  auto cand = tanh_t(add_row_vector(
      add(matmul(x, p.get("wx_h")),
          matmul(hadamard(r, s.hidden), p.get("wh_h"))),
      p.get("b_h")));
  // h' = (1 - z) ⊙ h + z ⊙ cand
  auto keep = hadamard(add(scale(z, -1.0),
                           constant(Matrix::Ones(z->rows(), z->cols()))),
                       s.hidden);
  auto h = add(keep, hadamard(z, cand));
  s.hidden = mask_rows(h, mask);
  return s.hidden;
}

TensorPtr transformer_step(BaselineState& s, const TensorPtr& x,
                           const Mask1D& mask) {
  TensorPtr out;
  if (s.history.empty()) {
    out = x;  // no history yet, pass through
  } else {
    TensorPtr keys = s.history[0];
    Mask1D key_mask = s.history_masks[0];
    for (std::size_t k = 1; k < s.history.size(); ++k) {
      keys = concat_rows(keys, s.history[k]);
      Mask1D merged(key_mask.size() + s.history_masks[k].size(), false);
      for (std::size_t i = 0; i < key_mask.size(); ++i)
        merged.set(i, key_mask.at(i));
      for (std::size_t i = 0; i < s.history_masks[k].size(); ++i)
        merged.set(key_mask.size() + i, s.history_masks[k].at(i));
      key_mask = merged;
    }
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(x->cols()));
    auto attn = masked_softmax_rows(
        scale(matmul(x, transpose(keys)), inv_sqrt_h), key_mask);
    out = add(x, mask_rows(matmul(attn, keys), mask));
  }
  // Stores raw inputs, not fused outputs: all steps attended indiscriminately.
  s.history.push_back(x);
  s.history_masks.push_back(mask);
  return out;
}

}  // namespace

TensorPtr baseline_fuse(const BaselineParams& params, BaselineState& state,
                        const TensorPtr& j_t, const Mask1D& step_mask) {
  if (params.kind != state.kind)
    throw std::invalid_argument("baseline_fuse: variant/state mismatch");
  if (static_cast<Eigen::Index>(step_mask.size()) != j_t->rows())
    throw std::invalid_argument("baseline_fuse: mask length != token count");

  const Mask1D seen = state.seen_mask.size() == 0
                          ? step_mask
                          : Mask1D::unite(state.seen_mask, step_mask);
  TensorPtr out;
  switch (params.kind) {
    case FusionKind::None:
    case FusionKind::ConcatAll:
      out = j_t;  // concat-all fusion happens at the instruction level
      break;
    case FusionKind::Lstm:
      out = lstm_step(params, state, j_t, seen);
      break;
    case FusionKind::Gru:
      out = gru_step(params, state, j_t, seen);
      break;
    case FusionKind::Transformer:
      out = transformer_step(state, j_t, seen);
      break;
    case FusionKind::GroundFlow:
      throw std::invalid_argument(
          "baseline_fuse: groundflow uses fuse_step, not baseline_fuse");
  }
  state.seen_mask = seen;
  return out;
}

}  // namespace gfm
