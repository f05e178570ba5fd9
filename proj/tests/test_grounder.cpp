#include "gfm/grounder.hpp"

#include "gradcheck.hpp"
#include "reference.hpp"

#include <doctest.h>

#include <random>

using namespace gfm;
using gfm_test::random_matrix;

namespace {

GrounderConfig tiny_config() {
  GrounderConfig c;
  c.vocab_size = 6;
  c.feature_dim = 5;
  c.hidden = 4;
  c.num_layers = 2;
  c.max_instruction_len = 3;
  return c;
}

SceneEncoding random_scene(std::mt19937_64& rng, int n_obj, int f) {
  return SceneEncoding{random_matrix(rng, n_obj, f)};
}

/// Independent straight-line forward pass over the same weights.
Matrix ref_encode(const GrounderParams& p, const Matrix& features,
                  const std::vector<int>& ids, Mask1D& mask_out) {
  const int h = p.config.hidden;
  const Eigen::Index n_obj = features.rows();
  const int l_max = p.config.max_instruction_len;
  Matrix x = Matrix::Zero(n_obj + l_max, h);
  x.topRows(n_obj) = features * p.obj_proj->value;
  for (std::size_t k = 0; k < ids.size(); ++k)
    x.row(n_obj + static_cast<Eigen::Index>(k)) =
        p.token_embed->value.row(ids[k]);
  Mask1D mask(n_obj + l_max, false);
  for (Eigen::Index i = 0; i < n_obj + static_cast<Eigen::Index>(ids.size()); ++i)
    mask.set(i, true);
  mask_out = mask;

  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
  auto zero_masked = [&](Matrix m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!mask.at(i)) m.row(i).setZero();
    return m;
  };
  for (const auto& layer : p.layers) {
    Matrix q = x * layer.wq->value;
    Matrix k = x * layer.wk->value;
    Matrix v = x * layer.wv->value;
    Matrix attn =
        gfm_test::ref_masked_softmax(q * k.transpose() * inv_sqrt_h, mask);
    x = zero_masked(x + attn * v * layer.wo->value);
    Matrix ff =
        ((x * layer.wf->value).rowwise() + layer.bf->value.row(0)).array().tanh();
    x = zero_masked(x + ff);
  }
  return x;
}

Matrix ref_head(const GrounderParams& p, const Matrix& fused, int n_obj) {
  Matrix logits(1, n_obj);
  for (int i = 0; i < n_obj; ++i) {
    const double rms = std::sqrt(
        fused.row(i).squaredNorm() / static_cast<double>(fused.cols()) + 1e-12);
    Eigen::RowVectorXd hid =
        (((fused.row(i) / rms) * p.head_w1->value) + p.head_b1->value.row(0))
            .array()
            .tanh();
    logits(0, i) = (hid * p.head_w2->value)(0) + p.head_b2->value(0, 0);
  }
  return logits;
}

}  // namespace

TEST_CASE("zero params and zero inputs give a zero joint embedding") {
  auto params = init_grounder(tiny_config(), 1);
  for (auto& [name, t] : params.named_tensors()) t->value.setZero();
  SceneEncoding scene{Matrix::Zero(3, 5)};
  auto [j, mask] = encode_step(params, scene, InstructionEncoding{{0, 1}});
  CHECK(j->value.isZero(0.0));
  CHECK(mask.count_true() == 5);  // 3 objects + 2 tokens
}

TEST_CASE("instruction content reaches the object rows") {
  std::mt19937_64 rng(8);
  auto params = init_grounder(tiny_config(), 8);
  auto scene = random_scene(rng, 3, 5);
  auto [a, m1] = encode_step(params, scene, InstructionEncoding{{0, 1, 2}});
  auto [b, m2] = encode_step(params, scene, InstructionEncoding{{3, 4, 5}});
  CHECK((a->value.topRows(3) - b->value.topRows(3)).cwiseAbs().maxCoeff() >
        1e-8);
}

TEST_CASE("encode_step matches the straight-line oracle") {
  std::mt19937_64 rng(13);
  auto params = init_grounder(tiny_config(), 13);
  auto scene = random_scene(rng, 4, 5);
  std::vector<int> ids{2, 5};
  auto [j, mask] = encode_step(params, scene, InstructionEncoding{ids});
  Mask1D ref_mask;
  Matrix expect = ref_encode(params, scene.object_features, ids, ref_mask);
  CHECK((j->value - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(mask == ref_mask);
}

TEST_CASE("encode_step rejects over-long instructions") {
  auto params = init_grounder(tiny_config(), 2);
  SceneEncoding scene{Matrix::Zero(2, 5)};
  CHECK_THROWS_AS(encode_step(params, scene, InstructionEncoding{{0, 1, 2, 3}}),
                  std::invalid_argument);
}

TEST_CASE("grounding head properties") {
  std::mt19937_64 rng(21);
  auto params = init_grounder(tiny_config(), 21);

  // Identical object rows give identical logits; argmax tie-breaks low.
  Matrix fused = Matrix::Zero(5, 4);
  fused.topRows(3).rowwise() = Eigen::RowVector4d(0.3, -1.0, 0.5, 0.2);
  auto logits = ground(params, constant(fused), 3);
  CHECK(logits->cols() == 3);
  CHECK(std::abs(logits->value(0, 0) - logits->value(0, 1)) < 1e-15);
  CHECK(std::abs(logits->value(0, 0) - logits->value(0, 2)) < 1e-15);
  CHECK(argmax_logits(logits) == 0);

  // Zero head weights: every logit equals the bias.
  auto zero_head = params;
  zero_head.head_w1 = Tensor2D::zeros(4, 4);
  zero_head.head_w2 = Tensor2D::zeros(4, 1);
  zero_head.head_b1 = Tensor2D::zeros(1, 4);
  zero_head.head_b2 = Tensor2D::create(Matrix::Constant(1, 1, 0.7));
  auto flat = ground(zero_head, constant(random_matrix(rng, 5, 4)), 4);
  for (int i = 0; i < 4; ++i)
    CHECK(flat->value(0, i) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(argmax_logits(flat) == 0);

  // Per-row MLP oracle.
  Matrix rand_fused = random_matrix(rng, 6, 4);
  auto out = ground(params, constant(rand_fused), 4);
  Matrix expect = ref_head(params, rand_fused, 4);
  CHECK((out->value - expect).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(ground(params, constant(rand_fused), 9),
                  std::invalid_argument);
}

TEST_CASE("one-step task: groundflow equals the no-history baseline") {
  std::mt19937_64 rng(3);
  auto params = init_grounder(tiny_config(), 4);
  auto scene = random_scene(rng, 3, 5);
  std::vector<InstructionEncoding> steps{{{0, 1, 2}}};
  auto gf = forward_task(params, nullptr,
                         FusionVariant{FusionKind::GroundFlow, {}}, scene, steps);
  auto none = forward_task(params, nullptr, FusionVariant{FusionKind::None, {}},
                           scene, steps);
  CHECK((gf[0]->value - none[0]->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-step task: all memory configs agree exactly") {
  std::mt19937_64 rng(5);
  auto params = init_grounder(tiny_config(), 6);
  auto scene = random_scene(rng, 3, 5);
  std::vector<InstructionEncoding> steps{{{0, 1, 2}}, {{3, 4}}};
  std::vector<std::vector<TensorPtr>> results;
  for (auto mode : {MemoryMode::Full, MemoryMode::ShortOnly,
                    MemoryMode::LongOnlyMerged, MemoryMode::RawShort,
                    MemoryMode::RawLong}) {
    FusionVariant v{FusionKind::GroundFlow, MemoryConfig{mode}};
    results.push_back(forward_task(params, nullptr, v, scene, steps));
  }
  for (std::size_t m = 1; m < results.size(); ++m)
    for (std::size_t s = 0; s < 2; ++s)
      CHECK((results[m][s]->value - results[0][s]->value)
                .cwiseAbs()
                .maxCoeff() == 0.0);
}

TEST_CASE("five-step pipeline equals the composed oracle") {
  std::mt19937_64 rng(17);
  auto params = init_grounder(tiny_config(), 17);
  auto scene = random_scene(rng, 3, 5);
  std::vector<InstructionEncoding> steps{
      {{0, 1}}, {{2}}, {{3, 4, 5}}, {{1, 2}}, {{5}}};

  // Oracle: encode each step, run the stored-history fusion, score rows.
  std::vector<Matrix> raw;
  std::vector<Mask1D> masks;
  for (const auto& s : steps) {
    Mask1D m;
    raw.push_back(ref_encode(params, scene.object_features, s.token_ids, m));
    masks.push_back(m);
  }
  auto flow = gfm_test::ref_groundflow(raw, masks, MemoryMode::Full);

  auto logits = forward_task(params, nullptr,
                             FusionVariant{FusionKind::GroundFlow, {}}, scene,
                             steps);
  for (int s = 0; s < 5; ++s) {
    Matrix expect = ref_head(params, flow[s].fused, 3);
    CHECK((logits[s]->value - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("permuting candidate objects permutes logits identically") {
  std::mt19937_64 rng(29);
  auto params = init_grounder(tiny_config(), 9);
  auto scene = random_scene(rng, 4, 5);
  std::vector<InstructionEncoding> steps{{{0, 1, 2}}, {{3, 4}}, {{2, 5}}};

  std::vector<int> perm{2, 0, 3, 1};
  SceneEncoding permuted;
  permuted.object_features = Matrix(4, 5);
  for (int i = 0; i < 4; ++i)
    permuted.object_features.row(i) = scene.object_features.row(perm[i]);

  FusionVariant v{FusionKind::GroundFlow, {}};
  auto base = forward_task(params, nullptr, v, scene, steps);
  auto moved = forward_task(params, nullptr, v, permuted, steps);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    for (int i = 0; i < 4; ++i)
      CHECK(moved[s]->value(0, i) ==
            doctest::Approx(base[s]->value(0, perm[i])).epsilon(1e-12));
    // Argmax tracks the permutation.
    CHECK(perm[argmax_logits(moved[s])] == argmax_logits(base[s]));
  }
}

TEST_CASE("end-to-end gradients match finite differences on a 3-step task") {
  std::mt19937_64 rng(41);
  auto params = init_grounder(tiny_config(), 7);
  auto scene = random_scene(rng, 3, 5);
  std::vector<InstructionEncoding> steps{{{0, 1}}, {{2, 3}}, {{4, 5}}};
  std::vector<int> targets{1, 0, 2};

  std::vector<TensorPtr> leaves;
  for (auto& [name, t] : params.named_tensors()) leaves.push_back(t);

  auto forward = [&] {
    auto logits = forward_task(params, nullptr,
                               FusionVariant{FusionKind::GroundFlow, {}},
                               scene, steps);
    TensorPtr total;
    for (std::size_t s = 0; s < logits.size(); ++s) {
      auto ce = cross_entropy_row(logits[s], targets[s]);
      total = total ? add(total, ce) : ce;
    }
    return total;
  };
  CHECK(gfm_test::gradient_check(leaves, forward) < 1e-4);
}
