#pragma once

#include "gfm/ops.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace gfm_test {

using gfm::Matrix;
using gfm::TensorPtr;

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r,
                            Eigen::Index c, double scale = 1.0) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

/// Central-difference gradient check: compares the tape gradient of
/// forward() against (f(x+h) - f(x-h)) / 2h for every entry of every leaf.
/// Returns the max relative error, with |values| below 1 treated absolutely.
inline double gradient_check(
    const std::vector<TensorPtr>& leaves,
    const std::function<TensorPtr()>& forward, double h = 1e-5) {
  gfm::Tape tape;
  std::vector<Matrix> analytic;
  {
    gfm::TapeScope scope(tape);
    auto loss = forward();
    tape.backward(loss);
  }
  for (const auto& leaf : leaves) analytic.push_back(leaf->grad);
  for (const auto& leaf : leaves) leaf->zero_grad();

  double worst = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& leaf = leaves[l];
    for (Eigen::Index i = 0; i < leaf->rows(); ++i) {
      for (Eigen::Index j = 0; j < leaf->cols(); ++j) {
        const double saved = leaf->value(i, j);
        leaf->value(i, j) = saved + h;
        const double fp = forward()->value(0, 0);
        leaf->value(i, j) = saved - h;
        const double fm = forward()->value(0, 0);
        leaf->value(i, j) = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[l](i, j);
        const double err =
            std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

}  // namespace gfm_test
