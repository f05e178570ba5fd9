#include "gfm/ops.hpp"

#include <cmath>
#include <sstream>

namespace gfm {

namespace {

bool tracking(const TensorPtr& a) {
  return active_tape() != nullptr && a->requires_grad;
}

bool tracking(const TensorPtr& a, const TensorPtr& b) {
  return active_tape() != nullptr && (a->requires_grad || b->requires_grad);
}

[[noreturn]] void shape_error(const char* op, const TensorPtr& a,
                              const TensorPtr& b) {
  std::ostringstream ss;
  ss << op << ": incompatible shapes " << a->rows() << "x" << a->cols()
     << " and " << b->rows() << "x" << b->cols();
  throw std::invalid_argument(ss.str());
}

}  // namespace

TensorPtr constant(Matrix v) { return Tensor2D::create(std::move(v), false); }

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->cols() != b->rows()) shape_error("matmul", a, b);
  auto out = Tensor2D::create(a->value * b->value);
  if (tracking(a, b)) {
    out->requires_grad = true;
    out->ensure_grad();
    a->ensure_grad();
    b->ensure_grad();
    active_tape()->record([a, b, out] {
      if (a->requires_grad) a->grad.noalias() += out->grad * b->value.transpose();
      if (b->requires_grad) b->grad.noalias() += a->value.transpose() * out->grad;
    });
  }
  return out;
}

TensorPtr transpose(const TensorPtr& x) {
  auto out = Tensor2D::create(x->value.transpose());
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out] { x->grad += out->grad.transpose(); });
  }
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) shape_error("add", a, b);
  auto out = Tensor2D::create(a->value + b->value);
  if (tracking(a, b)) {
    out->requires_grad = true;
    out->ensure_grad();
    a->ensure_grad();
    b->ensure_grad();
    active_tape()->record([a, b, out] {
      if (a->requires_grad) a->grad += out->grad;
      if (b->requires_grad) b->grad += out->grad;
    });
  }
  return out;
}

TensorPtr scale(const TensorPtr& x, double c) {
  auto out = Tensor2D::create(x->value * c);
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out, c] { x->grad += out->grad * c; });
  }
  return out;
}

TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    shape_error("hadamard", a, b);
  auto out = Tensor2D::create(a->value.cwiseProduct(b->value));
  if (tracking(a, b)) {
    out->requires_grad = true;
    out->ensure_grad();
    a->ensure_grad();
    b->ensure_grad();
    active_tape()->record([a, b, out] {
      if (a->requires_grad) a->grad += out->grad.cwiseProduct(b->value);
      if (b->requires_grad) b->grad += out->grad.cwiseProduct(a->value);
    });
  }
  return out;
}

TensorPtr row_broadcast_mul(const TensorPtr& m, const TensorPtr& alpha) {
  if (alpha->cols() != 1 || alpha->rows() != m->rows())
    shape_error("row_broadcast_mul", m, alpha);
  auto out = Tensor2D::create(
      m->value.array().colwise() * alpha->value.col(0).array());
  if (tracking(m, alpha)) {
    out->requires_grad = true;
    out->ensure_grad();
    m->ensure_grad();
    alpha->ensure_grad();
    active_tape()->record([m, alpha, out] {
      if (m->requires_grad)
        m->grad.array() += out->grad.array().colwise() * alpha->value.col(0).array();
      if (alpha->requires_grad)
        alpha->grad.col(0) += out->grad.cwiseProduct(m->value).rowwise().sum();
    });
  }
  return out;
}

TensorPtr add_row_vector(const TensorPtr& m, const TensorPtr& b) {
  if (b->rows() != 1 || b->cols() != m->cols())
    shape_error("add_row_vector", m, b);
  auto out = Tensor2D::create(m->value.rowwise() + b->value.row(0));
  if (tracking(m, b)) {
    out->requires_grad = true;
    out->ensure_grad();
    m->ensure_grad();
    b->ensure_grad();
    active_tape()->record([m, b, out] {
      if (m->requires_grad) m->grad += out->grad;
      if (b->requires_grad) b->grad.row(0) += out->grad.colwise().sum();
    });
  }
  return out;
}

TensorPtr mean_over_cols(const TensorPtr& m) {
  const double inv = 1.0 / static_cast<double>(m->cols());
  auto out = Tensor2D::create(m->value.rowwise().sum() * inv);
  if (tracking(m)) {
    out->requires_grad = true;
    out->ensure_grad();
    m->ensure_grad();
    active_tape()->record([m, out, inv] {
      m->grad.array() += (out->grad.col(0) * inv).replicate(1, m->cols()).array();
    });
  }
  return out;
}

TensorPtr concat_rows(const TensorPtr& a, const TensorPtr& b) {
  if (a->cols() != b->cols()) shape_error("concat_rows", a, b);
  Matrix v(a->rows() + b->rows(), a->cols());
  v.topRows(a->rows()) = a->value;
  v.bottomRows(b->rows()) = b->value;
  auto out = Tensor2D::create(std::move(v));
  if (tracking(a, b)) {
    out->requires_grad = true;
    out->ensure_grad();
    a->ensure_grad();
    b->ensure_grad();
    active_tape()->record([a, b, out] {
      if (a->requires_grad) a->grad += out->grad.topRows(a->rows());
      if (b->requires_grad) b->grad += out->grad.bottomRows(b->rows());
    });
  }
  return out;
}

TensorPtr slice_rows(const TensorPtr& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x->rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  auto out = Tensor2D::create(x->value.middleRows(begin, count));
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out, begin, count] {
      x->grad.middleRows(begin, count) += out->grad;
    });
  }
  return out;
}

TensorPtr mask_rows(const TensorPtr& x, const Mask1D& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != x->rows())
    throw std::invalid_argument("mask_rows: mask length != rows");
  Matrix v = x->value;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    if (!mask.at(static_cast<std::size_t>(i))) v.row(i).setZero();
  auto out = Tensor2D::create(std::move(v));
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out, mask] {
      for (Eigen::Index i = 0; i < x->rows(); ++i)
        if (mask.at(static_cast<std::size_t>(i)))
          x->grad.row(i) += out->grad.row(i);
    });
  }
  return out;
}

TensorPtr masked_softmax_rows(const TensorPtr& x, const Mask1D& col_mask) {
  if (static_cast<Eigen::Index>(col_mask.size()) != x->cols())
    throw std::invalid_argument("masked_softmax_rows: mask length != cols");
  if (col_mask.count_true() == 0)
    throw std::invalid_argument("masked_softmax_rows: all columns masked");

  // Masked logits get a large negative sentinel; outputs there are zeroed
  // exactly after normalization.
  constexpr double kSentinel = -1e30;
  Matrix logits = x->value;
  for (Eigen::Index j = 0; j < logits.cols(); ++j)
    if (!col_mask.at(static_cast<std::size_t>(j)))
      logits.col(j).setConstant(kSentinel);

  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    for (Eigen::Index j = 0; j < e.cols(); ++j)
      if (!col_mask.at(static_cast<std::size_t>(j))) e(j) = 0.0;
    p.row(i) = e / e.sum();
  }
  auto out = Tensor2D::create(std::move(p));
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out, col_mask] {
      for (Eigen::Index i = 0; i < x->rows(); ++i) {
        const double dot = out->grad.row(i).dot(out->value.row(i));
        for (Eigen::Index j = 0; j < x->cols(); ++j)
          if (col_mask.at(static_cast<std::size_t>(j)))
            x->grad(i, j) += out->value(i, j) * (out->grad(i, j) - dot);
      }
    });
  }
  return out;
}

TensorPtr cosine_rows(const TensorPtr& a, const TensorPtr& b, double eps) {
  if (a->cols() != b->cols()) shape_error("cosine_rows", a, b);
  Eigen::VectorXd na = a->value.rowwise().norm();
  Eigen::VectorXd nb = b->value.rowwise().norm();
  Matrix out_v = Matrix::Zero(a->rows(), b->rows());
  for (Eigen::Index i = 0; i < a->rows(); ++i) {
    if (na(i) < eps) continue;
    for (Eigen::Index j = 0; j < b->rows(); ++j) {
      if (nb(j) < eps) continue;
      out_v(i, j) = a->value.row(i).dot(b->value.row(j)) / (na(i) * nb(j));
    }
  }
  auto out = Tensor2D::create(std::move(out_v));
  if (tracking(a, b)) {
    out->requires_grad = true;
    out->ensure_grad();
    a->ensure_grad();
    b->ensure_grad();
    active_tape()->record([a, b, out, na, nb, eps] {
      for (Eigen::Index i = 0; i < a->rows(); ++i) {
        if (na(i) < eps) continue;
        for (Eigen::Index j = 0; j < b->rows(); ++j) {
          if (nb(j) < eps) continue;
          const double g = out->grad(i, j);
          if (g == 0.0) continue;
          const double c = out->value(i, j);
          if (a->requires_grad)
            a->grad.row(i) += g * (b->value.row(j) / (na(i) * nb(j)) -
                                   c * a->value.row(i) / (na(i) * na(i)));
          if (b->requires_grad)
            b->grad.row(j) += g * (a->value.row(i) / (na(i) * nb(j)) -
                                   c * b->value.row(j) / (nb(j) * nb(j)));
        }
      }
    });
  }
  return out;
}

TensorPtr rms_norm_rows(const TensorPtr& x, double eps) {
  const Eigen::Index c = x->cols();
  Eigen::VectorXd r(x->rows());
  for (Eigen::Index i = 0; i < x->rows(); ++i)
    r(i) = std::sqrt(x->value.row(i).squaredNorm() / static_cast<double>(c) +
                     eps);
  auto out = Tensor2D::create(
      (x->value.array().colwise() / r.array()).matrix());
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out, r, c] {
      for (Eigen::Index i = 0; i < x->rows(); ++i) {
        const double dot = out->grad.row(i).dot(x->value.row(i));
        x->grad.row(i) +=
            out->grad.row(i) / r(i) -
            x->value.row(i) * (dot / (static_cast<double>(c) * r(i) * r(i) * r(i)));
      }
    });
  }
  return out;
}

TensorPtr tanh_t(const TensorPtr& x) {
  auto out = Tensor2D::create(x->value.array().tanh());
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out] {
      x->grad.array() +=
          out->grad.array() * (1.0 - out->value.array().square());
    });
  }
  return out;
}

TensorPtr sigmoid_t(const TensorPtr& x) {
  auto out = Tensor2D::create(
      (1.0 / (1.0 + (-x->value.array()).exp())).matrix());
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out] {
      x->grad.array() +=
          out->grad.array() * out->value.array() * (1.0 - out->value.array());
    });
  }
  return out;
}

TensorPtr sum_all(const TensorPtr& x) {
  Matrix v(1, 1);
  v(0, 0) = x->value.sum();
  auto out = Tensor2D::create(std::move(v));
  if (tracking(x)) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    active_tape()->record([x, out] {
      x->grad.array() += out->grad(0, 0);
    });
  }
  return out;
}

TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<int>& ids) {
  Matrix v(static_cast<Eigen::Index>(ids.size()), table->cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= table->rows())
      throw std::invalid_argument("embedding_lookup: id out of vocabulary");
    v.row(static_cast<Eigen::Index>(k)) = table->value.row(ids[k]);
  }
  auto out = Tensor2D::create(std::move(v));
  if (tracking(table)) {
    out->requires_grad = true;
    out->ensure_grad();
    table->ensure_grad();
    active_tape()->record([table, out, ids] {
      for (std::size_t k = 0; k < ids.size(); ++k)
        table->grad.row(ids[k]) += out->grad.row(static_cast<Eigen::Index>(k));
    });
  }
  return out;
}

TensorPtr cross_entropy_row(const TensorPtr& logits, int target) {
  if (logits->rows() != 1)
    throw std::invalid_argument("cross_entropy_row: logits must be 1xN");
  if (target < 0 || target >= logits->cols())
    throw std::invalid_argument("cross_entropy_row: target out of range");
  const double mx = logits->value.row(0).maxCoeff();
  Eigen::RowVectorXd e = (logits->value.row(0).array() - mx).exp();
  const double lse = mx + std::log(e.sum());
  Matrix v(1, 1);
  v(0, 0) = lse - logits->value(0, target);
  auto out = Tensor2D::create(std::move(v));
  if (tracking(logits)) {
    out->requires_grad = true;
    out->ensure_grad();
    logits->ensure_grad();
    Eigen::RowVectorXd p = e / e.sum();
    active_tape()->record([logits, out, p, target] {
      logits->grad.row(0) += out->grad(0, 0) * p;
      logits->grad(0, target) -= out->grad(0, 0);
    });
  }
  return out;
}

}  // namespace gfm
