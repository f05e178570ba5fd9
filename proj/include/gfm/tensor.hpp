#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfm {

using Matrix = Eigen::MatrixXd;

/// Token-level padding mask. true = real token, false = padding.
struct Mask1D {
  std::vector<char> flags;

  Mask1D() = default;
  explicit Mask1D(std::size_t n, bool value = true) : flags(n, value ? 1 : 0) {}

  std::size_t size() const { return flags.size(); }
  bool at(std::size_t i) const { return flags[i] != 0; }
  void set(std::size_t i, bool v) { flags[i] = v ? 1 : 0; }

  std::size_t count_true() const {
    std::size_t n = 0;
    for (char f : flags) n += (f != 0);
    return n;
  }

  static Mask1D unite(const Mask1D& a, const Mask1D& b) {
    if (a.size() != b.size())
      throw std::invalid_argument("Mask1D::unite: length mismatch");
    Mask1D out(a.size(), false);
    for (std::size_t i = 0; i < a.size(); ++i)
      out.flags[i] = (a.flags[i] || b.flags[i]) ? 1 : 0;
    return out;
  }

  bool operator==(const Mask1D& o) const { return flags == o.flags; }
};

class Tensor2D;
using TensorPtr = std::shared_ptr<Tensor2D>;

/// Dense T x H matrix with an optional gradient slot. Storage is Eigen
/// (column-major internally, shape semantics are row = token).
class Tensor2D {
 public:
  Matrix value;
  Matrix grad;  // 0x0 until first needed
  bool requires_grad = false;

  Tensor2D() = default;
  explicit Tensor2D(Matrix v, bool req = false)
      : value(std::move(v)), requires_grad(req) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }

  bool has_grad() const { return grad.size() != 0; }

  void ensure_grad() {
    if (!has_grad()) grad = Matrix::Zero(value.rows(), value.cols());
  }

  void zero_grad() {
    if (has_grad()) grad.setZero();
  }

  static TensorPtr create(Matrix v, bool requires_grad = false) {
    return std::make_shared<Tensor2D>(std::move(v), requires_grad);
  }

  static TensorPtr zeros(Eigen::Index r, Eigen::Index c,
                         bool requires_grad = false) {
    return create(Matrix::Zero(r, c), requires_grad);
  }
};

/// Records primitive operations during the forward pass; replaying the
/// record backward populates grad for every tensor reachable from the loss.
class Tape {
 public:
  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  /// A second call without clear() is rejected.
  void backward(const TensorPtr& loss) {
    if (consumed_)
      throw std::logic_error("Tape::backward: tape already consumed; clear() first");
    if (!loss || loss->rows() != 1 || loss->cols() != 1)
      throw std::invalid_argument("Tape::backward: loss must be a 1x1 tensor");
    loss->ensure_grad();
    loss->grad(0, 0) = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  void clear() {
    steps_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

/// The active tape is thread-local; ops record onto it only while a
/// TapeScope is alive. Forward-only evaluation simply opens no scope.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace gfm
