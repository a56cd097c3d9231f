#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace prokcat {

using Scalar = double;
using ArrayX = Eigen::ArrayXd;
using Shape = std::vector<int>;

// Row-major maps over the flat storage.
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

std::string shape_to_string(const Shape& s);
std::int64_t shape_size(const Shape& s);

/// Toggle NaN/Inf detection at op boundaries (on by default).
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

namespace detail {
struct TensorData {
  Shape shape;
  ArrayX values;
  bool requires_grad = false;
  ArrayX grad;  // empty until first accumulation
};
}  // namespace detail

// Dense n-d array of doubles in row-major order. Values are immutable after
// construction except through raw_values(), which exists for parameter
// initialization and optimizer updates between tapes. The grad slot is the
// only state written during backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor from_flat(Shape shape, ArrayX values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  /// Glorot-uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
  static Tensor glorot(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng,
                       bool requires_grad = true);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int axis) const { return d_->shape.at(static_cast<size_t>(axis)); }
  std::int64_t size() const { return d_->values.size(); }

  const ArrayX& values() const { return d_->values; }
  Scalar value_at(std::int64_t i) const { return d_->values(i); }
  Scalar item() const;  // requires size() == 1

  /// Mutable access to the flat storage; callers own the finite-ness of what
  /// they write. Used by initializers and adam_step.
  ArrayX& raw_values() { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return d_->grad.size() > 0; }
  /// Accumulated gradient; zeros if backward never reached this tensor.
  ArrayX grad() const;
  void zero_grad() { d_->grad.resize(0); }

  std::shared_ptr<detail::TensorData> data_ptr() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
};

/// Accumulate g into t's grad slot (no-op unless t.requires_grad()).
void add_grad(const Tensor& t, const ArrayX& g);

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread; ops record backward closures onto it whenever any input
// requires grad. Tapes and their tensors are thread-confined.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();
  void record(const Tensor& output, std::function<void()> backward_fn);
  std::size_t size() const { return nodes_.size(); }

  /// Replays recorded nodes in reverse, seeding d(loss)/d(loss) = 1.
  /// Grads of op outputs are reset at the start of each pass, so repeated
  /// calls accumulate one contribution per call into leaf grads.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::shared_ptr<detail::TensorData> output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

/// backward on the thread's active tape.
void backward(const Tensor& loss);

enum class ElemOp { add, sub, mul };
enum class Activation { tanh, silu, leaky_relu, relu };

// --- differentiable ops ------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise with limited broadcasting: shapes are aligned from the
/// trailing axis, missing leading axes are treated as length 1, and a
/// length-1 axis stretches to match the other operand.
Tensor elementwise(const Tensor& a, const Tensor& b, ElemOp op);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElemOp::add); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElemOp::sub); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElemOp::mul); }

Tensor activation(const Tensor& x, Activation kind);
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh); }
inline Tensor silu(const Tensor& x) { return activation(x, Activation::silu); }
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor leaky_relu(const Tensor& x) { return activation(x, Activation::leaky_relu); }

/// Exp-normalized along axis with max subtraction; slices sum to 1.
Tensor softmax(const Tensor& x, int axis);

/// Same-padded cross-correlation along the sequence axis.
/// x: [L x c_in], kernels: [w x c_in x c_out] with w odd. Output [L x c_out].
Tensor conv1d(const Tensor& x, const Tensor& kernels);

/// Arithmetic mean over axis 0 of an [L x d] tensor -> [d].
Tensor mean_pool(const Tensor& x, int axis = 0);

Tensor concat(const std::vector<Tensor>& tensors, int axis);

/// Row selection along axis 0; indices may repeat. Backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);

Tensor reshape(const Tensor& x, Shape new_shape);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Extension point for ops with a hand-written backward rule. The closure
/// receives the output gradient and must add_grad() into the inputs.
Tensor custom_op(std::vector<Tensor> inputs, Shape out_shape, ArrayX out_values,
                 std::function<void(const ArrayX& grad_out, const std::vector<Tensor>& inputs)>
                     backward_fn);

// --- optimizer ----------------------------------------------------------

struct AdamState {
  std::vector<ArrayX> m;
  std::vector<ArrayX> v;
  long step = 0;
};

/// Adaptive-moment update with bias correction. Gradients are read from the
/// params' grad slots (absent grad counts as zero). Grads are not cleared.
void adam_step(std::vector<Tensor>& params, AdamState& state, Scalar lr,
               Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-8);

}  // namespace prokcat
