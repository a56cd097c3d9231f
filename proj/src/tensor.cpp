#include "prokcat/tensor.hpp"

#include "prokcat/rng.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <utility>

namespace prokcat {

namespace {

std::atomic<bool> g_finite_checks{true};

thread_local Tape* t_current_tape = nullptr;

void check_finite(const char* where, const ArrayX& a) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  if (!a.allFinite()) {
    throw std::domain_error(std::string(where) + ": non-finite value produced");
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::int64_t row_size(const Shape& s) {
  std::int64_t n = 1;
  for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
  return n;
}

// Whether this op should record a backward node.
bool tracing(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor make_output(Shape shape, ArrayX values, bool requires_grad, const char* op_name) {
  check_finite(op_name, values);
  Tensor out = Tensor::from_flat(std::move(shape), std::move(values));
  out.set_requires_grad(requires_grad);
  return out;
}

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.values().data(), t.dim(0), t.dim(1));
}

}  // namespace

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

// --- Tensor ---------------------------------------------------------------

Tensor Tensor::from_flat(Shape shape, ArrayX values, bool requires_grad) {
  require(!shape.empty(), "Tensor: shape must have at least one axis");
  for (int d : shape) require(d > 0, "Tensor: all dimensions must be positive, got " + shape_to_string(shape));
  require(shape_size(shape) == values.size(),
          "Tensor: shape " + shape_to_string(shape) + " does not match " +
              std::to_string(values.size()) + " values");
  check_finite("Tensor construction", values);
  auto d = std::make_shared<detail::TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  ArrayX a = Eigen::Map<const ArrayX>(values.data(), static_cast<Eigen::Index>(values.size()));
  return from_flat(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  ArrayX a = ArrayX::Zero(shape_size(shape));
  return from_flat(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  ArrayX a = ArrayX::Constant(shape_size(shape), value);
  return from_flat(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::glorot(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng,
                      bool requires_grad) {
  const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
  ArrayX a(shape_size(shape));
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng::uniform(rng, -limit, limit);
  return from_flat(std::move(shape), std::move(a), requires_grad);
}

Scalar Tensor::item() const {
  require(size() == 1, "item: tensor has " + std::to_string(size()) + " elements");
  return d_->values(0);
}

ArrayX Tensor::grad() const {
  if (d_->grad.size() > 0) return d_->grad;
  return ArrayX::Zero(d_->values.size());
}

void add_grad(const Tensor& t, const ArrayX& g) {
  if (!t.requires_grad()) return;
  auto d = t.data_ptr();
  if (d->grad.size() == 0) d->grad = ArrayX::Zero(d->values.size());
  d->grad += g;
}

// --- Tape -----------------------------------------------------------------

Tape::Tape() : prev_(t_current_tape) { t_current_tape = this; }

Tape::~Tape() { t_current_tape = prev_; }

Tape* Tape::current() { return t_current_tape; }

void Tape::record(const Tensor& output, std::function<void()> backward_fn) {
  nodes_.push_back(Node{output.data_ptr(), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  require(loss.size() == 1,
          "backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
  for (Node& n : nodes_) n.output->grad.resize(0);
  add_grad(loss, ArrayX::Ones(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward_fn();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw std::logic_error("backward: no active Tape on this thread");
  tape->backward(loss);
}

// --- broadcasting ----------------------------------------------------------

namespace {

// Per-axis strides over the output index space; 0 where the operand's axis is
// stretched. Only length-1 stretching and leading-axis insertion are allowed.
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  bool trivial = false;  // shapes identical
};

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

BroadcastPlan make_broadcast_plan(const Shape& a, const Shape& b) {
  if (a == b) {
    BroadcastPlan p;
    p.out = a;
    p.trivial = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));

  BroadcastPlan p;
  p.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i]) {
      p.out[i] = pa[i];
    } else if (pa[i] == 1 || pb[i] == 1) {
      p.out[i] = std::max(pa[i], pb[i]);
    } else {
      throw std::invalid_argument("elementwise: shapes " + shape_to_string(a) + " and " +
                                  shape_to_string(b) + " are not broadcastable");
    }
  }
  auto sa = row_major_strides(pa);
  auto sb = row_major_strides(pb);
  p.stride_a.resize(rank);
  p.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    p.stride_a[i] = (pa[i] == 1 && p.out[i] != 1) ? 0 : sa[i];
    p.stride_b[i] = (pb[i] == 1 && p.out[i] != 1) ? 0 : sb[i];
  }
  return p;
}

// Walks the output index space once, yielding flat offsets into both operands.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t rank = p.out.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t oa = 0, ob = 0;
  const std::int64_t total = shape_size(p.out);
  for (std::int64_t flat = 0; flat < total; ++flat) {
    f(flat, oa, ob);
    for (int ax = static_cast<int>(rank) - 1; ax >= 0; --ax) {
      auto u = static_cast<std::size_t>(ax);
      ++idx[u];
      oa += p.stride_a[u];
      ob += p.stride_b[u];
      if (idx[u] < p.out[u]) break;
      oa -= p.stride_a[u] * p.out[u];
      ob -= p.stride_b[u] * p.out[u];
      idx[u] = 0;
    }
  }
}

}  // namespace

Tensor elementwise(const Tensor& a, const Tensor& b, ElemOp op) {
  const BroadcastPlan plan = make_broadcast_plan(a.shape(), b.shape());
  ArrayX out(shape_size(plan.out));
  const ArrayX& va = a.values();
  const ArrayX& vb = b.values();
  if (plan.trivial) {
    switch (op) {
      case ElemOp::add: out = va + vb; break;
      case ElemOp::sub: out = va - vb; break;
      case ElemOp::mul: out = va * vb; break;
    }
  } else {
    for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
      switch (op) {
        case ElemOp::add: out(o) = va(ia) + vb(ib); break;
        case ElemOp::sub: out(o) = va(ia) - vb(ib); break;
        case ElemOp::mul: out(o) = va(ia) * vb(ib); break;
      }
    });
  }
  const bool rec = tracing({&a, &b});
  Tensor result = make_output(plan.out, std::move(out), rec, "elementwise");
  if (rec) {
    Tape::current()->record(result, [a, b, result, plan, op]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      if (plan.trivial) {
        switch (op) {
          case ElemOp::add:
            add_grad(a, g);
            add_grad(b, g);
            break;
          case ElemOp::sub:
            add_grad(a, g);
            add_grad(b, -g);
            break;
          case ElemOp::mul:
            add_grad(a, g * b.values());
            add_grad(b, g * a.values());
            break;
        }
        return;
      }
      // Sum-reduce over broadcast axes via the same index walk.
      ArrayX ga = ArrayX::Zero(a.size());
      ArrayX gb = ArrayX::Zero(b.size());
      const ArrayX& va = a.values();
      const ArrayX& vb = b.values();
      for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        switch (op) {
          case ElemOp::add:
            ga(ia) += g(o);
            gb(ib) += g(o);
            break;
          case ElemOp::sub:
            ga(ia) += g(o);
            gb(ib) -= g(o);
            break;
          case ElemOp::mul:
            ga(ia) += g(o) * vb(ib);
            gb(ib) += g(o) * va(ia);
            break;
        }
      });
      add_grad(a, ga);
      add_grad(b, gb);
    });
  }
  return result;
}

// --- matmul / transpose -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: expects rank-2 tensors, got " + shape_to_string(a.shape()) + " and " +
              shape_to_string(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul: inner dimensions disagree for shapes " +
                                    shape_to_string(a.shape()) + " and " +
                                    shape_to_string(b.shape()));
  const int m = a.dim(0), n = b.dim(1);
  ArrayX out(static_cast<std::int64_t>(m) * n);
  MatMap(out.data(), m, n).noalias() = as_matrix(a) * as_matrix(b);
  const bool rec = tracing({&a, &b});
  Tensor result = make_output({m, n}, std::move(out), rec, "matmul");
  if (rec) {
    Tape::current()->record(result, [a, b, result]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      ConstMatMap gm(g.data(), result.dim(0), result.dim(1));
      if (a.requires_grad()) {
        ArrayX ga(a.size());
        MatMap(ga.data(), a.dim(0), a.dim(1)).noalias() = gm * as_matrix(b).transpose();
        add_grad(a, ga);
      }
      if (b.requires_grad()) {
        ArrayX gb(b.size());
        MatMap(gb.data(), b.dim(0), b.dim(1)).noalias() = as_matrix(a).transpose() * gm;
        add_grad(b, gb);
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: expects rank-2 tensor, got " + shape_to_string(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  ArrayX out(a.size());
  MatMap(out.data(), n, m) = as_matrix(a).transpose();
  const bool rec = tracing({&a});
  Tensor result = make_output({n, m}, std::move(out), rec, "transpose");
  if (rec) {
    Tape::current()->record(result, [a, result, m, n]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      ArrayX ga(a.size());
      MatMap(ga.data(), m, n) = ConstMatMap(g.data(), n, m).transpose();
      add_grad(a, ga);
    });
  }
  return result;
}

// --- activations -------------------------------------------------------------

namespace {

ArrayX sigmoid(const ArrayX& x) { return 1.0 / (1.0 + (-x).exp()); }

}  // namespace

Tensor activation(const Tensor& x, Activation kind) {
  ArrayX out;
  switch (kind) {
    case Activation::tanh: out = x.values().tanh(); break;
    case Activation::silu: out = x.values() * sigmoid(x.values()); break;
    case Activation::relu: out = x.values().max(0.0); break;
    case Activation::leaky_relu:
      out = (x.values() > 0.0).select(x.values(), 0.01 * x.values());
      break;
  }
  const bool rec = tracing({&x});
  Tensor result = make_output(x.shape(), std::move(out), rec, "activation");
  if (rec) {
    Tape::current()->record(result, [x, result, kind]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      ArrayX dx;
      switch (kind) {
        case Activation::tanh:
          dx = 1.0 - result.values().square();
          break;
        case Activation::silu: {
          const ArrayX s = sigmoid(x.values());
          dx = s * (1.0 + x.values() * (1.0 - s));
          break;
        }
        case Activation::relu:
          dx = (x.values() > 0.0).cast<Scalar>();
          break;
        case Activation::leaky_relu:
          dx = (x.values() > 0.0).select(ArrayX::Ones(x.size()), ArrayX::Constant(x.size(), 0.01));
          break;
      }
      add_grad(x, g * dx);
    });
  }
  return result;
}

// --- softmax -------------------------------------------------------------------

namespace {

struct AxisSplit {
  std::int64_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " invalid for shape " + shape_to_string(s));
  AxisSplit sp{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisSplit sp = split_axis(x.shape(), axis, "softmax");
  ArrayX out(x.size());
  const ArrayX& v = x.values();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::int64_t j = 0; j < sp.n; ++j) mx = std::max(mx, v((o * sp.n + j) * sp.inner + i));
      Scalar sum = 0;
      for (std::int64_t j = 0; j < sp.n; ++j) {
        const std::int64_t k = (o * sp.n + j) * sp.inner + i;
        out(k) = std::exp(v(k) - mx);
        sum += out(k);
      }
      for (std::int64_t j = 0; j < sp.n; ++j) out((o * sp.n + j) * sp.inner + i) /= sum;
    }
  }
  const bool rec = tracing({&x});
  Tensor result = make_output(x.shape(), std::move(out), rec, "softmax");
  if (rec) {
    Tape::current()->record(result, [x, result, sp]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      const ArrayX& y = result.values();
      ArrayX gx(x.size());
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          Scalar dot = 0;
          for (std::int64_t j = 0; j < sp.n; ++j) {
            const std::int64_t k = (o * sp.n + j) * sp.inner + i;
            dot += g(k) * y(k);
          }
          for (std::int64_t j = 0; j < sp.n; ++j) {
            const std::int64_t k = (o * sp.n + j) * sp.inner + i;
            gx(k) = y(k) * (g(k) - dot);
          }
        }
      }
      add_grad(x, gx);
    });
  }
  return result;
}

// --- conv1d ---------------------------------------------------------------------

namespace {

// Unrolls the same-padded sequence into [L x (w*c_in)] so the convolution is a
// single matrix product against the flattened kernel bank.
ArrayX im2col(const ArrayX& x, int L, int c_in, int w) {
  const int pad = w / 2;
  ArrayX col = ArrayX::Zero(static_cast<std::int64_t>(L) * w * c_in);
  for (int l = 0; l < L; ++l) {
    for (int t = 0; t < w; ++t) {
      const int src = l + t - pad;
      if (src < 0 || src >= L) continue;
      for (int c = 0; c < c_in; ++c) {
        col((static_cast<std::int64_t>(l) * w + t) * c_in + c) =
            x(static_cast<std::int64_t>(src) * c_in + c);
      }
    }
  }
  return col;
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& kernels) {
  require(x.rank() == 2, "conv1d: input must be [L x c_in], got " + shape_to_string(x.shape()));
  require(kernels.rank() == 3,
          "conv1d: kernels must be [w x c_in x c_out], got " + shape_to_string(kernels.shape()));
  const int L = x.dim(0), c_in = x.dim(1);
  const int w = kernels.dim(0), c_out = kernels.dim(2);
  require(w % 2 == 1, "conv1d: kernel width must be odd for same padding, got " + std::to_string(w));
  require(kernels.dim(1) == c_in, "conv1d: kernel c_in mismatch for shapes " +
                                      shape_to_string(x.shape()) + " and " +
                                      shape_to_string(kernels.shape()));

  const ArrayX col = im2col(x.values(), L, c_in, w);
  ArrayX out(static_cast<std::int64_t>(L) * c_out);
  ConstMatMap colm(col.data(), L, w * c_in);
  ConstMatMap km(kernels.values().data(), w * c_in, c_out);
  MatMap(out.data(), L, c_out).noalias() = colm * km;

  const bool rec = tracing({&x, &kernels});
  Tensor result = make_output({L, c_out}, std::move(out), rec, "conv1d");
  if (rec) {
    Tape::current()->record(result, [x, kernels, result, L, c_in, w, c_out]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      ConstMatMap gm(g.data(), L, c_out);
      if (kernels.requires_grad()) {
        const ArrayX col = im2col(x.values(), L, c_in, w);
        ArrayX gk(kernels.size());
        MatMap(gk.data(), w * c_in, c_out).noalias() =
            ConstMatMap(col.data(), L, w * c_in).transpose() * gm;
        add_grad(kernels, gk);
      }
      if (x.requires_grad()) {
        ArrayX gcol(static_cast<std::int64_t>(L) * w * c_in);
        MatMap(gcol.data(), L, w * c_in).noalias() =
            gm * ConstMatMap(kernels.values().data(), w * c_in, c_out).transpose();
        ArrayX gx = ArrayX::Zero(x.size());
        const int pad = w / 2;
        for (int l = 0; l < L; ++l) {
          for (int t = 0; t < w; ++t) {
            const int src = l + t - pad;
            if (src < 0 || src >= L) continue;
            for (int c = 0; c < c_in; ++c) {
              gx(static_cast<std::int64_t>(src) * c_in + c) +=
                  gcol((static_cast<std::int64_t>(l) * w + t) * c_in + c);
            }
          }
        }
        add_grad(x, gx);
      }
    });
  }
  return result;
}

// --- reductions / reshaping -----------------------------------------------------

Tensor mean_pool(const Tensor& x, int axis) {
  require(x.rank() == 2, "mean_pool: expects [L x d], got " + shape_to_string(x.shape()));
  require(axis == 0, "mean_pool: only axis 0 is supported, got " + std::to_string(axis));
  const int L = x.dim(0), d = x.dim(1);
  require(L >= 1, "mean_pool: empty axis");
  ArrayX out(d);
  Eigen::Map<Eigen::VectorXd>(out.data(), d) =
      as_matrix(x).colwise().mean().transpose();
  const bool rec = tracing({&x});
  Tensor result = make_output({d}, std::move(out), rec, "mean_pool");
  if (rec) {
    Tape::current()->record(result, [x, result, L, d]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad() / static_cast<Scalar>(L);
      ArrayX gx(x.size());
      for (int l = 0; l < L; ++l) gx.segment(static_cast<std::int64_t>(l) * d, d) = g;
      add_grad(x, gx);
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
  require(!tensors.empty(), "concat: needs at least one tensor");
  const Shape& first = tensors[0].shape();
  split_axis(first, axis, "concat");
  Shape out_shape = first;
  for (std::size_t t = 1; t < tensors.size(); ++t) {
    const Shape& s = tensors[t].shape();
    require(s.size() == first.size(), "concat: rank mismatch between " + shape_to_string(first) +
                                          " and " + shape_to_string(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) == axis) continue;
      require(s[i] == first[i], "concat: off-axis dimensions differ between " +
                                    shape_to_string(first) + " and " + shape_to_string(s));
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }

  const AxisSplit osp = split_axis(out_shape, axis, "concat");
  ArrayX out(shape_size(out_shape));
  std::int64_t off = 0;  // running offset along the concat axis
  std::vector<std::int64_t> starts(tensors.size());
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    starts[t] = off;
    const std::int64_t nt = tensors[t].dim(axis);
    const std::int64_t block = nt * osp.inner;
    const ArrayX& v = tensors[t].values();
    for (std::int64_t o = 0; o < osp.outer; ++o) {
      out.segment((o * osp.n + off) * osp.inner, block) = v.segment(o * block, block);
    }
    off += nt;
  }

  bool any_grad = false;
  for (const Tensor& t : tensors)
    if (t.requires_grad()) any_grad = true;
  const bool rec = Tape::current() != nullptr && any_grad;
  Tensor result = make_output(out_shape, std::move(out), rec, "concat");
  if (rec) {
    Tape::current()->record(result, [tensors, result, osp, starts, axis]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      for (std::size_t t = 0; t < tensors.size(); ++t) {
        if (!tensors[t].requires_grad()) continue;
        const std::int64_t nt = tensors[t].dim(axis);
        const std::int64_t block = nt * osp.inner;
        ArrayX gt(tensors[t].size());
        for (std::int64_t o = 0; o < osp.outer; ++o) {
          gt.segment(o * block, block) = g.segment((o * osp.n + starts[t]) * osp.inner, block);
        }
        add_grad(tensors[t], gt);
      }
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
  require(!indices.empty(), "gather_rows: empty index list");
  const int N = x.dim(0);
  for (int i : indices)
    require(i >= 0 && i < N, "gather_rows: index " + std::to_string(i) + " out of range for " +
                                 shape_to_string(x.shape()));
  const std::int64_t rs = row_size(x.shape());
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<int>(indices.size());
  ArrayX out(shape_size(out_shape));
  for (std::size_t k = 0; k < indices.size(); ++k)
    out.segment(static_cast<std::int64_t>(k) * rs, rs) = x.values().segment(indices[k] * rs, rs);
  const bool rec = tracing({&x});
  Tensor result = make_output(out_shape, std::move(out), rec, "gather_rows");
  if (rec) {
    Tape::current()->record(result, [x, result, indices, rs]() {
      if (!result.has_grad()) return;
      const ArrayX g = result.grad();
      ArrayX gx = ArrayX::Zero(x.size());
      for (std::size_t k = 0; k < indices.size(); ++k)
        gx.segment(indices[k] * rs, rs) += g.segment(static_cast<std::int64_t>(k) * rs, rs);
      add_grad(x, gx);
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  require(shape_size(new_shape) == x.size(), "reshape: cannot view " +
                                                 shape_to_string(x.shape()) + " as " +
                                                 shape_to_string(new_shape));
  const bool rec = tracing({&x});
  Tensor result = make_output(std::move(new_shape), x.values(), rec, "reshape");
  if (rec) {
    Tape::current()->record(result, [x, result]() {
      if (!result.has_grad()) return;
      add_grad(x, result.grad());
    });
  }
  return result;
}

Tensor sum_all(const Tensor& x) {
  const bool rec = tracing({&x});
  Tensor result = make_output({1}, ArrayX::Constant(1, x.values().sum()), rec, "sum_all");
  if (rec) {
    Tape::current()->record(result, [x, result]() {
      if (!result.has_grad()) return;
      add_grad(x, ArrayX::Constant(x.size(), result.grad()(0)));
    });
  }
  return result;
}

Tensor mean_all(const Tensor& x) {
  const bool rec = tracing({&x});
  Tensor result = make_output({1}, ArrayX::Constant(1, x.values().mean()), rec, "mean_all");
  if (rec) {
    Tape::current()->record(result, [x, result]() {
      if (!result.has_grad()) return;
      add_grad(x, ArrayX::Constant(x.size(), result.grad()(0) / static_cast<Scalar>(x.size())));
    });
  }
  return result;
}

Tensor custom_op(std::vector<Tensor> inputs, Shape out_shape, ArrayX out_values,
                 std::function<void(const ArrayX&, const std::vector<Tensor>&)> backward_fn) {
  bool any_grad = false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) any_grad = true;
  const bool rec = Tape::current() != nullptr && any_grad;
  Tensor result = make_output(std::move(out_shape), std::move(out_values), rec, "custom_op");
  if (rec) {
    Tape::current()->record(result, [inputs = std::move(inputs), result, backward_fn = std::move(backward_fn)]() {
      if (!result.has_grad()) return;
      backward_fn(result.grad(), inputs);
    });
  }
  return result;
}

// --- adam ------------------------------------------------------------------------

void adam_step(std::vector<Tensor>& params, AdamState& state, Scalar lr, Scalar beta1,
               Scalar beta2, Scalar eps) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = ArrayX::Zero(params[i].size());
      state.v[i] = ArrayX::Zero(params[i].size());
    }
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          "adam_step: state holds " + std::to_string(state.m.size()) + " moments for " +
              std::to_string(params.size()) + " params");
  ++state.step;
  const Scalar bc1 = 1.0 - std::pow(beta1, static_cast<Scalar>(state.step));
  const Scalar bc2 = 1.0 - std::pow(beta2, static_cast<Scalar>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(state.m[i].size() == params[i].size(),
            "adam_step: moment size " + std::to_string(state.m[i].size()) +
                " mismatches param shape " + shape_to_string(params[i].shape()));
    const ArrayX g = params[i].grad();
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g.square();
    params[i].raw_values() -= lr * (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + eps);
    check_finite("adam_step", params[i].values());
  }
}

}  // namespace prokcat
