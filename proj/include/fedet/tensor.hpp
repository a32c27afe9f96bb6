#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fedet/check.hpp"

namespace fedet {

// Dense row-major tensors of rank 0..2, double precision throughout.
// Reverse-mode autodiff: every operation on a grad-requiring input records
// its inputs and a backward rule on the output node; backward() replays the
// recorded operations once each, in reverse topological order.
//
// Gradient semantics: leaf gradients accumulate additively across backward()
// calls (two identical calls yield exactly 2x); call zero_grad() between
// steps. Non-leaf gradients are reset at the start of every backward().
// Tensors with requires_grad == false never allocate a gradient.

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false) {
    FEDET_CHECK(shape.size() <= 2, "tensor rank > 2 unsupported: " << shape_str(shape));
    for (int64_t d : shape)
      FEDET_CHECK(d >= 1, "nonpositive dimension in shape " << shape_str(shape));
    FEDET_CHECK(numel_of(shape) == static_cast<int64_t>(data.size()),
                "data length " << data.size() << " does not match shape "
                               << shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel_of(shape);
    return from_data(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                     requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  int64_t rank() const { return static_cast<int64_t>(node()->shape.size()); }
  int64_t numel() const { return node()->numel(); }
  int64_t dim(size_t i) const { return node()->shape.at(i); }
  bool requires_grad() const { return node()->requires_grad; }
  bool is_leaf() const { return node()->leaf; }
  const char* op_name() const { return node()->op; }

  const std::vector<double>& data() const { return node()->data; }
  bool has_grad() const { return !node()->grad.empty(); }
  const std::vector<double>& grad() const {
    FEDET_CHECK(has_grad(), "tensor holds no gradient (op=" << node()->op << ")");
    return node()->grad;
  }

  double value() const {
    FEDET_CHECK(numel() == 1, "value() on non-scalar " << shape_str(shape()));
    return node()->data[0];
  }

  double at(int64_t i) const { return node()->data.at(static_cast<size_t>(i)); }
  double at(int64_t r, int64_t c) const {
    FEDET_CHECK(rank() == 2, "at(r,c) on rank-" << rank() << " tensor");
    return node()->data.at(static_cast<size_t>(r * dim(1) + c));
  }

  // --- leaf parameter maintenance -----------------------------------------
  // Only meaningful between backward passes; a live graph must not reference
  // the tensor while its data is rewritten.

  void zero_grad() { node()->grad.assign(node()->data.size(), 0.0); }

  void sgd_step(double lr) {
    auto& n = *node();
    FEDET_CHECK(n.leaf && n.requires_grad, "sgd_step on non-trainable tensor");
    if (n.grad.empty()) return;
    for (size_t i = 0; i < n.data.size(); ++i) n.data[i] -= lr * n.grad[i];
  }

  void perturb(int64_t flat_index, double delta) {
    auto& n = *node();
    FEDET_CHECK(n.leaf, "perturb on non-leaf tensor");
    n.data.at(static_cast<size_t>(flat_index)) += delta;
  }

  void set_data(std::vector<double> values) {
    auto& n = *node();
    FEDET_CHECK(n.leaf, "set_data on non-leaf tensor");
    FEDET_CHECK(values.size() == n.data.size(),
                "set_data size mismatch: " << values.size() << " vs " << n.data.size());
    n.data = std::move(values);
  }

  std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }

private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

  detail::TensorNode* node() const {
    FEDET_CHECK(node_ != nullptr, "use of undefined tensor");
    return node_.get();
  }

  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        const char*, std::function<void(detail::TensorNode&)>);
};

// Builds an op-output node. When no input requires grad the parents and the
// backward rule are dropped, so frozen-only forwards retain no graph.
inline Tensor make_op(Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents, const char* op,
                      std::function<void(detail::TensorNode&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  Tensor out = Tensor::from_data(std::move(shape), std::move(data), rg);
  auto* n = out.node_.get();
  n->leaf = false;
  n->op = op;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backprop = std::move(backprop);
  }
  return out;
}

namespace detail {

// Shapes padded to rank 2 on the left; each padded dim must match or be 1.
struct Broadcast2 {
  int64_t rows, cols;        // output
  int64_t ar, ac, br, bc;    // padded operand dims

  static Broadcast2 resolve(const Shape& a, const Shape& b, const char* op) {
    auto pad = [](const Shape& s, int64_t& r, int64_t& c) {
      r = s.size() == 2 ? s[0] : 1;
      c = s.empty() ? 1 : s.back();
    };
    Broadcast2 bc{};
    pad(a, bc.ar, bc.ac);
    pad(b, bc.br, bc.bc);
    FEDET_CHECK((bc.ar == bc.br || bc.ar == 1 || bc.br == 1) &&
                    (bc.ac == bc.bc || bc.ac == 1 || bc.bc == 1),
                op << ": shapes " << shape_str(a) << " and " << shape_str(b)
                   << " do not broadcast (leading-1 rule)");
    bc.rows = std::max(bc.ar, bc.br);
    bc.cols = std::max(bc.ac, bc.bc);
    return bc;
  }

  size_t a_index(int64_t r, int64_t c) const {
    return static_cast<size_t>((ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c));
  }
  size_t b_index(int64_t r, int64_t c) const {
    return static_cast<size_t>((br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c));
  }

  Shape out_shape(const Shape& a, const Shape& b) const {
    size_t rank = std::max(a.size(), b.size());
    if (rank == 0) return {};
    if (rank == 1) return {cols};
    return {rows, cols};
  }
};

}  // namespace detail

// --- elementwise -----------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* op,
                          Fwd fwd, Bwd bwd_pair) {
  auto bc = Broadcast2::resolve(a.shape(), b.shape(), op);
  std::vector<double> out(static_cast<size_t>(bc.rows * bc.cols));
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (int64_t r = 0; r < bc.rows; ++r)
    for (int64_t c = 0; c < bc.cols; ++c)
      out[static_cast<size_t>(r * bc.cols + c)] =
          fwd(ad[bc.a_index(r, c)], bd[bc.b_index(r, c)]);

  auto backprop = [bc, bwd_pair](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const bool need_a = pa.requires_grad;
    const bool need_b = pb.requires_grad;
    if (need_a) pa.ensure_grad();
    if (need_b) pb.ensure_grad();
    for (int64_t r = 0; r < bc.rows; ++r)
      for (int64_t c = 0; c < bc.cols; ++c) {
        size_t oi = static_cast<size_t>(r * bc.cols + c);
        double g = self.grad[oi];
        auto [da, db] = bwd_pair(pa.data[bc.a_index(r, c)],
                                 pb.data[bc.b_index(r, c)], g);
        if (need_a) pa.grad[bc.a_index(r, c)] += da;
        if (need_b) pb.grad[bc.b_index(r, c)] += db;
      }
  };
  return make_op(bc.out_shape(a.shape(), b.shape()), std::move(out), {a, b},
                 op, std::move(backprop));
}

template <typename Fwd, typename Dfn>
Tensor elementwise_unary(const Tensor& a, const char* op, Fwd fwd, Dfn dfdx) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
  auto backprop = [dfdx](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.data.size(); ++i)
      p.grad[i] += self.grad[i] * dfdx(p.data[i]);
  };
  return make_op(a.shape(), std::move(out), {a}, op, std::move(backprop));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::elementwise_unary(
      a, "scale", [c](double x) { return c * x; },
      [c](double) { return c; });
}

inline Tensor relu(const Tensor& a) {
  return detail::elementwise_unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

// GELU, tanh approximation (documented constants; exact across platforms
// implementing IEEE-754 libm to within 1 ulp):
//   gelu(x) = 0.5 x (1 + tanh(c0 (x + c1 x^3)))
//   c0 = sqrt(2/pi) = 0.7978845608028654, c1 = 0.044715
inline constexpr double kGeluC0 = 0.7978845608028654;
inline constexpr double kGeluC1 = 0.044715;

inline Tensor gelu(const Tensor& a) {
  auto fwd = [](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x)));
  };
  auto dfdx = [](double x) {
    double u = kGeluC0 * (x + kGeluC1 * x * x * x);
    double t = std::tanh(u);
    double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
  };
  return detail::elementwise_unary(a, "gelu", fwd, dfdx);
}

// --- matmul / transpose ------------------------------------------------------

// A (p x q) times B (q x r). Rank-1 operands are promoted: A as a row vector,
// B as a column vector; the promoted dims are dropped from the result.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  FEDET_CHECK(a.rank() >= 1 && a.rank() <= 2 && b.rank() >= 1 && b.rank() <= 2,
              "matmul: ranks " << a.rank() << " and " << b.rank());
  const int64_t p = a.rank() == 2 ? a.dim(0) : 1;
  const int64_t q = a.rank() == 2 ? a.dim(1) : a.dim(0);
  const int64_t qb = b.rank() == 2 ? b.dim(0) : b.dim(0);
  const int64_t r = b.rank() == 2 ? b.dim(1) : 1;
  FEDET_CHECK(q == qb, "matmul: inner dimensions differ, " << shape_str(a.shape())
                           << " vs " << shape_str(b.shape()));

  std::vector<double> out(static_cast<size_t>(p * r), 0.0);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* O = out.data();
    for (int64_t i = 0; i < p; ++i)
      for (int64_t k = 0; k < q; ++k) {
        const double aik = A[i * q + k];
        const double* Bk = B + k * r;
        double* Oi = O + i * r;
        for (int64_t j = 0; j < r; ++j) Oi[j] += aik * Bk[j];
      }
  }

  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2) out_shape = {p, r};
  else if (a.rank() == 1 && b.rank() == 1) out_shape = {};
  else if (a.rank() == 1) out_shape = {r};
  else out_shape = {p};

  auto backprop = [p, q, r](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double* G = self.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = G . B^T
      const double* B = pb.data.data();
      for (int64_t i = 0; i < p; ++i)
        for (int64_t k = 0; k < q; ++k) {
          double acc = 0.0;
          const double* Gi = G + i * r;
          const double* Bk = B + k * r;
          for (int64_t j = 0; j < r; ++j) acc += Gi[j] * Bk[j];
          pa.grad[static_cast<size_t>(i * q + k)] += acc;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T . G
      const double* A = pa.data.data();
      for (int64_t k = 0; k < q; ++k)
        for (int64_t i = 0; i < p; ++i) {
          const double aik = A[i * q + k];
          const double* Gi = G + i * r;
          double* gk = pb.grad.data() + k * r;
          for (int64_t j = 0; j < r; ++j) gk[j] += aik * Gi[j];
        }
    }
  };
  return make_op(std::move(out_shape), std::move(out), {a, b}, "matmul",
                 std::move(backprop));
}

inline Tensor transpose(const Tensor& a) {
  FEDET_CHECK(a.rank() == 2, "transpose: rank-2 required, got " << shape_str(a.shape()));
  const int64_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      out[static_cast<size_t>(j * rows + i)] = a.data()[static_cast<size_t>(i * cols + j)];
  auto backprop = [rows, cols](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j)
        p.grad[static_cast<size_t>(i * cols + j)] +=
            self.grad[static_cast<size_t>(j * rows + i)];
  };
  return make_op({cols, rows}, std::move(out), {a}, "transpose", std::move(backprop));
}

// --- reductions --------------------------------------------------------------

// mean over one axis of a rank-2 tensor (axis 0: down columns, axis 1: across rows)
inline Tensor mean_axis(const Tensor& a, int axis) {
  FEDET_CHECK(a.rank() == 2, "mean_axis: rank-2 required, got " << shape_str(a.shape()));
  FEDET_CHECK(axis == 0 || axis == 1, "mean_axis: axis " << axis);
  const int64_t rows = a.dim(0), cols = a.dim(1);
  const int64_t out_n = axis == 0 ? cols : rows;
  const double inv = 1.0 / static_cast<double>(axis == 0 ? rows : cols);
  std::vector<double> out(static_cast<size_t>(out_n), 0.0);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      out[static_cast<size_t>(axis == 0 ? j : i)] +=
          a.data()[static_cast<size_t>(i * cols + j)] * inv;
  auto backprop = [rows, cols, axis, inv](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j)
        p.grad[static_cast<size_t>(i * cols + j)] +=
            self.grad[static_cast<size_t>(axis == 0 ? j : i)] * inv;
  };
  return make_op({out_n}, std::move(out), {a}, "mean_axis", std::move(backprop));
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto backprop = [](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (double& g : p.grad) g += self.grad[0];
  };
  return make_op({}, {s}, {a}, "sum_all", std::move(backprop));
}

inline Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// mean squared error: (1/N) sum (a - b)^2, scalar output
inline Tensor mse(const Tensor& a, const Tensor& b) {
  FEDET_CHECK(a.shape() == b.shape(), "mse: shapes " << shape_str(a.shape())
                                                     << " vs " << shape_str(b.shape()));
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  auto backprop = [inv](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double g = self.grad[0];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (size_t i = 0; i < pa.data.size(); ++i) {
      double d = 2.0 * inv * (pa.data[i] - pb.data[i]) * g;
      if (pa.requires_grad) pa.grad[i] += d;
      if (pb.requires_grad) pb.grad[i] -= d;
    }
  };
  return make_op({}, {s * inv}, {a, b}, "mse", std::move(backprop));
}

// --- row-wise ops over the last axis ----------------------------------------

namespace detail {

inline std::pair<int64_t, int64_t> rows_cols_lastdim(const Tensor& a, const char* op) {
  FEDET_CHECK(a.rank() >= 1, op << ": rank >= 1 required");
  if (a.rank() == 1) return {1, a.dim(0)};
  return {a.dim(0), a.dim(1)};
}

}  // namespace detail

inline Tensor softmax_lastdim(const Tensor& a) {
  auto [rows, cols] = detail::rows_cols_lastdim(a, "softmax");
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < rows; ++i) {
    const double* x = a.data().data() + i * cols;
    double* y = out.data() + i * cols;
    double mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int64_t j = 0; j < cols; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (int64_t j = 0; j < cols; ++j) y[j] /= z;
  }
  auto backprop = [rows = rows, cols = cols](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < rows; ++i) {
      const double* s = self.data.data() + i * cols;
      const double* g = self.grad.data() + i * cols;
      double dot = 0.0;
      for (int64_t j = 0; j < cols; ++j) dot += g[j] * s[j];
      for (int64_t j = 0; j < cols; ++j)
        p.grad[static_cast<size_t>(i * cols + j)] += s[j] * (g[j] - dot);
    }
  };
  return make_op(a.shape(), std::move(out), {a}, "softmax", std::move(backprop));
}

inline Tensor log_softmax_lastdim(const Tensor& a) {
  auto [rows, cols] = detail::rows_cols_lastdim(a, "log_softmax");
  std::vector<double> out(a.data().size());
  for (int64_t i = 0; i < rows; ++i) {
    const double* x = a.data().data() + i * cols;
    double* y = out.data() + i * cols;
    double mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int64_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
    double lz = mx + std::log(z);
    for (int64_t j = 0; j < cols; ++j) y[j] = x[j] - lz;
  }
  auto backprop = [rows = rows, cols = cols](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < rows; ++i) {
      const double* y = self.data.data() + i * cols;
      const double* g = self.grad.data() + i * cols;
      double gsum = 0.0;
      for (int64_t j = 0; j < cols; ++j) gsum += g[j];
      for (int64_t j = 0; j < cols; ++j)
        p.grad[static_cast<size_t>(i * cols + j)] += g[j] - std::exp(y[j]) * gsum;
    }
  };
  return make_op(a.shape(), std::move(out), {a}, "log_softmax", std::move(backprop));
}

// Layer normalization over the last axis, no affine part (scale/shift are
// separate mul/add ops so this rule stays small). Biased variance, like the
// reference transformer formulation.
inline Tensor layer_norm_lastdim(const Tensor& a, double eps = 1e-5) {
  auto [rows, cols] = detail::rows_cols_lastdim(a, "layer_norm");
  std::vector<double> out(a.data().size());
  const double inv_n = 1.0 / static_cast<double>(cols);
  for (int64_t i = 0; i < rows; ++i) {
    const double* x = a.data().data() + i * cols;
    double* y = out.data() + i * cols;
    double mu = 0.0;
    for (int64_t j = 0; j < cols; ++j) mu += x[j];
    mu *= inv_n;
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
    var *= inv_n;
    double inv_sigma = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * inv_sigma;
  }
  auto backprop = [rows = rows, cols = cols, inv_n, eps](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < rows; ++i) {
      const double* x = p.data.data() + i * cols;
      const double* y = self.data.data() + i * cols;
      const double* g = self.grad.data() + i * cols;
      double mu = 0.0;
      for (int64_t j = 0; j < cols; ++j) mu += x[j];
      mu *= inv_n;
      double var = 0.0;
      for (int64_t j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
      var *= inv_n;
      double inv_sigma = 1.0 / std::sqrt(var + eps);
      double gmean = 0.0, gymean = 0.0;
      for (int64_t j = 0; j < cols; ++j) {
        gmean += g[j];
        gymean += g[j] * y[j];
      }
      gmean *= inv_n;
      gymean *= inv_n;
      for (int64_t j = 0; j < cols; ++j)
        p.grad[static_cast<size_t>(i * cols + j)] +=
            inv_sigma * (g[j] - gmean - y[j] * gymean);
    }
  };
  return make_op(a.shape(), std::move(out), {a}, "layer_norm", std::move(backprop));
}

// --- slicing / concatenation over the last axis ------------------------------

inline Tensor slice_lastdim(const Tensor& a, int64_t start, int64_t count) {
  auto [rows, cols] = detail::rows_cols_lastdim(a, "slice");
  FEDET_CHECK(start >= 0 && count >= 1 && start + count <= cols,
              "slice: [" << start << "," << start + count << ") out of "
                         << cols << " columns");
  std::vector<double> out(static_cast<size_t>(rows * count));
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < count; ++j)
      out[static_cast<size_t>(i * count + j)] =
          a.data()[static_cast<size_t>(i * cols + start + j)];
  Shape out_shape = a.rank() == 1 ? Shape{count} : Shape{rows, count};
  auto backprop = [rows = rows, cols = cols, start, count](detail::TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < count; ++j)
        p.grad[static_cast<size_t>(i * cols + start + j)] +=
            self.grad[static_cast<size_t>(i * count + j)];
  };
  return make_op(std::move(out_shape), std::move(out), {a}, "slice",
                 std::move(backprop));
}

inline Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  FEDET_CHECK(!parts.empty(), "concat: no inputs");
  const int64_t rank = parts[0].rank();
  const int64_t rows = rank == 2 ? parts[0].dim(0) : 1;
  int64_t total = 0;
  std::vector<int64_t> widths;
  for (const auto& t : parts) {
    FEDET_CHECK(t.rank() == rank, "concat: mixed ranks");
    FEDET_CHECK((rank == 2 ? t.dim(0) : 1) == rows, "concat: row counts differ");
    widths.push_back(rank == 2 ? t.dim(1) : t.dim(0));
    total += widths.back();
  }
  std::vector<double> out(static_cast<size_t>(rows * total));
  int64_t off = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const auto& d = parts[k].data();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < widths[k]; ++j)
        out[static_cast<size_t>(i * total + off + j)] =
            d[static_cast<size_t>(i * widths[k] + j)];
    off += widths[k];
  }
  Shape out_shape = rank == 1 ? Shape{total} : Shape{rows, total};
  auto backprop = [rows, total, widths](detail::TensorNode& self) {
    int64_t off = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < widths[k]; ++j)
            p.grad[static_cast<size_t>(i * widths[k] + j)] +=
                self.grad[static_cast<size_t>(i * total + off + j)];
      }
      off += widths[k];
    }
  };
  return make_op(std::move(out_shape), std::move(out), parts, "concat",
                 std::move(backprop));
}

// --- operators ---------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// --- backward ----------------------------------------------------------------

// Reverse pass from a scalar loss. Leaf gradients accumulate; non-leaf
// gradients are reset first, so each call contributes one clean pass.
// A loss with no grad-requiring inputs is a no-op.
inline void backward(const Tensor& loss) {
  FEDET_CHECK(loss.numel() == 1,
              "backward: loss must be scalar, got " << shape_str(loss.shape()));
  auto root = loss.node_ptr();
  if (!root->requires_grad) return;

  // iterative post-order DFS over grad-requiring nodes
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  struct Frame {
    detail::TensorNode* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      auto* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    n->ensure_grad();
    if (!n->leaf) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  root->grad[0] += 1.0;

  // order is post-order, so reverse iteration is reverse-topological;
  // each recorded operation is replayed exactly once
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (!n->leaf && n->backprop) n->backprop(*n);
  }
}

}  // namespace fedet
