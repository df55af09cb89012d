#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Ops evaluate eagerly and record a backward closure on the tape, so the same
// code path serves plain inference and training. Forward-mode products
// (JVPs) are written with ordinary ops, which makes their own gradients
// available through a single reverse sweep.

#include <deque>
#include <functional>
#include <string>

#include "wsdf/kernels.hpp"
#include "wsdf/mesh.hpp"

namespace wsdf::ad {

struct Parameter {
  std::string name;
  Matrix value;
  // Gradient buffer; written by Tape::backward even through const access.
  mutable Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  // Scalar value of a 1x1 var.
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  // A tape built with grad_enabled = false records no closures and treats
  // parameters as constants; model inference runs on such tapes.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf whose gradient is kept on the tape (tests, latent probes).
  Var variable(Matrix value);
  // Leaf whose gradient is added to p.grad by backward().
  Var param(const Parameter& p);
  bool grad_enabled() const { return grad_enabled_; }

  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  void accumulate(const Var& v, const Matrix& g);
  bool needs(const Var& v) const { return nodes_[v.id()].requires_grad; }

  void backward(const Var& scalar);
  // Gradient of the last backward() w.r.t. v; zeros when v was unreachable.
  Matrix grad(const Var& v) const;

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
    const Parameter* param = nullptr;
  };
  bool grad_enabled_ = true;
  std::deque<Node> nodes_;
};

// Elementwise maps carry their own derivative.
using ScalarFn = double (*)(double);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// x (n, m) + bias (1, m) broadcast over rows.
Var add_row(const Var& x, const Var& bias);
// x (n, m) * w (n, 1) broadcast over columns.
Var mul_col(const Var& x, const Var& w);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var elementwise(const Var& x, ScalarFn f, ScalarFn df);
Var square(const Var& x);
Var exp(const Var& x);
Var relu(const Var& x);
// Values outside [lo, hi] are clamped and pass no gradient.
Var clamp(const Var& x, double lo, double hi);
Var elu(const Var& x);
// Derivative of elu, itself differentiable.
Var elu_grad(const Var& x);
Var sum(const Var& x);
Var row_sum(const Var& x);
Var row_dot(const Var& a, const Var& b);
// Per row, the flattened outer product: out(r, i * b.cols() + j) = a(r, i) b(r, j).
Var outer_rows(const Var& a, const Var& b);
Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);
Var concat_rows(const Var& a, const Var& b);
Var slice_rows(const Var& x, Eigen::Index begin, Eigen::Index count);
// Rows scaled to unit L2 norm.
Var row_normalize(const Var& w);

// Mesh ops on (batch * vertices, channels) feature maps.
Var spiral_gather(const Var& x, int batch, int channels, const kernels::GatherIndex& g);
Var cluster_mean(const Var& x, int batch, int channels, const kernels::ClusterIndex& c);
Var instance_norm(const Var& x, int batch, int vertices, int channels, double eps = 1e-5);

}  // namespace wsdf::ad
