#include "wsdf/autodiff.hpp"

#include <cmath>
#include <memory>
#include <algorithm>

namespace wsdf::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("Var::item on non-scalar");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, grad_enabled_, false, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const Parameter& p) {
  if (!grad_enabled_) return constant(p.value);
  nodes_.push_back(Node{p.value, {}, true, false, {}, &p});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool rg = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ValidationError("autodiff: mixing vars from different tapes");
    rg = rg || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, rg, false, rg ? std::move(backward) : Backward{}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw ShapeError("autodiff: gradient shape mismatch");
  }
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& scalar) {
  if (scalar.value().size() != 1) throw ShapeError("backward: loss must be 1x1");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(scalar, Matrix::Ones(1, 1));
  for (int id = scalar.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backward) {
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
    if (n.param) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    }
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

double elu_f(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_df(double x) { return x > 0.0 ? 1.0 : std::exp(x); }
double elu_ddf(double x) { return x > 0.0 ? 0.0 : std::exp(x); }

}  // namespace

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs(b)) t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [a, b](Tape& t, const Matrix& g) {
                            if (t.needs(a)) t.accumulate(a, g.cwiseProduct(b.value()));
                            if (t.needs(b)) t.accumulate(b, g.cwiseProduct(a.value()));
                          });
}

Var scale(const Var& a, double s) {
  return a.tape()->record(a.value() * s, {a},
                          [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_row(const Var& x, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw ShapeError("add_row: bias shape");
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return x.tape()->record(std::move(out), {x, bias}, [x, bias](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (t.needs(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

Var mul_col(const Var& x, const Var& w) {
  if (w.cols() != 1 || w.rows() != x.rows()) throw ShapeError("mul_col: weight shape");
  Matrix out = x.value().array().colwise() * w.value().col(0).array();
  return x.tape()->record(std::move(out), {x, w}, [x, w](Tape& t, const Matrix& g) {
    if (t.needs(x)) {
      Matrix gx = g.array().colwise() * w.value().col(0).array();
      t.accumulate(x, gx);
    }
    if (t.needs(w)) {
      Matrix gw = g.cwiseProduct(x.value()).rowwise().sum();
      t.accumulate(w, gw);
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimension mismatch (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var elementwise(const Var& x, ScalarFn f, ScalarFn df) {
  Matrix out = x.value().unaryExpr(f);
  return x.tape()->record(std::move(out), {x}, [x, df](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(x.value().unaryExpr(df)));
  });
}

Var square(const Var& x) {
  return x.tape()->record(x.value().cwiseAbs2(), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, 2.0 * g.cwiseProduct(x.value()));
  });
}

Var exp(const Var& x) {
  Matrix out = x.value().array().exp();
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(x.value().array().exp().matrix()));
  });
}

Var relu(const Var& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    Matrix mask = (x.value().array() > 0.0).cast<double>();
    t.accumulate(x, g.cwiseProduct(mask));
  });
}

Var clamp(const Var& x, double lo, double hi) {
  Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
  return x.tape()->record(std::move(out), {x}, [x, lo, hi](Tape& t, const Matrix& g) {
    Matrix mask = ((x.value().array() >= lo) && (x.value().array() <= hi)).cast<double>();
    t.accumulate(x, g.cwiseProduct(mask));
  });
}

Var elu(const Var& x) { return elementwise(x, elu_f, elu_df); }
Var elu_grad(const Var& x) { return elementwise(x, elu_df, elu_ddf); }

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var row_sum(const Var& x) {
  Matrix out = x.value().rowwise().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    Matrix gx = g.col(0).replicate(1, x.cols());
    t.accumulate(x, gx);
  });
}

Var row_dot(const Var& a, const Var& b) {
  same_shape(a, b, "row_dot");
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs(a)) {
      Matrix ga = b.value().array().colwise() * g.col(0).array();
      t.accumulate(a, ga);
    }
    if (t.needs(b)) {
      Matrix gb = a.value().array().colwise() * g.col(0).array();
      t.accumulate(b, gb);
    }
  });
}

Var outer_rows(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw ShapeError("outer_rows: row count mismatch");
  const Eigen::Index n = a.rows(), m = a.cols(), k = b.cols();
  Matrix out(n, m * k);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index i = 0; i < m; ++i) {
      out.row(r).segment(i * k, k) = a.value()(r, i) * b.value().row(r);
    }
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, n, m, k](Tape& t, const Matrix& g) {
    if (t.needs(a)) {
      Matrix ga(n, m);
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index i = 0; i < m; ++i) ga(r, i) = g.row(r).segment(i * k, k).dot(b.value().row(r));
      }
      t.accumulate(a, ga);
    }
    if (t.needs(b)) {
      Matrix gb = Matrix::Zero(n, k);
      for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index i = 0; i < m; ++i) gb.row(r) += a.value()(r, i) * g.row(r).segment(i * k, k);
      }
      t.accumulate(b, gb);
    }
  });
}

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) throw ShapeError("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  const Eigen::Index r0 = x.rows(), c0 = x.cols();
  return x.tape()->record(std::move(out), {x}, [x, r0, c0](Tape& t, const Matrix& g) {
    t.accumulate(x, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

Var concat_rows(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a.value(), b.value();
  const Eigen::Index ra = a.rows(), rb = b.rows();
  return a.tape()->record(std::move(out), {a, b}, [a, b, ra, rb](Tape& t, const Matrix& g) {
    if (t.needs(a)) t.accumulate(a, g.topRows(ra));
    if (t.needs(b)) t.accumulate(b, g.bottomRows(rb));
  });
}

Var slice_rows(const Var& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) throw ShapeError("slice_rows: out of range");
  Matrix out = x.value().middleRows(begin, count);
  return x.tape()->record(std::move(out), {x}, [x, begin, count](Tape& t, const Matrix& g) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    gx.middleRows(begin, count) = g;
    t.accumulate(x, gx);
  });
}

Var row_normalize(const Var& w) {
  const Vector norms = w.value().rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw DegeneracyError("row_normalize: zero row");
  Matrix out = w.value().array().colwise() / norms.array();
  return w.tape()->record(out, {w}, [w, norms, out](Tape& t, const Matrix& g) {
    // d(w/|w|) = (g - (g . u) u) / |w|
    const Vector gu = g.cwiseProduct(out).rowwise().sum();
    Matrix gw = (g - (out.array().colwise() * gu.array()).matrix()).array().colwise() / norms.array();
    t.accumulate(w, gw);
  });
}

Var spiral_gather(const Var& x, int batch, int channels, const kernels::GatherIndex& g) {
  if (x.rows() != static_cast<Eigen::Index>(batch) * g.vertices || x.cols() != channels) {
    throw ShapeError("spiral_gather: expected (batch*vertices, channels) input");
  }
  Matrix out(static_cast<Eigen::Index>(batch) * g.vertices, static_cast<Eigen::Index>(g.length) * channels);
  kernels::parallel::spiral_gather({x.value().data(), static_cast<std::size_t>(x.value().size())}, batch,
                                   channels, g, {out.data(), static_cast<std::size_t>(out.size())});
  return x.tape()->record(std::move(out), {x}, [x, batch, channels, &g](Tape& t, const Matrix& go) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    kernels::parallel::spiral_gather_backward({go.data(), static_cast<std::size_t>(go.size())}, batch,
                                              channels, g, {gx.data(), static_cast<std::size_t>(gx.size())});
    t.accumulate(x, gx);
  });
}

Var cluster_mean(const Var& x, int batch, int channels, const kernels::ClusterIndex& c) {
  if (x.rows() != static_cast<Eigen::Index>(batch) * c.fine || x.cols() != channels) {
    throw ShapeError("cluster_mean: expected (batch*fine, channels) input");
  }
  Matrix out(static_cast<Eigen::Index>(batch) * c.coarse, channels);
  kernels::parallel::cluster_mean({x.value().data(), static_cast<std::size_t>(x.value().size())}, batch,
                                  channels, c, {out.data(), static_cast<std::size_t>(out.size())});
  return x.tape()->record(std::move(out), {x}, [x, batch, channels, &c](Tape& t, const Matrix& go) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    kernels::parallel::cluster_mean_backward({go.data(), static_cast<std::size_t>(go.size())}, batch,
                                             channels, c, {gx.data(), static_cast<std::size_t>(gx.size())});
    t.accumulate(x, gx);
  });
}

Var instance_norm(const Var& x, int batch, int vertices, int channels, double eps) {
  if (x.rows() != static_cast<Eigen::Index>(batch) * vertices || x.cols() != channels) {
    throw ShapeError("instance_norm: expected (batch*vertices, channels) input");
  }
  auto out = std::make_shared<Matrix>(x.rows(), x.cols());
  auto inv_std = std::make_shared<Matrix>(batch, channels);
  kernels::parallel::instance_norm({x.value().data(), static_cast<std::size_t>(x.value().size())}, batch,
                                   vertices, channels, eps, {out->data(), static_cast<std::size_t>(out->size())},
                                   {inv_std->data(), static_cast<std::size_t>(inv_std->size())});
  Matrix value = *out;
  return x.tape()->record(std::move(value), {x},
                          [x, out, inv_std, batch, vertices, channels](Tape& t, const Matrix& go) {
                            Matrix gx = Matrix::Zero(x.rows(), x.cols());
                            kernels::parallel::instance_norm_backward(
                                {go.data(), static_cast<std::size_t>(go.size())},
                                {out->data(), static_cast<std::size_t>(out->size())},
                                {inv_std->data(), static_cast<std::size_t>(inv_std->size())}, batch,
                                vertices, channels, {gx.data(), static_cast<std::size_t>(gx.size())});
                            t.accumulate(x, gx);
                          });
}

}  // namespace wsdf::ad
