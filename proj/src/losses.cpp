#include "wsdf/losses.hpp"

#include <cmath>
#include <map>

namespace wsdf {

void LossWeights::validate() const {
  for (double v : {lambda_neu, lambda_jac, lambda_mi, gamma}) {
    if (!std::isfinite(v)) throw ConfigError("LossWeights: non-finite weight");
  }
  if (lambda_neu < 0.0 || lambda_jac < 0.0 || lambda_mi < 0.0) {
    throw ConfigError("LossWeights: loss weights must be non-negative");
  }
  if (!(gamma > 0.0)) throw ConfigError("LossWeights: gamma must be positive");
}

ad::Var loss_rec(const ad::Var& x, const ad::Var& x_rec) {
  if (x.rows() != x_rec.rows() || x.cols() != x_rec.cols()) throw ShapeError("loss_rec: shape mismatch");
  return ad::scale(ad::sum(ad::square(ad::sub(x, x_rec))), 1.0 / static_cast<double>(x.rows()));
}

ad::Var loss_kl(const ad::Var& mu_id, const ad::Var& logvar_id, const ad::Var& mu_exp,
                const ad::Var& logvar_exp) {
  if (mu_id.rows() != mu_exp.rows()) throw ShapeError("loss_kl: batch mismatch");
  auto branch = [](const ad::Var& mu, const ad::Var& lv) {
    if (mu.rows() != lv.rows() || mu.cols() != lv.cols()) throw ShapeError("loss_kl: mu/logvar mismatch");
    // exp(lv) + mu^2 - 1 - lv, the -1 summed as a constant.
    const ad::Var s = ad::sum(ad::sub(ad::add(ad::exp(lv), ad::square(mu)), lv));
    Matrix ones(1, 1);
    ones(0, 0) = static_cast<double>(mu.value().size());
    return ad::sub(s, mu.tape()->constant(ones));
  };
  const ad::Var both = ad::add(branch(mu_id, logvar_id), branch(mu_exp, logvar_exp));
  return ad::scale(both, 0.5 / static_cast<double>(mu_id.rows()));
}

ad::Var loss_neu(const ad::Var& x_neu, const Matrix& bank_targets, const Vector& alpha) {
  if (bank_targets.rows() != x_neu.rows() || bank_targets.cols() != x_neu.cols() ||
      alpha.size() != x_neu.rows()) {
    throw ShapeError("loss_neu: shape mismatch");
  }
  ad::Tape& tape = *x_neu.tape();
  const ad::Var diff = ad::sub(tape.constant(bank_targets), x_neu);
  const ad::Var per_row = ad::row_sum(ad::square(diff));
  Matrix w = alpha / static_cast<double>(x_neu.rows());
  return ad::sum(ad::mul_col(per_row, tape.constant(w)));
}

JacobianTerms loss_jac(const ad::Var& z_exp, const ad::Var& x_rec, const ad::Var& x_neu,
                       const JvpProvider& jvp, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("loss_jac: gamma must be positive");
  if (x_rec.rows() != x_neu.rows() || x_rec.cols() != x_neu.cols() || z_exp.rows() != x_rec.rows()) {
    throw ShapeError("loss_jac: shape mismatch");
  }
  ad::Tape& tape = *z_exp.tape();
  const ad::Var d = tape.constant(x_rec.value() - x_neu.value());
  const ad::Var jz = jvp(z_exp, z_exp);
  if (jz.rows() != d.rows() || jz.cols() != d.cols()) throw ShapeError("loss_jac: JVP shape mismatch");
  const ad::Var p = ad::row_dot(d, jz);
  const ad::Var q = ad::scale(ad::row_sum(ad::square(z_exp)), gamma);
  // For q >= 0 the two hinges never fire together, so the max equals their sum.
  const ad::Var hinge = ad::add(ad::relu(ad::scale(p, -1.0)), ad::relu(ad::sub(p, q)));
  JacobianTerms out;
  out.loss = ad::scale(ad::sum(hinge), 1.0 / static_cast<double>(z_exp.rows()));
  out.projection = p.value().col(0);
  out.bound = q.value().col(0);
  return out;
}

ad::Var loss_mi(const ad::Var& mu_id, const std::vector<int>& group_of_row) {
  const Eigen::Index n = mu_id.rows();
  if (static_cast<Eigen::Index>(group_of_row.size()) != n) throw ShapeError("loss_mi: group labels");
  std::map<int, std::vector<Eigen::Index>> groups;
  for (Eigen::Index r = 0; r < n; ++r) groups[group_of_row[r]].push_back(r);
  // centre * mu gives each row minus its group mean.
  Matrix centre = Matrix::Identity(n, n);
  Matrix weight(n, 1);
  const double n_groups = static_cast<double>(groups.size());
  for (const auto& [g, rows] : groups) {
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (Eigen::Index r : rows) {
      for (Eigen::Index c : rows) centre(r, c) -= inv;
      weight(r, 0) = inv / n_groups;
    }
  }
  ad::Tape& tape = *mu_id.tape();
  const ad::Var dev = ad::matmul(tape.constant(centre), mu_id);
  return ad::sum(ad::mul_col(ad::row_sum(ad::square(dev)), tape.constant(weight)));
}

namespace {
bool present(const ad::Var& v) { return v.tape() != nullptr; }
double value_or_zero(const ad::Var& v) { return present(v) ? v.item() : 0.0; }
}  // namespace

ad::Var total_loss(ad::Tape& tape, const LossTerms& t, const LossWeights& w) {
  ad::Var total = tape.constant(Matrix::Zero(1, 1));
  if (present(t.rec)) total = ad::add(total, t.rec);
  if (present(t.kl)) total = ad::add(total, t.kl);
  if (present(t.neu)) total = ad::add(total, ad::scale(t.neu, w.lambda_neu));
  if (present(t.jac)) total = ad::add(total, ad::scale(t.jac, w.lambda_jac));
  if (present(t.mi)) total = ad::add(total, ad::scale(t.mi, w.lambda_mi));
  return total;
}

LossBreakdown breakdown(const LossTerms& t, const LossWeights& w) {
  LossBreakdown b;
  b.rec = value_or_zero(t.rec);
  b.kl = value_or_zero(t.kl);
  b.neu = value_or_zero(t.neu);
  b.jac = value_or_zero(t.jac);
  b.mi = value_or_zero(t.mi);
  b.total = b.rec + b.kl + w.lambda_neu * b.neu + w.lambda_jac * b.jac + w.lambda_mi * b.mi;
  return b;
}

}  // namespace wsdf
