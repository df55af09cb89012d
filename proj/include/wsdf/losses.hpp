#pragma once

// Training objectives. Every loss sums over coordinates / latent dimensions
// and averages over the batch rows.

#include <functional>
#include <string>
#include <vector>

#include "wsdf/autodiff.hpp"

namespace wsdf {

struct LossWeights {
  double lambda_neu = 1.0;
  double lambda_jac = 0.1;
  double lambda_mi = 0.01;
  double gamma = 1.0;  // slope of the Jacobian upper bound

  void validate() const;
};

struct LossBreakdown {
  double rec = 0.0;
  double kl = 0.0;
  double neu = 0.0;
  double jac = 0.0;
  double mi = 0.0;
  double total = 0.0;
};

// ||x - x_rec||^2 per row, mean over rows.
ad::Var loss_rec(const ad::Var& x, const ad::Var& x_rec);

// KL of both diagonal posteriors to N(0, I).
ad::Var loss_kl(const ad::Var& mu_id, const ad::Var& logvar_id, const ad::Var& mu_exp,
                const ad::Var& logvar_exp);

// alpha_r ||B_r - x_neu_r||^2 averaged over all rows. Bank targets enter as
// constants; rows whose subject has no bank entry carry alpha = 0.
ad::Var loss_neu(const ad::Var& x_neu, const Matrix& bank_targets, const Vector& alpha);

// J_f(z) * t for f(y) = G(R(z_id, y)) at the current z_id.
using JvpProvider = std::function<ad::Var(const ad::Var& z, const ad::Var& tangent)>;

struct JacobianTerms {
  ad::Var loss;
  Vector projection;  // p per row
  Vector bound;       // q = gamma ||z_exp||^2 per row
};

// mean over rows of max(0, -p, p - q), p = d^T J_f(z_exp) z_exp with the
// difference d = x_rec - x_neu held constant.
JacobianTerms loss_jac(const ad::Var& z_exp, const ad::Var& x_rec, const ad::Var& x_neu,
                       const JvpProvider& jvp, double gamma);

// Stand-in identity compactness: mean over subject groups of the mean squared
// deviation of identity means from their group mean.
ad::Var loss_mi(const ad::Var& mu_id, const std::vector<int>& group_of_row);

struct LossTerms {
  ad::Var rec, kl, neu, jac, mi;
};

// rec + kl + lambda_neu neu + lambda_jac jac + lambda_mi mi. Absent terms
// (default-constructed vars) count as zero.
ad::Var total_loss(ad::Tape& tape, const LossTerms& terms, const LossWeights& w);
LossBreakdown breakdown(const LossTerms& terms, const LossWeights& w);

}  // namespace wsdf
