#include "wsdf/recoupler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace wsdf {
namespace {

template <std::size_t N>
double poly(const double (&c)[N], double x) {
  double acc = c[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) acc = acc * x + c[i];
  return acc;
}

constexpr double kA[] = {3.3871328727963666080e0,     1.3314166789178437745e+2,
                         1.9715909503065514427e+3,    1.3731693765509461125e+4,
                         4.5921953931549871457e+4,    6.7265770927008700853e+4,
                         3.3430575583588128105e+4,    2.5090809287301226727e+3};
constexpr double kB[] = {1.0,                         4.2313330701600911252e+1,
                         6.8718700749205790830e+2,    5.3941960214247511077e+3,
                         2.1213794301586595867e+4,    3.9307895800092710610e+4,
                         2.8729085735721942674e+4,    5.2264952788528545610e+3};
constexpr double kC[] = {1.42343711074968357734e0,    4.63033784615654529590e0,
                         5.76949722146069140550e0,    3.64784832476320460504e0,
                         1.27045825245236838258e0,    2.41780725177450611770e-1,
                         2.27238449892691845833e-2,   7.74545014278341407640e-4};
constexpr double kD[] = {1.0,                         2.05319162663775882187e0,
                         1.67638483018380384940e0,    6.89767334985100004550e-1,
                         1.48103976427480074590e-1,   1.51986665636164571966e-2,
                         5.47593808499534494600e-4,   1.05075007164441684324e-9};
constexpr double kE[] = {6.65790464350110377720e0,    5.46378491116411436990e0,
                         1.78482653991729133580e0,    2.96560571828504891230e-1,
                         2.65321895265761230930e-2,   1.24266094738807843860e-3,
                         2.71155556874348757815e-5,   2.01033439929228813265e-7};
constexpr double kF[] = {1.0,                         5.99832206555887937690e-1,
                         1.36929880922735805310e-1,   1.48753612908506148525e-2,
                         7.86869131145613259100e-4,   1.84631831751005468180e-5,
                         1.42151175831644588870e-7,   2.04426310338993978564e-15};

// Tail branch of PPND16 for a tail probability r in (0, 0.075).
double quantile_tail(double r) {
  r = std::sqrt(-std::log(r));
  if (r <= 5.0) {
    r -= 1.6;
    return poly(kC, r) / poly(kD, r);
  }
  r -= 5.0;
  return poly(kE, r) / poly(kF, r);
}

bool in_clamp_range(double p) { return p >= kUniformEps && p <= 1.0 - kUniformEps; }

}  // namespace

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double lower, double upper) {
  if (!(lower >= 0.0 && lower <= 1.0 && upper >= 0.0 && upper <= 1.0)) {
    throw DomainError("normal_quantile: probability outside [0, 1]");
  }
  if (lower == 0.0) return -std::numeric_limits<double>::infinity();
  if (upper == 0.0) return std::numeric_limits<double>::infinity();
  const double q = lower - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * poly(kA, r) / poly(kB, r);
  }
  return q < 0.0 ? -quantile_tail(lower) : quantile_tail(upper);
}

double normal_quantile(double p) { return normal_quantile(p, 1.0 - p); }

double gaussian_to_uniform(double x) {
  return std::clamp(normal_cdf(x), kUniformEps, 1.0 - kUniformEps);
}

double gaussian_to_uniform_deriv(double x) {
  return in_clamp_range(normal_cdf(x)) ? normal_pdf(x) : 0.0;
}

double gaussian_to_uniform_deriv2(double x) {
  return in_clamp_range(normal_cdf(x)) ? -x * normal_pdf(x) : 0.0;
}

double product_uniform_cdf(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("product_uniform_cdf: p outside [0, 1]");
  if (p == 0.0) return 0.0;
  return p * (1.0 - std::log(p));
}

double product_to_normal(double p) {
  if (std::isnan(p)) throw DomainError("product_to_normal: NaN input");
  p = std::clamp(p, kUniformEps, 1.0 - kUniformEps);
  const double lower = p * (1.0 - std::log(p));
  // 1 - F(p) = q + (1 - q) log(1 - q) with q = 1 - p, free of cancellation
  // in the leading term.
  const double q = 1.0 - p;
  const double upper = q + (1.0 - q) * std::log1p(-q);
  return normal_quantile(lower, upper);
}

double product_to_normal_deriv(double p) {
  if (!in_clamp_range(p)) return 0.0;
  return -std::log(p) / normal_pdf(product_to_normal(p));
}

double product_to_normal_deriv2(double p) {
  if (!in_clamp_range(p)) return 0.0;
  const double n = product_to_normal(p);
  const double phi = normal_pdf(n);
  const double lp = std::log(p);
  const double d1 = -lp / phi;
  return (-1.0 / p - lp * n * d1) / phi;
}

Recoupler::Recoupler(const RecouplerConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.d_id < 1 || cfg.d_exp < 1) throw ConfigError("Recoupler: latent dims must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w(cfg.out_dim(), cfg.d_id * cfg.d_exp);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  weights_ = ad::Parameter("recoupler.W", std::move(w));
}

Recoupler::Recoupler(const RecouplerConfig& cfg, Matrix weights) : cfg_(cfg) {
  if (weights.rows() != cfg.out_dim() || weights.cols() != cfg.d_id * cfg.d_exp) {
    throw ShapeError("Recoupler: weight matrix must be (k, d_id * d_exp)");
  }
  weights_ = ad::Parameter("recoupler.W", std::move(weights));
}

Matrix Recoupler::effective_weights() const {
  const Vector norms = weights_.value.rowwise().norm();
  return weights_.value.array().colwise() / norms.array();
}

void Recoupler::check(const ad::Var& z_id, const ad::Var& z_exp) const {
  if (z_id.cols() != cfg_.d_id || z_exp.cols() != cfg_.d_exp || z_id.rows() != z_exp.rows()) {
    throw ShapeError("Recoupler: code dimensions do not match (" + std::to_string(z_id.cols()) + ", " +
                     std::to_string(z_exp.cols()) + ") vs configured (" + std::to_string(cfg_.d_id) +
                     ", " + std::to_string(cfg_.d_exp) + ")");
  }
}

ad::Var Recoupler::forward(const ad::Var& w, const ad::Var& z_id, const ad::Var& z_exp) const {
  check(z_id, z_exp);
  const ad::Var u_id = ad::elementwise(z_id, gaussian_to_uniform, gaussian_to_uniform_deriv);
  const ad::Var u_exp = ad::elementwise(z_exp, gaussian_to_uniform, gaussian_to_uniform_deriv);
  const ad::Var prod = ad::outer_rows(u_id, u_exp);
  const ad::Var normals = ad::elementwise(prod, product_to_normal, product_to_normal_deriv);
  return ad::matmul(normals, ad::transpose(ad::row_normalize(w)));
}

Recoupler::Jvp Recoupler::forward_jvp_exp(const ad::Var& w, const ad::Var& z_id, const ad::Var& z_exp,
                                          const ad::Var& tangent_exp) const {
  check(z_id, z_exp);
  if (tangent_exp.rows() != z_exp.rows() || tangent_exp.cols() != z_exp.cols()) {
    throw ShapeError("Recoupler: tangent shape mismatch");
  }
  const ad::Var u_id = ad::elementwise(z_id, gaussian_to_uniform, gaussian_to_uniform_deriv);
  const ad::Var u_exp = ad::elementwise(z_exp, gaussian_to_uniform, gaussian_to_uniform_deriv);
  const ad::Var du_exp = ad::mul(
      ad::elementwise(z_exp, gaussian_to_uniform_deriv, gaussian_to_uniform_deriv2), tangent_exp);
  const ad::Var prod = ad::outer_rows(u_id, u_exp);
  const ad::Var dprod = ad::outer_rows(u_id, du_exp);
  const ad::Var normals = ad::elementwise(prod, product_to_normal, product_to_normal_deriv);
  const ad::Var dnormals =
      ad::mul(ad::elementwise(prod, product_to_normal_deriv, product_to_normal_deriv2), dprod);
  const ad::Var wt = ad::transpose(ad::row_normalize(w));
  return {ad::matmul(normals, wt), ad::matmul(dnormals, wt)};
}

Vector recoupled_normals(const Vector& z_id, const Vector& z_exp) {
  Vector out(z_id.size() * z_exp.size());
  for (Eigen::Index i = 0; i < z_id.size(); ++i) {
    const double ui = gaussian_to_uniform(z_id(i));
    for (Eigen::Index j = 0; j < z_exp.size(); ++j) {
      out(i * z_exp.size() + j) = product_to_normal(ui * gaussian_to_uniform(z_exp(j)));
    }
  }
  return out;
}

Vector Recoupler::apply(const Vector& z_id, const Vector& z_exp) const {
  if (z_id.size() != cfg_.d_id || z_exp.size() != cfg_.d_exp) throw ShapeError("Recoupler::apply: dims");
  return effective_weights() * recoupled_normals(z_id, z_exp);
}

Matrix Tensor3::unfold() const {
  return Eigen::Map<const Matrix>(data.data(), d0, static_cast<Eigen::Index>(d1) * d2);
}

Tensor3 tensor_contract_oracle(const Tensor3& w, const Matrix& u2, const Matrix& u3) {
  if (u2.cols() != w.d1 || u3.cols() != w.d2) throw ShapeError("tensor_contract_oracle: dims");
  const int r_dim = static_cast<int>(u2.rows());
  const int s_dim = static_cast<int>(u3.rows());
  Tensor3 out(w.d0, r_dim, s_dim);
  for (int k = 0; k < w.d0; ++k) {
    for (int r = 0; r < r_dim; ++r) {
      for (int s = 0; s < s_dim; ++s) {
        double acc = 0.0;
        for (int i = 0; i < w.d1; ++i) {
          for (int j = 0; j < w.d2; ++j) acc += w(k, i, j) * u2(r, i) * u3(s, j);
        }
        out(k, r, s) = acc;
      }
    }
  }
  return out;
}

Matrix kronecker_contract(const Matrix& w_unfolded, const Matrix& u2, const Matrix& u3) {
  if (w_unfolded.cols() != u2.cols() * u3.cols()) throw ShapeError("kronecker_contract: dims");
  Matrix kron(u2.rows() * u3.rows(), u2.cols() * u3.cols());
  for (Eigen::Index r = 0; r < u2.rows(); ++r) {
    for (Eigen::Index i = 0; i < u2.cols(); ++i) {
      kron.block(r * u3.rows(), i * u3.cols(), u3.rows(), u3.cols()) = u2(r, i) * u3;
    }
  }
  return w_unfolded * kron.transpose();
}

}  // namespace wsdf
