#pragma once

// Distribution-preserving bilinear fusion of identity and expression codes.
//
//   z = normalize_rows(W) * Nq( U(z_id) (x) U(z_exp) )
//
// U maps N(0,1) to U(0,1) through the normal CDF, the outer product of two
// independent uniforms has CDF F(p) = p (1 - ln p), and Nq = quantile o F
// maps each product back to N(0,1). The outer product is flattened
// identity-major: index i * d_exp + j.

#include <random>
#include <vector>

#include "wsdf/autodiff.hpp"

namespace wsdf {

inline constexpr double kUniformEps = 1e-7;

double normal_pdf(double x);
double normal_cdf(double x);
// Standard normal quantile (Wichura AS241, PPND16).
double normal_quantile(double p);
// Quantile from a lower-tail and the matching upper-tail probability; the
// smaller one is used so values near 1 keep full precision.
double normal_quantile(double lower, double upper);

// Normal CDF clamped to [eps, 1 - eps].
double gaussian_to_uniform(double x);
double gaussian_to_uniform_deriv(double x);
double gaussian_to_uniform_deriv2(double x);

// CDF of the product of two independent U(0,1) variables.
double product_uniform_cdf(double p);

// quantile(F(p)) with p clamped to [eps, 1 - eps].
double product_to_normal(double p);
double product_to_normal_deriv(double p);
double product_to_normal_deriv2(double p);

struct RecouplerConfig {
  int d_id = 16;
  int d_exp = 16;
  int k = 0;  // 0 -> d_id + d_exp
  int out_dim() const { return k > 0 ? k : d_id + d_exp; }
};

// The fusion tensor in reshaped (k, d_id * d_exp) form. The stored matrix is
// unconstrained; rows are normalised on every forward pass.
class Recoupler {
 public:
  Recoupler(const RecouplerConfig& cfg, std::mt19937_64& rng);
  explicit Recoupler(const RecouplerConfig& cfg, Matrix weights);

  const RecouplerConfig& config() const { return cfg_; }
  ad::Parameter& weights() { return weights_; }
  const ad::Parameter& weights() const { return weights_; }
  Matrix effective_weights() const;

  // Batched over rows: z_id (B, d_id), z_exp (B, d_exp) -> (B, k).
  ad::Var forward(const ad::Var& w, const ad::Var& z_id, const ad::Var& z_exp) const;

  struct Jvp {
    ad::Var value;
    ad::Var tangent;
  };
  // Forward value plus the derivative along `tangent_exp` in the expression
  // argument, both differentiable.
  Jvp forward_jvp_exp(const ad::Var& w, const ad::Var& z_id, const ad::Var& z_exp,
                      const ad::Var& tangent_exp) const;

  // Plain evaluation for a single pair of codes.
  Vector apply(const Vector& z_id, const Vector& z_exp) const;

 private:
  void check(const ad::Var& z_id, const ad::Var& z_exp) const;
  RecouplerConfig cfg_;
  ad::Parameter weights_;
};

// Pre-mixing coordinates Nq(U(z_id) (x) U(z_exp)) for a single pair.
Vector recoupled_normals(const Vector& z_id, const Vector& z_exp);

// Dense order-3 tensor, row-major (d0, d1, d2).
struct Tensor3 {
  int d0 = 0, d1 = 0, d2 = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int a, int b, int c) : d0(a), d1(b), d2(c), data(static_cast<std::size_t>(a) * b * c, 0.0) {}
  double& operator()(int i, int j, int k) { return data[(static_cast<std::size_t>(i) * d1 + j) * d2 + k]; }
  double operator()(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * d1 + j) * d2 + k];
  }
  // (d0, d1 * d2) with column index j * d2 + k.
  Matrix unfold() const;
};

// (W x2 U2 x3 U3)_{krs} = sum_i sum_j W_{kij} U2_{ri} U3_{sj}, by direct loops.
Tensor3 tensor_contract_oracle(const Tensor3& w, const Matrix& u2, const Matrix& u3);
// The same contraction as unfolded(W) * (U2 kron U3)^T, shaped (k, r * s).
Matrix kronecker_contract(const Matrix& w_unfolded, const Matrix& u2, const Matrix& u3);

}  // namespace wsdf
