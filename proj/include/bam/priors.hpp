#pragma once
// Positional prior densities (Uniform, Laplace, generalized Gaussian), the
// learnable theta parametrization of the bias, and the scalar bias function
// itself together with its partial derivatives.

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>

namespace bam {

// Per-head learnable triple plus the regularizer that keeps the bias finite
// at the shifted mode when theta_beta < 0.
struct ThetaParams {
  double theta_mu = 0.0;
  double theta_alpha = 0.0;
  double theta_beta = 0.0;
  double epsilon = 1e-5;

  ThetaParams() = default;
  ThetaParams(double mu, double alpha, double beta, double eps = 1e-5)
      : theta_mu(mu), theta_alpha(alpha), theta_beta(beta), epsilon(eps) {
    validate();
  }
  void validate() const {
    if (!(epsilon > 0)) throw std::invalid_argument("ThetaParams: epsilon must be > 0");
    if (!std::isfinite(theta_mu) || !std::isfinite(theta_alpha) || !std::isfinite(theta_beta))
      throw std::invalid_argument("ThetaParams: fields must be finite");
  }
};

struct UniformPriorSpec {
  int a, b;  // a <= b
};
struct LaplacePriorSpec {
  double mu, scale;  // scale > 0
};
struct GgdPriorSpec {
  double mu, alpha, beta;  // alpha > 0, beta != 0 (beta < 0 permitted)
};

using PriorSpec = std::variant<UniformPriorSpec, LaplacePriorSpec, GgdPriorSpec>;

// Normalized mass of Uniform(a, b) at integer x.
inline double uniform_mass(int a, int b, int x) {
  if (a > b) throw std::invalid_argument("uniform_mass: a > b");
  if (x < a || x > b) return 0.0;
  return 1.0 / static_cast<double>(b - a + 1);
}

// log of exp(-|x - mu| / scale), the normalizer dropped (the softmax absorbs it)
inline double laplace_log_density_unnorm(double x, double mu, double scale) {
  if (!(scale > 0)) throw std::invalid_argument("laplace_log_density_unnorm: scale must be > 0");
  return -std::abs(x - mu) / scale;
}

// log of exp(-|(x - mu)/alpha|^beta). beta < 0 is the relaxed regime; the
// pure form is singular at x = mu there (the model path uses the
// epsilon-regularized bam_bias instead).
inline double ggd_log_density_unnorm(double x, double mu, double alpha, double beta) {
  if (!(alpha > 0)) throw std::invalid_argument("ggd_log_density_unnorm: alpha must be > 0");
  if (beta < 0 && x == mu)
    throw std::invalid_argument("ggd_log_density_unnorm: singularity at the mode");
  return -std::pow(std::abs((x - mu) / alpha), beta);
}

// The trained form of the bias:
//   b(r) = -exp(theta_alpha) * (| r - (e^{theta_mu} - e^{-theta_mu}) | + eps)^{theta_beta}
// Total on finite theta for either sign of r; relpos is j - i.
inline double bam_bias(long long relpos, const ThetaParams& t) {
  const double shift = std::exp(t.theta_mu) - std::exp(-t.theta_mu);
  const double u = std::abs(static_cast<double>(relpos) - shift) + t.epsilon;
  return -std::exp(t.theta_alpha) * std::pow(u, t.theta_beta);
}

// Partial derivatives of bam_bias with respect to the three thetas, used by
// the model backward pass. sign(0) := 0 at the non-differentiable point.
struct BamBiasGrad {
  double d_mu, d_alpha, d_beta;
};

inline BamBiasGrad bam_bias_grad(long long relpos, const ThetaParams& t) {
  const double emu = std::exp(t.theta_mu);
  const double emun = std::exp(-t.theta_mu);
  const double shift = emu - emun;
  const double diff = static_cast<double>(relpos) - shift;
  const double u = std::abs(diff) + t.epsilon;
  const double ealpha = std::exp(t.theta_alpha);
  const double pow_u = std::pow(u, t.theta_beta);
  const double b = -ealpha * pow_u;
  const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
  BamBiasGrad g;
  g.d_alpha = b;
  g.d_beta = b * std::log(u);
  // d u / d theta_mu = -sign(diff) * (e^mu + e^-mu)
  g.d_mu = ealpha * t.theta_beta * std::pow(u, t.theta_beta - 1.0) * sign * (emu + emun);
  return g;
}

// theta -> GGD view: mu = e^{theta_mu} - e^{-theta_mu}, alpha =
// e^{-theta_alpha/theta_beta}, beta = theta_beta. Undefined at theta_beta = 0
// (a legal trained value whose bias is constant; use bam_bias directly).
inline GgdPriorSpec theta_to_ggd(const ThetaParams& t) {
  if (t.theta_beta == 0.0)
    throw std::invalid_argument("theta_to_ggd: degenerate shape; use bam_bias directly");
  GgdPriorSpec g;
  g.mu = std::exp(t.theta_mu) - std::exp(-t.theta_mu);
  g.alpha = std::exp(-t.theta_alpha / t.theta_beta);
  g.beta = t.theta_beta;
  return g;
}

inline PriorSpec make_uniform_prior(int a, int b) {
  if (a > b) throw std::invalid_argument("UniformPriorSpec: requires a <= b");
  return UniformPriorSpec{a, b};
}
inline PriorSpec make_laplace_prior(double mu, double scale) {
  if (!(scale > 0)) throw std::invalid_argument("LaplacePriorSpec: requires scale > 0");
  return LaplacePriorSpec{mu, scale};
}
inline PriorSpec make_ggd_prior(double mu, double alpha, double beta) {
  if (!(alpha > 0)) throw std::invalid_argument("GgdPriorSpec: requires alpha > 0");
  if (beta == 0.0) throw std::invalid_argument("GgdPriorSpec: requires beta != 0");
  return GgdPriorSpec{mu, alpha, beta};
}

}  // namespace bam
