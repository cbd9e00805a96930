#pragma once
// Numerically stable scalar/vector primitives shared by every other module,
// plus the central-difference oracle that serves as ground truth for all
// gradient claims. Verification paths run in 64-bit; the raw kernels are
// templated so the model hot path can run in 32-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bam {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline bool is_neg_inf(double x) { return std::isinf(x) && x < 0; }

// ---------------------------- raw kernels ----------------------------

// log(sum(exp(v))) by max-shift; -inf entries contribute nothing; returns
// -inf when every entry is -inf.
template <class Real>
Real log_sum_exp_span(std::span<const Real> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty vector");
  Real m = -std::numeric_limits<Real>::infinity();
  for (Real x : v) m = std::max(m, x);
  if (std::isinf(m) && m < Real(0)) return m;
  Real s = 0;
  for (Real x : v) {
    if (std::isinf(x) && x < Real(0)) continue;
    s += std::exp(x - m);
  }
  return m + std::log(s);
}

// Overwrites logits with probabilities. All--inf input becomes all zeros.
template <class Real>
void softmax_inplace_span(std::span<Real> v) {
  const Real lse = log_sum_exp_span(std::span<const Real>(v.data(), v.size()));
  if (std::isinf(lse) && lse < Real(0)) {
    std::fill(v.begin(), v.end(), Real(0));
    return;
  }
  for (Real& x : v) x = std::exp(x - lse);
}

// ---------------------------- value types ----------------------------

// Logit vector: finite or -inf entries only. -inf is the mask sentinel and
// is carried explicitly; +inf and NaN are rejected at construction.
class RealVector {
 public:
  RealVector() = default;
  explicit RealVector(std::vector<double> values) : values_(std::move(values)) {
    for (size_t k = 0; k < values_.size(); ++k) {
      const double x = values_[k];
      if (std::isnan(x))
        throw std::invalid_argument("RealVector: entry " + std::to_string(k) + " is NaN");
      if (std::isinf(x) && x > 0)
        throw std::invalid_argument("RealVector: entry " + std::to_string(k) + " is +inf");
    }
  }
  RealVector(std::initializer_list<double> xs) : RealVector(std::vector<double>(xs)) {}

  size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double operator[](size_t k) const { return values_[k]; }
  const std::vector<double>& values() const { return values_; }
  std::span<const double> span() const { return {values_.data(), values_.size()}; }

 private:
  std::vector<double> values_;
};

// Probability vector: non-negative entries summing to 1 within 1e-12, or the
// all-masked state (every source logit was -inf) where all entries are 0.
class ProbVector {
 public:
  ProbVector() = default;
  ProbVector(std::vector<double> values, bool all_masked)
      : values_(std::move(values)), all_masked_(all_masked) {
    double sum = 0.0;
    for (size_t k = 0; k < values_.size(); ++k) {
      const double p = values_[k];
      if (!(p >= 0.0) || p > 1.0 + 1e-12)
        throw std::invalid_argument("ProbVector: entry " + std::to_string(k) +
                                    " outside [0,1]");
      sum += p;
    }
    if (all_masked_) {
      if (sum != 0.0) throw std::invalid_argument("ProbVector: masked vector must be all zero");
    } else if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(sum));
    }
  }

  size_t size() const { return values_.size(); }
  double operator[](size_t k) const { return values_[k]; }
  const std::vector<double>& values() const { return values_; }
  bool all_masked() const { return all_masked_; }

 private:
  std::vector<double> values_;
  bool all_masked_ = false;
};

// ---------------------------- operations ----------------------------

inline double log_sum_exp(const RealVector& v) { return log_sum_exp_span(v.span()); }

inline ProbVector softmax(const RealVector& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  std::vector<double> p = v.values();
  softmax_inplace_span(std::span<double>(p.data(), p.size()));
  const bool masked = is_neg_inf(log_sum_exp(v));
  return ProbVector(std::move(p), masked);
}

// Scalable softmax: softmax of (s * ln n) * v, where n is the unmasked
// context size for this row. Masked (-inf) entries stay masked regardless of
// the multiplier; n = 1 makes the multiplier 0 and the output uniform over
// unmasked entries.
inline ProbVector ssmax(const RealVector& v, long n, double s) {
  if (n < 1) throw std::invalid_argument("ssmax: n must be >= 1");
  if (v.empty()) throw std::invalid_argument("ssmax: empty vector");
  const double c = s * std::log(static_cast<double>(n));
  std::vector<double> scaled(v.size());
  for (size_t k = 0; k < v.size(); ++k)
    scaled[k] = is_neg_inf(v[k]) ? kNegInf : c * v[k];
  return softmax(RealVector(std::move(scaled)));
}

// Central differences (f(x+h e_k) - f(x-h e_k)) / 2h per coordinate.
// This is the ground-truth oracle for every gradient check in the suite; it
// must stay independent of any analytic differentiation path.
inline RealVector finite_diff_grad(const std::function<double(const RealVector&)>& f,
                                   const RealVector& x, double h = 1e-5) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  std::vector<double> g(x.size());
  std::vector<double> probe = x.values();
  for (size_t k = 0; k < x.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + h;
    const double fp = f(RealVector(probe));
    probe[k] = orig - h;
    const double fm = f(RealVector(probe));
    probe[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::invalid_argument("finite_diff_grad: non-finite f at coordinate " +
                                  std::to_string(k));
    g[k] = (fp - fm) / (2.0 * h);
  }
  return RealVector(std::move(g));
}

}  // namespace bam
