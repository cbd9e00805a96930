#pragma once
// Bias-matrix construction (causal, ALiBi, BAM), the scored attention row,
// and the factorization of a joint attention row into content and position
// marginals with the coupling scalar read three ways (overlap, free energy,
// mutual information).

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bam/numerics.hpp"
#include "bam/priors.hpp"

namespace bam {

enum class BiasKind { causal, alibi, bam };

// Dense L x L additive score bias. Kept dense for verification paths; the
// model path generates rows on demand instead. Indices are 0-based here;
// entry(i, j) is the bias a query at position i adds for key position j.
class BiasMatrix {
 public:
  BiasMatrix(int length, BiasKind kind, std::vector<double> entries)
      : length_(length), kind_(kind), entries_(std::move(entries)) {
    if (length_ < 1) throw std::invalid_argument("BiasMatrix: length must be >= 1");
    if (entries_.size() != static_cast<size_t>(length_) * static_cast<size_t>(length_))
      throw std::invalid_argument("BiasMatrix: entry count mismatch");
  }

  int length() const { return length_; }
  BiasKind kind() const { return kind_; }
  double at(int i, int j) const { return entries_[static_cast<size_t>(i) * length_ + j]; }

  RealVector row(int i) const {
    if (i < 0 || i >= length_) throw std::invalid_argument("BiasMatrix: row out of range");
    return RealVector(std::vector<double>(entries_.begin() + static_cast<size_t>(i) * length_,
                                          entries_.begin() + static_cast<size_t>(i + 1) * length_));
  }

 private:
  int length_;
  BiasKind kind_;
  std::vector<double> entries_;
};

// 0 on j <= i, -inf above the diagonal.
inline BiasMatrix causal_mask(int L) {
  if (L < 1) throw std::invalid_argument("causal_mask: L must be >= 1");
  std::vector<double> e(static_cast<size_t>(L) * L, 0.0);
  for (int i = 0; i < L; ++i)
    for (int j = i + 1; j < L; ++j) e[static_cast<size_t>(i) * L + j] = kNegInf;
  return BiasMatrix(L, BiasKind::causal, std::move(e));
}

// -m |j - i| everywhere; masking is applied separately.
inline BiasMatrix alibi_matrix(int L, double m) {
  if (!(m > 0)) throw std::invalid_argument("alibi_matrix: m must be > 0");
  if (L < 1) throw std::invalid_argument("alibi_matrix: L must be >= 1");
  std::vector<double> e(static_cast<size_t>(L) * L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) e[static_cast<size_t>(i) * L + j] = -m * std::abs(j - i);
  return BiasMatrix(L, BiasKind::alibi, std::move(e));
}

// Geometric slope schedule: head h (1-based) gets 2^{-8h/num_heads}.
inline std::vector<double> alibi_slopes(int num_heads) {
  if (num_heads < 1) throw std::invalid_argument("alibi_slopes: num_heads must be >= 1");
  std::vector<double> m(num_heads);
  for (int h = 1; h <= num_heads; ++h)
    m[h - 1] = std::exp2(-8.0 * h / static_cast<double>(num_heads));
  return m;
}

// entry(i, j) = bam_bias(j - i, theta); deterministic in (L, theta).
inline BiasMatrix bam_matrix(int L, const ThetaParams& theta) {
  if (L < 1) throw std::invalid_argument("bam_matrix: L must be >= 1");
  theta.validate();
  std::vector<double> e(static_cast<size_t>(L) * L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j)
      e[static_cast<size_t>(i) * L + j] = bam_bias(static_cast<long long>(j) - i, theta);
  return BiasMatrix(L, BiasKind::bam, std::move(e));
}

// One scored attention row: softmax (or ssmax with n = count of unmasked
// positions) of content logits plus all bias rows. Content logits are the
// already-scaled qK^T values for one query.
inline ProbVector attention_row(const RealVector& q_scores,
                                std::span<const RealVector> row_biases,
                                bool use_ssmax = false, double s = 1.0) {
  std::vector<double> z = q_scores.values();
  for (const RealVector& b : row_biases) {
    if (b.size() != z.size()) throw std::invalid_argument("attention_row: length mismatch");
    for (size_t k = 0; k < z.size(); ++k) {
      if (is_neg_inf(z[k]) || is_neg_inf(b[k]))
        z[k] = kNegInf;
      else
        z[k] += b[k];
    }
  }
  RealVector summed(std::move(z));
  if (!use_ssmax) return softmax(summed);
  long n = 0;
  for (size_t k = 0; k < summed.size(); ++k)
    if (!is_neg_inf(summed[k])) ++n;
  if (n == 0) return softmax(summed);  // all masked
  return ssmax(summed, n, s);
}

inline ProbVector attention_row(const RealVector& q_scores,
                                std::initializer_list<RealVector> row_biases,
                                bool use_ssmax = false, double s = 1.0) {
  std::vector<RealVector> biases(row_biases);
  return attention_row(q_scores, std::span<const RealVector>(biases.data(), biases.size()),
                       use_ssmax, s);
}

// The (p_cont, p_pos, p_joint, S, K, I) tuple for one query row.
//   p_joint[j] = p_cont[j] * p_pos[j] / S      with S = <p_cont, p_pos>
//   K = 1 / S  (computed independently in log space from partition sums)
//   I = sum_j p_joint[j] ln(p_joint[j] / (p_cont[j] p_pos[j])) = ln K
struct AttentionFactorization {
  ProbVector p_cont;
  ProbVector p_pos;
  ProbVector p_joint;
  double overlap_S = 0.0;
  double coupling_K = 0.0;
  double mutual_info_I = 0.0;
};

inline AttentionFactorization factorize(const RealVector& f_logits, const RealVector& g_logits) {
  if (f_logits.size() != g_logits.size())
    throw std::invalid_argument("factorize: length mismatch");
  if (f_logits.empty()) throw std::invalid_argument("factorize: empty input");
  for (size_t k = 0; k < f_logits.size(); ++k)
    if (is_neg_inf(f_logits[k]))
      throw std::invalid_argument("factorize: f_logits must be finite");

  const double lse_g = log_sum_exp(g_logits);
  if (is_neg_inf(lse_g)) throw std::invalid_argument("factorize: empty positional support");

  std::vector<double> sum(f_logits.size());
  for (size_t k = 0; k < sum.size(); ++k)
    sum[k] = is_neg_inf(g_logits[k]) ? kNegInf : f_logits[k] + g_logits[k];
  const RealVector joint_logits(std::move(sum));

  AttentionFactorization out;
  out.p_cont = softmax(f_logits);
  out.p_pos = softmax(g_logits);
  out.p_joint = softmax(joint_logits);

  double S = 0.0;
  for (size_t k = 0; k < out.p_cont.size(); ++k) S += out.p_cont[k] * out.p_pos[k];
  out.overlap_S = S;

  // Partition sums overflow at modest logit magnitude, so K is assembled in
  // log space from the three log-sum-exp values.
  out.coupling_K = std::exp(log_sum_exp(f_logits) + lse_g - log_sum_exp(joint_logits));

  // The information reading is evaluated from the probability values, giving
  // a second arithmetic route that should agree with ln K.
  double info = 0.0;
  for (size_t k = 0; k < out.p_joint.size(); ++k) {
    const double pj = out.p_joint[k];
    if (pj == 0.0) continue;  // 0 ln 0 := 0 covers masked positions
    info += pj * std::log(pj / (out.p_cont[k] * out.p_pos[k]));
  }
  out.mutual_info_I = info;
  return out;
}

}  // namespace bam
