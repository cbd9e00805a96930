#pragma once
// Desk-scale decoder-only transformer with pluggable positional encoding
// (NoPE, Sinusoidal, RoPE, ALiBi, GGD-BAM) and optional scalable softmax.
// RMSNorm pre-norm blocks, SwiGLU feedforward, no linear biases. This header
// holds the configuration, weights, checkpoint and the inference path; the
// training graph lives in train.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bam/attention.hpp"
#include "bam/numerics.hpp"
#include "bam/priors.hpp"
#include "bam/rng.hpp"

namespace bam {

inline constexpr double kRmsEps = 1e-5;
inline constexpr double kRopeBase = 10000.0;
inline constexpr double kSinBase = 10000.0;

enum class PeKind { nope, sinusoidal, rope, alibi, bam };
enum class BamInit { uniform_prior, alibi_like };

inline std::string to_string(PeKind k) {
  switch (k) {
    case PeKind::nope: return "nope";
    case PeKind::sinusoidal: return "sinusoidal";
    case PeKind::rope: return "rope";
    case PeKind::alibi: return "alibi";
    case PeKind::bam: return "bam";
  }
  return "?";
}
inline PeKind pe_kind_from_string(const std::string& s) {
  if (s == "nope") return PeKind::nope;
  if (s == "sinusoidal") return PeKind::sinusoidal;
  if (s == "rope") return PeKind::rope;
  if (s == "alibi") return PeKind::alibi;
  if (s == "bam") return PeKind::bam;
  throw std::invalid_argument("unknown pe_kind: " + s);
}
inline std::string to_string(BamInit k) {
  return k == BamInit::uniform_prior ? "uniform_prior" : "alibi_like";
}
inline BamInit bam_init_from_string(const std::string& s) {
  if (s == "uniform_prior") return BamInit::uniform_prior;
  if (s == "alibi_like") return BamInit::alibi_like;
  throw std::invalid_argument("unknown bam_init: " + s);
}

// Which of the three per-head scalars receive gradient updates.
struct BamTrainable {
  bool beta = true;
  bool alpha = true;
  bool mu = false;

  int count() const { return int(beta) + int(alpha) + int(mu); }
  std::string str() const {
    std::string s;
    if (beta) s += "beta,";
    if (alpha) s += "alpha,";
    if (mu) s += "mu,";
    if (s.empty()) return "none";
    s.pop_back();
    return s;
  }
  static BamTrainable from_string(const std::string& s) {
    BamTrainable t{false, false, false};
    if (s == "none" || s.empty()) return t;
    size_t pos = 0;
    while (pos < s.size()) {
      size_t comma = s.find(',', pos);
      if (comma == std::string::npos) comma = s.size();
      const std::string item = s.substr(pos, comma - pos);
      if (item == "beta") t.beta = true;
      else if (item == "alpha") t.alpha = true;
      else if (item == "mu") t.mu = true;
      else throw std::invalid_argument("unknown bam_trainable item: " + item);
      pos = comma + 1;
    }
    return t;
  }
};

struct ModelConfig {
  int vocab_size = 64;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int ff_multiplier = 2;
  int train_context = 64;
  PeKind pe_kind = PeKind::bam;
  bool use_ssmax = true;
  BamInit bam_init = BamInit::uniform_prior;   // ignored unless pe_kind == bam
  BamTrainable bam_trainable{};                // ignored unless pe_kind == bam
  double bam_epsilon = 1e-5;
  uint64_t seed = 0;

  void validate() const {
    if (vocab_size < 1) throw std::invalid_argument("ModelConfig: vocab_size must be >= 1");
    if (d_model < 1 || n_heads < 1 || ff_multiplier < 1 || train_context < 1)
      throw std::invalid_argument("ModelConfig: dimensions must be positive");
    if (n_layers < 0) throw std::invalid_argument("ModelConfig: n_layers must be >= 0");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    if (pe_kind == PeKind::rope && (d_model / n_heads) % 2 != 0)
      throw std::invalid_argument("ModelConfig: rope needs an even head dimension");
    if (!(bam_epsilon > 0)) throw std::invalid_argument("ModelConfig: bam_epsilon must be > 0");
  }

  int head_dim() const { return d_model / n_heads; }
  int ff_dim() const { return ff_multiplier * d_model; }

  // Trainable scalars BAM adds beyond the base model.
  int bam_overhead() const {
    if (pe_kind != PeKind::bam) return 0;
    return bam_trainable.count() * n_heads * n_layers;
  }
};

// A packed token sequence. doc_starts holds positions (excluding 0) where a
// new document begins; attention never crosses document boundaries.
struct TokenSequence {
  std::vector<int32_t> tokens;
  std::vector<int32_t> doc_starts;

  int length() const { return static_cast<int>(tokens.size()); }

  // per-position index of the first token of the same document
  std::vector<int32_t> doc_start_index() const {
    std::vector<int32_t> ds(tokens.size());
    int32_t cur = 0;
    size_t next = 0;
    for (int32_t i = 0; i < static_cast<int32_t>(tokens.size()); ++i) {
      if (next < doc_starts.size() && doc_starts[next] == i) {
        cur = i;
        ++next;
      }
      ds[static_cast<size_t>(i)] = cur;
    }
    return ds;
  }

  TokenSequence truncated(int len) const {
    TokenSequence t;
    t.tokens.assign(tokens.begin(), tokens.begin() + std::min<size_t>(len, tokens.size()));
    for (int32_t d : doc_starts)
      if (d < t.length()) t.doc_starts.push_back(d);
    return t;
  }
};

// ---------------------------- weights ----------------------------

template <class Real>
struct LayerWeights {
  std::vector<Real> attn_norm_g;            // [d]
  std::vector<Real> wq, wk, wv, wo;         // [d*d], row-major [in][out]
  std::vector<Real> ff_norm_g;              // [d]
  std::vector<Real> w_gate, w_up;           // [d*ff]
  std::vector<Real> w_down;                 // [ff*d]
  std::vector<Real> theta_mu, theta_alpha, theta_beta;  // [heads] when pe_kind == bam
  std::vector<Real> ssmax_s;                // [heads] when use_ssmax
};

struct ParamTraits {
  bool trainable = true;
  bool decay = false;  // decoupled weight decay applies to matrices only
};

template <class Real>
struct Weights {
  ModelConfig cfg;
  std::vector<Real> tok_embed;              // [V*d]
  std::vector<LayerWeights<Real>> layers;
  std::vector<Real> final_norm_g;           // [d]
  std::vector<Real> lm_head;                // [d*V]

  void allocate(const ModelConfig& c) {
    cfg = c;
    cfg.validate();
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t v = static_cast<size_t>(cfg.vocab_size);
    const size_t ff = static_cast<size_t>(cfg.ff_dim());
    const size_t h = static_cast<size_t>(cfg.n_heads);
    tok_embed.assign(v * d, Real(0));
    final_norm_g.assign(d, Real(0));
    lm_head.assign(d * v, Real(0));
    layers.assign(static_cast<size_t>(cfg.n_layers), {});
    for (auto& l : layers) {
      l.attn_norm_g.assign(d, Real(0));
      l.wq.assign(d * d, Real(0));
      l.wk.assign(d * d, Real(0));
      l.wv.assign(d * d, Real(0));
      l.wo.assign(d * d, Real(0));
      l.ff_norm_g.assign(d, Real(0));
      l.w_gate.assign(d * ff, Real(0));
      l.w_up.assign(d * ff, Real(0));
      l.w_down.assign(ff * d, Real(0));
      if (cfg.pe_kind == PeKind::bam) {
        l.theta_mu.assign(h, Real(0));
        l.theta_alpha.assign(h, Real(0));
        l.theta_beta.assign(h, Real(0));
      }
      if (cfg.use_ssmax) l.ssmax_s.assign(h, Real(0));
    }
  }

  // Visits every named parameter array in a fixed order.
  template <class Fn>
  void visit(Fn&& fn) {
    fn("tok_embed", tok_embed, ParamTraits{true, true});
    for (size_t li = 0; li < layers.size(); ++li) {
      const std::string p = "layers." + std::to_string(li) + ".";
      LayerWeights<Real>& l = layers[li];
      fn(p + "attn_norm_g", l.attn_norm_g, ParamTraits{true, false});
      fn(p + "wq", l.wq, ParamTraits{true, true});
      fn(p + "wk", l.wk, ParamTraits{true, true});
      fn(p + "wv", l.wv, ParamTraits{true, true});
      fn(p + "wo", l.wo, ParamTraits{true, true});
      fn(p + "ff_norm_g", l.ff_norm_g, ParamTraits{true, false});
      fn(p + "w_gate", l.w_gate, ParamTraits{true, true});
      fn(p + "w_up", l.w_up, ParamTraits{true, true});
      fn(p + "w_down", l.w_down, ParamTraits{true, true});
      if (cfg.pe_kind == PeKind::bam) {
        fn(p + "theta_mu", l.theta_mu, ParamTraits{cfg.bam_trainable.mu, false});
        fn(p + "theta_alpha", l.theta_alpha, ParamTraits{cfg.bam_trainable.alpha, false});
        fn(p + "theta_beta", l.theta_beta, ParamTraits{cfg.bam_trainable.beta, false});
      }
      if (cfg.use_ssmax) fn(p + "ssmax_s", l.ssmax_s, ParamTraits{true, false});
    }
    fn("final_norm_g", final_norm_g, ParamTraits{true, false});
    fn("lm_head", lm_head, ParamTraits{true, true});
  }

  template <class Fn>
  void visit(Fn&& fn) const {
    const_cast<Weights*>(this)->visit([&](const std::string& name, std::vector<Real>& vec,
                                          ParamTraits t) {
      fn(name, static_cast<const std::vector<Real>&>(vec), t);
    });
  }

  size_t total_params() const {
    size_t n = 0;
    visit([&](const std::string&, const std::vector<Real>& v, ParamTraits) { n += v.size(); });
    return n;
  }

  size_t trainable_params() const {
    size_t n = 0;
    visit([&](const std::string&, const std::vector<Real>& v, ParamTraits t) {
      if (t.trainable) n += v.size();
    });
    return n;
  }

  void zero_all() {
    visit([](const std::string&, std::vector<Real>& v, ParamTraits) {
      std::fill(v.begin(), v.end(), Real(0));
    });
  }
};

// Weight initialization. Matrices are gaussian; the output head is kept
// small so an untrained model predicts near-uniformly; norm gains start at 1;
// theta follows bam_init; ssmax scales start at 1.
template <class Real>
void init_weights(Weights<Real>& w, const ModelConfig& cfg) {
  w.allocate(cfg);
  Rng rng(split_seed(cfg.seed, 0xBA4));
  const double mat_std = 0.08;
  const double head_std = 0.02;
  auto fill_normal = [&rng](std::vector<Real>& v, double sd) {
    for (Real& x : v) x = static_cast<Real>(rng.normal(0.0, sd));
  };
  fill_normal(w.tok_embed, mat_std);
  for (auto& l : w.layers) {
    std::fill(l.attn_norm_g.begin(), l.attn_norm_g.end(), Real(1));
    std::fill(l.ff_norm_g.begin(), l.ff_norm_g.end(), Real(1));
    fill_normal(l.wq, mat_std);
    fill_normal(l.wk, mat_std);
    fill_normal(l.wv, mat_std);
    fill_normal(l.wo, mat_std);
    fill_normal(l.w_gate, mat_std);
    fill_normal(l.w_up, mat_std);
    fill_normal(l.w_down, mat_std);
    if (cfg.pe_kind == PeKind::bam) {
      if (cfg.bam_init == BamInit::uniform_prior) {
        // theta_beta = 0, theta_alpha = 0: a constant bias, i.e. a uniform
        // prior over the causal window
        std::fill(l.theta_beta.begin(), l.theta_beta.end(), Real(0));
        std::fill(l.theta_alpha.begin(), l.theta_alpha.end(), Real(0));
      } else {
        const std::vector<double> slopes = alibi_slopes(cfg.n_heads);
        for (int h = 0; h < cfg.n_heads; ++h) {
          l.theta_beta[static_cast<size_t>(h)] = Real(1);
          l.theta_alpha[static_cast<size_t>(h)] =
              static_cast<Real>(std::log(slopes[static_cast<size_t>(h)]));
        }
      }
      std::fill(l.theta_mu.begin(), l.theta_mu.end(), Real(0));
    }
    if (cfg.use_ssmax) std::fill(l.ssmax_s.begin(), l.ssmax_s.end(), Real(1));
  }
  std::fill(w.final_norm_g.begin(), w.final_norm_g.end(), Real(1));
  fill_normal(w.lm_head, head_std);
}

template <class Real>
struct Checkpoint {
  ModelConfig config;
  Weights<Real> weights;
  int64_t step = 0;

  ThetaParams bam_theta(int layer, int head) const {
    if (config.pe_kind != PeKind::bam)
      throw std::invalid_argument("bam_theta: checkpoint is not a BAM model");
    const LayerWeights<Real>& l = weights.layers[static_cast<size_t>(layer)];
    return ThetaParams(static_cast<double>(l.theta_mu[static_cast<size_t>(head)]),
                       static_cast<double>(l.theta_alpha[static_cast<size_t>(head)]),
                       static_cast<double>(l.theta_beta[static_cast<size_t>(head)]),
                       config.bam_epsilon);
  }

  double ssmax_scale(int layer, int head) const {
    if (!config.use_ssmax)
      throw std::invalid_argument("ssmax_scale: checkpoint does not use ssmax");
    return static_cast<double>(
        weights.layers[static_cast<size_t>(layer)].ssmax_s[static_cast<size_t>(head)]);
  }
};

template <class Real>
Checkpoint<Real> make_checkpoint(const ModelConfig& cfg) {
  Checkpoint<Real> ck;
  ck.config = cfg;
  init_weights(ck.weights, cfg);
  return ck;
}

// ---------------------------- small kernels ----------------------------

namespace detail {

template <class Real>
void vec_mat(const Real* x, const Real* w, int in, int out, Real* y) {
  for (int o = 0; o < out; ++o) y[o] = Real(0);
  for (int i = 0; i < in; ++i) {
    const Real xi = x[i];
    const Real* row = w + static_cast<size_t>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += xi * row[o];
  }
}

// dx += dy . W^T
template <class Real>
void vec_mat_back(const Real* dy, const Real* w, int in, int out, Real* dx) {
  for (int i = 0; i < in; ++i) {
    const Real* row = w + static_cast<size_t>(i) * out;
    Real acc = Real(0);
    for (int o = 0; o < out; ++o) acc += dy[o] * row[o];
    dx[i] += acc;
  }
}

// dW += x (outer) dy
template <class Real>
void outer_acc(const Real* x, const Real* dy, int in, int out, Real* dw) {
  for (int i = 0; i < in; ++i) {
    const Real xi = x[i];
    if (xi == Real(0)) continue;
    Real* row = dw + static_cast<size_t>(i) * out;
    for (int o = 0; o < out; ++o) row[o] += xi * dy[o];
  }
}

template <class Real>
Real rms_inv(const Real* x, int d) {
  Real ss = Real(0);
  for (int k = 0; k < d; ++k) ss += x[k] * x[k];
  return Real(1) / std::sqrt(ss / Real(d) + Real(kRmsEps));
}

template <class Real>
void rmsnorm(const Real* x, const Real* g, int d, Real* y, Real* inv_out = nullptr) {
  const Real inv = rms_inv(x, d);
  for (int k = 0; k < d; ++k) y[k] = x[k] * inv * g[k];
  if (inv_out) *inv_out = inv;
}

template <class Real>
void sin_pos_embedding(int pos, int d, Real* out_add) {
  for (int k = 0; k + 1 < d; k += 2) {
    const double freq = std::pow(kSinBase, -static_cast<double>(k) / d);
    const double a = pos * freq;
    out_add[k] += static_cast<Real>(std::sin(a));
    out_add[k + 1] += static_cast<Real>(std::cos(a));
  }
}

template <class Real>
void rope_rotate(Real* x, int head_dim, int pos) {
  for (int k = 0; k + 1 < head_dim; k += 2) {
    const double freq = std::pow(kRopeBase, -static_cast<double>(k) / head_dim);
    const double a = pos * freq;
    const Real c = static_cast<Real>(std::cos(a));
    const Real s = static_cast<Real>(std::sin(a));
    const Real x0 = x[k], x1 = x[k + 1];
    x[k] = x0 * c - x1 * s;
    x[k + 1] = x0 * s + x1 * c;
  }
}

template <class Real>
void rope_rotate_back(Real* dx, int head_dim, int pos) {
  for (int k = 0; k + 1 < head_dim; k += 2) {
    const double freq = std::pow(kRopeBase, -static_cast<double>(k) / head_dim);
    const double a = pos * freq;
    const Real c = static_cast<Real>(std::cos(a));
    const Real s = static_cast<Real>(std::sin(a));
    const Real d0 = dx[k], d1 = dx[k + 1];
    dx[k] = d0 * c + d1 * s;
    dx[k + 1] = -d0 * s + d1 * c;
  }
}

// Additive score bias for head h at distance r = i - j >= 0.
template <class Real>
double head_bias(const ModelConfig& cfg, const Weights<Real>& w,
                 const std::vector<double>& slopes, int layer, int head, long long r) {
  switch (cfg.pe_kind) {
    case PeKind::alibi:
      return -slopes[static_cast<size_t>(head)] * static_cast<double>(r);
    case PeKind::bam: {
      const LayerWeights<Real>& l = w.layers[static_cast<size_t>(layer)];
      const ThetaParams theta(static_cast<double>(l.theta_mu[static_cast<size_t>(head)]),
                              static_cast<double>(l.theta_alpha[static_cast<size_t>(head)]),
                              static_cast<double>(l.theta_beta[static_cast<size_t>(head)]),
                              cfg.bam_epsilon);
      return bam_bias(-r, theta);
    }
    default:
      return 0.0;
  }
}

}  // namespace detail

// ---------------------------- inference ----------------------------

// Incremental decode state. Keys are stored post-rotation; BAM and ALiBi
// biases depend only on relative position, so cached entries never need
// rewriting as the sequence grows.
template <class Real>
struct KvCache {
  explicit KvCache(const ModelConfig& cfg)
      : d(cfg.d_model),
        k(static_cast<size_t>(cfg.n_layers)),
        v(static_cast<size_t>(cfg.n_layers)),
        bias_tab(static_cast<size_t>(cfg.n_layers),
                 std::vector<std::vector<Real>>(static_cast<size_t>(cfg.n_heads))) {}

  int length() const { return n; }

  int d = 0;
  int n = 0;
  std::vector<int32_t> doc_id;
  std::vector<int32_t> doc_begin;             // per position, start of its document
  std::vector<std::vector<Real>> k, v;        // [layer][pos * d]
  std::vector<std::vector<std::vector<Real>>> bias_tab;  // [layer][head][distance]
};

// Processes one token (belonging to document `doc`) and returns the logits
// for the next-token distribution at this position.
template <class Real>
std::vector<Real> forward_step(const Checkpoint<Real>& ck, KvCache<Real>& cache, int32_t token,
                               int32_t doc) {
  const ModelConfig& cfg = ck.config;
  const Weights<Real>& w = ck.weights;
  if (token < 0 || token >= cfg.vocab_size)
    throw std::invalid_argument("forward: token " + std::to_string(token) +
                                " out of range [0, " + std::to_string(cfg.vocab_size) + ")");
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const int nh = cfg.n_heads;
  const int ff = cfg.ff_dim();
  const int pos = cache.n;
  const Real inv_sqrt_hd = Real(1) / std::sqrt(Real(hd));
  static const std::vector<double> no_slopes;
  const std::vector<double> slopes =
      cfg.pe_kind == PeKind::alibi ? alibi_slopes(nh) : no_slopes;

  const int doc_begin =
      (pos == 0 || cache.doc_id.back() != doc) ? pos : cache.doc_begin.back();
  cache.doc_id.push_back(doc);
  cache.doc_begin.push_back(doc_begin);

  std::vector<Real> x(w.tok_embed.begin() + static_cast<size_t>(token) * d,
                      w.tok_embed.begin() + static_cast<size_t>(token + 1) * d);
  if (cfg.pe_kind == PeKind::sinusoidal) detail::sin_pos_embedding(pos, d, x.data());

  std::vector<Real> a(static_cast<size_t>(d)), q(static_cast<size_t>(d)),
      kn(static_cast<size_t>(d)), vn(static_cast<size_t>(d)), att(static_cast<size_t>(d)),
      proj(static_cast<size_t>(d));
  std::vector<Real> scores, gate(static_cast<size_t>(ff)), up(static_cast<size_t>(ff));

  for (int li = 0; li < cfg.n_layers; ++li) {
    const LayerWeights<Real>& lw = w.layers[static_cast<size_t>(li)];

    detail::rmsnorm(x.data(), lw.attn_norm_g.data(), d, a.data());
    detail::vec_mat(a.data(), lw.wq.data(), d, d, q.data());
    detail::vec_mat(a.data(), lw.wk.data(), d, d, kn.data());
    detail::vec_mat(a.data(), lw.wv.data(), d, d, vn.data());
    if (cfg.pe_kind == PeKind::rope) {
      for (int h = 0; h < nh; ++h) {
        detail::rope_rotate(q.data() + static_cast<size_t>(h) * hd, hd, pos);
        detail::rope_rotate(kn.data() + static_cast<size_t>(h) * hd, hd, pos);
      }
    }
    auto& kbuf = cache.k[static_cast<size_t>(li)];
    auto& vbuf = cache.v[static_cast<size_t>(li)];
    kbuf.insert(kbuf.end(), kn.begin(), kn.end());
    vbuf.insert(vbuf.end(), vn.begin(), vn.end());

    for (int h = 0; h < nh; ++h) {
      auto& tab = cache.bias_tab[static_cast<size_t>(li)][static_cast<size_t>(h)];
      while (static_cast<int>(tab.size()) <= pos)
        tab.push_back(static_cast<Real>(
            detail::head_bias(cfg, w, slopes, li, h, static_cast<long long>(tab.size()))));

      const int win = pos - doc_begin + 1;
      scores.resize(static_cast<size_t>(win));
      const Real* qh = q.data() + static_cast<size_t>(h) * hd;
      for (int j = doc_begin; j <= pos; ++j) {
        const Real* kh = kbuf.data() + static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd;
        Real dot = Real(0);
        for (int t = 0; t < hd; ++t) dot += qh[t] * kh[t];
        scores[static_cast<size_t>(j - doc_begin)] = dot * inv_sqrt_hd + tab[static_cast<size_t>(pos - j)];
      }
      if (cfg.use_ssmax) {
        const Real c = lw.ssmax_s[static_cast<size_t>(h)] *
                       static_cast<Real>(std::log(static_cast<double>(win)));
        for (Real& z : scores) z *= c;
      }
      softmax_inplace_span(std::span<Real>(scores.data(), scores.size()));

      Real* outh = att.data() + static_cast<size_t>(h) * hd;
      for (int t = 0; t < hd; ++t) outh[t] = Real(0);
      for (int j = doc_begin; j <= pos; ++j) {
        const Real p = scores[static_cast<size_t>(j - doc_begin)];
        if (p == Real(0)) continue;
        const Real* vh = vbuf.data() + static_cast<size_t>(j) * d + static_cast<size_t>(h) * hd;
        for (int t = 0; t < hd; ++t) outh[t] += p * vh[t];
      }
    }
    detail::vec_mat(att.data(), lw.wo.data(), d, d, proj.data());
    for (int t = 0; t < d; ++t) x[static_cast<size_t>(t)] += proj[static_cast<size_t>(t)];

    detail::rmsnorm(x.data(), lw.ff_norm_g.data(), d, a.data());
    detail::vec_mat(a.data(), lw.w_gate.data(), d, ff, gate.data());
    detail::vec_mat(a.data(), lw.w_up.data(), d, ff, up.data());
    for (int t = 0; t < ff; ++t) {
      const Real z = gate[static_cast<size_t>(t)];
      const Real sig = Real(1) / (Real(1) + std::exp(-z));
      gate[static_cast<size_t>(t)] = z * sig * up[static_cast<size_t>(t)];
    }
    detail::vec_mat(gate.data(), lw.w_down.data(), ff, d, proj.data());
    for (int t = 0; t < d; ++t) x[static_cast<size_t>(t)] += proj[static_cast<size_t>(t)];
  }

  detail::rmsnorm(x.data(), w.final_norm_g.data(), d, a.data());
  std::vector<Real> logits(static_cast<size_t>(cfg.vocab_size));
  detail::vec_mat(a.data(), w.lm_head.data(), d, cfg.vocab_size, logits.data());
  ++cache.n;
  return logits;
}

// Full-sequence forward; returns per-position next-token logits, row-major
// [L * vocab]. Any length is legal; nothing is re-parameterized beyond the
// training context.
template <class Real>
std::vector<Real> forward(const Checkpoint<Real>& ck, const TokenSequence& seq) {
  if (seq.length() < 1) throw std::invalid_argument("forward: sequence must be non-empty");
  KvCache<Real> cache(ck.config);
  std::vector<Real> logits;
  logits.reserve(static_cast<size_t>(seq.length()) * ck.config.vocab_size);
  for (int i = 0; i < seq.length(); ++i) {
    int32_t doc = 0;
    for (size_t b = 0; b < seq.doc_starts.size(); ++b)
      if (seq.doc_starts[b] <= i) doc = static_cast<int32_t>(b) + 1;
    const std::vector<Real> row =
        forward_step(ck, cache, seq.tokens[static_cast<size_t>(i)], doc);
    logits.insert(logits.end(), row.begin(), row.end());
  }
  return logits;
}

// Mean next-token cross-entropy in nats over scored positions. Targets that
// start a new document are not scored.
template <class Real>
double loss(const Checkpoint<Real>& ck, const TokenSequence& seq) {
  if (seq.length() < 2) throw std::invalid_argument("loss: sequence length must be >= 2");
  const std::vector<Real> logits = forward(ck, seq);
  const int V = ck.config.vocab_size;
  const std::vector<int32_t> ds = seq.doc_start_index();
  double total = 0.0;
  int n_terms = 0;
  std::vector<double> row(static_cast<size_t>(V));
  for (int t = 0; t + 1 < seq.length(); ++t) {
    if (ds[static_cast<size_t>(t + 1)] == t + 1) continue;  // next token opens a new doc
    for (int k = 0; k < V; ++k)
      row[static_cast<size_t>(k)] =
          static_cast<double>(logits[static_cast<size_t>(t) * V + k]);
    const double lse = log_sum_exp_span(std::span<const double>(row.data(), row.size()));
    total += lse - row[static_cast<size_t>(seq.tokens[static_cast<size_t>(t + 1)])];
    ++n_terms;
  }
  if (n_terms == 0) throw std::invalid_argument("loss: no scored positions");
  return total / n_terms;
}

// Greedy decoding with the KV cache; ties resolve to the lowest token id.
template <class Real>
TokenSequence generate(const Checkpoint<Real>& ck, const TokenSequence& prompt, int n_new) {
  if (n_new < 1) throw std::invalid_argument("generate: n_new must be >= 1");
  if (prompt.length() < 1) throw std::invalid_argument("generate: prompt must be non-empty");
  KvCache<Real> cache(ck.config);
  std::vector<Real> logits;
  for (int i = 0; i < prompt.length(); ++i) {
    int32_t doc = 0;
    for (size_t b = 0; b < prompt.doc_starts.size(); ++b)
      if (prompt.doc_starts[b] <= i) doc = static_cast<int32_t>(b) + 1;
    logits = forward_step(ck, cache, prompt.tokens[static_cast<size_t>(i)], doc);
  }
  TokenSequence out = prompt;
  int32_t doc = prompt.doc_starts.empty()
                    ? 0
                    : static_cast<int32_t>(prompt.doc_starts.size());
  for (int t = 0; t < n_new; ++t) {
    const auto it = std::max_element(logits.begin(), logits.end());
    const int32_t next = static_cast<int32_t>(it - logits.begin());
    out.tokens.push_back(next);
    if (t + 1 < n_new) logits = forward_step(ck, cache, next, doc);
  }
  return out;
}

}  // namespace bam
