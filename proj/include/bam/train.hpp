#pragma once
// Training path for the desk-scale transformer: an activation-recording
// forward, a hand-derived backward pass, an RAdam optimizer with decoupled
// weight decay and cosine learning-rate decay, and the finite-difference
// gradient check that arbitrates the whole thing.

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bam/model.hpp"

namespace bam {

// ---------------------------- training graph ----------------------------

template <class Real>
struct TrainGraph {
  struct Layer {
    std::vector<Real> x_in;        // [L*d] residual stream entering the block
    std::vector<Real> a_norm;      // [L*d] attention-branch rmsnorm output
    std::vector<Real> a_inv;       // [L]
    std::vector<Real> q, k, v;     // [L*d] (post-rotation where applicable)
    std::vector<Real> probs;       // [H*L*L]
    std::vector<Real> att;         // [L*d] concatenated head outputs
    std::vector<Real> x_mid;       // [L*d] after the attention residual
    std::vector<Real> b_norm;      // [L*d] ff-branch rmsnorm output
    std::vector<Real> b_inv;       // [L]
    std::vector<Real> gate, up;    // [L*ff] pre-activation
    std::vector<Real> act;         // [L*ff]
    std::vector<Real> bias_tab;    // [H*L] additive score bias by distance
  };
  int L = 0;
  std::vector<int32_t> doc_begin;  // [L]
  std::vector<Real> x0;            // [L*d]
  std::vector<Layer> layers;
  std::vector<Real> x_final;       // [L*d]
  std::vector<Real> f_norm;        // [L*d]
  std::vector<Real> f_inv;         // [L]
  std::vector<Real> probs_out;     // [L*V]
  std::vector<int32_t> scored;     // positions t whose target t+1 is scored
};

namespace detail {

template <class Real>
void graph_resize(TrainGraph<Real>& g, const ModelConfig& cfg, int L) {
  const size_t d = static_cast<size_t>(cfg.d_model);
  const size_t ff = static_cast<size_t>(cfg.ff_dim());
  const size_t h = static_cast<size_t>(cfg.n_heads);
  const size_t Ls = static_cast<size_t>(L);
  g.L = L;
  g.doc_begin.resize(Ls);
  g.x0.resize(Ls * d);
  g.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : g.layers) {
    l.x_in.resize(Ls * d);
    l.a_norm.resize(Ls * d);
    l.a_inv.resize(Ls);
    l.q.resize(Ls * d);
    l.k.resize(Ls * d);
    l.v.resize(Ls * d);
    l.probs.assign(h * Ls * Ls, Real(0));
    l.att.resize(Ls * d);
    l.x_mid.resize(Ls * d);
    l.b_norm.resize(Ls * d);
    l.b_inv.resize(Ls);
    l.gate.resize(Ls * ff);
    l.up.resize(Ls * ff);
    l.act.resize(Ls * ff);
    l.bias_tab.resize(h * Ls);
  }
  g.x_final.resize(Ls * d);
  g.f_norm.resize(Ls * d);
  g.f_inv.resize(Ls);
  g.probs_out.resize(Ls * static_cast<size_t>(cfg.vocab_size));
}

// dx += rmsnorm backward for one position; also accumulates dgain.
template <class Real>
void rmsnorm_backward(const Real* x, Real inv, const Real* gain, const Real* dy, int d,
                      Real* dx, Real* dgain) {
  Real dot = Real(0);
  for (int k = 0; k < d; ++k) dot += dy[k] * gain[k] * x[k];
  const Real inv3_over_d = inv * inv * inv / Real(d);
  for (int k = 0; k < d; ++k) {
    dx[k] += inv * gain[k] * dy[k] - inv3_over_d * x[k] * dot;
    dgain[k] += dy[k] * x[k] * inv;
  }
}

}  // namespace detail

// Activation-recording forward; returns mean next-token cross-entropy over
// scored positions. Targets that open a new document are not scored.
template <class Real>
double forward_graph(const Checkpoint<Real>& ck, const TokenSequence& seq, TrainGraph<Real>& g) {
  const ModelConfig& cfg = ck.config;
  const Weights<Real>& w = ck.weights;
  const int L = seq.length();
  if (L < 2) throw std::invalid_argument("forward_graph: sequence length must be >= 2");
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const int nh = cfg.n_heads;
  const int ff = cfg.ff_dim();
  const int V = cfg.vocab_size;
  const Real inv_sqrt_hd = Real(1) / std::sqrt(Real(hd));
  detail::graph_resize(g, cfg, L);

  const std::vector<int32_t> ds = seq.doc_start_index();
  std::copy(ds.begin(), ds.end(), g.doc_begin.begin());

  const std::vector<double> slopes =
      cfg.pe_kind == PeKind::alibi ? alibi_slopes(nh) : std::vector<double>();

  for (int i = 0; i < L; ++i) {
    const int32_t tok = seq.tokens[static_cast<size_t>(i)];
    if (tok < 0 || tok >= V)
      throw std::invalid_argument("forward_graph: token out of range");
    Real* xi = g.x0.data() + static_cast<size_t>(i) * d;
    const Real* emb = w.tok_embed.data() + static_cast<size_t>(tok) * d;
    std::copy(emb, emb + d, xi);
    if (cfg.pe_kind == PeKind::sinusoidal) detail::sin_pos_embedding(i, d, xi);
  }

  const std::vector<Real>* x_cur = &g.x0;
  for (int li = 0; li < cfg.n_layers; ++li) {
    const LayerWeights<Real>& lw = w.layers[static_cast<size_t>(li)];
    auto& gl = g.layers[static_cast<size_t>(li)];
    gl.x_in = *x_cur;

    for (int h = 0; h < nh; ++h)
      for (int r = 0; r < L; ++r)
        gl.bias_tab[static_cast<size_t>(h) * L + r] =
            static_cast<Real>(detail::head_bias(cfg, w, slopes, li, h, r));

    for (int i = 0; i < L; ++i) {
      const Real* xi = gl.x_in.data() + static_cast<size_t>(i) * d;
      Real* ai = gl.a_norm.data() + static_cast<size_t>(i) * d;
      detail::rmsnorm(xi, lw.attn_norm_g.data(), d, ai, &gl.a_inv[static_cast<size_t>(i)]);
      detail::vec_mat(ai, lw.wq.data(), d, d, gl.q.data() + static_cast<size_t>(i) * d);
      detail::vec_mat(ai, lw.wk.data(), d, d, gl.k.data() + static_cast<size_t>(i) * d);
      detail::vec_mat(ai, lw.wv.data(), d, d, gl.v.data() + static_cast<size_t>(i) * d);
      if (cfg.pe_kind == PeKind::rope) {
        for (int h = 0; h < nh; ++h) {
          detail::rope_rotate(gl.q.data() + static_cast<size_t>(i) * d + h * hd, hd, i);
          detail::rope_rotate(gl.k.data() + static_cast<size_t>(i) * d + h * hd, hd, i);
        }
      }
    }

    std::vector<Real> row(static_cast<size_t>(L));
    for (int h = 0; h < nh; ++h) {
      const Real* tab = gl.bias_tab.data() + static_cast<size_t>(h) * L;
      for (int i = 0; i < L; ++i) {
        const int begin = g.doc_begin[static_cast<size_t>(i)];
        const int win = i - begin + 1;
        const Real* qh = gl.q.data() + static_cast<size_t>(i) * d + h * hd;
        for (int j = begin; j <= i; ++j) {
          const Real* kh = gl.k.data() + static_cast<size_t>(j) * d + h * hd;
          Real dot = Real(0);
          for (int t = 0; t < hd; ++t) dot += qh[t] * kh[t];
          row[static_cast<size_t>(j - begin)] = dot * inv_sqrt_hd + tab[i - j];
        }
        if (cfg.use_ssmax) {
          const Real c = lw.ssmax_s[static_cast<size_t>(h)] *
                         static_cast<Real>(std::log(static_cast<double>(win)));
          for (int t = 0; t < win; ++t) row[static_cast<size_t>(t)] *= c;
        }
        softmax_inplace_span(std::span<Real>(row.data(), static_cast<size_t>(win)));
        Real* prow = gl.probs.data() +
                     (static_cast<size_t>(h) * L + static_cast<size_t>(i)) * L;
        for (int j = begin; j <= i; ++j) prow[j] = row[static_cast<size_t>(j - begin)];

        Real* outh = gl.att.data() + static_cast<size_t>(i) * d + h * hd;
        for (int t = 0; t < hd; ++t) outh[t] = Real(0);
        for (int j = begin; j <= i; ++j) {
          const Real p = prow[j];
          if (p == Real(0)) continue;
          const Real* vh = gl.v.data() + static_cast<size_t>(j) * d + h * hd;
          for (int t = 0; t < hd; ++t) outh[t] += p * vh[t];
        }
      }
    }

    std::vector<Real> proj(static_cast<size_t>(d));
    for (int i = 0; i < L; ++i) {
      detail::vec_mat(gl.att.data() + static_cast<size_t>(i) * d, lw.wo.data(), d, d,
                      proj.data());
      Real* xm = gl.x_mid.data() + static_cast<size_t>(i) * d;
      const Real* xi = gl.x_in.data() + static_cast<size_t>(i) * d;
      for (int t = 0; t < d; ++t) xm[t] = xi[t] + proj[static_cast<size_t>(t)];

      Real* bi = gl.b_norm.data() + static_cast<size_t>(i) * d;
      detail::rmsnorm(xm, lw.ff_norm_g.data(), d, bi, &gl.b_inv[static_cast<size_t>(i)]);
      Real* gate = gl.gate.data() + static_cast<size_t>(i) * ff;
      Real* up = gl.up.data() + static_cast<size_t>(i) * ff;
      Real* act = gl.act.data() + static_cast<size_t>(i) * ff;
      detail::vec_mat(bi, lw.w_gate.data(), d, ff, gate);
      detail::vec_mat(bi, lw.w_up.data(), d, ff, up);
      for (int t = 0; t < ff; ++t) {
        const Real z = gate[t];
        const Real sig = Real(1) / (Real(1) + std::exp(-z));
        act[t] = z * sig * up[t];
      }
    }
    std::vector<Real>& x_next =
        (li + 1 < cfg.n_layers) ? g.layers[static_cast<size_t>(li + 1)].x_in : g.x_final;
    x_next.resize(static_cast<size_t>(L) * d);
    std::vector<Real> down(static_cast<size_t>(d));
    for (int i = 0; i < L; ++i) {
      detail::vec_mat(gl.act.data() + static_cast<size_t>(i) * ff, lw.w_down.data(), ff, d,
                      down.data());
      const Real* xm = gl.x_mid.data() + static_cast<size_t>(i) * d;
      Real* xn = x_next.data() + static_cast<size_t>(i) * d;
      for (int t = 0; t < d; ++t) xn[t] = xm[t] + down[static_cast<size_t>(t)];
    }
    x_cur = &x_next;
  }
  if (cfg.n_layers == 0) g.x_final = g.x0;

  g.scored.clear();
  double total = 0.0;
  for (int i = 0; i < L; ++i) {
    const Real* xf = g.x_final.data() + static_cast<size_t>(i) * d;
    Real* fn = g.f_norm.data() + static_cast<size_t>(i) * d;
    detail::rmsnorm(xf, w.final_norm_g.data(), d, fn, &g.f_inv[static_cast<size_t>(i)]);
    Real* logits = g.probs_out.data() + static_cast<size_t>(i) * V;
    detail::vec_mat(fn, w.lm_head.data(), d, V, logits);
  }
  for (int t = 0; t + 1 < L; ++t) {
    if (ds[static_cast<size_t>(t + 1)] == t + 1) continue;
    g.scored.push_back(t);
  }
  if (g.scored.empty()) throw std::invalid_argument("forward_graph: no scored positions");
  for (int32_t t : g.scored) {
    Real* logits = g.probs_out.data() + static_cast<size_t>(t) * V;
    const Real lse = log_sum_exp_span(std::span<const Real>(logits, static_cast<size_t>(V)));
    total += static_cast<double>(lse) -
             static_cast<double>(logits[seq.tokens[static_cast<size_t>(t + 1)]]);
    // turn the stored logits into probabilities for the backward pass
    for (int k = 0; k < V; ++k) logits[k] = std::exp(logits[k] - lse);
  }
  return total / static_cast<double>(g.scored.size());
}

// Accumulates gradients of the mean cross-entropy into `grads` (same shapes
// as the weights). Call forward_graph first with the same (ck, seq, g).
template <class Real>
void backward_graph(const Checkpoint<Real>& ck, const TokenSequence& seq,
                    const TrainGraph<Real>& g, Weights<Real>& grads) {
  const ModelConfig& cfg = ck.config;
  const Weights<Real>& w = ck.weights;
  const int L = g.L;
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const int nh = cfg.n_heads;
  const int ff = cfg.ff_dim();
  const int V = cfg.vocab_size;
  const Real inv_sqrt_hd = Real(1) / std::sqrt(Real(hd));
  const Real inv_terms = Real(1) / static_cast<Real>(g.scored.size());

  std::vector<Real> dx(static_cast<size_t>(L) * d, Real(0));
  std::vector<Real> dlogit(static_cast<size_t>(V));
  std::vector<Real> dfn(static_cast<size_t>(d));

  // output head and final norm
  for (int32_t t : g.scored) {
    const Real* probs = g.probs_out.data() + static_cast<size_t>(t) * V;
    for (int k = 0; k < V; ++k) dlogit[static_cast<size_t>(k)] = probs[k] * inv_terms;
    dlogit[static_cast<size_t>(seq.tokens[static_cast<size_t>(t + 1)])] -= inv_terms;
    const Real* fn = g.f_norm.data() + static_cast<size_t>(t) * d;
    detail::outer_acc(fn, dlogit.data(), d, V, grads.lm_head.data());
    std::fill(dfn.begin(), dfn.end(), Real(0));
    detail::vec_mat_back(dlogit.data(), w.lm_head.data(), d, V, dfn.data());
    detail::rmsnorm_backward(g.x_final.data() + static_cast<size_t>(t) * d,
                             g.f_inv[static_cast<size_t>(t)], w.final_norm_g.data(), dfn.data(),
                             d, dx.data() + static_cast<size_t>(t) * d,
                             grads.final_norm_g.data());
  }

  std::vector<Real> da(static_cast<size_t>(d));
  std::vector<Real> dgate(static_cast<size_t>(ff)), dup(static_cast<size_t>(ff));
  std::vector<Real> dq(static_cast<size_t>(L) * d), dk(static_cast<size_t>(L) * d),
      dv(static_cast<size_t>(L) * d), datt(static_cast<size_t>(L) * d);
  std::vector<Real> dp(static_cast<size_t>(L)), dz(static_cast<size_t>(L));
  std::vector<Real> dbias(static_cast<size_t>(L));

  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    const LayerWeights<Real>& lw = w.layers[static_cast<size_t>(li)];
    LayerWeights<Real>& gw = grads.layers[static_cast<size_t>(li)];
    const auto& gl = g.layers[static_cast<size_t>(li)];

    // feedforward block: x_out = x_mid + W_down act(rms(x_mid))
    for (int i = 0; i < L; ++i) {
      Real* dxi = dx.data() + static_cast<size_t>(i) * d;
      const Real* act = gl.act.data() + static_cast<size_t>(i) * ff;
      detail::outer_acc(act, dxi, ff, d, gw.w_down.data());
      std::fill(dgate.begin(), dgate.end(), Real(0));
      detail::vec_mat_back(dxi, lw.w_down.data(), ff, d, dgate.data());  // dact in dgate
      const Real* gate = gl.gate.data() + static_cast<size_t>(i) * ff;
      const Real* up = gl.up.data() + static_cast<size_t>(i) * ff;
      for (int t = 0; t < ff; ++t) {
        const Real dact = dgate[static_cast<size_t>(t)];
        const Real z = gate[t];
        const Real sig = Real(1) / (Real(1) + std::exp(-z));
        const Real silu = z * sig;
        dup[static_cast<size_t>(t)] = dact * silu;
        dgate[static_cast<size_t>(t)] = dact * up[t] * sig * (Real(1) + z * (Real(1) - sig));
      }
      const Real* bn = gl.b_norm.data() + static_cast<size_t>(i) * d;
      detail::outer_acc(bn, dgate.data(), d, ff, gw.w_gate.data());
      detail::outer_acc(bn, dup.data(), d, ff, gw.w_up.data());
      std::fill(da.begin(), da.end(), Real(0));
      detail::vec_mat_back(dgate.data(), lw.w_gate.data(), d, ff, da.data());
      detail::vec_mat_back(dup.data(), lw.w_up.data(), d, ff, da.data());
      // residual passthrough stays in dxi; the norm branch adds to it
      detail::rmsnorm_backward(gl.x_mid.data() + static_cast<size_t>(i) * d,
                               gl.b_inv[static_cast<size_t>(i)], lw.ff_norm_g.data(), da.data(),
                               d, dxi, gw.ff_norm_g.data());
    }

    // attention block: x_mid = x_in + W_o att
    std::fill(datt.begin(), datt.end(), Real(0));
    for (int i = 0; i < L; ++i) {
      const Real* dxm = dx.data() + static_cast<size_t>(i) * d;
      detail::outer_acc(gl.att.data() + static_cast<size_t>(i) * d, dxm, d, d, gw.wo.data());
      detail::vec_mat_back(dxm, lw.wo.data(), d, d,
                           datt.data() + static_cast<size_t>(i) * d);
    }

    std::fill(dq.begin(), dq.end(), Real(0));
    std::fill(dk.begin(), dk.end(), Real(0));
    std::fill(dv.begin(), dv.end(), Real(0));
    const bool need_bias_grad =
        cfg.pe_kind == PeKind::bam &&
        (cfg.bam_trainable.beta || cfg.bam_trainable.alpha || cfg.bam_trainable.mu);

    for (int h = 0; h < nh; ++h) {
      const Real* tab = gl.bias_tab.data() + static_cast<size_t>(h) * L;
      if (need_bias_grad) std::fill(dbias.begin(), dbias.end(), Real(0));
      Real ds_acc = Real(0);
      for (int i = 0; i < L; ++i) {
        const int begin = g.doc_begin[static_cast<size_t>(i)];
        const int win = i - begin + 1;
        const Real* prow =
            gl.probs.data() + (static_cast<size_t>(h) * L + static_cast<size_t>(i)) * L;
        const Real* dout = datt.data() + static_cast<size_t>(i) * d + h * hd;
        const Real* qh = gl.q.data() + static_cast<size_t>(i) * d + h * hd;

        Real sum_pd = Real(0);
        for (int j = begin; j <= i; ++j) {
          const Real* vh = gl.v.data() + static_cast<size_t>(j) * d + h * hd;
          Real acc = Real(0);
          for (int t = 0; t < hd; ++t) acc += dout[t] * vh[t];
          dp[static_cast<size_t>(j)] = acc;
          sum_pd += prow[j] * acc;
          Real* dvh = dv.data() + static_cast<size_t>(j) * d + h * hd;
          const Real p = prow[j];
          for (int t = 0; t < hd; ++t) dvh[t] += p * dout[t];
        }
        const Real c = cfg.use_ssmax
                           ? lw.ssmax_s[static_cast<size_t>(h)] *
                                 static_cast<Real>(std::log(static_cast<double>(win)))
                           : Real(1);
        Real zsum = Real(0);
        for (int j = begin; j <= i; ++j) {
          const Real dw = prow[j] * (dp[static_cast<size_t>(j)] - sum_pd);
          if (cfg.use_ssmax) {
            // recompute the unscaled logit for the scale gradient
            const Real* kh = gl.k.data() + static_cast<size_t>(j) * d + h * hd;
            Real dot = Real(0);
            for (int t = 0; t < hd; ++t) dot += qh[t] * kh[t];
            zsum += dw * (dot * inv_sqrt_hd + tab[i - j]);
          }
          dz[static_cast<size_t>(j)] = c * dw;
        }
        if (cfg.use_ssmax)
          ds_acc += static_cast<Real>(std::log(static_cast<double>(win))) * zsum;

        Real* dqh = dq.data() + static_cast<size_t>(i) * d + h * hd;
        for (int j = begin; j <= i; ++j) {
          const Real dzj = dz[static_cast<size_t>(j)];
          if (dzj == Real(0)) continue;
          const Real* kh = gl.k.data() + static_cast<size_t>(j) * d + h * hd;
          Real* dkh = dk.data() + static_cast<size_t>(j) * d + h * hd;
          const Real scaled = dzj * inv_sqrt_hd;
          for (int t = 0; t < hd; ++t) {
            dqh[t] += scaled * kh[t];
            dkh[t] += scaled * qh[t];
          }
          if (need_bias_grad) dbias[static_cast<size_t>(i - j)] += dzj;
        }
      }
      if (cfg.use_ssmax) gw.ssmax_s[static_cast<size_t>(h)] += ds_acc;
      if (need_bias_grad) {
        const ThetaParams theta = ck.bam_theta(li, h);
        Real dmu = Real(0), dal = Real(0), dbe = Real(0);
        for (int r = 0; r < L; ++r) {
          const Real db = dbias[static_cast<size_t>(r)];
          if (db == Real(0)) continue;
          const BamBiasGrad bg = bam_bias_grad(-r, theta);
          dmu += db * static_cast<Real>(bg.d_mu);
          dal += db * static_cast<Real>(bg.d_alpha);
          dbe += db * static_cast<Real>(bg.d_beta);
        }
        gw.theta_mu[static_cast<size_t>(h)] += dmu;
        gw.theta_alpha[static_cast<size_t>(h)] += dal;
        gw.theta_beta[static_cast<size_t>(h)] += dbe;
      }
    }

    // projections and the attention-branch norm
    for (int i = 0; i < L; ++i) {
      Real* dqi = dq.data() + static_cast<size_t>(i) * d;
      Real* dki = dk.data() + static_cast<size_t>(i) * d;
      if (cfg.pe_kind == PeKind::rope) {
        for (int h = 0; h < nh; ++h) {
          detail::rope_rotate_back(dqi + static_cast<size_t>(h) * hd, hd, i);
          detail::rope_rotate_back(dki + static_cast<size_t>(h) * hd, hd, i);
        }
      }
      const Real* an = gl.a_norm.data() + static_cast<size_t>(i) * d;
      const Real* dvi = dv.data() + static_cast<size_t>(i) * d;
      detail::outer_acc(an, dqi, d, d, gw.wq.data());
      detail::outer_acc(an, dki, d, d, gw.wk.data());
      detail::outer_acc(an, dvi, d, d, gw.wv.data());
      std::fill(da.begin(), da.end(), Real(0));
      detail::vec_mat_back(dqi, lw.wq.data(), d, d, da.data());
      detail::vec_mat_back(dki, lw.wk.data(), d, d, da.data());
      detail::vec_mat_back(dvi, lw.wv.data(), d, d, da.data());
      detail::rmsnorm_backward(gl.x_in.data() + static_cast<size_t>(i) * d,
                               gl.a_inv[static_cast<size_t>(i)], lw.attn_norm_g.data(),
                               da.data(), d, dx.data() + static_cast<size_t>(i) * d,
                               gw.attn_norm_g.data());
    }
  }

  // embedding
  for (int i = 0; i < L; ++i) {
    const int32_t tok = seq.tokens[static_cast<size_t>(i)];
    Real* row = grads.tok_embed.data() + static_cast<size_t>(tok) * d;
    const Real* dxi = dx.data() + static_cast<size_t>(i) * d;
    for (int t = 0; t < d; ++t) row[t] += dxi[t];
  }
}

template <class Real>
double forward_backward(const Checkpoint<Real>& ck, const TokenSequence& seq,
                        TrainGraph<Real>& g, Weights<Real>& grads) {
  const double l = forward_graph(ck, seq, g);
  backward_graph(ck, seq, g, grads);
  return l;
}

// Attention weights of one head as a dense row-stochastic L x L matrix
// (zeros outside each row's document window).
template <class Real>
std::vector<double> dump_attention(const Checkpoint<Real>& ck, const TokenSequence& seq,
                                   int layer, int head) {
  const ModelConfig& cfg = ck.config;
  if (layer < 0 || layer >= cfg.n_layers) throw std::invalid_argument("dump_attention: bad layer");
  if (head < 0 || head >= cfg.n_heads) throw std::invalid_argument("dump_attention: bad head");
  TrainGraph<Real> g;
  // forward_graph needs length >= 2; a single token attends only to itself
  if (seq.length() == 1) return {1.0};
  forward_graph(ck, seq, g);
  const int L = seq.length();
  std::vector<double> out(static_cast<size_t>(L) * L);
  const Real* src =
      g.layers[static_cast<size_t>(layer)].probs.data() + static_cast<size_t>(head) * L * L;
  for (size_t k = 0; k < out.size(); ++k) out[k] = static_cast<double>(src[k]);
  return out;
}

// ---------------------------- optimizer ----------------------------

struct TrainSettings {
  int64_t steps = 20000;
  double peak_lr = 3e-3;
  double min_lr_frac = 0.1;   // cosine decay floor as a fraction of peak
  double weight_decay = 0.1;  // decoupled, matrices only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;     // global norm; <= 0 disables
  int batch_seqs = 1;
  int64_t log_every = 500;
};

inline double cosine_lr(int64_t step, int64_t total, double peak, double min_frac) {
  const double min_lr = peak * min_frac;
  if (total <= 1) return min_lr;
  const double t = static_cast<double>(step - 1) / static_cast<double>(total - 1);
  return min_lr + 0.5 * (peak - min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
}

namespace detail {

// Rectified Adam update with decoupled weight decay; scalar factors are
// evaluated in double, elementwise state in Real.
template <class Real>
void radam_step(Weights<Real>& w, Weights<Real>& g, Weights<Real>& m, Weights<Real>& v,
                int64_t t, double lr, const TrainSettings& s) {
  const double b1 = s.beta1, b2 = s.beta2;
  const double b1t = std::pow(b1, static_cast<double>(t));
  const double b2t = std::pow(b2, static_cast<double>(t));
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
  const bool rectified = rho_t > 5.0;
  double rect = 0.0;
  if (rectified)
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  const double inv_bias1 = 1.0 / (1.0 - b1t);
  const double inv_bias2 = 1.0 / (1.0 - b2t);

  std::vector<std::vector<Real>*> gs, ms, vs;
  g.visit([&](const std::string&, std::vector<Real>& vec, ParamTraits) { gs.push_back(&vec); });
  m.visit([&](const std::string&, std::vector<Real>& vec, ParamTraits) { ms.push_back(&vec); });
  v.visit([&](const std::string&, std::vector<Real>& vec, ParamTraits) { vs.push_back(&vec); });
  size_t idx = 0;
  w.visit([&](const std::string&, std::vector<Real>& wv, ParamTraits traits) {
    std::vector<Real>& gv = *gs[idx];
    std::vector<Real>& mv = *ms[idx];
    std::vector<Real>& vv = *vs[idx];
    ++idx;
    if (!traits.trainable) return;
    for (size_t k = 0; k < wv.size(); ++k) {
      const double grad = static_cast<double>(gv[k]);
      double mk = b1 * static_cast<double>(mv[k]) + (1.0 - b1) * grad;
      double vk = b2 * static_cast<double>(vv[k]) + (1.0 - b2) * grad * grad;
      mv[k] = static_cast<Real>(mk);
      vv[k] = static_cast<Real>(vk);
      double wk = static_cast<double>(wv[k]);
      if (traits.decay && s.weight_decay > 0) wk -= lr * s.weight_decay * wk;
      const double mhat = mk * inv_bias1;
      if (rectified) {
        const double denom = std::sqrt(vk * inv_bias2) + s.adam_eps;
        wk -= lr * rect * mhat / denom;
      } else {
        wk -= lr * mhat;
      }
      wv[k] = static_cast<Real>(wk);
    }
  });
}

}  // namespace detail

// Trains a model (or continues from `resume`) on sequences pulled from the
// corpus stream. The corpus callable must be deterministic given its own
// seeding; training is single-threaded and bitwise reproducible.
template <class Real>
Checkpoint<Real> train(const ModelConfig& cfg, const std::function<TokenSequence()>& corpus,
                       const TrainSettings& settings, std::ostream* log = nullptr,
                       const Checkpoint<Real>* resume = nullptr) {
  if (settings.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (!corpus) throw std::invalid_argument("train: empty corpus");
  cfg.validate();

  Checkpoint<Real> ck;
  if (resume) {
    if (resume->config.d_model != cfg.d_model || resume->config.n_heads != cfg.n_heads ||
        resume->config.n_layers != cfg.n_layers || resume->config.vocab_size != cfg.vocab_size ||
        resume->config.ff_multiplier != cfg.ff_multiplier ||
        resume->config.pe_kind != cfg.pe_kind || resume->config.use_ssmax != cfg.use_ssmax)
      throw std::invalid_argument("train: resume checkpoint is architecturally incompatible");
    ck = *resume;
    ck.config = cfg;
    ck.weights.cfg = cfg;
  } else {
    ck = make_checkpoint<Real>(cfg);
  }

  Weights<Real> grads, m, v;
  grads.allocate(cfg);
  m.allocate(cfg);
  v.allocate(cfg);
  TrainGraph<Real> graph;

  for (int64_t step = 1; step <= settings.steps; ++step) {
    grads.zero_all();
    double loss_acc = 0.0;
    for (int b = 0; b < settings.batch_seqs; ++b)
      loss_acc += forward_backward(ck, corpus(), graph, grads);
    loss_acc /= settings.batch_seqs;
    if (settings.batch_seqs > 1) {
      const Real scale = Real(1) / static_cast<Real>(settings.batch_seqs);
      grads.visit([&](const std::string&, std::vector<Real>& gv, ParamTraits) {
        for (Real& x : gv) x *= scale;
      });
    }

    if (settings.grad_clip > 0) {
      double norm_sq = 0.0;
      grads.visit([&](const std::string&, std::vector<Real>& gv, ParamTraits t) {
        if (!t.trainable) return;
        for (Real x : gv) norm_sq += static_cast<double>(x) * static_cast<double>(x);
      });
      const double norm = std::sqrt(norm_sq);
      if (norm > settings.grad_clip) {
        const Real scale = static_cast<Real>(settings.grad_clip / norm);
        grads.visit([&](const std::string&, std::vector<Real>& gv, ParamTraits) {
          for (Real& x : gv) x *= scale;
        });
      }
    }

    const double lr = cosine_lr(step, settings.steps, settings.peak_lr, settings.min_lr_frac);
    detail::radam_step(ck.weights, grads, m, v, step, lr, settings);
    ++ck.step;

    if (log && (step % settings.log_every == 0 || step == 1 || step == settings.steps)) {
      log->precision(6);
      (*log) << "step=" << ck.step << " loss=" << loss_acc << " lr=" << lr << "\n";
      log->flush();
    }
  }
  return ck;
}

// ---------------------------- gradient check ----------------------------

// Maximum relative error between the analytic gradients and central
// differences over a probe set that always includes every theta and every
// ssmax scale plus `n_random` randomly chosen coordinates. 64-bit only.
inline double grad_check(const ModelConfig& config, uint64_t seed, int n_random = 200,
                         double h = 1e-5) {
  ModelConfig cfg = config;
  cfg.seed = seed;
  cfg.validate();
  if (cfg.n_layers > 2 || cfg.d_model > 16 || cfg.train_context > 8)
    throw std::invalid_argument("grad_check: use a tiny config (<=2 layers, d<=16, len<=8)");

  Checkpoint<double> ck = make_checkpoint<double>(cfg);
  Rng rng(split_seed(seed, 0x6AD));
  // spread the thetas over both shape regimes so their gradients are generic
  if (cfg.pe_kind == PeKind::bam) {
    for (auto& l : ck.weights.layers) {
      for (double& x : l.theta_beta) x = rng.uniform(-0.6, 1.2);
      for (double& x : l.theta_alpha) x = rng.uniform(-0.5, 0.5);
      for (double& x : l.theta_mu) x = rng.uniform(-0.3, 0.3);
    }
  }
  if (cfg.use_ssmax)
    for (auto& l : ck.weights.layers)
      for (double& x : l.ssmax_s) x = rng.uniform(0.7, 1.3);

  TokenSequence seq;
  const int L = cfg.train_context;
  for (int i = 0; i < L; ++i)
    seq.tokens.push_back(rng.range_i32(0, cfg.vocab_size));
  if (L >= 6) seq.doc_starts.push_back(L - 3);  // exercise the document mask

  Weights<double> grads;
  grads.allocate(cfg);
  TrainGraph<double> g;
  const double base_loss = forward_backward(ck, seq, g, grads);
  if (!std::isfinite(base_loss)) throw std::runtime_error("grad_check: non-finite loss");

  struct Tensor {
    std::string name;
    std::vector<double>* w;
    std::vector<double>* grad;
  };
  std::vector<Tensor> tensors;
  {
    std::vector<std::vector<double>*> gs;
    grads.visit(
        [&](const std::string&, std::vector<double>& vec, ParamTraits) { gs.push_back(&vec); });
    size_t idx = 0;
    ck.weights.visit([&](const std::string& name, std::vector<double>& vec, ParamTraits t) {
      if (t.trainable) tensors.push_back({name, &vec, gs[idx]});
      ++idx;
    });
  }
  struct Probe {
    std::vector<double>* w;
    std::vector<double>* grad;
    size_t index;
  };
  std::vector<Probe> probes;
  size_t total = 0;
  for (const Tensor& t : tensors) {
    total += t.w->size();
    // every theta and every ssmax scale is always probed
    if (t.name.find("theta_") != std::string::npos || t.name.find("ssmax_s") != std::string::npos)
      for (size_t k = 0; k < t.w->size(); ++k) probes.push_back({t.w, t.grad, k});
  }
  for (int r = 0; r < n_random; ++r) {
    const size_t pick = rng.below(total);
    size_t acc = 0;
    for (const Tensor& t : tensors) {
      if (pick < acc + t.w->size()) {
        probes.push_back({t.w, t.grad, pick - acc});
        break;
      }
      acc += t.w->size();
    }
  }

  double max_rel = 0.0;
  for (const Probe& p : probes) {
    double& wref = (*p.w)[p.index];
    const double orig = wref;
    wref = orig + h;
    const double fp = forward_graph(ck, seq, g);
    wref = orig - h;
    const double fm = forward_graph(ck, seq, g);
    wref = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double analytic = (*p.grad)[p.index];
    const double rel = std::abs(analytic - fd) / std::max(1e-8, std::abs(analytic) + std::abs(fd));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace bam
