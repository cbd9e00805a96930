#pragma once
// Synthetic corpora, the passkey-retrieval protocol, perplexity-vs-length
// evaluation, and the depth x length accuracy grid. All generators are pure
// functions of their seeds.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bam/model.hpp"
#include "bam/rng.hpp"

namespace bam {

// ---------------------------- markov chain ----------------------------

// Order-2 chain with a seeded sparse transition table; each context allows
// `branching` next tokens, so the entropy rate stays well below ln(vocab).
class MarkovChain {
 public:
  MarkovChain(int vocab, uint64_t table_seed, int branching = 4)
      : vocab_(vocab), branching_(branching) {
    if (vocab < 2 || branching < 1) throw std::invalid_argument("MarkovChain: bad parameters");
    Rng rng(split_seed(table_seed, 0x3a11));
    const size_t rows = static_cast<size_t>(vocab) * vocab;
    choices_.resize(rows * branching_);
    cum_.resize(rows * branching_);
    for (size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      std::vector<double> wgt(static_cast<size_t>(branching_));
      for (int b = 0; b < branching_; ++b) {
        choices_[r * branching_ + b] = static_cast<int32_t>(rng.below(vocab));
        wgt[static_cast<size_t>(b)] = rng.uniform(0.5, 1.5);
        total += wgt[static_cast<size_t>(b)];
      }
      double acc = 0.0;
      for (int b = 0; b < branching_; ++b) {
        acc += wgt[static_cast<size_t>(b)] / total;
        cum_[r * branching_ + b] = acc;
      }
    }
  }

  int32_t sample(int32_t a, int32_t b, Rng& rng) const {
    const size_t r = row(a, b);
    const double u = rng.uniform01();
    for (int k = 0; k < branching_; ++k)
      if (u <= cum_[r * branching_ + k]) return choices_[r * branching_ + k];
    return choices_[r * branching_ + branching_ - 1];
  }

  double prob(int32_t a, int32_t b, int32_t next) const {
    const size_t r = row(a, b);
    double p = 0.0, prev = 0.0;
    for (int k = 0; k < branching_; ++k) {
      const double w = cum_[r * branching_ + k] - prev;
      prev = cum_[r * branching_ + k];
      if (choices_[r * branching_ + k] == next) p += w;
    }
    return p;
  }

  double conditional_entropy(int32_t a, int32_t b) const {
    const size_t r = row(a, b);
    double h = 0.0;
    // merge duplicate choices before summing
    for (int k = 0; k < branching_; ++k) {
      const int32_t c = choices_[r * branching_ + k];
      bool seen = false;
      for (int j = 0; j < k; ++j)
        if (choices_[r * branching_ + j] == c) seen = true;
      if (seen) continue;
      const double p = prob(a, b, c);
      if (p > 0) h -= p * std::log(p);
    }
    return h;
  }

  int vocab() const { return vocab_; }

 private:
  size_t row(int32_t a, int32_t b) const {
    return static_cast<size_t>(a) * vocab_ + static_cast<size_t>(b);
  }
  int vocab_, branching_;
  std::vector<int32_t> choices_;
  std::vector<double> cum_;
};

// ---------------------------- vocabulary layout ----------------------------

// Reserved-token map for the passkey task: ten digit tokens, prompt tokens,
// a cue token standing in for the retrieval phrase, and a filler alphabet
// that never collides with any of them. The cue appears exactly twice in a
// sample: immediately before the key digits and at the end of the answer
// prompt, so "what followed the cue" identifies the key unambiguously.
struct VocabLayout {
  int vocab_size = 64;
  std::vector<int32_t> task_prompt{10, 11, 12};
  std::vector<int32_t> answer_prompt{14, 15, 13};
  int32_t cue = 13;
  int filler_begin = 16;

  static VocabLayout desk(int vocab = 64) {
    VocabLayout l;
    l.vocab_size = vocab;
    l.validate();
    return l;
  }

  void validate() const {
    if (vocab_size < 16) throw std::invalid_argument("VocabLayout: vocab_size must be >= 16");
    if (filler_begin <= 9 || filler_begin >= vocab_size)
      throw std::invalid_argument("VocabLayout: filler range is empty");
    if (task_prompt.empty() || answer_prompt.empty() || answer_prompt.back() != cue)
      throw std::invalid_argument("VocabLayout: answer prompt must end with the cue token");
    for (int32_t t : task_prompt)
      if (t < 10 || t >= filler_begin || t == cue)
        throw std::invalid_argument("VocabLayout: task prompt must use reserved non-cue tokens");
    for (size_t i = 0; i + 1 < answer_prompt.size(); ++i)
      if (answer_prompt[i] == cue)
        throw std::invalid_argument("VocabLayout: cue may appear only at the answer prompt end");
    for (int32_t t : answer_prompt)
      if (t < 10 || t >= filler_begin)
        throw std::invalid_argument("VocabLayout: prompt tokens must be reserved");
  }

  int32_t random_filler(Rng& rng) const {
    return static_cast<int32_t>(filler_begin + rng.below(static_cast<uint64_t>(vocab_size - filler_begin)));
  }

  int min_passkey_length() const {
    return static_cast<int>(task_prompt.size() + answer_prompt.size()) + 6 + 5;
  }
};

// ---------------------------- passkey samples ----------------------------

struct PasskeySample {
  TokenSequence tokens;
  std::array<int32_t, 5> key_digits{};
  int key_begin = 0, key_end = 0;  // digit span [begin, end)
  int answer_offset = 0;           // index where the first answer token is predicted
  int depth_index = 0;
  int total_length = 0;
};

// Layout: [task prompt][filler with (cue + key) inserted at the depth
// offset][answer prompt][key digits]. The answer digits are the final five
// predicted positions; depth k places the key region floor(k*F/19) tokens
// into the filler area of size F.
inline PasskeySample gen_passkey(int L, int depth_index, const std::array<int32_t, 5>& key,
                                 const VocabLayout& layout, uint64_t seed) {
  layout.validate();
  if (depth_index < 0 || depth_index > 19)
    throw std::invalid_argument("gen_passkey: depth_index must be in [0, 19]");
  for (int32_t d : key)
    if (d < 0 || d > 9) throw std::invalid_argument("gen_passkey: key digits must be in [0, 9]");
  const int tp = static_cast<int>(layout.task_prompt.size());
  const int ap = static_cast<int>(layout.answer_prompt.size());
  const int min_len = layout.min_passkey_length();
  if (L < min_len)
    throw std::invalid_argument("gen_passkey: L too small; minimum length is " +
                                std::to_string(min_len));

  const int filler_area = L - tp - ap - 5 - 6;  // area that holds filler plus the key region
  const int offset = static_cast<int>((static_cast<long long>(depth_index) * filler_area) / 19);

  Rng rng(seed);
  PasskeySample s;
  s.key_digits = key;
  s.depth_index = depth_index;
  s.total_length = L;
  auto& t = s.tokens.tokens;
  t.reserve(static_cast<size_t>(L));
  t.insert(t.end(), layout.task_prompt.begin(), layout.task_prompt.end());
  for (int i = 0; i < offset; ++i) t.push_back(layout.random_filler(rng));
  t.push_back(layout.cue);
  s.key_begin = static_cast<int>(t.size());
  for (int32_t d : key) t.push_back(d);
  s.key_end = static_cast<int>(t.size());
  for (int i = offset; i < filler_area; ++i) t.push_back(layout.random_filler(rng));
  t.insert(t.end(), layout.answer_prompt.begin(), layout.answer_prompt.end());
  s.answer_offset = static_cast<int>(t.size());
  for (int32_t d : key) t.push_back(d);
  if (static_cast<int>(t.size()) != L) throw std::logic_error("gen_passkey: layout mismatch");
  return s;
}

// Attention-inspection probe: task prompt, key region right after it, a long
// filler stretch, then the answer prompt. No answer tokens are included; the
// model is expected to produce them after answer_offset.
struct ProbeRegions {
  int task_prompt_len = 32;
  int key_region_len = 25;
  int filler_len = 768;
  int answer_prompt_len = 16;
};

inline PasskeySample gen_probe(const ProbeRegions& r, const std::array<int32_t, 5>& key,
                               const VocabLayout& layout, uint64_t seed) {
  layout.validate();
  if (r.task_prompt_len < 1 || r.key_region_len < 5 || r.filler_len < 0 ||
      r.answer_prompt_len < 1)
    throw std::invalid_argument("gen_probe: invalid region sizes");
  Rng rng(seed);
  PasskeySample s;
  s.key_digits = key;
  s.depth_index = 0;
  auto& t = s.tokens.tokens;

  auto emit_prompt = [&](const std::vector<int32_t>& pattern, int len) {
    for (int i = 0; i + 1 < len; ++i)
      t.push_back(pattern[static_cast<size_t>(i) % pattern.size()]);
    t.push_back(layout.cue);
  };
  emit_prompt(layout.task_prompt, r.task_prompt_len);
  s.key_begin = static_cast<int>(t.size());
  for (int32_t d : key) t.push_back(d);
  s.key_end = static_cast<int>(t.size());
  for (int i = 5; i < r.key_region_len; ++i) t.push_back(layout.random_filler(rng));
  for (int i = 0; i < r.filler_len; ++i) t.push_back(layout.random_filler(rng));
  emit_prompt(layout.answer_prompt, r.answer_prompt_len);
  s.answer_offset = static_cast<int>(t.size());
  s.total_length = static_cast<int>(t.size());
  return s;
}

// ---------------------------- evaluation grids ----------------------------

struct EvalGrid {
  std::vector<int> lengths;
  std::vector<int> depths;
  std::vector<double> accuracy;     // [lengths x depths]
  std::vector<double> length_mean;  // per length
  std::vector<double> depth_mean;   // per depth
  int seeds_per_cell = 5;

  double at(size_t li, size_t di) const { return accuracy[li * depths.size() + di]; }

  void finalize() {
    length_mean.assign(lengths.size(), 0.0);
    depth_mean.assign(depths.size(), 0.0);
    for (size_t li = 0; li < lengths.size(); ++li)
      for (size_t di = 0; di < depths.size(); ++di) {
        length_mean[li] += at(li, di) / depths.size();
        depth_mean[di] += at(li, di) / lengths.size();
      }
  }

  std::string to_tsv() const {
    std::ostringstream os;
    os << "length\tdepth\tseeds\taccuracy\n";
    os.precision(6);
    for (size_t li = 0; li < lengths.size(); ++li)
      for (size_t di = 0; di < depths.size(); ++di)
        os << lengths[li] << '\t' << depths[di] << '\t' << seeds_per_cell << '\t' << at(li, di)
           << '\n';
    for (size_t li = 0; li < lengths.size(); ++li)
      os << "summary_length\t" << lengths[li] << "\tmean\t" << length_mean[li] << '\n';
    for (size_t di = 0; di < depths.size(); ++di)
      os << "summary_depth\t" << depths[di] << "\tmean\t" << depth_mean[di] << '\n';
    return os.str();
  }
};

// Greedy five-token answer for one sample.
template <class Real>
std::array<int32_t, 5> decode_passkey(const Checkpoint<Real>& ck, const PasskeySample& s) {
  TokenSequence prompt;
  prompt.tokens.assign(s.tokens.tokens.begin(), s.tokens.tokens.begin() + s.answer_offset);
  const TokenSequence out = generate(ck, prompt, 5);
  std::array<int32_t, 5> got{};
  for (int k = 0; k < 5; ++k)
    got[static_cast<size_t>(k)] = out.tokens[static_cast<size_t>(s.answer_offset + k)];
  return got;
}

// Grid driver over an arbitrary decoder; accuracy is exact match over all
// five digits, no partial credit.
inline EvalGrid eval_passkey_with(
    const std::function<std::array<int32_t, 5>(const PasskeySample&)>& decode,
    const std::vector<int>& lengths, int n_depths = 20, int seeds_per_cell = 5,
    uint64_t seed = 20240612, const VocabLayout& layout = VocabLayout::desk()) {
  if (n_depths < 1 || n_depths > 20)
    throw std::invalid_argument("eval_passkey: n_depths must be in [1, 20]");
  EvalGrid grid;
  grid.lengths = lengths;
  grid.seeds_per_cell = seeds_per_cell;
  for (int k = 0; k < n_depths; ++k) grid.depths.push_back(k * 19 / std::max(1, n_depths - 1));
  grid.accuracy.assign(lengths.size() * grid.depths.size(), 0.0);
  for (size_t li = 0; li < lengths.size(); ++li) {
    for (size_t di = 0; di < grid.depths.size(); ++di) {
      int hits = 0;
      for (int c = 0; c < seeds_per_cell; ++c) {
        const uint64_t cell_seed =
            split_seed(seed, (static_cast<uint64_t>(li) << 32) ^
                                 (static_cast<uint64_t>(di) << 16) ^ static_cast<uint64_t>(c));
        Rng krng(cell_seed);
        std::array<int32_t, 5> key{};
        for (auto& d : key) d = static_cast<int32_t>(krng.below(10));
        const PasskeySample sample =
            gen_passkey(lengths[li], grid.depths[di], key, layout, split_seed(cell_seed, 7));
        if (decode(sample) == key) ++hits;
      }
      grid.accuracy[li * grid.depths.size() + di] =
          static_cast<double>(hits) / seeds_per_cell;
    }
  }
  grid.finalize();
  return grid;
}

template <class Real>
EvalGrid eval_passkey(const Checkpoint<Real>& ck, const std::vector<int>& lengths,
                      int n_depths = 20, int seeds_per_cell = 5, uint64_t seed = 20240612,
                      const VocabLayout& layout = VocabLayout::desk()) {
  if (ck.config.vocab_size != layout.vocab_size)
    throw std::invalid_argument("eval_passkey: checkpoint/layout vocabulary mismatch");
  return eval_passkey_with(
      [&](const PasskeySample& s) { return decode_passkey(ck, s); }, lengths, n_depths,
      seeds_per_cell, seed, layout);
}

// Mean perplexity (exp of per-sequence mean NLL) at each requested length.
template <class Real>
std::vector<std::pair<int, double>> eval_perplexity(const Checkpoint<Real>& ck,
                                                    const std::vector<TokenSequence>& corpus,
                                                    const std::vector<int>& lengths) {
  if (corpus.empty()) throw std::invalid_argument("eval_perplexity: empty corpus");
  int max_len = 0;
  for (int l : lengths) max_len = std::max(max_len, l);
  for (const TokenSequence& s : corpus)
    if (s.length() < max_len)
      throw std::invalid_argument("eval_perplexity: corpus too short for length " +
                                  std::to_string(max_len));
  std::vector<std::pair<int, double>> out;
  for (int l : lengths) {
    double mean = 0.0;
    for (const TokenSequence& s : corpus) mean += std::exp(loss(ck, s.truncated(l)));
    out.emplace_back(l, mean / corpus.size());
  }
  return out;
}

// ---------------------------- synthetic corpora ----------------------------

enum class CorpusKind { markov, copy_structured };

// Order-2 chain with a seeded sparse transition table; each context allows
// `branching` next tokens, so the entropy rate stays well below ln(vocab).
class MarkovChain {
 public:
  MarkovChain(int vocab, uint64_t table_seed, int branching = 4)
      : vocab_(vocab), branching_(branching) {
    if (vocab < 2 || branching < 1) throw std::invalid_argument("MarkovChain: bad parameters");
    Rng rng(split_seed(table_seed, 0x3a11));
    const size_t rows = static_cast<size_t>(vocab) * vocab;
    choices_.resize(rows * branching_);
    cum_.resize(rows * branching_);
    for (size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      std::vector<double> wgt(static_cast<size_t>(branching_));
      for (int b = 0; b < branching_; ++b) {
        choices_[r * branching_ + b] = static_cast<int32_t>(rng.below(vocab));
        wgt[static_cast<size_t>(b)] = rng.uniform(0.5, 1.5);
        total += wgt[static_cast<size_t>(b)];
      }
      double acc = 0.0;
      for (int b = 0; b < branching_; ++b) {
        acc += wgt[static_cast<size_t>(b)] / total;
        cum_[r * branching_ + b] = acc;
      }
    }
  }

  int32_t sample(int32_t a, int32_t b, Rng& rng) const {
    const size_t r = row(a, b);
    const double u = rng.uniform01();
    for (int k = 0; k < branching_; ++k)
      if (u <= cum_[r * branching_ + k]) return choices_[r * branching_ + k];
    return choices_[r * branching_ + branching_ - 1];
  }

  double prob(int32_t a, int32_t b, int32_t next) const {
    const size_t r = row(a, b);
    double p = 0.0, prev = 0.0;
    for (int k = 0; k < branching_; ++k) {
      const double w = cum_[r * branching_ + k] - prev;
      prev = cum_[r * branching_ + k];
      if (choices_[r * branching_ + k] == next) p += w;
    }
    return p;
  }

  double conditional_entropy(int32_t a, int32_t b) const {
    const size_t r = row(a, b);
    double h = 0.0;
    // merge duplicate choices before summing
    for (int k = 0; k < branching_; ++k) {
      const int32_t c = choices_[r * branching_ + k];
      bool seen = false;
      for (int j = 0; j < k; ++j)
        if (choices_[r * branching_ + j] == c) seen = true;
      if (seen) continue;
      const double p = prob(a, b, c);
      if (p > 0) h -= p * std::log(p);
    }
    return h;
  }

  int vocab() const { return vocab_; }

 private:
  size_t row(int32_t a, int32_t b) const {
    return static_cast<size_t>(a) * vocab_ + static_cast<size_t>(b);
  }
  int vocab_, branching_;
  std::vector<int32_t> choices_;
  std::vector<double> cum_;
};

// Stream of markov sequences sharing one transition table. pack_probability
// controls how often a sequence is split into two documents to exercise the
// document-boundary mask.
inline std::function<TokenSequence()> markov_stream(int vocab, int length, uint64_t table_seed,
                                                    uint64_t stream_seed,
                                                    double pack_probability = 0.0,
                                                    int branching = 4) {
  auto chain = std::make_shared<MarkovChain>(vocab, table_seed, branching);
  auto rng = std::make_shared<Rng>(split_seed(stream_seed, 0x5eed));
  return [chain, rng, vocab, length, pack_probability]() {
    TokenSequence s;
    const bool pack = rng->bernoulli(pack_probability) && length >= 8;
    const int cut = pack ? static_cast<int>(length / 4 + rng->below(static_cast<uint64_t>(length / 2))) : length;
    auto run = [&](int n) {
      int32_t a = static_cast<int32_t>(rng->below(vocab));
      int32_t b = static_cast<int32_t>(rng->below(vocab));
      for (int i = 0; i < n; ++i) {
        const int32_t c = i == 0 ? a : (i == 1 ? b : chain->sample(a, b, *rng));
        if (i >= 2) {
          a = b;
          b = c;
        }
        s.tokens.push_back(c);
      }
    };
    run(cut);
    if (pack && cut < length) {
      s.doc_starts.push_back(cut);
      run(length - cut);
    }
    return s;
  };
}

struct CopyParams {
  int motif_len = 8;
  int d_motif = 0;      // 0: half the sequence length
  int alphabet_lo = 0;  // motif/filler alphabet [lo, hi); 0,0 means full vocab
  int alphabet_hi = 0;
};

// Random filler with one motif repeated at long range; predicting the second
// occurrence requires attending about d_motif tokens back.
inline std::function<TokenSequence()> copy_stream(int vocab, int length, uint64_t stream_seed,
                                                  CopyParams params = {}) {
  if (params.alphabet_hi == 0) {
    params.alphabet_lo = 0;
    params.alphabet_hi = vocab;
  }
  const int d_motif = params.d_motif == 0 ? length / 2 : params.d_motif;
  if (length < d_motif + params.motif_len || d_motif < params.motif_len)
    throw std::invalid_argument("copy_stream: sequence too short for the motif placement");
  auto rng = std::make_shared<Rng>(split_seed(stream_seed, 0xc0de));
  return [rng, length, d_motif, params]() {
    TokenSequence s;
    auto draw = [&]() {
      return static_cast<int32_t>(
          params.alphabet_lo +
          rng->below(static_cast<uint64_t>(params.alphabet_hi - params.alphabet_lo)));
    };
    s.tokens.resize(static_cast<size_t>(length));
    for (auto& t : s.tokens) t = draw();
    const int slack = length - d_motif - params.motif_len;
    const int p1 = slack > 0 ? static_cast<int>(rng->below(static_cast<uint64_t>(slack) + 1)) : 0;
    const int p2 = p1 + d_motif;
    for (int k = 0; k < params.motif_len; ++k)
      s.tokens[static_cast<size_t>(p2 + k)] = s.tokens[static_cast<size_t>(p1 + k)];
    return s;
  };
}

// Seed-keyed corpus factory; the markov variant packs a quarter of its
// sequences into two documents.
inline std::function<TokenSequence()> gen_synthetic_corpus(CorpusKind kind, int vocab_size,
                                                           int length, uint64_t seed) {
  if (vocab_size < 16) throw std::invalid_argument("gen_synthetic_corpus: vocab_size must be >= 16");
  switch (kind) {
    case CorpusKind::markov:
      return markov_stream(vocab_size, length, split_seed(seed, 1), split_seed(seed, 2), 0.25);
    case CorpusKind::copy_structured:
      return copy_stream(vocab_size, length, split_seed(seed, 3));
  }
  throw std::invalid_argument("gen_synthetic_corpus: unknown kind");
}

// Training mixture for the retrieval experiments: passkey samples at random
// depths and varied lengths interleaved with copy-structured filler drawn
// from the filler alphabet (so digits and prompt tokens appear only in
// passkey samples).
inline std::function<TokenSequence()> make_curriculum(const VocabLayout& layout, int context,
                                                      double p_passkey, uint64_t seed) {
  layout.validate();
  if (context < layout.min_passkey_length())
    throw std::invalid_argument("make_curriculum: context is below the passkey minimum");
  auto rng = std::make_shared<Rng>(split_seed(seed, 0xcc));
  const VocabLayout lay = layout;
  return [rng, lay, context, p_passkey]() {
    if (rng->bernoulli(p_passkey)) {
      std::array<int32_t, 5> key{};
      for (auto& d : key) d = static_cast<int32_t>(rng->below(10));
      const int depth = static_cast<int>(rng->below(20));
      const int min_len = std::min(context, std::max(lay.min_passkey_length(), context / 2));
      const int len =
          min_len + static_cast<int>(rng->below(static_cast<uint64_t>(context - min_len) + 1));
      return gen_passkey(len, depth, key, lay, rng->next_u64()).tokens;
    }
    const int motif = 5 + static_cast<int>(rng->below(5));
    const int max_d = context - motif - 1;
    const int d_motif = motif + 1 + static_cast<int>(rng->below(static_cast<uint64_t>(
                                        std::max(1, max_d - motif))));
    CopyParams cp;
    cp.motif_len = motif;
    cp.d_motif = std::min(d_motif, max_d);
    cp.alphabet_lo = lay.filler_begin;
    cp.alphabet_hi = lay.vocab_size;
    return copy_stream(lay.vocab_size, context, rng->next_u64(), cp)();
  };
}

// ---------------------------- parameter exports ----------------------------

struct ThetaRecord {
  int layer = 0;
  int head = 0;
  double theta_beta = 0.0;
  double theta_alpha = 0.0;
};

template <class Real>
std::vector<ThetaRecord> export_theta_scatter(const Checkpoint<Real>& ck) {
  if (ck.config.pe_kind != PeKind::bam)
    throw std::invalid_argument("export_theta_scatter: checkpoint is not a BAM model");
  std::vector<ThetaRecord> out;
  for (int l = 0; l < ck.config.n_layers; ++l)
    for (int h = 0; h < ck.config.n_heads; ++h) {
      const ThetaParams t = ck.bam_theta(l, h);
      out.push_back({l, h, t.theta_beta, t.theta_alpha});
    }
  return out;
}

}  // namespace bam
