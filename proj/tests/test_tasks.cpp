#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "bam/tasks.hpp"
#include "bam/train.hpp"

using namespace bam;

namespace {

ModelConfig desk_ish(uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = 64;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.n_layers = 2;
  cfg.train_context = 32;
  cfg.pe_kind = PeKind::bam;
  cfg.use_ssmax = true;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("gen_passkey layout and depth placement") {
  const VocabLayout layout = VocabLayout::desk();
  const std::array<int32_t, 5> key{1, 2, 3, 4, 5};
  const int L = 64;
  const int tp = static_cast<int>(layout.task_prompt.size());
  const int ap = static_cast<int>(layout.answer_prompt.size());
  const int filler_area = L - tp - ap - 5 - 6;

  for (int k = 0; k <= 19; ++k) {
    const PasskeySample s = gen_passkey(L, k, key, layout, 99);
    CHECK(s.total_length == L);
    CHECK(s.tokens.length() == L);
    CHECK(s.answer_offset == L - 5);

    // key span starts one past the cue at the depth offset
    const int expect_begin = tp + (k * filler_area) / 19 + 1;
    CHECK(std::abs(s.key_begin - expect_begin) <= 1);
    CHECK(s.key_end - s.key_begin == 5);

    // key never overlaps the prompts
    CHECK(s.key_begin > tp);
    CHECK(s.key_end <= L - ap - 5);

    // cue right before the key, digits in place, answers echo the key
    CHECK(s.tokens.tokens[static_cast<size_t>(s.key_begin - 1)] == layout.cue);
    for (int i = 0; i < 5; ++i) {
      CHECK(s.tokens.tokens[static_cast<size_t>(s.key_begin + i)] == key[static_cast<size_t>(i)]);
      CHECK(s.tokens.tokens[static_cast<size_t>(L - 5 + i)] == key[static_cast<size_t>(i)]);
    }
  }

  // depth 0: key region at the start of the filler area
  CHECK(gen_passkey(L, 0, key, layout, 1).key_begin == tp + 1);
  // depth 19: key region adjacent to the answer prompt
  CHECK(gen_passkey(L, 19, key, layout, 1).key_end == L - ap - 5);
}

TEST_CASE("gen_passkey keeps digits out of the filler") {
  const VocabLayout layout = VocabLayout::desk();
  const std::array<int32_t, 5> key{9, 8, 7, 6, 5};
  const PasskeySample s = gen_passkey(96, 7, key, layout, 1234);
  for (int i = 0; i < s.tokens.length(); ++i) {
    const int32_t t = s.tokens.tokens[static_cast<size_t>(i)];
    const bool in_key = i >= s.key_begin && i < s.key_end;
    const bool in_answers = i >= s.answer_offset;
    if (!in_key && !in_answers) CHECK(t >= 10);  // digit tokens only in the key and answers
  }
}

TEST_CASE("gen_passkey errors") {
  const VocabLayout layout = VocabLayout::desk();
  const std::array<int32_t, 5> key{0, 0, 0, 0, 0};
  CHECK_THROWS_WITH(gen_passkey(10, 0, key, layout, 1),
                    "gen_passkey: L too small; minimum length is 17");
  CHECK_THROWS_AS(gen_passkey(64, 20, key, layout, 1), std::invalid_argument);
  CHECK_THROWS_AS(gen_passkey(64, 0, {0, 0, 0, 0, 11}, layout, 1), std::invalid_argument);
}

TEST_CASE("generators are pure functions of their seeds") {
  const VocabLayout layout = VocabLayout::desk();
  const std::array<int32_t, 5> key{3, 1, 4, 1, 5};
  const PasskeySample a = gen_passkey(64, 9, key, layout, 42);
  const PasskeySample b = gen_passkey(64, 9, key, layout, 42);
  CHECK(a.tokens.tokens == b.tokens.tokens);

  auto s1 = gen_synthetic_corpus(CorpusKind::markov, 64, 48, 7);
  auto s2 = gen_synthetic_corpus(CorpusKind::markov, 64, 48, 7);
  for (int t = 0; t < 5; ++t) {
    const TokenSequence x = s1(), y = s2();
    CHECK(x.tokens == y.tokens);
    CHECK(x.doc_starts == y.doc_starts);
  }
}

TEST_CASE("the probe reproduces the 841-token inspection layout") {
  const VocabLayout layout = VocabLayout::desk();
  const std::array<int32_t, 5> key{2, 0, 2, 4, 6};
  const PasskeySample probe = gen_probe(ProbeRegions{}, key, layout, 5);
  CHECK(probe.total_length == 841);  // 32 + 25 + 768 + 16
  CHECK(probe.answer_offset == 841);
  CHECK(probe.key_begin == 32);
  CHECK(probe.key_end == 37);
  CHECK(probe.tokens.tokens[31] == layout.cue);
  CHECK(probe.tokens.tokens[840] == layout.cue);
  for (int i = 0; i < 5; ++i)
    CHECK(probe.tokens.tokens[static_cast<size_t>(32 + i)] == key[static_cast<size_t>(i)]);
}

TEST_CASE("markov corpus entropy rate stays below ln(vocab)") {
  const int vocab = 64;
  const MarkovChain chain(vocab, 11, 4);
  // analytic bound per context: at most ln(branching)
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) CHECK(chain.conditional_entropy(a, b) <= std::log(4.0) + 1e-12);

  // empirical entropy rate of a sampled stream
  auto stream = markov_stream(vocab, 4096, 11, 99, 0.0);
  const TokenSequence seq = stream();
  double nll = 0.0;
  int n = 0;
  for (int i = 2; i < seq.length(); ++i) {
    const double p = chain.prob(seq.tokens[static_cast<size_t>(i - 2)],
                                seq.tokens[static_cast<size_t>(i - 1)],
                                seq.tokens[static_cast<size_t>(i)]);
    REQUIRE(p > 0.0);
    nll -= std::log(p);
    ++n;
  }
  const double rate = nll / n;
  CHECK(rate < std::log(static_cast<double>(vocab)) * 0.5);
  CHECK(rate <= std::log(4.0) + 0.05);
}

TEST_CASE("markov stream packs documents with boundaries") {
  auto stream = markov_stream(32, 64, 3, 4, 1.0);
  const TokenSequence s = stream();
  REQUIRE(s.doc_starts.size() == 1);
  CHECK(s.doc_starts[0] > 0);
  CHECK(s.doc_starts[0] < 64);
  CHECK(s.length() == 64);
}

TEST_CASE("copy stream repeats a motif at the construction distance") {
  CopyParams cp;
  cp.motif_len = 6;
  cp.d_motif = 24;
  auto stream = copy_stream(64, 48, 17, cp);
  for (int t = 0; t < 10; ++t) {
    const TokenSequence s = stream();
    bool found = false;
    for (int p1 = 0; p1 + cp.d_motif + cp.motif_len <= s.length() && !found; ++p1) {
      bool match = true;
      for (int k = 0; k < cp.motif_len; ++k)
        if (s.tokens[static_cast<size_t>(p1 + k)] !=
            s.tokens[static_cast<size_t>(p1 + cp.d_motif + k)])
          match = false;
      found = match;
    }
    CHECK(found);
  }
  CHECK_THROWS_AS(copy_stream(64, 16, 1, CopyParams{8, 12, 0, 0}), std::invalid_argument);
}

TEST_CASE("curriculum mixes passkey and copy sequences deterministically") {
  const VocabLayout layout = VocabLayout::desk();
  auto a = make_curriculum(layout, 64, 0.5, 9);
  auto b = make_curriculum(layout, 64, 0.5, 9);
  int with_digits = 0;
  for (int t = 0; t < 40; ++t) {
    const TokenSequence x = a(), y = b();
    CHECK(x.tokens == y.tokens);
    CHECK(x.length() >= 32);  // passkey lengths vary; copy fills the context
    CHECK(x.length() <= 64);
    bool digits = false;
    for (int32_t tok : x.tokens)
      if (tok < 10) digits = true;
    if (digits) ++with_digits;
  }
  CHECK(with_digits > 8);
  CHECK(with_digits < 32);
}

TEST_CASE("eval grid means are recomputable from the matrix") {
  // a decoder that succeeds only at depth 19
  auto decode = [](const PasskeySample& s) {
    std::array<int32_t, 5> out{-1, -1, -1, -1, -1};
    if (s.depth_index == 19) out = s.key_digits;
    return out;
  };
  const EvalGrid grid = eval_passkey_with(decode, {32, 64}, 20, 3, 5);
  REQUIRE(grid.lengths.size() == 2);
  REQUIRE(grid.depths.size() == 20);
  for (size_t li = 0; li < grid.lengths.size(); ++li) {
    double m = 0.0;
    for (size_t di = 0; di < grid.depths.size(); ++di) m += grid.at(li, di);
    CHECK(std::abs(grid.length_mean[li] - m / grid.depths.size()) < 1e-12);
  }
  for (size_t di = 0; di < grid.depths.size(); ++di) {
    double m = 0.0;
    for (size_t li = 0; li < grid.lengths.size(); ++li) m += grid.at(li, di);
    CHECK(std::abs(grid.depth_mean[di] - m / grid.lengths.size()) < 1e-12);
  }

  const std::string tsv = grid.to_tsv();
  CHECK(tsv.find("length\tdepth\tseeds\taccuracy") != std::string::npos);
  CHECK(tsv.find("summary_length") != std::string::npos);
}

TEST_CASE("an echo-the-last-digits decoder is perfect at depth 19") {
  auto echo = [](const PasskeySample& s) {
    std::array<int32_t, 5> got{-1, -1, -1, -1, -1};
    std::vector<int32_t> digits;
    for (int i = 0; i < s.answer_offset; ++i)
      if (s.tokens.tokens[static_cast<size_t>(i)] < 10)
        digits.push_back(s.tokens.tokens[static_cast<size_t>(i)]);
    if (digits.size() >= 5)
      for (int k = 0; k < 5; ++k) got[static_cast<size_t>(k)] = digits[digits.size() - 5 + k];
    return got;
  };
  const EvalGrid grid = eval_passkey_with(echo, {32, 48}, 20, 4, 11);
  for (size_t li = 0; li < grid.lengths.size(); ++li)
    CHECK(grid.at(li, 19) == 1.0);
}

TEST_CASE("an untrained model scores near zero on the passkey task") {
  const ModelConfig cfg = desk_ish(2);
  const Checkpoint<float> ck = make_checkpoint<float>(cfg);
  const EvalGrid grid = eval_passkey(ck, {32}, 4, 2, 3);
  CHECK(grid.length_mean[0] <= 0.05);  // chance is 1e-5 per sample
}

TEST_CASE("eval_passkey rejects a vocabulary mismatch") {
  ModelConfig cfg = desk_ish(2);
  cfg.vocab_size = 32;
  const Checkpoint<float> ck = make_checkpoint<float>(cfg);
  CHECK_THROWS_AS(eval_passkey(ck, {32}, 4, 1, 3), std::invalid_argument);
}

TEST_CASE("eval_perplexity anchors at the train length and validates the corpus") {
  ModelConfig cfg = desk_ish(4);
  cfg.vocab_size = 16;
  cfg.train_context = 16;
  TrainSettings ts;
  ts.steps = 300;
  Rng data_rng(10);
  auto corpus = [&]() {
    TokenSequence s;
    int32_t t = data_rng.range_i32(0, 16);
    for (int i = 0; i < 16; ++i) {
      s.tokens.push_back(t);
      t = (t + 1) % 16;
    }
    return s;
  };
  const Checkpoint<float> ck = train<float>(cfg, corpus, ts);

  std::vector<TokenSequence> eval_seqs;
  for (int k = 0; k < 4; ++k) {
    TokenSequence s;
    int32_t t = static_cast<int32_t>(k);
    for (int i = 0; i < 32; ++i) {
      s.tokens.push_back(t);
      t = (t + 1) % 16;
    }
    eval_seqs.push_back(s);
  }
  const auto curve = eval_perplexity(ck, eval_seqs, {16, 32});
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].first == 16);
  CHECK(curve[0].second < 2.0);  // a deterministic cycle drives perplexity toward 1

  CHECK_THROWS_AS(eval_perplexity(ck, eval_seqs, {64}), std::invalid_argument);
  CHECK_THROWS_AS(eval_perplexity(ck, {}, {16}), std::invalid_argument);
}

TEST_CASE("theta scatter export") {
  const ModelConfig cfg = desk_ish(5);
  const Checkpoint<float> ck = make_checkpoint<float>(cfg);
  const std::vector<ThetaRecord> recs = export_theta_scatter(ck);
  CHECK(recs.size() == static_cast<size_t>(cfg.n_heads * cfg.n_layers));
  for (const ThetaRecord& r : recs) {
    CHECK(r.theta_beta == 0.0);  // uniform-prior initialization
    CHECK(r.theta_alpha == 0.0);
  }

  ModelConfig rope = desk_ish(6);
  rope.pe_kind = PeKind::rope;
  const Checkpoint<float> other = make_checkpoint<float>(rope);
  CHECK_THROWS_AS(export_theta_scatter(other), std::invalid_argument);
}
