#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "bam/checkpoint_io.hpp"
#include "bam/model.hpp"
#include "bam/train.hpp"

using namespace bam;

namespace {

ModelConfig small_config(uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = 24;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.train_context = 12;
  cfg.pe_kind = PeKind::bam;
  cfg.use_ssmax = true;
  cfg.seed = seed;
  return cfg;
}

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& name) : path("/tmp/bam_test_" + name) {}
  ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("checkpoint round-trip preserves weights, config and step") {
  const ModelConfig cfg = small_config(42);
  Checkpoint<float> ck = make_checkpoint<float>(cfg);
  ck.step = 123;
  ck.weights.layers[0].theta_beta[1] = -0.375f;
  ck.weights.layers[1].theta_alpha[0] = 0.625f;

  TempPath tmp("roundtrip.ckpt");
  save_checkpoint(ck, tmp.path);
  const Checkpoint<float> back = load_checkpoint<float>(tmp.path);

  CHECK(back.step == 123);
  CHECK(back.config.vocab_size == cfg.vocab_size);
  CHECK(back.config.pe_kind == PeKind::bam);
  CHECK(back.config.use_ssmax == cfg.use_ssmax);
  CHECK(back.config.bam_trainable.str() == cfg.bam_trainable.str());
  CHECK(back.config.seed == cfg.seed);

  bool identical = true;
  size_t idx = 0;
  std::vector<const std::vector<float>*> a, b;
  ck.weights.visit(
      [&](const std::string&, const std::vector<float>& v, ParamTraits) { a.push_back(&v); });
  back.weights.visit(
      [&](const std::string&, const std::vector<float>& v, ParamTraits) { b.push_back(&v); });
  REQUIRE(a.size() == b.size());
  for (idx = 0; idx < a.size(); ++idx)
    for (size_t k = 0; k < a[idx]->size(); ++k)
      if ((*a[idx])[k] != (*b[idx])[k]) identical = false;
  CHECK(identical);
  CHECK(back.bam_theta(0, 1).theta_beta == -0.375);
}

TEST_CASE("manifest mirrors theta and ssmax values in decimal") {
  const ModelConfig cfg = small_config(7);
  Checkpoint<float> ck = make_checkpoint<float>(cfg);
  ck.weights.layers[0].theta_beta[0] = 0.25f;
  TempPath tmp("manifest.ckpt");
  save_checkpoint(ck, tmp.path);

  std::ifstream is(tmp.path, std::ios::binary);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(text.rfind("bam-checkpoint v1\n", 0) == 0);
  CHECK(text.find("endian little") != std::string::npos);
  CHECK(text.find("theta layer=0 head=0 mu=0 alpha=0 beta=0.25") != std::string::npos);
  CHECK(text.find("ssmax layer=1 head=1 s=1") != std::string::npos);
  CHECK(text.find("param name=tok_embed count=384 offset=0") != std::string::npos);
}

TEST_CASE("a float checkpoint loads into the double model") {
  const ModelConfig cfg = small_config(9);
  const Checkpoint<float> ck = make_checkpoint<float>(cfg);
  TempPath tmp("cast.ckpt");
  save_checkpoint(ck, tmp.path);
  const Checkpoint<double> wide = load_checkpoint<double>(tmp.path);
  CHECK(wide.weights.tok_embed[5] == static_cast<double>(ck.weights.tok_embed[5]));

  TokenSequence seq;
  for (int i = 0; i < 10; ++i) seq.tokens.push_back(i % cfg.vocab_size);
  CHECK_NOTHROW(loss(wide, seq));
}

TEST_CASE("identical training runs write bitwise-identical checkpoints") {
  const ModelConfig cfg = small_config(1001);
  TrainSettings ts;
  ts.steps = 4;
  auto stream = [&](uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    const ModelConfig c = cfg;
    return [rng, c]() {
      TokenSequence s;
      for (int i = 0; i < c.train_context; ++i)
        s.tokens.push_back(rng->range_i32(0, c.vocab_size));
      return s;
    };
  };
  const Checkpoint<double> a = train<double>(cfg, stream(5), ts);
  const Checkpoint<double> b = train<double>(cfg, stream(5), ts);

  TempPath fa("det_a.ckpt"), fb("det_b.ckpt");
  save_checkpoint(a, fa.path);
  save_checkpoint(b, fb.path);
  std::ifstream ia(fa.path, std::ios::binary), ib(fb.path, std::ios::binary);
  std::string ta((std::istreambuf_iterator<char>(ia)), std::istreambuf_iterator<char>());
  std::string tb((std::istreambuf_iterator<char>(ib)), std::istreambuf_iterator<char>());
  CHECK(ta == tb);
}

TEST_CASE("loader rejects malformed files") {
  TempPath tmp("bad.ckpt");
  {
    std::ofstream os(tmp.path, std::ios::binary);
    os << "not a checkpoint\n";
  }
  CHECK_THROWS_AS(load_checkpoint<float>(tmp.path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint<float>("/tmp/bam_test_does_not_exist.ckpt"),
                  std::runtime_error);

  // truncated payload
  const ModelConfig cfg = small_config(3);
  const Checkpoint<float> ck = make_checkpoint<float>(cfg);
  TempPath full("trunc.ckpt");
  save_checkpoint(ck, full.path);
  {
    std::ifstream is(full.path, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::ofstream os(tmp.path, std::ios::binary);
    os.write(text.data(), static_cast<std::streamsize>(text.size() - 64));
  }
  CHECK_THROWS_AS(load_checkpoint<float>(tmp.path), std::runtime_error);
}
