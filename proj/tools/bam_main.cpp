// Command-line surface for the positional-encoding laboratory: claim
// verification, training, passkey/perplexity evaluation, and data dumps for
// plotting. Exit codes: 0 success, 1 verification failure, 2 configuration
// error, 3 runtime error. Environment variables are never consulted.

#include <CLI11.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "bam/bam.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct CommonOpts {
  uint64_t seed = 0;
  std::string out = "out";
  std::string precision = "f32";
};

// A run either completes its whole file set or leaves the marker behind.
struct RunDir {
  fs::path dir;
  explicit RunDir(const std::string& out) : dir(out) {
    fs::create_directories(dir);
    std::ofstream(dir / "INCOMPLETE") << "run in progress\n";
  }
  void complete() { fs::remove(dir / "INCOMPLETE"); }
  fs::path file(const std::string& name) const { return dir / name; }
};

void write_manifest(const RunDir& run, const std::string& command, const CommonOpts& common,
                    const std::string& resolved) {
  std::ofstream os(run.file("manifest.txt"));
  os << "bam-lab " << bam::kVersion << "\n";
  os << "command " << command << "\n";
  os << "seed " << common.seed << "\n";
  os << "precision " << common.precision << "\n";
  os << "resolved-config-begin\n" << resolved << "resolved-config-end\n";
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    if (comma > pos) out.push_back(s.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

std::vector<int> parse_lengths(const std::string& csv) {
  std::vector<int> out;
  for (const std::string& item : split_csv(csv)) out.push_back(std::stoi(item));
  if (out.empty()) throw std::invalid_argument("empty length list");
  return out;
}

// ---------------------------- verify ----------------------------

int run_verify(const CommonOpts& common, const std::string& claims_csv,
               const std::string& resolved) {
  RunDir run(common.out);
  write_manifest(run, "verify", common, resolved);
  const uint64_t seed = common.seed == 0 ? 20240601 : common.seed;

  std::vector<bam::VerifierReport> reports;
  if (claims_csv == "all") {
    reports = bam::run_all_verifiers(seed);
  } else {
    const std::vector<std::string> valid = bam::valid_claims();
    const std::vector<bam::VerifierReport> all = bam::run_all_verifiers(seed);
    for (const std::string& claim : split_csv(claims_csv)) {
      if (std::find(valid.begin(), valid.end(), claim) == valid.end()) {
        std::string known;
        for (const std::string& v : valid) known += v + " ";
        std::cerr << "unknown claim id '" << claim << "'; valid ids: " << known << "\n";
        return kExitConfigError;
      }
      for (const bam::VerifierReport& r : all)
        if (r.claim_id == claim) reports.push_back(r);
    }
  }

  std::ofstream os(run.file("verify_report.tsv"));
  bam::write_reports_tsv(os, reports);
  bool all_passed = true;
  for (const bam::VerifierReport& r : reports) {
    std::cout << (r.passed ? "PASS" : "FAIL") << " " << r.claim_id
              << " residual=" << r.max_residual << " threshold=" << r.threshold << "\n";
    all_passed = all_passed && r.passed;
  }
  run.complete();
  return all_passed ? kExitOk : kExitVerifyFailed;
}

// ---------------------------- train ----------------------------

struct TrainOpts {
  bam::ModelConfig model;
  bam::TrainSettings settings;
  std::string pe = "bam";
  std::string bam_init = "uniform_prior";
  std::string bam_trainable = "beta,alpha";
  std::string corpus = "curriculum";
  double p_passkey = 0.5;
  int corpus_length = 0;  // 0: train_context
  std::string resume;
  std::string sweep_pe;     // comma list; empty = no sweep
  std::string sweep_ssmax;  // "on,off"
};

std::function<bam::TokenSequence()> make_corpus(const std::string& kind,
                                                const bam::ModelConfig& cfg, int length,
                                                double p_passkey, uint64_t seed) {
  if (kind == "curriculum")
    return bam::make_curriculum(bam::VocabLayout::desk(cfg.vocab_size), length, p_passkey, seed);
  if (kind == "markov")
    return bam::gen_synthetic_corpus(bam::CorpusKind::markov, cfg.vocab_size, length, seed);
  if (kind == "copy")
    return bam::gen_synthetic_corpus(bam::CorpusKind::copy_structured, cfg.vocab_size, length,
                                     seed);
  throw std::invalid_argument("unknown corpus kind: " + kind);
}

template <class Real>
void train_one(const bam::ModelConfig& cfg, const TrainOpts& opts, const RunDir& run,
               const std::string& tag, uint64_t seed) {
  const int corpus_length = opts.corpus_length == 0 ? cfg.train_context : opts.corpus_length;
  auto corpus = make_corpus(opts.corpus, cfg, corpus_length, opts.p_passkey, seed);

  std::ofstream log(run.file("train_log" + tag + ".txt"), std::ios::app);
  bam::Checkpoint<Real> resume_ck;
  const bam::Checkpoint<Real>* resume_ptr = nullptr;
  if (!opts.resume.empty()) {
    resume_ck = bam::load_checkpoint<Real>(opts.resume);
    resume_ptr = &resume_ck;
  }
  const bam::Checkpoint<Real> ck = bam::train<Real>(cfg, corpus, opts.settings, &log, resume_ptr);
  bam::save_checkpoint(ck, run.file("checkpoint" + tag + ".ckpt").string());
  std::cout << "wrote " << run.file("checkpoint" + tag + ".ckpt").string() << " (step " << ck.step
            << ")\n";
}

int run_train(const CommonOpts& common, TrainOpts opts, const std::string& resolved) {
  RunDir run(common.out);
  write_manifest(run, "train", common, resolved);
  opts.model.pe_kind = bam::pe_kind_from_string(opts.pe);
  opts.model.bam_init = bam::bam_init_from_string(opts.bam_init);
  opts.model.bam_trainable = bam::BamTrainable::from_string(opts.bam_trainable);
  opts.model.seed = common.seed;
  opts.model.validate();

  std::vector<std::pair<bam::PeKind, bool>> jobs;
  if (opts.sweep_pe.empty()) {
    jobs.emplace_back(opts.model.pe_kind, opts.model.use_ssmax);
  } else {
    const std::vector<std::string> ssmax_items =
        opts.sweep_ssmax.empty() ? std::vector<std::string>{opts.model.use_ssmax ? "on" : "off"}
                                 : split_csv(opts.sweep_ssmax);
    for (const std::string& pe : split_csv(opts.sweep_pe))
      for (const std::string& sm : ssmax_items) {
        if (sm != "on" && sm != "off")
          throw std::invalid_argument("sweep-ssmax items must be on/off");
        jobs.emplace_back(bam::pe_kind_from_string(pe), sm == "on");
      }
  }

  for (const auto& [pe, ssmax] : jobs) {
    bam::ModelConfig cfg = opts.model;
    cfg.pe_kind = pe;
    cfg.use_ssmax = ssmax;
    const std::string tag =
        jobs.size() == 1 ? "" : "_" + bam::to_string(pe) + (ssmax ? "_ssmax" : "_plain");
    if (common.precision == "f64")
      train_one<double>(cfg, opts, run, tag, common.seed);
    else
      train_one<float>(cfg, opts, run, tag, common.seed);
  }
  run.complete();
  return kExitOk;
}

// ---------------------------- eval ----------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string task = "passkey";
  std::string lengths = "";
  int n_depths = 20;
  int seeds_per_cell = 5;
  std::string corpus = "markov";
  int corpus_count = 8;
};

template <class Real>
int eval_with(const CommonOpts& common, const EvalOpts& opts, RunDir& run) {
  const bam::Checkpoint<Real> ck = bam::load_checkpoint<Real>(opts.checkpoint);
  std::vector<int> lengths;
  if (opts.lengths.empty()) {
    for (int l = ck.config.train_context; l <= 16 * ck.config.train_context; l *= 2)
      lengths.push_back(l);
  } else {
    lengths = parse_lengths(opts.lengths);
  }

  if (opts.task == "passkey") {
    const bam::EvalGrid grid = bam::eval_passkey(ck, lengths, opts.n_depths, opts.seeds_per_cell,
                                                 common.seed == 0 ? 20240612 : common.seed,
                                                 bam::VocabLayout::desk(ck.config.vocab_size));
    std::ofstream os(run.file("passkey_grid.tsv"));
    os << grid.to_tsv();
    for (size_t li = 0; li < grid.lengths.size(); ++li)
      std::cout << "length " << grid.lengths[li] << " mean accuracy " << grid.length_mean[li]
                << "\n";
    return kExitOk;
  }
  if (opts.task == "perplexity") {
    int max_len = 0;
    for (int l : lengths) max_len = std::max(max_len, l);
    auto stream = make_corpus(opts.corpus, ck.config, max_len, 0.5,
                              bam::split_seed(common.seed == 0 ? 20240613 : common.seed, 0xEE));
    std::vector<bam::TokenSequence> corpus;
    for (int k = 0; k < opts.corpus_count; ++k) corpus.push_back(stream());
    const auto curve = bam::eval_perplexity(ck, corpus, lengths);
    std::ofstream os(run.file("perplexity.tsv"));
    os << "# train_context=" << ck.config.train_context << "\n";
    os << "length\tperplexity\n";
    os.precision(10);
    for (const auto& [l, p] : curve) {
      os << l << '\t' << p << '\n';
      std::cout << "length " << l << " perplexity " << p << "\n";
    }
    return kExitOk;
  }
  throw std::invalid_argument("unknown eval task: " + opts.task);
}

int run_eval(const CommonOpts& common, const EvalOpts& opts, const std::string& resolved) {
  RunDir run(common.out);
  write_manifest(run, "eval", common, resolved);
  const int rc = common.precision == "f64" ? eval_with<double>(common, opts, run)
                                           : eval_with<float>(common, opts, run);
  if (rc == kExitOk) run.complete();
  return rc;
}

// ---------------------------- dump ----------------------------

struct DumpOpts {
  std::string checkpoint;
  std::string what = "thetas";
  int layer = 0;
  int head = 0;
  int probe_length = 256;
};

template <class Real>
int dump_with(const CommonOpts& common, const DumpOpts& opts, RunDir& run) {
  const bam::Checkpoint<Real> ck = bam::load_checkpoint<Real>(opts.checkpoint);
  if (opts.what == "thetas") {
    const auto recs = bam::export_theta_scatter(ck);  // throws unless pe_kind is bam
    std::ofstream os(run.file("thetas.tsv"));
    os << "layer\thead\ttheta_beta\ttheta_alpha\n";
    os.precision(10);
    for (const auto& r : recs)
      os << r.layer << '\t' << r.head << '\t' << r.theta_beta << '\t' << r.theta_alpha << '\n';
    std::cout << "wrote " << recs.size() << " theta records\n";
    return kExitOk;
  }
  if (opts.what == "ssmax-scales") {
    if (!ck.config.use_ssmax) throw std::invalid_argument("checkpoint does not use ssmax");
    std::ofstream os(run.file("ssmax_scales.tsv"));
    os << "layer\thead\ts\n";
    os.precision(10);
    for (int l = 0; l < ck.config.n_layers; ++l)
      for (int h = 0; h < ck.config.n_heads; ++h)
        os << l << '\t' << h << '\t' << ck.ssmax_scale(l, h) << '\n';
    std::cout << "wrote ssmax scales\n";
    return kExitOk;
  }
  if (opts.what == "attention") {
    // inspection probe: task prompt, key, long filler, answer prompt
    const bam::VocabLayout layout = bam::VocabLayout::desk(ck.config.vocab_size);
    bam::ProbeRegions regions;
    regions.task_prompt_len = 4;
    regions.key_region_len = 6;
    regions.answer_prompt_len = 4;
    regions.filler_len = opts.probe_length - 14;
    if (regions.filler_len < 0) throw std::invalid_argument("probe length too small");
    bam::Rng krng(common.seed == 0 ? 99 : common.seed);
    std::array<int32_t, 5> key{};
    for (auto& d : key) d = static_cast<int32_t>(krng.below(10));
    const bam::PasskeySample probe = bam::gen_probe(regions, key, layout, krng.next_u64());
    const std::vector<double> att = bam::dump_attention(ck, probe.tokens, opts.layer, opts.head);
    std::ofstream os(run.file("attention_l" + std::to_string(opts.layer) + "_h" +
                              std::to_string(opts.head) + ".tsv"));
    const int L = probe.tokens.length();
    os << "# layer=" << opts.layer << " head=" << opts.head;
    if (ck.config.pe_kind == bam::PeKind::bam) {
      const bam::ThetaParams t = ck.bam_theta(opts.layer, opts.head);
      os << " theta_mu=" << t.theta_mu << " theta_alpha=" << t.theta_alpha
         << " theta_beta=" << t.theta_beta;
    }
    os << " key_begin=" << probe.key_begin << " key_end=" << probe.key_end << "\n";
    os.precision(8);
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j)
        os << att[static_cast<size_t>(i) * L + j] << (j + 1 < L ? '\t' : '\n');
    std::cout << "wrote attention matrix (" << L << "x" << L << ")\n";
    return kExitOk;
  }
  throw std::invalid_argument("unknown dump target: " + opts.what);
}

int run_dump(const CommonOpts& common, const DumpOpts& opts, const std::string& resolved) {
  RunDir run(common.out);
  write_manifest(run, "dump", common, resolved);
  const int rc = common.precision == "f64" ? dump_with<double>(common, opts, run)
                                           : dump_with<float>(common, opts, run);
  if (rc == kExitOk) run.complete();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bam-lab: positional-encoding laboratory"};
  app.set_config("--config", "", "TOML configuration file; flags override file values");
  app.require_subcommand(1);
  app.fallthrough();  // --seed/--out/--precision may follow the subcommand

  CommonOpts common;
  app.add_option("--seed", common.seed, "global seed");
  app.add_option("--out", common.out, "output directory");
  app.add_option("--precision", common.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));

  CLI::App* verify = app.add_subcommand("verify", "run the claim verifiers");
  std::string claims = "all";
  verify->add_option("--claims", claims, "comma list of claim ids, or 'all'");

  CLI::App* train_cmd = app.add_subcommand("train", "train a checkpoint");
  TrainOpts topts;
  train_cmd->add_option("--vocab-size", topts.model.vocab_size);
  train_cmd->add_option("--d-model", topts.model.d_model);
  train_cmd->add_option("--n-heads", topts.model.n_heads);
  train_cmd->add_option("--n-layers", topts.model.n_layers);
  train_cmd->add_option("--ff-multiplier", topts.model.ff_multiplier);
  train_cmd->add_option("--train-context", topts.model.train_context);
  train_cmd->add_option("--pe", topts.pe, "nope|sinusoidal|rope|alibi|bam");
  train_cmd->add_flag("--ssmax,!--no-ssmax", topts.model.use_ssmax, "scalable softmax");
  train_cmd->add_option("--bam-init", topts.bam_init, "uniform_prior|alibi_like");
  train_cmd->add_option("--bam-trainable", topts.bam_trainable, "subset of beta,alpha,mu");
  train_cmd->add_option("--bam-epsilon", topts.model.bam_epsilon);
  train_cmd->add_option("--steps", topts.settings.steps);
  train_cmd->add_option("--peak-lr", topts.settings.peak_lr);
  train_cmd->add_option("--min-lr-frac", topts.settings.min_lr_frac);
  train_cmd->add_option("--weight-decay", topts.settings.weight_decay);
  train_cmd->add_option("--grad-clip", topts.settings.grad_clip);
  train_cmd->add_option("--batch-seqs", topts.settings.batch_seqs);
  train_cmd->add_option("--log-every", topts.settings.log_every);
  train_cmd->add_option("--corpus", topts.corpus, "curriculum|markov|copy");
  train_cmd->add_option("--corpus-length", topts.corpus_length);
  train_cmd->add_option("--p-passkey", topts.p_passkey);
  train_cmd->add_option("--resume", topts.resume, "checkpoint to continue from");
  train_cmd->add_option("--sweep-pe", topts.sweep_pe, "comma list of pe kinds");
  train_cmd->add_option("--sweep-ssmax", topts.sweep_ssmax, "on,off");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  EvalOpts eopts;
  eval_cmd->add_option("--checkpoint", eopts.checkpoint)->required();
  eval_cmd->add_option("--task", eopts.task, "passkey|perplexity");
  eval_cmd->add_option("--lengths", eopts.lengths, "comma list; default powers of two");
  eval_cmd->add_option("--depths", eopts.n_depths);
  eval_cmd->add_option("--seeds-per-cell", eopts.seeds_per_cell);
  eval_cmd->add_option("--corpus", eopts.corpus, "perplexity corpus kind");
  eval_cmd->add_option("--corpus-count", eopts.corpus_count);

  CLI::App* dump_cmd = app.add_subcommand("dump", "export model internals");
  DumpOpts dopts;
  dump_cmd->add_option("--checkpoint", dopts.checkpoint)->required();
  dump_cmd->add_option("--what", dopts.what, "attention|thetas|ssmax-scales");
  dump_cmd->add_option("--layer", dopts.layer);
  dump_cmd->add_option("--head", dopts.head);
  dump_cmd->add_option("--probe-length", dopts.probe_length);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfigError;
  }

  try {
    const std::string resolved = app.config_to_str(true, false);
    if (verify->parsed()) return run_verify(common, claims, resolved);
    if (train_cmd->parsed()) return run_train(common, topts, resolved);
    if (eval_cmd->parsed()) return run_eval(common, eopts, resolved);
    if (dump_cmd->parsed()) return run_dump(common, dopts, resolved);
    std::cerr << "no subcommand given\n";
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}
