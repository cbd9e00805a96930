#pragma once
// Checkpoint file format: a plain-text manifest (format tag, endianness,
// step, config, per-head theta and ssmax mirrors in decimal, parameter table
// with shapes and offsets) followed by a raw little-endian 32-bit float
// payload. Offsets count floats from the start of the payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bam/model.hpp"

namespace bam {

namespace detail {

inline std::string config_manifest(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "config.vocab_size " << c.vocab_size << "\n";
  os << "config.d_model " << c.d_model << "\n";
  os << "config.n_heads " << c.n_heads << "\n";
  os << "config.n_layers " << c.n_layers << "\n";
  os << "config.ff_multiplier " << c.ff_multiplier << "\n";
  os << "config.train_context " << c.train_context << "\n";
  os << "config.pe_kind " << to_string(c.pe_kind) << "\n";
  os << "config.use_ssmax " << (c.use_ssmax ? 1 : 0) << "\n";
  os << "config.bam_init " << to_string(c.bam_init) << "\n";
  os << "config.bam_trainable " << c.bam_trainable.str() << "\n";
  os << "config.bam_epsilon " << c.bam_epsilon << "\n";
  os << "config.seed " << c.seed << "\n";
  return os.str();
}

inline void apply_config_kv(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "config.vocab_size") c.vocab_size = std::stoi(value);
  else if (key == "config.d_model") c.d_model = std::stoi(value);
  else if (key == "config.n_heads") c.n_heads = std::stoi(value);
  else if (key == "config.n_layers") c.n_layers = std::stoi(value);
  else if (key == "config.ff_multiplier") c.ff_multiplier = std::stoi(value);
  else if (key == "config.train_context") c.train_context = std::stoi(value);
  else if (key == "config.pe_kind") c.pe_kind = pe_kind_from_string(value);
  else if (key == "config.use_ssmax") c.use_ssmax = std::stoi(value) != 0;
  else if (key == "config.bam_init") c.bam_init = bam_init_from_string(value);
  else if (key == "config.bam_trainable") c.bam_trainable = BamTrainable::from_string(value);
  else if (key == "config.bam_epsilon") c.bam_epsilon = std::stod(value);
  else if (key == "config.seed") c.seed = std::stoull(value);
  else throw std::runtime_error("checkpoint: unknown config key " + key);
}

}  // namespace detail

template <class Real>
void save_checkpoint(const Checkpoint<Real>& ck, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);

  std::vector<float> payload;
  std::ostringstream table;
  const_cast<Checkpoint<Real>&>(ck).weights.visit(
      [&](const std::string& name, std::vector<Real>& vec, ParamTraits t) {
        table << "param name=" << name << " count=" << vec.size()
              << " offset=" << payload.size() << " trainable=" << (t.trainable ? 1 : 0) << "\n";
        for (Real x : vec) payload.push_back(static_cast<float>(x));
      });

  os << "bam-checkpoint v1\n";
  os << "endian little\n";
  os << "step " << ck.step << "\n";
  os << detail::config_manifest(ck.config);
  os.precision(17);
  if (ck.config.pe_kind == PeKind::bam) {
    for (int l = 0; l < ck.config.n_layers; ++l)
      for (int h = 0; h < ck.config.n_heads; ++h) {
        const ThetaParams th = ck.bam_theta(l, h);
        os << "theta layer=" << l << " head=" << h << " mu=" << th.theta_mu
           << " alpha=" << th.theta_alpha << " beta=" << th.theta_beta << "\n";
      }
  }
  if (ck.config.use_ssmax) {
    for (int l = 0; l < ck.config.n_layers; ++l)
      for (int h = 0; h < ck.config.n_heads; ++h)
        os << "ssmax layer=" << l << " head=" << h << " s=" << ck.ssmax_scale(l, h) << "\n";
  }
  os << table.str();
  os << "payload floats=" << payload.size() << "\n";
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint reader assumes a little-endian host");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);

  std::string line;
  if (!std::getline(is, line) || line != "bam-checkpoint v1")
    throw std::runtime_error("load_checkpoint: bad format tag in " + path);

  ModelConfig cfg;
  int64_t step = 0;
  size_t n_floats = 0;
  struct Entry {
    size_t count, offset;
  };
  std::map<std::string, Entry> params;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "endian") {
      std::string e;
      ls >> e;
      if (e != "little") throw std::runtime_error("load_checkpoint: unsupported endianness " + e);
    } else if (key == "step") {
      ls >> step;
    } else if (key.rfind("config.", 0) == 0) {
      std::string value;
      ls >> value;
      detail::apply_config_kv(cfg, key, value);
    } else if (key == "theta" || key == "ssmax") {
      continue;  // decimal mirrors; the payload is authoritative
    } else if (key == "param") {
      std::string name;
      Entry e{0, 0};
      std::string field;
      while (ls >> field) {
        const size_t eq = field.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = field.substr(0, eq);
        const std::string v = field.substr(eq + 1);
        if (k == "name") name = v;
        else if (k == "count") e.count = std::stoull(v);
        else if (k == "offset") e.offset = std::stoull(v);
      }
      params[name] = e;
    } else if (key == "payload") {
      std::string field;
      ls >> field;
      const size_t eq = field.find('=');
      if (eq == std::string::npos) throw std::runtime_error("load_checkpoint: bad payload line");
      n_floats = std::stoull(field.substr(eq + 1));
      break;
    } else if (!key.empty()) {
      throw std::runtime_error("load_checkpoint: unknown manifest key " + key);
    }
  }

  std::vector<float> payload(n_floats);
  is.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(n_floats * sizeof(float)));
  if (is.gcount() != static_cast<std::streamsize>(n_floats * sizeof(float)))
    throw std::runtime_error("load_checkpoint: truncated payload in " + path);

  Checkpoint<Real> ck;
  ck.config = cfg;
  ck.step = step;
  ck.weights.allocate(cfg);
  ck.weights.visit([&](const std::string& name, std::vector<Real>& vec, ParamTraits) {
    const auto it = params.find(name);
    if (it == params.end())
      throw std::runtime_error("load_checkpoint: missing parameter " + name);
    if (it->second.count != vec.size())
      throw std::runtime_error("load_checkpoint: size mismatch for " + name);
    if (it->second.offset + it->second.count > payload.size())
      throw std::runtime_error("load_checkpoint: offset out of range for " + name);
    for (size_t k = 0; k < vec.size(); ++k)
      vec[k] = static_cast<Real>(payload[it->second.offset + k]);
  });
  return ck;
}

}  // namespace bam
