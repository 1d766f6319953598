#pragma once

// Flat key=value run configuration. One file covers the backbone, attention,
// matching, distillation, and training knobs; unknown or duplicate keys are
// rejected with the offending line number, and parse -> serialize -> parse is
// a fixed point.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "clf/attention.hpp"
#include "clf/backbone.hpp"
#include "clf/distill.hpp"
#include "clf/error.hpp"
#include "clf/model.hpp"
#include "clf/optim.hpp"

namespace clf {

enum class Dtype { f32, f64 };

struct RunConfig {
  BackboneConfig backbone;
  AttentionConfig attention;
  double tau = 0.1;        // matching.tau — score temperature
  double threshold = 0.2;  // matching.threshold — confidence cut
  bool mnn = true;         // matching.mnn — mutual-nearest-neighbor filter
  DistillConfig distill;
  TrainConfig train;
  Dtype dtype = Dtype::f64;  // train.dtype — arithmetic width for training

  ModelConfig model_config() const {
    ModelConfig m;
    m.backbone = backbone;
    m.attention = attention;
    m.tau = tau;
    return m;
  }
};

inline void validate_run_config(const RunConfig& cfg) {
  validate_model_config(cfg.model_config());
  validate_distill_config(cfg.distill);
  validate_train_config(cfg.train);
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0))
    throw config_error("matching.threshold must lie in (0, 1)");
}

namespace detail {

// shortest decimal that round-trips the exact double
inline std::string fmt_shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_pattern(const std::vector<int>& pattern) {
  std::string s;
  for (int p : pattern) s += (p == kLayerSelf ? 'S' : 'C');
  return s;
}

inline std::string fmt_dims(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(dims[i]);
  }
  return s;
}

struct ConfigParseCtx {
  std::string source;
  std::size_t line = 0;
  [[noreturn]] void fail(const std::string& msg) const {
    throw config_error(source + ":" + std::to_string(line) + ": " + msg);
  }
};

inline std::uint64_t parse_config_u64(const std::string& v, const ConfigParseCtx& c) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    c.fail("expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_config_f64(const std::string& v, const ConfigParseCtx& c) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    c.fail("expected a number, got '" + v + "'");
  return out;
}

inline bool parse_config_bool(const std::string& v, const ConfigParseCtx& c) {
  if (v == "true") return true;
  if (v == "false") return false;
  c.fail("expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_config_dims(const std::string& v,
                                                  const ConfigParseCtx& c) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t comma = v.find(',', start);
    std::string item = v.substr(start, comma == std::string::npos
                                           ? std::string::npos
                                           : comma - start);
    out.push_back(std::size_t(parse_config_u64(item, c)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<int> parse_config_pattern(const std::string& v,
                                             const ConfigParseCtx& c) {
  std::vector<int> out;
  for (char ch : v) {
    if (ch == 'S')
      out.push_back(kLayerSelf);
    else if (ch == 'C')
      out.push_back(kLayerCross);
    else
      c.fail(std::string("layer pattern may only contain S and C, got '") + ch +
             "'");
  }
  return out;
}

inline std::string trim_ws(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Serializes every key in a fixed order; doubles use shortest-round-trip
// formatting so the output parses back to the identical configuration.
inline std::string serialize_run_config(const RunConfig& cfg) {
  using detail::fmt_shortest;
  std::ostringstream out;
  out << "backbone.initial_dim = " << cfg.backbone.initial_dim << "\n";
  out << "backbone.block_dims = " << detail::fmt_dims(cfg.backbone.block_dims)
      << "\n";
  out << "backbone.output_stride = " << cfg.backbone.output_stride << "\n";
  out << "attention.d_model = " << cfg.attention.d_model << "\n";
  out << "attention.n_heads = " << cfg.attention.n_heads << "\n";
  out << "attention.ffn_dim = " << cfg.attention.ffn_dim << "\n";
  out << "attention.layer_pattern = "
      << detail::fmt_pattern(cfg.attention.layer_pattern) << "\n";
  out << "matching.tau = " << fmt_shortest(cfg.tau) << "\n";
  out << "matching.threshold = " << fmt_shortest(cfg.threshold) << "\n";
  out << "matching.mnn = " << (cfg.mnn ? "true" : "false") << "\n";
  out << "distill.t = " << fmt_shortest(cfg.distill.t) << "\n";
  out << "distill.c_d = " << fmt_shortest(cfg.distill.c_d) << "\n";
  out << "distill.c_t = " << fmt_shortest(cfg.distill.c_t) << "\n";
  out << "train.lr0 = " << fmt_shortest(cfg.train.lr0) << "\n";
  out << "train.lr_gamma = " << fmt_shortest(cfg.train.lr_gamma) << "\n";
  out << "train.lr_step_epochs = " << cfg.train.lr_step_epochs << "\n";
  out << "train.micro_batch = " << cfg.train.micro_batch << "\n";
  out << "train.accum_steps = " << cfg.train.accum_steps << "\n";
  out << "train.epoch_pairs = " << cfg.train.epoch_pairs << "\n";
  out << "train.epochs = " << cfg.train.epochs << "\n";
  out << "train.seed = " << cfg.train.seed << "\n";
  out << "train.weight_decay = " << fmt_shortest(cfg.train.weight_decay) << "\n";
  out << "train.beta1 = " << fmt_shortest(cfg.train.beta1) << "\n";
  out << "train.beta2 = " << fmt_shortest(cfg.train.beta2) << "\n";
  out << "train.eps = " << fmt_shortest(cfg.train.eps) << "\n";
  out << "train.depth_tol = " << fmt_shortest(cfg.train.depth_tol) << "\n";
  out << "train.ckpt_every = " << cfg.train.ckpt_every << "\n";
  out << "train.dtype = " << (cfg.dtype == Dtype::f32 ? "f32" : "f64") << "\n";
  return out.str();
}

// Parses key=value lines ('#' starts a comment, blank lines ignored). Every
// key must be known and appear at most once; errors carry source:line.
inline RunConfig parse_run_config(const std::string& text,
                                  const std::string& source) {
  RunConfig cfg;
  detail::ConfigParseCtx c{source, 0};
  std::vector<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++c.line;
    std::size_t hash = raw.find('#');
    std::string line = detail::trim_ws(hash == std::string::npos
                                           ? raw
                                           : raw.substr(0, hash));
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) c.fail("expected 'key = value', got '" + line + "'");
    std::string key = detail::trim_ws(line.substr(0, eq));
    std::string val = detail::trim_ws(line.substr(eq + 1));
    if (key.empty()) c.fail("empty key");
    for (const auto& s : seen)
      if (s == key) c.fail("duplicate key '" + key + "'");
    seen.push_back(key);

    if (key == "backbone.initial_dim")
      cfg.backbone.initial_dim = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "backbone.block_dims")
      cfg.backbone.block_dims = detail::parse_config_dims(val, c);
    else if (key == "backbone.output_stride")
      cfg.backbone.output_stride = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "attention.d_model")
      cfg.attention.d_model = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "attention.n_heads")
      cfg.attention.n_heads = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "attention.ffn_dim")
      cfg.attention.ffn_dim = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "attention.layer_pattern")
      cfg.attention.layer_pattern = detail::parse_config_pattern(val, c);
    else if (key == "matching.tau")
      cfg.tau = detail::parse_config_f64(val, c);
    else if (key == "matching.threshold")
      cfg.threshold = detail::parse_config_f64(val, c);
    else if (key == "matching.mnn")
      cfg.mnn = detail::parse_config_bool(val, c);
    else if (key == "distill.t")
      cfg.distill.t = detail::parse_config_f64(val, c);
    else if (key == "distill.c_d")
      cfg.distill.c_d = detail::parse_config_f64(val, c);
    else if (key == "distill.c_t")
      cfg.distill.c_t = detail::parse_config_f64(val, c);
    else if (key == "train.lr0")
      cfg.train.lr0 = detail::parse_config_f64(val, c);
    else if (key == "train.lr_gamma")
      cfg.train.lr_gamma = detail::parse_config_f64(val, c);
    else if (key == "train.lr_step_epochs")
      cfg.train.lr_step_epochs = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "train.micro_batch")
      cfg.train.micro_batch = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "train.accum_steps")
      cfg.train.accum_steps = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "train.epoch_pairs")
      cfg.train.epoch_pairs = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "train.epochs")
      cfg.train.epochs = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "train.seed")
      cfg.train.seed = detail::parse_config_u64(val, c);
    else if (key == "train.weight_decay")
      cfg.train.weight_decay = detail::parse_config_f64(val, c);
    else if (key == "train.beta1")
      cfg.train.beta1 = detail::parse_config_f64(val, c);
    else if (key == "train.beta2")
      cfg.train.beta2 = detail::parse_config_f64(val, c);
    else if (key == "train.eps")
      cfg.train.eps = detail::parse_config_f64(val, c);
    else if (key == "train.depth_tol")
      cfg.train.depth_tol = detail::parse_config_f64(val, c);
    else if (key == "train.ckpt_every")
      cfg.train.ckpt_every = std::size_t(detail::parse_config_u64(val, c));
    else if (key == "train.dtype") {
      if (val == "f32")
        cfg.dtype = Dtype::f32;
      else if (val == "f64")
        cfg.dtype = Dtype::f64;
      else
        c.fail("train.dtype must be f32 or f64, got '" + val + "'");
    } else
      c.fail("unknown key '" + key + "'");
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error(path + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

}  // namespace clf
