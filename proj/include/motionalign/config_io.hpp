#pragma once

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "motionalign/trainer.hpp"

// Run configuration as strict flat key=value text with [section] headers.
// Every key is validated against the schema below; unknown or duplicate keys
// are rejected before any compute. serialize_config emits the resolved form
// with %.17g floats, so parsing it back reproduces the config bit-for-bit.

namespace ma {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Downstream-evaluation knobs. Kept outside TrainConfig on purpose: they do
// not affect pretraining, so they stay out of the checkpoint-guard hash.
struct EvalConfig {
  int probe_train = 350;  // labeled videos for classifier fitting
  int probe_test = 140;   // held-out videos for accuracy
  int probe_windows = 10;
  int probe_epochs = 30;
  double probe_lr = 0.1;
  int probe_batch = 64;
  int ft_epochs = 5;  // encoder fine-tuning schedule (non-frozen probe)
  double ft_lr = 0.005;
  int ft_batch = 8;
  std::vector<int> retrieval_ks{1, 5, 10, 20};
  int affinity_clips = 50;
  int temporal_videos = 20;
  int temporal_clips = 10;  // windows sampled per video for similarity stats
  int export_clips = 8;
  uint64_t seed = 1;
};

struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
};

namespace cfgio {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline int64_t get_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  long long r = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE)
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  return r;
}

inline int get_i32(const std::string& key, const std::string& v) {
  int64_t r = get_int(key, v);
  if (r < INT32_MIN || r > INT32_MAX) throw ConfigError("key '" + key + "': value out of range");
  return int(r);
}

inline uint64_t get_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  unsigned long long r = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0' || errno == ERANGE)
    throw ConfigError("key '" + key + "': '" + v + "' is not an unsigned integer");
  return r;
}

inline double get_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  double r = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE)
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  return r;
}

inline bool get_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean (true/false)");
}

inline std::vector<int> get_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) out.push_back(get_i32(key, trim(item)));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

template <typename E>
E get_enum(const std::string& key, const std::string& v,
           std::initializer_list<std::pair<const char*, E>> table) {
  std::string names;
  for (const auto& [name, val] : table) {
    if (v == name) return val;
    if (!names.empty()) names += '|';
    names += name;
  }
  throw ConfigError("key '" + key + "': '" + v + "' not one of {" + names + "}");
}

inline MaskPosition get_mask_position(const std::string& k, const std::string& v) {
  return get_enum<MaskPosition>(k, v,
                                {{"none", MaskPosition::none},
                                 {"prediction", MaskPosition::prediction},
                                 {"target", MaskPosition::target},
                                 {"both", MaskPosition::both}});
}
inline MaskSource get_mask_source(const std::string& k, const std::string& v) {
  return get_enum<MaskSource>(
      k, v, {{"rgb", MaskSource::rgb}, {"diff", MaskSource::diff}, {"both", MaskSource::both}});
}
inline BinDiagonalView get_bin_diagonal(const std::string& k, const std::string& v) {
  return get_enum<BinDiagonalView>(k, v,
                                   {{"key", BinDiagonalView::key},
                                    {"query", BinDiagonalView::query},
                                    {"mean", BinDiagonalView::mean}});
}
inline FraLossType get_fra_type(const std::string& k, const std::string& v) {
  return get_enum<FraLossType>(k, v,
                               {{"infonce", FraLossType::infonce},
                                {"triplet", FraLossType::triplet},
                                {"mse", FraLossType::mse}});
}
inline PixNegMode get_pix_neg_mode(const std::string& k, const std::string& v) {
  return get_enum<PixNegMode>(k, v,
                              {{"own_map", PixNegMode::own_map},
                               {"in_batch", PixNegMode::in_batch},
                               {"queue", PixNegMode::queue}});
}

}  // namespace cfgio

// "section.key" -> value, in file order. Full-line comments (#, ;) allowed.
inline std::vector<std::pair<std::string, std::string>> parse_ini(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    std::string t = cfgio::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3)
        throw ConfigError("line " + std::to_string(ln) + ": malformed section header");
      section = cfgio::trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(ln) + ": expected key = value");
    std::string key = cfgio::trim(t.substr(0, eq));
    std::string value = cfgio::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(ln) + ": empty key");
    if (section.empty())
      throw ConfigError("line " + std::to_string(ln) + ": key outside any [section]");
    out.emplace_back(section + "." + key, value);
  }
  return out;
}

using ConfigSetter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, ConfigSetter>& config_schema() {
  using namespace cfgio;
  using K = const std::string&;
  static const std::map<std::string, ConfigSetter> schema = {
      // -- data -----------------------------------------------------------
      {"data.dataset_size", [](RunConfig& c, K k, K v) { c.train.dataset_size = get_i32(k, v); }},
      {"data.raw_frames", [](RunConfig& c, K k, K v) { c.train.raw_frames = get_i32(k, v); }},
      {"data.class_balance", [](RunConfig& c, K k, K v) { c.train.class_balance = get_bool(k, v); }},
      // -- augment --------------------------------------------------------
      {"augment.window", [](RunConfig& c, K k, K v) { c.train.pipe.aug.window = get_i32(k, v); }},
      {"augment.stride", [](RunConfig& c, K k, K v) { c.train.pipe.aug.stride = get_i32(k, v); }},
      {"augment.out_size", [](RunConfig& c, K k, K v) { c.train.pipe.aug.out_size = get_i32(k, v); }},
      {"augment.scale_lo", [](RunConfig& c, K k, K v) { c.train.pipe.aug.scale_lo = get_double(k, v); }},
      {"augment.scale_hi", [](RunConfig& c, K k, K v) { c.train.pipe.aug.scale_hi = get_double(k, v); }},
      {"augment.aspect_lo", [](RunConfig& c, K k, K v) { c.train.pipe.aug.aspect_lo = get_double(k, v); }},
      {"augment.aspect_hi", [](RunConfig& c, K k, K v) { c.train.pipe.aug.aspect_hi = get_double(k, v); }},
      {"augment.p_flip", [](RunConfig& c, K k, K v) { c.train.pipe.aug.p_flip = get_double(k, v); }},
      {"augment.p_gray", [](RunConfig& c, K k, K v) { c.train.pipe.aug.p_gray = get_double(k, v); }},
      {"augment.p_jitter", [](RunConfig& c, K k, K v) { c.train.pipe.aug.p_jitter = get_double(k, v); }},
      {"augment.jitter_strength",
       [](RunConfig& c, K k, K v) { c.train.pipe.aug.jitter_strength = get_double(k, v); }},
      {"augment.p_blur", [](RunConfig& c, K k, K v) { c.train.pipe.aug.p_blur = get_double(k, v); }},
      {"augment.blur_sigma_lo",
       [](RunConfig& c, K k, K v) { c.train.pipe.aug.blur_sigma_lo = get_double(k, v); }},
      {"augment.blur_sigma_hi",
       [](RunConfig& c, K k, K v) { c.train.pipe.aug.blur_sigma_hi = get_double(k, v); }},
      // -- encoder ----------------------------------------------------------
      {"encoder.widths",
       [](RunConfig& c, K k, K v) {
         std::vector<int> w = get_int_list(k, v);
         if (w.size() != 4) throw ConfigError("key '" + k + "': expected 4 block widths");
         std::copy(w.begin(), w.end(), c.train.pipe.enc.widths.begin());
       }},
      {"encoder.gn_groups", [](RunConfig& c, K k, K v) { c.train.pipe.enc.gn_groups = get_i32(k, v); }},
      {"encoder.proj_dim", [](RunConfig& c, K k, K v) { c.train.pipe.enc.proj_dim = get_i32(k, v); }},
      {"encoder.proj_hidden",
       [](RunConfig& c, K k, K v) { c.train.pipe.enc.proj_hidden = get_i32(k, v); }},
      // -- decoder ----------------------------------------------------------
      {"decoder.depth", [](RunConfig& c, K k, K v) { c.train.pipe.dec.depth = get_i32(k, v); }},
      {"decoder.width", [](RunConfig& c, K k, K v) { c.train.pipe.dec.width = get_i32(k, v); }},
      {"decoder.heads", [](RunConfig& c, K k, K v) { c.train.pipe.dec.heads = get_i32(k, v); }},
      {"decoder.dropout", [](RunConfig& c, K k, K v) { c.train.pipe.dec.dropout = get_double(k, v); }},
      {"decoder.ffn_mult", [](RunConfig& c, K k, K v) { c.train.pipe.dec.ffn_mult = get_i32(k, v); }},
      {"decoder.max_context",
       [](RunConfig& c, K k, K v) { c.train.pipe.dec.max_context = get_i32(k, v); }},
      {"decoder.query_pos", [](RunConfig& c, K k, K v) { c.train.pipe.dec.query_pos = get_bool(k, v); }},
      // -- model ------------------------------------------------------------
      {"model.tau", [](RunConfig& c, K k, K v) { c.train.pipe.tau = get_double(k, v); }},
      {"model.ema_momentum", [](RunConfig& c, K k, K v) { c.train.pipe.ema_momentum = get_double(k, v); }},
      {"model.threshold", [](RunConfig& c, K k, K v) { c.train.pipe.threshold = float(get_double(k, v)); }},
      {"model.bin_diagonal",
       [](RunConfig& c, K k, K v) { c.train.pipe.normalizer = get_bin_diagonal(k, v); }},
      {"model.beta", [](RunConfig& c, K k, K v) { c.train.pipe.beta = get_double(k, v); }},
      {"model.mask_position",
       [](RunConfig& c, K k, K v) { c.train.pipe.mask_position = get_mask_position(k, v); }},
      {"model.mask_source",
       [](RunConfig& c, K k, K v) { c.train.pipe.mask_source = get_mask_source(k, v); }},
      {"model.fuse_normalized",
       [](RunConfig& c, K k, K v) { c.train.pipe.fuse_normalized = get_bool(k, v); }},
      {"model.use_vv", [](RunConfig& c, K k, K v) { c.train.pipe.use_vv = get_bool(k, v); }},
      {"model.use_vd", [](RunConfig& c, K k, K v) { c.train.pipe.use_vd = get_bool(k, v); }},
      {"model.use_pix", [](RunConfig& c, K k, K v) { c.train.pipe.use_pix = get_bool(k, v); }},
      {"model.use_fra", [](RunConfig& c, K k, K v) { c.train.pipe.use_fra = get_bool(k, v); }},
      {"model.use_decoder", [](RunConfig& c, K k, K v) { c.train.pipe.use_decoder = get_bool(k, v); }},
      {"model.shared_decoder",
       [](RunConfig& c, K k, K v) { c.train.pipe.shared_decoder = get_bool(k, v); }},
      {"model.symmetric", [](RunConfig& c, K k, K v) { c.train.pipe.symmetric = get_bool(k, v); }},
      {"model.fra_type", [](RunConfig& c, K k, K v) { c.train.pipe.fra_type = get_fra_type(k, v); }},
      {"model.fra_margin", [](RunConfig& c, K k, K v) { c.train.pipe.fra_margin = get_double(k, v); }},
      {"model.pix_bg_in_denominator",
       [](RunConfig& c, K k, K v) { c.train.pipe.pix_bg_in_denominator = get_bool(k, v); }},
      {"model.pix_neg_mode",
       [](RunConfig& c, K k, K v) { c.train.pipe.pix_neg_mode = get_pix_neg_mode(k, v); }},
      // -- optim ------------------------------------------------------------
      {"optim.epochs", [](RunConfig& c, K k, K v) { c.train.epochs = get_i32(k, v); }},
      {"optim.batch_size", [](RunConfig& c, K k, K v) { c.train.batch_size = get_i32(k, v); }},
      {"optim.base_lr", [](RunConfig& c, K k, K v) { c.train.base_lr = get_double(k, v); }},
      {"optim.sgd_momentum", [](RunConfig& c, K k, K v) { c.train.sgd_momentum = get_double(k, v); }},
      {"optim.weight_decay", [](RunConfig& c, K k, K v) { c.train.weight_decay = get_double(k, v); }},
      {"optim.queue_vv", [](RunConfig& c, K k, K v) { c.train.queue_vv = get_i32(k, v); }},
      {"optim.queue_vd", [](RunConfig& c, K k, K v) { c.train.queue_vd = get_i32(k, v); }},
      {"optim.queue_fra", [](RunConfig& c, K k, K v) { c.train.queue_fra = get_i32(k, v); }},
      {"optim.queue_pix", [](RunConfig& c, K k, K v) { c.train.queue_pix = get_i32(k, v); }},
      {"optim.seed", [](RunConfig& c, K k, K v) { c.train.seed = get_u64(k, v); }},
      // -- eval -------------------------------------------------------------
      {"eval.probe_train", [](RunConfig& c, K k, K v) { c.eval.probe_train = get_i32(k, v); }},
      {"eval.probe_test", [](RunConfig& c, K k, K v) { c.eval.probe_test = get_i32(k, v); }},
      {"eval.probe_windows", [](RunConfig& c, K k, K v) { c.eval.probe_windows = get_i32(k, v); }},
      {"eval.probe_epochs", [](RunConfig& c, K k, K v) { c.eval.probe_epochs = get_i32(k, v); }},
      {"eval.probe_lr", [](RunConfig& c, K k, K v) { c.eval.probe_lr = get_double(k, v); }},
      {"eval.probe_batch", [](RunConfig& c, K k, K v) { c.eval.probe_batch = get_i32(k, v); }},
      {"eval.ft_epochs", [](RunConfig& c, K k, K v) { c.eval.ft_epochs = get_i32(k, v); }},
      {"eval.ft_lr", [](RunConfig& c, K k, K v) { c.eval.ft_lr = get_double(k, v); }},
      {"eval.ft_batch", [](RunConfig& c, K k, K v) { c.eval.ft_batch = get_i32(k, v); }},
      {"eval.retrieval_ks", [](RunConfig& c, K k, K v) { c.eval.retrieval_ks = get_int_list(k, v); }},
      {"eval.affinity_clips", [](RunConfig& c, K k, K v) { c.eval.affinity_clips = get_i32(k, v); }},
      {"eval.temporal_videos", [](RunConfig& c, K k, K v) { c.eval.temporal_videos = get_i32(k, v); }},
      {"eval.temporal_clips", [](RunConfig& c, K k, K v) { c.eval.temporal_clips = get_i32(k, v); }},
      {"eval.export_clips", [](RunConfig& c, K k, K v) { c.eval.export_clips = get_i32(k, v); }},
      {"eval.seed", [](RunConfig& c, K k, K v) { c.eval.seed = get_u64(k, v); }},
  };
  return schema;
}

// Overlay parsed pairs onto defaults. Unknown and repeated keys are errors.
inline void apply_config(RunConfig& c, const std::vector<std::pair<std::string, std::string>>& kv) {
  const auto& schema = config_schema();
  std::set<std::string> seen;
  for (const auto& [key, value] : kv) {
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("unknown configuration key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("duplicate configuration key '" + key + "'");
    it->second(c, key, value);
  }
}

// Derive tied fields from the user-facing ones, then run semantic validation.
// The encoder's temporal/spatial reductions are fixed by its architecture
// (4x in time, 16x in space), so the feature-map sizes are never set directly.
inline void resolve_config(RunConfig& c) {
  AugConfig& a = c.train.pipe.aug;
  EncoderConfig& e = c.train.pipe.enc;
  if (a.window <= 0 || a.window % 4 != 0)
    throw ConfigError("augment.window must be a positive multiple of 4");
  if (a.out_size <= 0 || a.out_size % 16 != 0)
    throw ConfigError("augment.out_size must be a positive multiple of 16");
  e.in_frames = a.window;
  e.feat_t = a.window / 4;
  e.feat_hw = a.out_size / 16;
  c.train.pipe.dec.in_dim = e.channels();
  c.train.pipe.dec.max_context = std::max(c.train.pipe.dec.max_context, c.train.pipe.cells());

  const EvalConfig& ev = c.eval;
  if (ev.probe_train < 1 || ev.probe_test < 1 || ev.probe_windows < 1 || ev.probe_epochs < 1 ||
      ev.probe_batch < 1 || ev.ft_epochs < 1 || ev.ft_batch < 1 || ev.affinity_clips < 1 ||
      ev.temporal_videos < 1 || ev.temporal_clips < 2 || ev.export_clips < 1)
    throw ConfigError("eval sizes must be positive (temporal_clips >= 2)");
  if (ev.probe_lr <= 0 || ev.ft_lr <= 0) throw ConfigError("eval learning rates must be positive");
  for (int k : ev.retrieval_ks)
    if (k < 1) throw ConfigError("eval.retrieval_ks entries must be >= 1");

  try {
    c.train.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(ex.what());
  }
}

inline RunConfig load_config_text(const std::string& text) {
  RunConfig c;
  apply_config(c, parse_ini(text));
  resolve_config(c);
  return c;
}

inline std::string serialize_config(const RunConfig& c) {
  std::string s;
  char buf[96];
  auto sec = [&](const char* name) {
    if (!s.empty()) s += '\n';
    s += '[';
    s += name;
    s += "]\n";
  };
  auto pi = [&](const char* key, int64_t v) {
    std::snprintf(buf, sizeof(buf), "%s = %lld\n", key, (long long)v);
    s += buf;
  };
  auto pu = [&](const char* key, uint64_t v) {
    std::snprintf(buf, sizeof(buf), "%s = %llu\n", key, (unsigned long long)v);
    s += buf;
  };
  auto pd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s = %.17g\n", key, v);
    s += buf;
  };
  auto pb = [&](const char* key, bool v) {
    s += key;
    s += v ? " = true\n" : " = false\n";
  };
  auto ps_ = [&](const char* key, const std::string& v) {
    s += key;
    s += " = ";
    s += v;
    s += '\n';
  };

  const TrainConfig& t = c.train;
  const AugConfig& a = t.pipe.aug;
  const EncoderConfig& e = t.pipe.enc;
  const DecoderConfig& d = t.pipe.dec;
  const PipelineConfig& p = t.pipe;
  const EvalConfig& ev = c.eval;

  sec("data");
  pi("dataset_size", t.dataset_size);
  pi("raw_frames", t.raw_frames);
  pb("class_balance", t.class_balance);

  sec("augment");
  pi("window", a.window);
  pi("stride", a.stride);
  pi("out_size", a.out_size);
  pd("scale_lo", a.scale_lo);
  pd("scale_hi", a.scale_hi);
  pd("aspect_lo", a.aspect_lo);
  pd("aspect_hi", a.aspect_hi);
  pd("p_flip", a.p_flip);
  pd("p_gray", a.p_gray);
  pd("p_jitter", a.p_jitter);
  pd("jitter_strength", a.jitter_strength);
  pd("p_blur", a.p_blur);
  pd("blur_sigma_lo", a.blur_sigma_lo);
  pd("blur_sigma_hi", a.blur_sigma_hi);

  sec("encoder");
  {
    std::string w;
    for (size_t i = 0; i < e.widths.size(); ++i) {
      if (i) w += ',';
      w += std::to_string(e.widths[i]);
    }
    ps_("widths", w);
  }
  pi("gn_groups", e.gn_groups);
  pi("proj_dim", e.proj_dim);
  pi("proj_hidden", e.proj_hidden);

  sec("decoder");
  pi("depth", d.depth);
  pi("width", d.width);
  pi("heads", d.heads);
  pd("dropout", d.dropout);
  pi("ffn_mult", d.ffn_mult);
  pi("max_context", d.max_context);
  pb("query_pos", d.query_pos);

  sec("model");
  pd("tau", p.tau);
  pd("ema_momentum", p.ema_momentum);
  pd("threshold", double(p.threshold));
  ps_("bin_diagonal", to_string(p.normalizer));
  pd("beta", p.beta);
  ps_("mask_position", to_string(p.mask_position));
  ps_("mask_source", to_string(p.mask_source));
  pb("fuse_normalized", p.fuse_normalized);
  pb("use_vv", p.use_vv);
  pb("use_vd", p.use_vd);
  pb("use_pix", p.use_pix);
  pb("use_fra", p.use_fra);
  pb("use_decoder", p.use_decoder);
  pb("shared_decoder", p.shared_decoder);
  pb("symmetric", p.symmetric);
  ps_("fra_type", to_string(p.fra_type));
  pd("fra_margin", p.fra_margin);
  pb("pix_bg_in_denominator", p.pix_bg_in_denominator);
  ps_("pix_neg_mode", to_string(p.pix_neg_mode));

  sec("optim");
  pi("epochs", t.epochs);
  pi("batch_size", t.batch_size);
  pd("base_lr", t.base_lr);
  pd("sgd_momentum", t.sgd_momentum);
  pd("weight_decay", t.weight_decay);
  pi("queue_vv", t.queue_vv);
  pi("queue_vd", t.queue_vd);
  pi("queue_fra", t.queue_fra);
  pi("queue_pix", t.queue_pix);
  pu("seed", t.seed);

  sec("eval");
  pi("probe_train", ev.probe_train);
  pi("probe_test", ev.probe_test);
  pi("probe_windows", ev.probe_windows);
  pi("probe_epochs", ev.probe_epochs);
  pd("probe_lr", ev.probe_lr);
  pi("probe_batch", ev.probe_batch);
  pi("ft_epochs", ev.ft_epochs);
  pd("ft_lr", ev.ft_lr);
  pi("ft_batch", ev.ft_batch);
  {
    std::string ks;
    for (size_t i = 0; i < ev.retrieval_ks.size(); ++i) {
      if (i) ks += ',';
      ks += std::to_string(ev.retrieval_ks[i]);
    }
    ps_("retrieval_ks", ks);
  }
  pi("affinity_clips", ev.affinity_clips);
  pi("temporal_videos", ev.temporal_videos);
  pi("temporal_clips", ev.temporal_clips);
  pi("export_clips", ev.export_clips);
  pu("seed", ev.seed);

  return s;
}

}  // namespace ma
