#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "motionalign/pipeline.hpp"

// Pretraining loop: SGD with momentum and a cosine learning-rate schedule over
// the query encoder and decoder, EMA momentum updates into the key encoder,
// queue maintenance, JSONL metrics, and a bitwise-exact checkpoint format.
//
// Every random stream is a pure function of (seed, epoch, step, clip index),
// so a resumed run replays the exact remaining stream of a straight-through
// run without serializing generator internals.

namespace ma {

// Raised when a step produces a non-finite loss; callers should treat the run
// as unrecoverable (stale state, no retry).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised on malformed/incompatible checkpoint files.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double cosine_lr(int64_t step, int64_t total_steps, double base_lr) {
  MA_CHECK(total_steps > 0 && step >= 0 && step <= total_steps, "step outside schedule");
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
}

struct TrainConfig {
  PipelineConfig pipe;

  int epochs = 30;
  int batch_size = 16;
  int dataset_size = 2000;
  int raw_frames = 32;  // frames per synthetic clip before view sampling
  bool class_balance = true;

  double base_lr = 0.01;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;  // skipped for decay=false params (norm affine, cls)

  int queue_vv = 512, queue_vd = 512, queue_fra = 512, queue_pix = 256;

  uint64_t seed = 1;

  int steps_per_epoch() const { return dataset_size / batch_size; }  // tail dropped
  int64_t total_steps() const { return int64_t(epochs) * steps_per_epoch(); }

  void validate() const {
    pipe.validate();
    MA_CHECK(epochs >= 1 && batch_size >= 1, "epochs/batch_size must be positive");
    MA_CHECK(dataset_size >= batch_size, "dataset smaller than one batch");
    MA_CHECK(raw_frames >= pipe.aug.window * pipe.aug.stride + 1,
             "clips too short for two distinct view windows");
    MA_CHECK(base_lr > 0 && sgd_momentum >= 0 && sgd_momentum < 1 && weight_decay >= 0,
             "optimizer hyperparameters out of range");
    MA_CHECK(queue_vv >= 0 && queue_vd >= 0 && queue_fra >= 0 && queue_pix >= 0,
             "queue capacities must be nonnegative");
  }
};

// --- canonical config signature -> hash, used to guard checkpoint loads -----

inline const char* to_string(MaskPosition v) {
  switch (v) {
    case MaskPosition::none: return "none";
    case MaskPosition::prediction: return "prediction";
    case MaskPosition::target: return "target";
    default: return "both";
  }
}
inline const char* to_string(MaskSource v) {
  switch (v) {
    case MaskSource::rgb: return "rgb";
    case MaskSource::diff: return "diff";
    default: return "both";
  }
}
inline const char* to_string(BinDiagonalView v) {
  switch (v) {
    case BinDiagonalView::key: return "key";
    case BinDiagonalView::query: return "query";
    default: return "mean";
  }
}
inline const char* to_string(FraLossType v) {
  switch (v) {
    case FraLossType::infonce: return "infonce";
    case FraLossType::triplet: return "triplet";
    default: return "mse";
  }
}
inline const char* to_string(PixNegMode v) {
  switch (v) {
    case PixNegMode::own_map: return "own_map";
    case PixNegMode::in_batch: return "in_batch";
    default: return "queue";
  }
}

// One line per semantic field; shortest round-trippable float formatting so
// equal configs always produce identical text.
inline std::string config_signature(const TrainConfig& c) {
  std::string s;
  char buf[64];
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, v);
    s += buf;
  };
  auto puti = [&](const char* key, int64_t v) {
    std::snprintf(buf, sizeof(buf), "%s=%lld\n", key, (long long)v);
    s += buf;
  };
  auto puts_ = [&](const char* key, const std::string& v) { s += key; s += '='; s += v; s += '\n'; };

  const EncoderConfig& e = c.pipe.enc;
  puti("enc.in_channels", e.in_channels);
  puti("enc.in_frames", e.in_frames);
  puti("enc.feat_t", e.feat_t);
  puti("enc.feat_hw", e.feat_hw);
  {
    std::string w;
    for (size_t i = 0; i < e.widths.size(); ++i) {
      if (i) w += ',';
      w += std::to_string(e.widths[i]);
    }
    puts_("enc.widths", w);
  }
  puti("enc.gn_groups", e.gn_groups);
  puti("enc.proj_dim", e.proj_dim);
  puti("enc.proj_hidden", e.proj_hidden);

  const DecoderConfig& d = c.pipe.dec;
  puti("dec.depth", d.depth);
  puti("dec.width", d.width);
  puti("dec.heads", d.heads);
  put("dec.dropout", d.dropout);
  puti("dec.ffn_mult", d.ffn_mult);
  puti("dec.in_dim", d.in_dim);
  puti("dec.max_context", d.max_context);
  puti("dec.query_pos", d.query_pos ? 1 : 0);

  const AugConfig& a = c.pipe.aug;
  puti("aug.window", a.window);
  puti("aug.stride", a.stride);
  puti("aug.out_size", a.out_size);
  put("aug.scale_lo", a.scale_lo);
  put("aug.scale_hi", a.scale_hi);
  put("aug.aspect_lo", a.aspect_lo);
  put("aug.aspect_hi", a.aspect_hi);
  put("aug.p_flip", a.p_flip);
  put("aug.p_gray", a.p_gray);
  put("aug.p_jitter", a.p_jitter);
  put("aug.jitter_strength", a.jitter_strength);
  put("aug.p_blur", a.p_blur);
  put("aug.blur_sigma_lo", a.blur_sigma_lo);
  put("aug.blur_sigma_hi", a.blur_sigma_hi);

  const PipelineConfig& p = c.pipe;
  put("pipe.tau", p.tau);
  put("pipe.ema_momentum", p.ema_momentum);
  put("pipe.threshold", double(p.threshold));
  puts_("pipe.normalizer", to_string(p.normalizer));
  put("pipe.beta", p.beta);
  puts_("pipe.mask_position", to_string(p.mask_position));
  puts_("pipe.mask_source", to_string(p.mask_source));
  puti("pipe.fuse_normalized", p.fuse_normalized ? 1 : 0);
  puti("pipe.use_vv", p.use_vv ? 1 : 0);
  puti("pipe.use_vd", p.use_vd ? 1 : 0);
  puti("pipe.use_pix", p.use_pix ? 1 : 0);
  puti("pipe.use_fra", p.use_fra ? 1 : 0);
  puti("pipe.use_decoder", p.use_decoder ? 1 : 0);
  puti("pipe.shared_decoder", p.shared_decoder ? 1 : 0);
  puti("pipe.symmetric", p.symmetric ? 1 : 0);
  puts_("pipe.fra_type", to_string(p.fra_type));
  put("pipe.fra_margin", p.fra_margin);
  puti("pipe.pix_bg_in_denominator", p.pix_bg_in_denominator ? 1 : 0);
  puts_("pipe.pix_neg_mode", to_string(p.pix_neg_mode));

  puti("train.epochs", c.epochs);
  puti("train.batch_size", c.batch_size);
  puti("train.dataset_size", c.dataset_size);
  puti("train.raw_frames", c.raw_frames);
  puti("train.class_balance", c.class_balance ? 1 : 0);
  put("train.base_lr", c.base_lr);
  put("train.sgd_momentum", c.sgd_momentum);
  put("train.weight_decay", c.weight_decay);
  puti("train.queue_vv", c.queue_vv);
  puti("train.queue_vd", c.queue_vd);
  puti("train.queue_fra", c.queue_fra);
  puti("train.queue_pix", c.queue_pix);
  puti("train.seed", int64_t(c.seed));
  return s;
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex_u64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)v);
  return buf;
}

inline uint64_t config_hash(const TrainConfig& c) { return fnv1a64(config_signature(c)); }

// --- optimizer ---------------------------------------------------------------

// SGD with momentum and selective L2 weight decay:
//   v <- mu*v + grad (+ wd*p when the parameter decays);  p <- p - lr*v
struct SgdMomentum {
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  std::vector<Tensor<float>> vel;

  SgdMomentum() = default;
  SgdMomentum(const ParamStore<float>& ps, float mu, float wd)
      : momentum(mu), weight_decay(wd) {
    vel.reserve(size_t(ps.size()));
    for (int i = 0; i < ps.size(); ++i) vel.push_back(Tensor<float>::zeros(ps.param(i).value.dims));
  }

  void step(ParamStore<float>& ps, Graph<float>& g, const Binding<float>& bd, float lr) {
    MA_CHECK(int(vel.size()) == ps.size() && int(bd.vars.size()) == ps.size(),
             "optimizer/store size mismatch");
    for (int i = 0; i < ps.size(); ++i) {
      ParamDef<float>& p = ps.param(i);
      const Tensor<float>& gr = g.grad(bd.vars[size_t(i)].id);  // zeros when untouched
      Tensor<float>& v = vel[size_t(i)];
      const float wd = p.decay ? weight_decay : 0.0f;
      for (int64_t j = 0; j < p.value.numel(); ++j) {
        v[j] = momentum * v[j] + gr[j] + wd * p.value[j];
        p.value[j] -= lr * v[j];
      }
    }
  }
};

// --- metrics -----------------------------------------------------------------

struct StepMetrics {
  int64_t step = 0;  // index of the step that was just taken (0-based)
  int epoch = 0;
  double lr = 0;
  LossBundle bundle;
  double fg_iou = 0;  // mean IoU of the key foreground mask vs sprite coverage
};

// Cells count as ground-truth foreground once the sprite covers a visible
// fraction of them in the view window.
inline constexpr float kIouCoverThreshold = 0.05f;

inline double mask_iou(const Tensor<uint8_t>& fg, const Tensor<float>& cover,
                       float thresh = kIouCoverThreshold) {
  MA_CHECK(fg.numel() == cover.numel(), "mask/coverage size mismatch");
  int inter = 0, uni = 0;
  for (int64_t i = 0; i < fg.numel(); ++i) {
    bool p = fg[i] != 0, t = cover[i] > thresh;
    inter += (p && t) ? 1 : 0;
    uni += (p || t) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

inline std::string metrics_json(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["lr"] = m.lr;
  j["total"] = m.bundle.total;
  j["vv"] = m.bundle.vv;
  j["vd"] = m.bundle.vd;
  j["pix"] = m.bundle.pix;
  j["fra"] = m.bundle.fra;
  j["pix_contributing"] = m.bundle.pix_contributing;
  j["pix_positives"] = m.bundle.pix_positives;
  j["vv_pos_sim"] = m.bundle.vv_pos_sim;
  j["pix_pos_sim"] = m.bundle.pix_pos_sim;
  j["fg_iou"] = m.fg_iou;
  return j.dump();
}

// --- trainer -----------------------------------------------------------------

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_((cfg.validate(), cfg)),
        init_rng_(cfg.seed),
        model_(cfg.pipe, init_rng_),
        queues_(cfg.pipe.enc.proj_dim, cfg.queue_vv, cfg.queue_vd, cfg.queue_fra,
                cfg.queue_pix),
        opt_q_(model_.enc.query, float(cfg.sgd_momentum), float(cfg.weight_decay)),
        opt_d_(model_.dec_params, float(cfg.sgd_momentum), float(cfg.weight_decay)),
        dataset_(make_dataset(cfg.dataset_size, cfg.class_balance, derive(1).next_u64())) {}

  const TrainConfig& config() const { return cfg_; }
  PipelineModel<float>& model() { return model_; }
  const PipelineModel<float>& model() const { return model_; }
  QueueSet& queues() { return queues_; }
  int64_t step_count() const { return step_; }
  int epoch() const { return int(step_ / cfg_.steps_per_epoch()); }
  bool done() const { return step_ >= cfg_.total_steps(); }
  const std::vector<SceneSpec>& dataset() const { return dataset_; }

  // Augmentation seed for one clip draw; independent of batch order and step,
  // so the schedule can change without changing the data stream of an epoch.
  uint64_t sample_seed(int epoch, int clip_index) const {
    Rng r = derive(2).fork(uint64_t(epoch) * uint64_t(cfg_.dataset_size) +
                           uint64_t(clip_index));
    return r.next_u64();
  }

  // One optimization step over the next batch in epoch order:
  //   (1) build augmented inputs  (2) key forward  (3) query/decoder forward
  //   (4) gradient step           (5) key EMA      (6) queue pushes
  // Diverged runs surface here: a bad update leaves non-finite parameters,
  // which the next step refuses before doing any work.
  StepMetrics train_step() {
    MA_CHECK(!done(), "schedule exhausted");
    assert_finite(model_.enc.query, "query");
    assert_finite(model_.dec_params, "decoder");
    const int spe = cfg_.steps_per_epoch();
    const int ep = int(step_ / spe);
    const int pos = int(step_ % spe);
    refresh_order(ep);

    std::vector<SampleInput<float>> batch;
    batch.reserve(size_t(cfg_.batch_size));
    for (int k = 0; k < cfg_.batch_size; ++k) {
      int idx = order_[size_t(pos) * cfg_.batch_size + k];
      LabeledClip clip = generate_clip(dataset_[size_t(idx)], cfg_.raw_frames);
      batch.push_back(make_sample_input(clip, cfg_.pipe.aug, cfg_.pipe.enc.feat_t,
                                        sample_seed(ep, idx), cfg_.pipe.enc.feat_hw));
    }

    Graph<float> g;
    Rng drop = derive(3).fork(uint64_t(step_));
    BatchResult<float> res = batch_forward(g, model_, batch, queues_, /*train=*/true, &drop);
    if (!std::isfinite(res.bundle.total))
      throw NumericError("non-finite loss at step " + std::to_string(step_));

    const double lr = cosine_lr(step_, cfg_.total_steps(), cfg_.base_lr);
    g.backward(res.total);
    opt_q_.step(model_.enc.query, g, res.bq, float(lr));
    opt_d_.step(model_.dec_params, g, res.bdec, float(lr));
    model_.enc.momentum_update();
    push_queues(queues_, cfg_.pipe, res.keys);

    StepMetrics m;
    m.step = step_;
    m.epoch = ep;
    m.lr = lr;
    m.bundle = res.bundle;
    double iou = 0;
    for (int i = 0; i < cfg_.batch_size; ++i)
      for (int v = 0; v < 2; ++v)
        iou += mask_iou(res.keys[size_t(i)].view[v].fg, batch[size_t(i)].view[v].cover);
    m.fg_iou = iou / double(2 * cfg_.batch_size);

    ++step_;
    return m;
  }

  // Runs the remaining schedule; one JSONL metrics line per step when `out`
  // is given. Returns the last step's metrics.
  StepMetrics run(std::ostream* out = nullptr) {
    StepMetrics last;
    while (!done()) {
      last = train_step();
      if (out) {
        *out << metrics_json(last) << '\n';
        if ((last.step + 1) % cfg_.steps_per_epoch() == 0) out->flush();
      }
    }
    if (out) out->flush();
    return last;
  }

  // --- checkpointing ---------------------------------------------------------

  void save_checkpoint(const std::string& path) const {
    nlohmann::json man;
    man["version"] = 1;
    man["step"] = step_;
    man["config_hash"] = hex_u64(config_hash(cfg_));
    man["seed"] = hex_u64(cfg_.seed);

    std::vector<std::pair<std::string, const Tensor<float>*>> arrays;
    std::vector<Tensor<float>> owned;  // queue snapshots
    collect_store("q.", model_.enc.query, arrays);
    collect_store("k.", model_.enc.key, arrays);
    collect_store("d.", model_.dec_params, arrays);
    collect_velocity("vq.", model_.enc.query, opt_q_, arrays);
    collect_velocity("vd.", model_.dec_params, opt_d_, arrays);
    owned.reserve(4);
    const NegativeQueue* qs[4] = {&queues_.vv, &queues_.vd, &queues_.fra, &queues_.pix};
    const char* qn[4] = {"queue.vv", "queue.vd", "queue.fra", "queue.pix"};
    nlohmann::json jq;
    for (int i = 0; i < 4; ++i) {
      owned.push_back(qs[i]->view());
      arrays.emplace_back(qn[i], &owned.back());
      jq[qn[i] + 6] = {{"dim", qs[i]->dim}, {"capacity", qs[i]->capacity}};
    }
    man["queues"] = jq;

    nlohmann::json ja = nlohmann::json::array();
    int64_t offset = 0;
    for (auto& [name, t] : arrays) {
      nlohmann::json e;
      e["name"] = name;
      e["dims"] = t->dims;
      e["byte_offset"] = offset;
      e["count"] = t->numel();
      ja.push_back(std::move(e));
      offset += t->numel() * int64_t(sizeof(float));
    }
    man["arrays"] = std::move(ja);

    std::string mtext = man.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 8);
    uint64_t mlen = mtext.size();
    f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    f.write(mtext.data(), std::streamsize(mtext.size()));
    for (auto& [name, t] : arrays)
      f.write(reinterpret_cast<const char*>(t->data()),
              std::streamsize(t->numel() * int64_t(sizeof(float))));
    if (!f) throw CheckpointError("short write to checkpoint: " + path);
  }

  // Restores parameters, optimizer state, queues, and the step counter.
  // Refuses a checkpoint whose config hash differs unless `force`; even then
  // every array must match the current model by name and shape.
  void load_checkpoint(const std::string& path, bool force = false) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
      throw CheckpointError("not a checkpoint file: " + path);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!f || mlen > (uint64_t(1) << 30)) throw CheckpointError("corrupt manifest length");
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), std::streamsize(mlen));
    if (!f) throw CheckpointError("truncated manifest");
    nlohmann::json man = nlohmann::json::parse(mtext, nullptr, /*allow_exceptions=*/false);
    if (man.is_discarded() || man.value("version", 0) != 1)
      throw CheckpointError("unsupported checkpoint manifest");

    const std::string want = hex_u64(config_hash(cfg_));
    const std::string got = man.value("config_hash", "");
    if (got != want && !force)
      throw CheckpointError("checkpoint config hash " + got + " != current " + want +
                            " (pass force to override)");

    const int64_t payload_start = int64_t(8 + sizeof(uint64_t) + mlen);
    auto read_array = [&](const nlohmann::json& e) {
      std::vector<int> dims = e.at("dims").get<std::vector<int>>();
      Tensor<float> t = Tensor<float>::uninit(dims);
      MA_CHECK(t.numel() == e.at("count").get<int64_t>(), "array count mismatch");
      f.seekg(payload_start + e.at("byte_offset").get<int64_t>());
      f.read(reinterpret_cast<char*>(t.data()),
             std::streamsize(t.numel() * int64_t(sizeof(float))));
      if (!f) throw CheckpointError("truncated array payload");
      return t;
    };

    // Stage everything before mutating state, so a bad file cannot leave the
    // trainer half-restored.
    std::vector<std::pair<std::string, Tensor<float>>> staged;
    for (const auto& e : man.at("arrays"))
      staged.emplace_back(e.at("name").get<std::string>(), read_array(e));

    auto take = [&](const std::string& name) -> Tensor<float>* {
      for (auto& [n, t] : staged)
        if (n == name) return &t;
      return nullptr;
    };
    auto restore_store = [&](const char* prefix, ParamStore<float>& ps) {
      for (int i = 0; i < ps.size(); ++i) {
        ParamDef<float>& p = ps.param(i);
        Tensor<float>* t = take(prefix + p.name);
        if (!t || !(t->same_shape(p.value)))
          throw CheckpointError("checkpoint missing or reshaped parameter: " + p.name);
        p.value = std::move(*t);
      }
    };
    auto restore_velocity = [&](const char* prefix, const ParamStore<float>& ps,
                                SgdMomentum& opt) {
      for (int i = 0; i < ps.size(); ++i) {
        Tensor<float>* t = take(prefix + ps.param(i).name);
        if (!t || !(t->same_shape(opt.vel[size_t(i)])))
          throw CheckpointError("checkpoint missing optimizer state: " + ps.param(i).name);
        opt.vel[size_t(i)] = std::move(*t);
      }
    };
    auto restore_queue = [&](const char* name, NegativeQueue& q) {
      Tensor<float>* t = take(name);
      if (!t || t->ndim() != 2 || (t->dims[0] > 0 && t->dims[1] != q.dim))
        throw CheckpointError(std::string("checkpoint queue mismatch: ") + name);
      q.entries.clear();
      for (int i = 0; i < t->dims[0]; ++i)
        q.entries.emplace_back(t->data() + int64_t(i) * q.dim,
                               t->data() + int64_t(i + 1) * q.dim);
    };

    restore_store("q.", model_.enc.query);
    restore_store("k.", model_.enc.key);
    restore_store("d.", model_.dec_params);
    restore_velocity("vq.", model_.enc.query, opt_q_);
    restore_velocity("vd.", model_.dec_params, opt_d_);
    restore_queue("queue.vv", queues_.vv);
    restore_queue("queue.vd", queues_.vd);
    restore_queue("queue.fra", queues_.fra);
    restore_queue("queue.pix", queues_.pix);

    step_ = man.at("step").get<int64_t>();
    MA_CHECK(step_ >= 0 && step_ <= cfg_.total_steps(), "checkpoint step outside schedule");
    order_epoch_ = -1;  // re-derive the permutation for the restored epoch
  }

 private:
  static constexpr const char kMagic[9] = "MALIGNCK";

  // Derivation root for one named random stream (1=dataset, 2=augment, 3=dropout).
  Rng derive(uint64_t stream) const { return Rng(cfg_.seed).fork(stream); }

  static void assert_finite(const ParamStore<float>& ps, const char* which) {
    for (int i = 0; i < ps.size(); ++i) {
      const Tensor<float>& t = ps.param(i).value;
      for (int64_t j = 0; j < t.numel(); ++j)
        if (!std::isfinite(t[j]))
          throw NumericError(std::string("non-finite ") + which +
                             " parameter: " + ps.param(i).name);
    }
  }

  void refresh_order(int ep) {
    if (order_epoch_ == ep) return;
    order_.resize(size_t(cfg_.dataset_size));
    for (int i = 0; i < cfg_.dataset_size; ++i) order_[size_t(i)] = i;
    Rng r = derive(4).fork(uint64_t(ep));
    r.shuffle(order_);
    order_epoch_ = ep;
  }

  static void collect_store(const char* prefix, const ParamStore<float>& ps,
                            std::vector<std::pair<std::string, const Tensor<float>*>>& out) {
    for (int i = 0; i < ps.size(); ++i)
      out.emplace_back(prefix + ps.param(i).name, &ps.param(i).value);
  }
  static void collect_velocity(const char* prefix, const ParamStore<float>& ps,
                               const SgdMomentum& opt,
                               std::vector<std::pair<std::string, const Tensor<float>*>>& out) {
    for (int i = 0; i < ps.size(); ++i)
      out.emplace_back(prefix + ps.param(i).name, &opt.vel[size_t(i)]);
  }

  TrainConfig cfg_;
  Rng init_rng_;  // consumed by model construction only
  PipelineModel<float> model_;
  QueueSet queues_;
  SgdMomentum opt_q_, opt_d_;
  std::vector<SceneSpec> dataset_;
  std::vector<int> order_;
  int order_epoch_ = -1;
  int64_t step_ = 0;
};

}  // namespace ma
