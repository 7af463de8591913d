#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "motionalign/image_io.hpp"
#include "motionalign/trainer.hpp"

// Downstream and diagnostic evaluation over trained encoders: linear-probe /
// fine-tune classification, video retrieval, RGB-vs-motion affinity matrices,
// temporal similarity statistics, foreground-mask quality, and activation-map
// export. Everything runs on clean (augmentation-free) windows and leaves the
// caller's parameters untouched.

namespace ma {

// --- clean windows over a clip ------------------------------------------------

// `count` uniformly spaced window starts over [0, max_start].
inline std::vector<int> uniform_starts(int raw_frames, int window, int stride, int count) {
  int max_start = raw_frames - (window - 1) * stride - 1;
  MA_CHECK(max_start >= 0, "clip too short for one window");
  MA_CHECK(count >= 1, "need at least one window");
  std::vector<int> out;
  out.reserve(size_t(count));
  if (count == 1) {
    out.push_back(max_start / 2);
    return out;
  }
  for (int i = 0; i < count; ++i)
    out.push_back(int(std::lround(double(i) * max_start / double(count - 1))));
  return out;
}

// Identity-geometry view (full canvas, no flip, no photometrics): the warp
// degenerates to an exact frame slice, so eval features see the raw pixels.
inline ViewRecord identity_view(const LabeledClip& clip, int start, int stride,
                                int window) {
  int s = clip.frames.dims[2];
  ViewRecord vr;
  vr.start_frame = start;
  vr.stride = stride;
  vr.geom.crop_top = vr.geom.crop_left = 0;
  vr.geom.crop_h = vr.geom.crop_w = s;
  vr.geom.flip = false;
  vr.geom.out_size = s;
  vr.view = apply_geometry(clip.frames, start, stride, window, vr.geom);
  return vr;
}

inline double guarded_cos(const float* a, const float* b, int n) {
  double na = 0, nb = 0, d = 0;
  for (int i = 0; i < n; ++i) {
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
    d += double(a[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0;  // zero feature vectors have no direction
  return d / (std::sqrt(na) * std::sqrt(nb));
}

// Pooled backbone features of `count` clean windows. `motion` rows are filled
// only when `with_motion`; both come from the same windows.
struct WindowFeatures {
  Tensor<float> rgb;     // [count, C]
  Tensor<float> motion;  // [count, C] or empty
};

inline WindowFeatures window_features(const EncoderModel<float>& em,
                                      const ParamStore<float>& ps, const LabeledClip& clip,
                                      const AugConfig& aug, int count, bool with_motion) {
  const int c = em.cfg.channels();
  std::vector<int> starts =
      uniform_starts(clip.frames.dims[0], aug.window, aug.stride, count);
  WindowFeatures out;
  out.rgb = Tensor<float>::uninit({count, c});
  if (with_motion) out.motion = Tensor<float>::uninit({count, c});
  for (int i = 0; i < count; ++i) {
    ViewRecord vr = identity_view(clip, starts[size_t(i)], aug.stride, aug.window);
    Graph<float> g;
    NoGrad<float> ng(g);
    Binding<float> bd = bind(g, ps, /*needs_grad=*/false);
    Var<float> pooled =
        em.pooled_row(bd, em.encode_map(bd, g.constant(to_chw<float>(vr.view))));
    std::copy_n(pooled.val().data(), c, out.rgb.data() + int64_t(i) * c);
    if (with_motion) {
      Var<float> mp = em.pooled_row(
          bd, em.encode_map(bd, g.constant(to_chw<float>(frame_difference(vr).diff))));
      std::copy_n(mp.val().data(), c, out.motion.data() + int64_t(i) * c);
    }
  }
  return out;
}

// --- linear probe / fine-tune --------------------------------------------------

struct ProbeConfig {
  int classes = kNumMotionClasses;
  int windows = 10;  // uniform windows per video, train and eval alike
  int epochs = 30;
  double lr = 0.1;
  int batch = 64;
  uint64_t seed = 1;
  bool frozen = true;
  // fine-tune path (frozen = false): joint encoder+classifier training
  int ft_epochs = 5;
  double ft_lr = 0.005;
  int ft_batch = 8;
};

struct ProbeResult {
  double top1 = 0;
  std::vector<double> per_class;
  bool frozen = true;
};

// Multinomial logistic classifier, bias folded in as the last weight column.
struct LinearClassifier {
  Tensor<float> w;  // [K, C+1]
  int classes = 0, dim = 0;

  LinearClassifier() = default;
  LinearClassifier(int k, int c) : w(Tensor<float>::zeros({k, c + 1})), classes(k), dim(c) {}

  int predict_mean(const Tensor<float>& rows) const {  // rows: [n, C], mean-pooled
    std::vector<double> f(size_t(dim), 0.0);
    for (int i = 0; i < rows.dims[0]; ++i)
      for (int j = 0; j < dim; ++j) f[size_t(j)] += rows[int64_t(i) * dim + j];
    int best = 0;
    double best_z = -1e300;
    for (int k = 0; k < classes; ++k) {
      double z = double(w[int64_t(k) * (dim + 1) + dim]) * rows.dims[0];  // bias per row
      for (int j = 0; j < dim; ++j) z += double(w[int64_t(k) * (dim + 1) + j]) * f[size_t(j)];
      if (z > best_z) {
        best_z = z;
        best = k;
      }
    }
    return best;
  }
};

// Plain-SGD softmax regression on fixed feature rows. Deterministic in `seed`.
inline LinearClassifier train_linear_softmax(const Tensor<float>& xs,
                                             const std::vector<int>& ys, int classes,
                                             int epochs, double lr, int batch,
                                             uint64_t seed) {
  const int n = xs.dims[0], c = xs.dims[1];
  MA_CHECK(n == int(ys.size()) && n > 0, "feature/label size mismatch");
  LinearClassifier clf(classes, c);
  std::vector<int> order(size_t(n), 0);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> z(size_t(classes), 0.0);
  Tensor<float> gw = Tensor<float>::zeros(clf.w.dims);
  Rng root(seed);
  for (int ep = 0; ep < epochs; ++ep) {
    Rng r = root.fork(uint64_t(ep));
    r.shuffle(order);
    for (int at = 0; at < n; at += batch) {
      int bn = std::min(batch, n - at);
      std::fill(gw.data(), gw.data() + gw.numel(), 0.0f);
      for (int bi = 0; bi < bn; ++bi) {
        const int i = order[size_t(at + bi)];
        const float* x = xs.data() + int64_t(i) * c;
        double m = -1e300;
        for (int k = 0; k < classes; ++k) {
          z[size_t(k)] = double(clf.w[int64_t(k) * (c + 1) + c]);
          for (int j = 0; j < c; ++j)
            z[size_t(k)] += double(clf.w[int64_t(k) * (c + 1) + j]) * x[j];
          m = std::max(m, z[size_t(k)]);
        }
        double den = 0;
        for (int k = 0; k < classes; ++k) den += std::exp(z[size_t(k)] - m);
        for (int k = 0; k < classes; ++k) {
          double p = std::exp(z[size_t(k)] - m) / den - (k == ys[size_t(i)] ? 1.0 : 0.0);
          float* gk = gw.data() + int64_t(k) * (c + 1);
          for (int j = 0; j < c; ++j) gk[j] += float(p * x[j]);
          gk[c] += float(p);
        }
      }
      const float scale = float(lr / bn);
      for (int64_t j = 0; j < clf.w.numel(); ++j) clf.w[j] -= scale * gw[j];
    }
  }
  return clf;
}

namespace detail {

// Fine-tune: joint SGD over a copy of the encoder store and a linear head,
// driven through the autodiff graph. Returns the tuned copies.
inline std::pair<ParamStore<float>, LinearClassifier> finetune_encoder(
    const EncoderModel<float>& em, const ParamStore<float>& ps,
    const std::vector<LabeledClip>& clips, const ProbeConfig& pc, const AugConfig& aug) {
  const int c = em.cfg.channels();
  ParamStore<float> tuned;
  {
    Rng dummy(0);
    EncoderModel<float> layout(tuned, em.cfg, dummy);  // registers the same layout
    (void)layout;
  }
  tuned.copy_from(ps);
  ParamStore<float> head;
  head.add("probe.w", Tensor<float>::zeros({pc.classes, c + 1}));
  SgdMomentum opt_enc(tuned, 0.0f, 0.0f), opt_head(head, 0.0f, 0.0f);

  struct Item {
    int clip, start, label;
  };
  std::vector<Item> items;
  for (size_t v = 0; v < clips.size(); ++v)
    for (int s : uniform_starts(clips[v].frames.dims[0], aug.window, aug.stride, pc.windows))
      items.push_back({int(v), s, clips[v].label});

  Rng root(pc.seed);
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (int ep = 0; ep < pc.ft_epochs; ++ep) {
    Rng r = root.fork(0x0F'0000 + uint64_t(ep));
    r.shuffle(order);
    for (size_t at = 0; at < items.size(); at += size_t(pc.ft_batch)) {
      const int bn = int(std::min(size_t(pc.ft_batch), items.size() - at));
      Graph<float> g;
      Binding<float> be = bind(g, tuned, /*needs_grad=*/true);
      Binding<float> bh = bind(g, head, /*needs_grad=*/true);
      Var<float> feats;
      Tensor<float> onehot = Tensor<float>::zeros({bn, pc.classes});
      for (int bi = 0; bi < bn; ++bi) {
        const Item& it = items[size_t(order[at + size_t(bi)])];
        ViewRecord vr = identity_view(clips[size_t(it.clip)], it.start, aug.stride, aug.window);
        Var<float> row = em.pooled_row(
            be, em.encode_map(be, g.constant(to_chw<float>(vr.view))));
        feats = feats.valid() ? concat_rows(feats, row) : row;
        onehot[int64_t(bi) * pc.classes + it.label] = 1.0f;
      }
      Var<float> aug_rows = concat_cols(feats, g.constant(Tensor<float>::full({bn, 1}, 1.0f)));
      Var<float> logits = matmul_nt(aug_rows, bh.vars[0]);
      Var<float> loss = mean_all(
          sub(lse_rows_masked(logits, Tensor<float>{}), lse_rows_masked(logits, onehot)));
      g.backward(loss);
      opt_enc.step(tuned, g, be, float(pc.ft_lr));
      opt_head.step(head, g, bh, float(pc.ft_lr));
    }
  }
  LinearClassifier clf(pc.classes, c);
  clf.w = head.param(0).value;
  return {std::move(tuned), std::move(clf)};
}

}  // namespace detail

// Trains a classifier on pooled encoder features of the train split and
// reports top-1 on the test split, predictions averaged over the per-video
// windows. frozen=true touches only the classifier; frozen=false fine-tunes
// a copy of the encoder jointly (the caller's parameters are never modified).
inline ProbeResult linear_probe(const EncoderModel<float>& em, const ParamStore<float>& ps,
                                const std::vector<SceneSpec>& train,
                                const std::vector<SceneSpec>& test, int raw_frames,
                                const AugConfig& aug, const ProbeConfig& pc) {
  MA_CHECK(!train.empty() && !test.empty(), "probe needs nonempty splits");
  ProbeResult res;
  res.frozen = pc.frozen;
  const int c = em.cfg.channels();

  LinearClassifier clf;
  const ParamStore<float>* eval_ps = &ps;
  ParamStore<float> tuned;

  if (pc.frozen) {
    Tensor<float> xs = Tensor<float>::uninit({int(train.size()) * pc.windows, c});
    std::vector<int> ys;
    ys.reserve(train.size() * size_t(pc.windows));
    for (size_t v = 0; v < train.size(); ++v) {
      LabeledClip clip = generate_clip(train[v], raw_frames);
      MA_CHECK(clip.label >= 0 && clip.label < pc.classes, "label outside class range");
      WindowFeatures wf = window_features(em, ps, clip, aug, pc.windows, false);
      std::copy_n(wf.rgb.data(), int64_t(pc.windows) * c,
                  xs.data() + int64_t(v) * pc.windows * c);
      for (int i = 0; i < pc.windows; ++i) ys.push_back(clip.label);
    }
    clf = train_linear_softmax(xs, ys, pc.classes, pc.epochs, pc.lr, pc.batch, pc.seed);
  } else {
    std::vector<LabeledClip> clips;
    clips.reserve(train.size());
    for (const SceneSpec& sp : train) clips.push_back(generate_clip(sp, raw_frames));
    for (const LabeledClip& cl : clips)
      MA_CHECK(cl.label >= 0 && cl.label < pc.classes, "label outside class range");
    auto [t, h] = detail::finetune_encoder(em, ps, clips, pc, aug);
    tuned = std::move(t);
    clf = std::move(h);
    eval_ps = &tuned;
  }

  std::vector<int> hits(size_t(pc.classes), 0), totals(size_t(pc.classes), 0);
  int correct = 0;
  for (const SceneSpec& sp : test) {
    LabeledClip clip = generate_clip(sp, raw_frames);
    MA_CHECK(clip.label >= 0 && clip.label < pc.classes, "label outside class range");
    WindowFeatures wf = window_features(em, *eval_ps, clip, aug, pc.windows, false);
    int pred = clf.predict_mean(wf.rgb);
    ++totals[size_t(clip.label)];
    if (pred == clip.label) {
      ++correct;
      ++hits[size_t(clip.label)];
    }
  }
  res.top1 = double(correct) / double(test.size());
  res.per_class.resize(size_t(pc.classes), 0.0);
  for (int k = 0; k < pc.classes; ++k)
    res.per_class[size_t(k)] = totals[size_t(k)] ? double(hits[size_t(k)]) / totals[size_t(k)] : 0.0;
  return res;
}

// --- retrieval -----------------------------------------------------------------

struct RetrievalResult {
  std::vector<int> ks;
  std::vector<double> recall;  // aligned with ks
};

// Cosine-similarity retrieval; a query scores a hit at k iff any of its k
// nearest gallery rows shares the label. Pure function of the features.
inline RetrievalResult recall_at(const Tensor<float>& gallery,
                                 const std::vector<int>& gallery_labels,
                                 const Tensor<float>& queries,
                                 const std::vector<int>& query_labels, std::vector<int> ks) {
  const int n = gallery.dims[0], m = queries.dims[0], c = gallery.dims[1];
  MA_CHECK(n == int(gallery_labels.size()) && m == int(query_labels.size()),
           "feature/label size mismatch");
  MA_CHECK(!ks.empty(), "no k values");
  std::sort(ks.begin(), ks.end());
  MA_CHECK(ks.front() >= 1 && ks.back() <= n, "k outside gallery size");

  RetrievalResult res;
  res.ks = ks;
  res.recall.assign(ks.size(), 0.0);
  std::vector<int> idx(size_t(n), 0);
  std::vector<double> sim(size_t(n), 0.0);
  for (int q = 0; q < m; ++q) {
    for (int i = 0; i < n; ++i)
      sim[size_t(i)] = guarded_cos(queries.data() + int64_t(q) * c,
                                   gallery.data() + int64_t(i) * c, c);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return sim[size_t(a)] > sim[size_t(b)]; });
    bool hit = false;
    size_t at = 0;
    for (int i = 0; i < ks.back(); ++i) {
      hit = hit || gallery_labels[size_t(idx[size_t(i)])] == query_labels[size_t(q)];
      while (at < ks.size() && i + 1 == res.ks[at]) {
        res.recall[at] += hit ? 1 : 0;
        ++at;
      }
    }
  }
  for (double& r : res.recall) r /= double(m);
  return res;
}

// Mean pooled feature per video (rows L2-normalized by the cosine later).
inline Tensor<float> video_features(const EncoderModel<float>& em, const ParamStore<float>& ps,
                                    const std::vector<SceneSpec>& specs, int raw_frames,
                                    const AugConfig& aug, int windows,
                                    std::vector<int>* labels = nullptr) {
  const int c = em.cfg.channels();
  Tensor<float> out = Tensor<float>::zeros({int(specs.size()), c});
  if (labels) labels->clear();
  for (size_t v = 0; v < specs.size(); ++v) {
    LabeledClip clip = generate_clip(specs[v], raw_frames);
    if (labels) labels->push_back(clip.label);
    WindowFeatures wf = window_features(em, ps, clip, aug, windows, false);
    float* row = out.data() + int64_t(v) * c;
    for (int i = 0; i < windows; ++i)
      for (int j = 0; j < c; ++j) row[j] += wf.rgb[int64_t(i) * c + j] / float(windows);
  }
  return out;
}

// --- affinity and temporal similarity -------------------------------------------

// Time-pool a [C,T,H,W] map to per-pixel columns [C, HW].
inline Tensor<float> time_pooled_columns(const Tensor<float>& map) {
  MA_CHECK(map.ndim() == 4, "expected [C,T,H,W] map");
  const int c = map.dims[0], t = map.dims[1];
  const int hw = map.dims[2] * map.dims[3];
  Tensor<float> out = Tensor<float>::zeros({c, hw});
  for (int ci = 0; ci < c; ++ci)
    for (int ti = 0; ti < t; ++ti) {
      const float* src = map.data() + (int64_t(ci) * t + ti) * hw;
      float* dst = out.data() + int64_t(ci) * hw;
      for (int i = 0; i < hw; ++i) dst[i] += src[i] / float(t);
    }
  return out;
}

struct AffinityResult {
  Tensor<float> matrix;  // [HW, HW], mean over clips; row = RGB pixel, col = motion pixel
  double diag_dominance = 0;
};

// Pairwise cosine between the pixel columns of two [C, P] feature blocks.
inline Tensor<float> affinity_matrix(const Tensor<float>& x, const Tensor<float>& y) {
  MA_CHECK(x.ndim() == 2 && x.dims == y.dims, "column blocks must match");
  const int c = x.dims[0], p = x.dims[1];
  Tensor<float> out = Tensor<float>::uninit({p, p});
  std::vector<float> xc(size_t(c), 0.0f), yc(size_t(c), 0.0f);
  for (int a = 0; a < p; ++a) {
    for (int ci = 0; ci < c; ++ci) xc[size_t(ci)] = x[int64_t(ci) * p + a];
    for (int b = 0; b < p; ++b) {
      for (int ci = 0; ci < c; ++ci) yc[size_t(ci)] = y[int64_t(ci) * p + b];
      out[int64_t(a) * p + b] = float(guarded_cos(xc.data(), yc.data(), c));
    }
  }
  return out;
}

inline double diag_dominance(const Tensor<float>& m) {
  MA_CHECK(m.ndim() == 2 && m.dims[0] == m.dims[1] && m.dims[0] > 1, "square matrix needed");
  const int n = m.dims[0];
  double don = 0, doff = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      (i == j ? don : doff) += m[int64_t(i) * n + j];
  return don / n - doff / (double(n) * n - n);
}

// Mean RGB-vs-motion per-pixel cosine matrix over `n` clips, one window per
// clip at a seeded uniform start.
inline AffinityResult affinity(const EncoderModel<float>& em, const ParamStore<float>& ps,
                               const std::vector<SceneSpec>& specs, int n, int raw_frames,
                               const AugConfig& aug, uint64_t seed) {
  MA_CHECK(n >= 1 && n <= int(specs.size()), "clip count outside dataset");
  AffinityResult res;
  Rng rng(seed);
  const int max_start = raw_frames - (aug.window - 1) * aug.stride - 1;
  for (int i = 0; i < n; ++i) {
    LabeledClip clip = generate_clip(specs[size_t(i)], raw_frames);
    ViewRecord vr = identity_view(clip, rng.uniform_int(0, max_start), aug.stride, aug.window);
    Graph<float> g;
    NoGrad<float> ng(g);
    Binding<float> bd = bind(g, ps, /*needs_grad=*/false);
    Tensor<float> x = time_pooled_columns(
        em.encode_map(bd, g.constant(to_chw<float>(vr.view))).val());
    Tensor<float> y = time_pooled_columns(
        em.encode_map(bd, g.constant(to_chw<float>(frame_difference(vr).diff))).val());
    Tensor<float> a = affinity_matrix(x, y);
    if (res.matrix.empty()) res.matrix = Tensor<float>::zeros(a.dims);
    for (int64_t j = 0; j < a.numel(); ++j) res.matrix[j] += a[j] / float(n);
  }
  res.diag_dominance = diag_dominance(res.matrix);
  return res;
}

struct TemporalStats {
  double mean = 0, stddev = 0;
  std::vector<double> samples;  // one per (video, window)
};

// Pooled RGB-vs-motion cosine per window, over `clips_per_video` uniform
// windows of each video; mean and sample standard deviation over all draws.
inline TemporalStats temporal_similarity_stats(const EncoderModel<float>& em,
                                               const ParamStore<float>& ps,
                                               const std::vector<SceneSpec>& specs,
                                               int raw_frames, const AugConfig& aug,
                                               int clips_per_video = 10) {
  TemporalStats ts;
  const int c = em.cfg.channels();
  for (const SceneSpec& sp : specs) {
    LabeledClip clip = generate_clip(sp, raw_frames);
    WindowFeatures wf = window_features(em, ps, clip, aug, clips_per_video, true);
    for (int i = 0; i < clips_per_video; ++i)
      ts.samples.push_back(guarded_cos(wf.rgb.data() + int64_t(i) * c,
                                       wf.motion.data() + int64_t(i) * c, c));
  }
  const size_t n = ts.samples.size();
  MA_CHECK(n >= 2, "need at least two samples for a deviation");
  for (double v : ts.samples) ts.mean += v / double(n);
  double acc = 0;
  for (double v : ts.samples) acc += (v - ts.mean) * (v - ts.mean);
  ts.stddev = std::sqrt(acc / double(n - 1));
  return ts;
}

// --- foreground-mask quality ------------------------------------------------------

struct MaskEval {
  double iou = 0;         // fused-map partition vs ground-truth sprite coverage
  double random_iou = 0;  // random cell subset of equal cardinality, same clips
};

inline MaskEval mask_quality(const EncoderModel<float>& em, const ParamStore<float>& ps,
                             const std::vector<SceneSpec>& specs, int n, int raw_frames,
                             const PipelineConfig& cfg, uint64_t seed) {
  MA_CHECK(n >= 1 && n <= int(specs.size()), "clip count outside dataset");
  MaskEval me;
  Rng rng(seed);
  const AugConfig& aug = cfg.aug;
  const int hw = cfg.cells();
  for (int i = 0; i < n; ++i) {
    LabeledClip clip = generate_clip(specs[size_t(i)], raw_frames);
    int start = uniform_starts(raw_frames, aug.window, aug.stride, 1)[0];
    ViewRecord vr = identity_view(clip, start, aug.stride, aug.window);
    Graph<float> g;
    NoGrad<float> ng(g);
    Binding<float> bd = bind(g, ps, /*needs_grad=*/false);
    Tensor<float> rgb_map = em.encode_map(bd, g.constant(to_chw<float>(vr.view))).val();
    Tensor<float> diff_map =
        em.encode_map(bd, g.constant(to_chw<float>(frame_difference(vr).diff))).val();
    Tensor<float> fused = select_caam(rgb_map, diff_map, cfg.mask_source, cfg.fuse_normalized);
    Tensor<uint8_t> fg = foreground_partition(fused, cfg.beta);

    Tensor<float> cover = mask_cell_coverage(clip.fg_mask, vr.geom, vr.start_frame,
                                             vr.stride, aug.window, cfg.enc.feat_hw);
    me.iou += mask_iou(fg, cover) / double(n);

    int k = 0;
    for (int64_t j = 0; j < fg.numel(); ++j) k += fg[j] ? 1 : 0;
    std::vector<int> cells(size_t(hw), 0);
    std::iota(cells.begin(), cells.end(), 0);
    rng.shuffle(cells);
    Tensor<uint8_t> rnd({hw});
    for (int j = 0; j < k; ++j) rnd[cells[size_t(j)]] = 1;
    me.random_iou += mask_iou(rnd, cover) / double(n);
  }
  return me;
}

// --- activation-map export ---------------------------------------------------------

// Nearest-neighbor upscale of a [h,w] map to [H,W] for visual panels.
inline Tensor<float> upscale_nearest(const Tensor<float>& m, int out_h, int out_w) {
  MA_CHECK(m.ndim() == 2, "expected [h,w]");
  Tensor<float> out = Tensor<float>::uninit({out_h, out_w});
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      out[int64_t(i) * out_w + j] =
          m[int64_t(i * m.dims[0] / out_h) * m.dims[1] + j * m.dims[1] / out_w];
  return out;
}

// Writes one panel set per clip: the window's middle frame plus RGB / motion /
// fused activation maps and the binary foreground mask, upscaled to the input
// size. Returns the written paths.
inline std::vector<std::string> export_caam(const EncoderModel<float>& em,
                                            const ParamStore<float>& ps,
                                            const std::vector<SceneSpec>& specs, int n,
                                            int raw_frames, const PipelineConfig& cfg,
                                            const std::string& out_dir) {
  MA_CHECK(n >= 1 && n <= int(specs.size()), "clip count outside dataset");
  std::filesystem::create_directories(out_dir);
  const AugConfig& aug = cfg.aug;
  std::vector<std::string> written;
  for (int i = 0; i < n; ++i) {
    LabeledClip clip = generate_clip(specs[size_t(i)], raw_frames);
    int start = uniform_starts(raw_frames, aug.window, aug.stride, 1)[0];
    ViewRecord vr = identity_view(clip, start, aug.stride, aug.window);
    Graph<float> g;
    NoGrad<float> ng(g);
    Binding<float> bd = bind(g, ps, /*needs_grad=*/false);
    Tensor<float> rgb_map = em.encode_map(bd, g.constant(to_chw<float>(vr.view))).val();
    Tensor<float> diff_map =
        em.encode_map(bd, g.constant(to_chw<float>(frame_difference(vr).diff))).val();

    Tensor<float> a_rgb = caam(rgb_map);
    Tensor<float> a_diff = caam(diff_map);
    Tensor<float> fused = select_caam(rgb_map, diff_map, cfg.mask_source, cfg.fuse_normalized);
    minmax_normalize(a_rgb);
    minmax_normalize(a_diff);
    Tensor<float> fused_vis = fused;
    minmax_normalize(fused_vis);
    Tensor<uint8_t> fg = foreground_partition(fused, cfg.beta);
    const int s = vr.geom.out_size;
    Tensor<float> mask({cfg.enc.feat_hw, cfg.enc.feat_hw});
    for (int64_t j = 0; j < fg.numel(); ++j) mask[j] = fg[j] ? 1.0f : 0.0f;

    const int mid = aug.window / 2;
    Tensor<float> frame = Tensor<float>::uninit({3, s, s});
    std::copy_n(vr.view.data() + int64_t(mid) * 3 * s * s, int64_t(3) * s * s, frame.data());

    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "clip_%02d_", i);
    auto emit_pgm = [&](const char* what, const Tensor<float>& img) {
      std::string path = out_dir + "/" + prefix + what + ".pgm";
      write_pgm(path, upscale_nearest(img, s, s));
      written.push_back(std::move(path));
    };
    std::string fpath = out_dir + "/" + prefix + "frame.ppm";
    write_ppm(fpath, frame);
    written.push_back(std::move(fpath));
    emit_pgm("rgb", a_rgb);
    emit_pgm("diff", a_diff);
    emit_pgm("fused", fused_vis);
    emit_pgm("mask", mask);
  }
  return written;
}

}  // namespace ma
