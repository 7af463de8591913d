#pragma once

#include <optional>

#include "motionalign/augment.hpp"
#include "motionalign/decoder.hpp"
#include "motionalign/encoder.hpp"
#include "motionalign/foreground.hpp"
#include "motionalign/losses.hpp"
#include "motionalign/motionsource.hpp"
#include "motionalign/video.hpp"

// Batch assembly: augmented two-view inputs -> momentum-encoder key features
// (plain tensors, no gradients) -> query/decoder forward -> the joint loss.
// Every sample is evaluated in both view directions when symmetric mode is on;
// one direction treats view 0 as the prediction source and view 1 as the
// reconstruction target, the other swaps them. All key passes run once and
// serve both directions.

namespace ma {

// Where the dense loss draws its cross-video negatives.
enum class PixNegMode { own_map, in_batch, queue };

struct PipelineConfig {
  EncoderConfig enc;
  DecoderConfig dec;
  AugConfig aug;

  double tau = kTau;
  double ema_momentum = 0.999;

  // geometric correspondence
  float threshold = 0.7f;
  BinDiagonalView normalizer = BinDiagonalView::key;

  // foreground machinery
  double beta = 0.5;
  MaskPosition mask_position = MaskPosition::both;
  MaskSource mask_source = MaskSource::both;
  bool fuse_normalized = true;

  // loss selection
  bool use_vv = true, use_vd = false, use_pix = true, use_fra = true;
  bool use_decoder = true;
  bool shared_decoder = true;  // false: the cls path gets its own decoder
  bool symmetric = true;
  FraLossType fra_type = FraLossType::infonce;
  double fra_margin = kTripletMargin;
  bool pix_bg_in_denominator = true;
  PixNegMode pix_neg_mode = PixNegMode::in_batch;

  int cells() const { return enc.feat_hw * enc.feat_hw; }

  void validate() const {
    MA_CHECK(tau > 0, "temperature must be positive");
    MA_CHECK(threshold > 0, "distance threshold must be positive");
    MA_CHECK(beta > 0 && beta < 1, "beta must lie in (0,1)");
    MA_CHECK(ema_momentum >= 0 && ema_momentum <= 1, "ema momentum out of range");
    MA_CHECK(use_decoder || !use_fra, "frame loss requires the decoder");
    MA_CHECK(dec.in_dim == enc.channels(), "decoder adapter dim != encoder channels");
    MA_CHECK(dec.max_context >= cells(), "decoder positional table too short");
    MA_CHECK(use_vv || use_vd || use_pix || use_fra, "no loss enabled");
  }
};

template <typename S>
Tensor<S> cast_tensor(const Tensor<float>& t) {
  Tensor<S> out = Tensor<S>::uninit(t.dims);
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = S(t[i]);
  return out;
}

// [T,3,H,W] frame-major video -> [3,T,H,W] channel-major encoder input.
template <typename S>
Tensor<S> to_chw(const Tensor<float>& frames) {
  MA_CHECK(frames.ndim() == 4 && frames.dims[1] == 3, "expected [T,3,H,W]");
  int t = frames.dims[0], h = frames.dims[2], w = frames.dims[3];
  Tensor<S> out = Tensor<S>::uninit({3, t, h, w});
  int64_t plane = int64_t(h) * w;
  for (int ti = 0; ti < t; ++ti)
    for (int c = 0; c < 3; ++c) {
      const float* src = frames.data() + (int64_t(ti) * 3 + c) * plane;
      S* dst = out.data() + (int64_t(c) * t + ti) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = S(src[i]);
    }
  return out;
}

// One augmented training sample in encoder layout: per view, the photometric
// RGB clip, the pre-photometric full-view frame difference, and the per-frame
// sub-clip differences for the frame-level loss.
template <typename S>
struct SampleInput {
  struct View {
    Tensor<S> rgb_chw;                    // [3,T,H,W]
    Tensor<S> diff_chw;                   // [3,T-1,H,W]
    std::vector<Tensor<S>> sub_diff_chw;  // t_feat x [3,seg-1,H,W]
    GeomParams geom;
    Tensor<float> cover;                  // [HW] ground-truth sprite coverage, optional
  };
  View view[2];
  int canvas = 0;
  int label = -1;
};

// Ground-truth sprite coverage per feature cell for one view: the bilinear-
// warped foreground mask averaged over each cell's pixel block and the view's
// frames. Uses the same warp as apply_geometry, so cell (u,v) aligns with
// what the encoder saw there (flips included).
inline Tensor<float> mask_cell_coverage(const Tensor<uint8_t>& fg_mask, const GeomParams& gp,
                                        int start, int stride, int window, int feat_hw) {
  int s = fg_mask.dims[1];
  int o = gp.out_size;
  MA_CHECK(o % feat_hw == 0, "feature grid must divide the view size");
  int block = o / feat_hw;
  Tensor<float> cover = Tensor<float>::zeros({feat_hw * feat_hw});
  std::vector<float> plane(size_t(s) * s, 0.0f);
  for (int t = 0; t < window; ++t) {
    const uint8_t* mk = fg_mask.data() + int64_t(start + t * stride) * s * s;
    for (int64_t i = 0; i < int64_t(s) * s; ++i) plane[size_t(i)] = float(mk[i]);
    for (int i = 0; i < o; ++i) {
      float sy = gp.crop_top + (i + 0.5f) * gp.crop_h / float(o) - 0.5f;
      for (int j = 0; j < o; ++j) {
        int jj = gp.flip ? o - 1 - j : j;
        float sx = gp.crop_left + (jj + 0.5f) * gp.crop_w / float(o) - 0.5f;
        cover[(i / block) * feat_hw + j / block] += detail::sample_bilinear(
            plane.data(), s, sy, sx, gp.crop_top, gp.crop_left, gp.crop_h, gp.crop_w);
      }
    }
  }
  float inv = 1.0f / (float(window) * block * block);
  for (int64_t i = 0; i < cover.numel(); ++i) cover[i] *= inv;
  return cover;
}

// feat_hw > 0 additionally fills per-view ground-truth coverage maps (used for
// the foreground-quality diagnostic; loss code never reads them).
inline SampleInput<float> make_sample_input(const LabeledClip& clip, const AugConfig& aug,
                                            int t_feat, uint64_t seed, int feat_hw = 0) {
  auto [va, vb] = sample_two_views(clip, aug, seed);
  SampleInput<float> si;
  si.canvas = clip.frames.dims[2];
  si.label = clip.label;
  ViewRecord* vr[2] = {&va, &vb};
  for (int v = 0; v < 2; ++v) {
    auto& dst = si.view[v];
    dst.geom = vr[v]->geom;
    dst.diff_chw = to_chw<float>(frame_difference(*vr[v]).diff);
    for (const MotionClip& mc : local_subclips(*vr[v], t_feat))
      dst.sub_diff_chw.push_back(to_chw<float>(mc.diff));
    if (feat_hw > 0)
      dst.cover = mask_cell_coverage(clip.fg_mask, vr[v]->geom, vr[v]->start_frame,
                                     vr[v]->stride, aug.window, feat_hw);
    apply_photometric(vr[v]->view, aug, vr[v]->photometric_seed);
    dst.rgb_chw = to_chw<float>(vr[v]->view);
  }
  return si;
}

// Everything the momentum encoder contributes for one view: projected targets
// for all losses plus the activation-map foreground partition. Plain tensors;
// no gradient ever reaches these.
template <typename S>
struct KeyView {
  Tensor<S> global;         // [1,P]
  Tensor<S> motion_global;  // [1,P]
  Tensor<S> motion_rows;    // [T_feat*HW, P], row order (t,u,v)
  Tensor<S> fra_rows;       // [T_feat, P]
  Tensor<uint8_t> fg;       // [HW]
  Tensor<S> caam_used;      // [H',W'] the map the partition ranked
};

template <typename S>
struct SampleKeys {
  KeyView<S> view[2];
};

// Activation map per configured source; single-source maps are min-max
// normalized only so exports share the fused map's [0,~2] scale convention.
template <typename S>
Tensor<S> select_caam(const Tensor<S>& rgb_map, const Tensor<S>& diff_map,
                      MaskSource source, bool normalized) {
  Tensor<S> a_rgb = caam(rgb_map);
  Tensor<S> a_diff = caam(diff_map);
  if (source == MaskSource::both) return fuse(a_rgb, a_diff, normalized);
  Tensor<S> one = source == MaskSource::rgb ? a_rgb : a_diff;
  if (normalized) minmax_normalize(one);
  return one;
}

template <typename S>
SampleKeys<S> key_forward(const EncoderModel<S>& model, const ParamStore<S>& key_params,
                          const SampleInput<S>& in, const PipelineConfig& cfg) {
  SampleKeys<S> out;
  for (int v = 0; v < 2; ++v) {
    Graph<S> g;
    NoGrad<S> ng(g);
    Binding<S> bd = bind(g, key_params, /*needs_grad=*/false);
    Var<S> rgb_map = model.encode_map(bd, g.constant(in.view[v].rgb_chw));
    Var<S> diff_map = model.encode_map(bd, g.constant(in.view[v].diff_chw));

    KeyView<S>& kv = out.view[v];
    kv.global = model.global_embed(bd, rgb_map).val();
    kv.motion_global = model.global_embed(bd, diff_map).val();
    kv.motion_rows = model.dense_embed(bd, diff_map).val();

    int t_feat = diff_map.dim(1);
    kv.fra_rows = Tensor<S>::uninit({t_feat, model.cfg.proj_dim});
    MA_CHECK(int(in.view[v].sub_diff_chw.size()) == t_feat,
             "one sub-clip per feature frame");
    for (int i = 0; i < t_feat; ++i) {
      Var<S> sub_map = model.encode_map(bd, g.constant(in.view[v].sub_diff_chw[size_t(i)]));
      Tensor<S> row = model.fra_embed(bd, sub_map).val();
      std::copy_n(row.data(), model.cfg.proj_dim,
                  kv.fra_rows.data() + int64_t(i) * model.cfg.proj_dim);
    }

    kv.caam_used = select_caam(rgb_map.val(), diff_map.val(), cfg.mask_source,
                               cfg.fuse_normalized);
    kv.fg = foreground_partition(kv.caam_used, cfg.beta);
  }
  return out;
}

// The four negative stores. Pushed after each optimizer step with that step's
// key features, so a batch never contrasts against itself through the queues.
struct QueueSet {
  NegativeQueue vv, vd, fra, pix;
  QueueSet(int dim, int cap_vv, int cap_vd, int cap_fra, int cap_pix)
      : vv(dim, cap_vv), vd(dim, cap_vd), fra(dim, cap_fra), pix(dim, cap_pix) {}
};

// Query encoder + its momentum copy + the decoder (query side only; the
// reconstruction path has no momentum twin).
template <typename S>
struct PipelineModel {
  PipelineConfig cfg;
  EncoderPair<S> enc;
  ParamStore<S> dec_params;
  MotionDecoder<S> dec;
  std::optional<MotionDecoder<S>> dec_cls;  // only when the cls path is unshared

  PipelineModel(const PipelineConfig& c, Rng& rng)
      : cfg((c.validate(), c)),
        enc(c.enc, S(c.ema_momentum), rng),
        dec(MotionDecoder<S>(dec_params, c.dec, rng)) {
    if (c.use_fra && c.use_decoder && !c.shared_decoder)
      dec_cls.emplace(dec_params, c.dec, rng, "fra.");
  }
};

template <typename S>
struct BatchResult {
  Var<S> total;  // scalar, ready for backward()
  LossBundle bundle;
  std::vector<SampleKeys<S>> keys;  // for queue pushes and diagnostics
  Binding<S> bq, bdec;              // live bindings for the optimizer step
};

namespace detail {

// Stack the target-view key motion maps of every OTHER sample into one
// negative block.
template <typename S>
Tensor<S> stack_other_maps(const std::vector<SampleKeys<S>>& keys, int self, int tview) {
  int b = int(keys.size());
  if (b <= 1) return Tensor<S>({0, 0});
  int rows = keys[0].view[tview].motion_rows.dim(0);
  int dim = keys[0].view[tview].motion_rows.dim(1);
  Tensor<S> out = Tensor<S>::uninit({(b - 1) * rows, dim});
  int at = 0;
  for (int j = 0; j < b; ++j) {
    if (j == self) continue;
    std::copy_n(keys[size_t(j)].view[tview].motion_rows.data(), int64_t(rows) * dim,
                out.data() + int64_t(at) * rows * dim);
    ++at;
  }
  return out;
}

}  // namespace detail

// Forward one batch and assemble the joint loss. `rng` drives decoder dropout
// and must be non-null when train && dec.dropout > 0.
template <typename S>
BatchResult<S> batch_forward(Graph<S>& g, PipelineModel<S>& model,
                             const std::vector<SampleInput<S>>& batch,
                             const QueueSet& queues, bool train = false,
                             Rng* rng = nullptr) {
  const PipelineConfig& cfg = model.cfg;
  MA_CHECK(!batch.empty(), "empty batch");
  const int b = int(batch.size());
  const int hw = cfg.cells();
  const int t_feat = cfg.enc.feat_t;
  const int ndir = cfg.symmetric ? 2 : 1;

  BatchResult<S> res;
  res.keys.reserve(size_t(b));
  for (const SampleInput<S>& in : batch)
    res.keys.push_back(key_forward(model.enc.model, model.enc.key, in, cfg));

  Binding<S> bq = bind(g, model.enc.query, /*needs_grad=*/true, train, rng);
  Binding<S> bdec = bind(g, model.dec_params, /*needs_grad=*/true, train, rng);
  const EncoderModel<S>& em = model.enc.model;

  // queue negatives are shared constants
  auto queue_rows = [&](const NegativeQueue& q) -> Var<S> {
    if (q.size() == 0) return Var<S>{};
    return g.constant(cast_tensor<S>(q.view()));
  };
  Var<S> vv_negs = cfg.use_vv ? queue_rows(queues.vv) : Var<S>{};
  Var<S> vd_negs = cfg.use_vd ? queue_rows(queues.vd) : Var<S>{};
  Var<S> fra_negs = cfg.use_fra ? queue_rows(queues.fra) : Var<S>{};
  Var<S> pix_queue_negs =
      cfg.use_pix && cfg.pix_neg_mode == PixNegMode::queue ? queue_rows(queues.pix) : Var<S>{};

  Var<S> acc_vv, acc_vd, acc_pix, acc_fra;
  auto accumulate = [&](Var<S>& acc, Var<S> term) {
    acc = acc.valid() ? add(acc, term) : term;
  };
  auto append_rows = [&](Var<S>& acc, Var<S> part) {
    acc = acc.valid() ? concat_rows(acc, part) : part;
  };
  double sum_pos_sim_vv = 0, sum_pos_sim_pix = 0;
  int64_t n_pos_sim_vv = 0;
  int pix_loss_evals = 0;

  for (int i = 0; i < b; ++i) {
    const SampleInput<S>& in = batch[size_t(i)];
    const SampleKeys<S>& kk = res.keys[size_t(i)];

    // query backbone maps + dense row views, once per sample
    Var<S> map[2], rows[2];
    for (int v = 0; v < 2; ++v) {
      map[v] = em.encode_map(bq, g.constant(in.view[v].rgb_chw));
      rows[v] = map_rows(map[v]);
    }

    for (int d = 0; d < ndir; ++d) {
      const int s = d, t = 1 - d;
      const KeyView<S>& tgt = kk.view[t];

      if (cfg.use_vv || cfg.use_vd) {
        Var<S> q_glob = em.global_embed(bq, map[s]);
        if (cfg.use_vv) {
          accumulate(acc_vv, loss_vv(q_glob, g.constant(tgt.global), vv_negs, S(cfg.tau)));
          // diagnostics: positive cosine from plain values
          const Tensor<S>& qv = q_glob.val();
          double nq = 0, nk = 0, dot = 0;
          for (int j = 0; j < qv.dim(1); ++j) {
            nq += double(qv[j]) * qv[j];
            nk += double(tgt.global[j]) * tgt.global[j];
            dot += double(qv[j]) * tgt.global[j];
          }
          if (nq > 0 && nk > 0) {
            sum_pos_sim_vv += dot / (std::sqrt(nq) * std::sqrt(nk));
            ++n_pos_sim_vv;
          }
        }
        if (cfg.use_vd)
          accumulate(acc_vd,
                     loss_vd(q_glob, g.constant(tgt.motion_global), vd_negs, S(cfg.tau)));
      }

      if (!cfg.use_pix && !cfg.use_fra) continue;

      // prediction-side foreground choice
      bool mask_pred = cfg.mask_position == MaskPosition::prediction ||
                       cfg.mask_position == MaskPosition::both;
      std::vector<int> qcells;
      if (mask_pred) {
        qcells = mask_indices(kk.view[s].fg, true);
      } else {
        qcells.resize(size_t(hw));
        std::iota(qcells.begin(), qcells.end(), 0);
      }
      const int nq = int(qcells.size());

      // per-frame reconstruction (or the direct dense path without decoder)
      Var<S> decoded_backbone, cls_backbone;
      std::vector<int> row_frame, row_cell;
      for (int f = 0; f < t_feat; ++f)
        for (int c : qcells) {
          row_frame.push_back(f);
          row_cell.push_back(c);
        }
      if (cfg.use_decoder) {
        const bool split_cls = cfg.use_fra && !cfg.shared_decoder;
        for (int f = 0; f < t_feat; ++f) {
          Var<S> frame_rows = rows_slice(rows[s], f * hw, (f + 1) * hw);
          Var<S> q_rows = nq == hw ? frame_rows : rows_select(frame_rows, qcells);
          Var<S> ctx = rows_slice(rows[t], f * hw, (f + 1) * hw);
          if (split_cls) append_rows(cls_backbone, model.dec_cls->decode_cls(bdec, ctx));
          bool with_cls = cfg.use_fra && !split_cls;
          if (nq == 0 && !with_cls) continue;
          Var<S> out = model.dec.decode(bdec, nq > 0 ? q_rows : Var<S>{}, ctx, with_cls,
                                        nq);
          Var<S> pix_part;
          if (with_cls) {
            append_rows(cls_backbone, rows_slice(out, 0, 1));
            if (nq > 0) pix_part = rows_slice(out, 1, 1 + nq);
          } else {
            pix_part = out;
          }
          if (pix_part.valid()) append_rows(decoded_backbone, pix_part);
        }
      } else if (nq > 0) {
        std::vector<int> flat;
        for (int f = 0; f < t_feat; ++f)
          for (int c : qcells) flat.push_back(f * hw + c);
        decoded_backbone = rows_select(rows[s], flat);
      }

      if (cfg.use_pix && decoded_backbone.valid()) {
        Var<S> decoded = em.head_dense(bq, decoded_backbone);
        Var<S> extras;
        if (cfg.pix_neg_mode == PixNegMode::in_batch) {
          Tensor<S> others = detail::stack_other_maps(res.keys, i, t);
          if (others.dim(0) > 0) extras = g.constant(std::move(others));
        } else if (cfg.pix_neg_mode == PixNegMode::queue) {
          extras = pix_queue_negs;
        }
        bool mask_tgt = cfg.mask_position == MaskPosition::target ||
                        cfg.mask_position == MaskPosition::both;
        PixLossSpec sp;
        sp.tau = cfg.tau;
        sp.mask_target = mask_tgt;
        sp.bg_in_denominator = cfg.pix_bg_in_denominator;
        PositiveAssignment pa = assign_positives(
            pairwise_normalized_distance(in.view[s].geom, in.view[t].geom,
                                         cfg.enc.feat_hw, cfg.enc.feat_hw, in.canvas,
                                         cfg.normalizer),
            cfg.threshold);
        PixResult<S> pr = loss_pix(decoded, row_frame, row_cell,
                                   g.constant(tgt.motion_rows), t_feat, hw, pa, tgt.fg,
                                   extras, sp);
        accumulate(acc_pix, pr.loss);
        res.bundle.pix_contributing += pr.contributing;
        res.bundle.pix_positives += pr.positives;
        sum_pos_sim_pix += pr.mean_pos_sim * (pr.contributing > 0 ? 1 : 0);
        pix_loss_evals += pr.contributing > 0 ? 1 : 0;
      }

      if (cfg.use_fra && cls_backbone.valid()) {
        Var<S> cls_rows = em.head_fra(bq, cls_backbone);
        FraResult<S> fr = loss_fra(cls_rows, g.constant(tgt.fra_rows), fra_negs,
                                   cfg.fra_type, S(cfg.tau), S(cfg.fra_margin));
        accumulate(acc_fra, fr.loss);
      }
    }
  }

  const S inv = S(1) / S(b * ndir);
  Var<S> total;
  auto finish = [&](Var<S>& acc, bool on, double& slot) {
    if (!on) return;
    Var<S> term = acc.valid() ? scale(acc, inv) : g.constant(Tensor<S>::scalar(S(0)));
    slot = double(term.item());
    total = total.valid() ? add(total, term) : term;
  };
  finish(acc_vv, cfg.use_vv, res.bundle.vv);
  finish(acc_vd, cfg.use_vd, res.bundle.vd);
  finish(acc_pix, cfg.use_pix, res.bundle.pix);
  finish(acc_fra, cfg.use_fra, res.bundle.fra);
  MA_CHECK(total.valid(), "no loss term evaluated");
  res.total = total;
  res.bundle.total = double(total.item());
  res.bundle.vv_on = cfg.use_vv;
  res.bundle.vd_on = cfg.use_vd;
  res.bundle.pix_on = cfg.use_pix;
  res.bundle.fra_on = cfg.use_fra;
  res.bundle.vv_pos_sim = n_pos_sim_vv > 0 ? sum_pos_sim_vv / double(n_pos_sim_vv) : 0;
  res.bundle.pix_pos_sim = pix_loss_evals > 0 ? sum_pos_sim_pix / pix_loss_evals : 0;
  res.bq = std::move(bq);
  res.bdec = std::move(bdec);
  return res;
}

// Key features enter the queues only after the step that produced them.
template <typename S>
void push_queues(QueueSet& q, const PipelineConfig& cfg,
                 const std::vector<SampleKeys<S>>& keys) {
  auto push_rows_cast = [](NegativeQueue& nq, const Tensor<S>& rows) {
    if (rows.empty()) return;
    int n = rows.dim(0), d = rows.dim(1);
    std::vector<float> tmp(size_t(d), 0.0f);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) tmp[size_t(j)] = float(rows[int64_t(i) * d + j]);
      nq.push(tmp.data());
    }
  };
  for (const SampleKeys<S>& kk : keys)
    for (int v = 0; v < 2; ++v) {
      if (cfg.use_vv) push_rows_cast(q.vv, kk.view[v].global);
      if (cfg.use_vd) push_rows_cast(q.vd, kk.view[v].motion_global);
      if (cfg.use_fra) push_rows_cast(q.fra, kk.view[v].fra_rows);
      if (cfg.use_pix && cfg.pix_neg_mode == PixNegMode::queue)
        push_rows_cast(q.pix, kk.view[v].motion_rows);
    }
}

}  // namespace ma
