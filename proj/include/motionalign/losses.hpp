#pragma once

#include "motionalign/correspond.hpp"
#include "motionalign/ops.hpp"

// Contrastive objectives. Every InfoNCE-style term is computed as
//   LSE(denominator logits) - LSE(positive logits)
// per query row with logits = cosine/tau, which equals -log(num/den) exactly
// and stays stable for any magnitude. Key-side inputs are constants; only the
// query side carries gradients.

namespace ma {

constexpr double kTau = 0.1;
constexpr double kCosEps = 1e-8;

// Frame-level loss flavor (supplementary ablation).
enum class FraLossType { infonce, triplet, mse };
constexpr double kTripletMargin = 0.5;

// Strict similarity kernel for oracles and scalar checks: exp(cos/tau).
// Rejects zero-norm inputs (the batched losses use an epsilon guard instead).
template <typename S>
S h_kernel(const S* x, const S* y, int dim, S tau) {
  S nx = 0, ny = 0, dot = 0;
  for (int i = 0; i < dim; ++i) {
    nx += x[i] * x[i];
    ny += y[i] * y[i];
    dot += x[i] * y[i];
  }
  MA_CHECK(nx > 0 && ny > 0, "zero-norm input to similarity kernel");
  return std::exp(dot / (std::sqrt(nx) * std::sqrt(ny)) / tau);
}

template <typename S>
struct NceResult {
  Var<S> loss;           // scalar; exact constant 0 when nothing contributes
  int contributing = 0;  // query rows with >= 1 positive
  int64_t positives = 0;
  double mean_pos_sim = 0;  // mean cosine over positive pairs (diagnostic)
};

// Multi-positive InfoNCE over q_rows [N,dim] vs key_rows [M,dim].
// pos_mask [N,M] marks numerator terms; denom_mask [N,M] marks denominator
// terms (empty tensor = all keys). Rows without positives are excluded from
// the average; if all rows are empty the result is a constant zero.
template <typename S>
NceResult<S> multi_positive_nce(Var<S> q_rows, Var<S> key_rows,
                                const Tensor<S>& pos_mask, const Tensor<S>& denom_mask,
                                S tau) {
  Graph<S>& g = *q_rows.g;
  int n = q_rows.dim(0), m = key_rows.dim(0);
  MA_CHECK(pos_mask.dims == std::vector<int>({n, m}), "pos_mask shape");
  bool has_dm = !denom_mask.empty();
  if (has_dm) MA_CHECK(denom_mask.dims == pos_mask.dims, "denom_mask shape");

  NceResult<S> res{g.constant(Tensor<S>::scalar(S(0))), 0, 0};
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    bool any = false;
    for (int j = 0; j < m; ++j)
      if (pos_mask[int64_t(i) * m + j] != S(0)) {
        any = true;
        ++res.positives;
      }
    if (any) keep.push_back(i);
  }
  if (keep.empty()) return res;
  res.contributing = int(keep.size());

  Var<S> qn = rows_l2_normalize(q_rows, S(kCosEps));
  Var<S> kn = rows_l2_normalize(key_rows, S(kCosEps));
  Var<S> logits = scale(matmul_nt(qn, kn), S(1) / tau);
  Var<S> sel = int(keep.size()) == n ? logits : rows_select(logits, keep);

  int kn_rows = int(keep.size());
  Tensor<S> pm = Tensor<S>::uninit({kn_rows, m});
  for (int i = 0; i < kn_rows; ++i)
    std::copy_n(pos_mask.data() + int64_t(keep[size_t(i)]) * m, m,
                pm.data() + int64_t(i) * m);
  Tensor<S> dm;
  if (has_dm) {
    dm = Tensor<S>::uninit({kn_rows, m});
    for (int i = 0; i < kn_rows; ++i)
      std::copy_n(denom_mask.data() + int64_t(keep[size_t(i)]) * m, m,
                  dm.data() + int64_t(i) * m);
  }
  double sim_sum = 0;
  for (int i = 0; i < kn_rows; ++i)
    for (int j = 0; j < m; ++j)
      if (pm[int64_t(i) * m + j] != S(0))
        sim_sum += double(sel.val()[int64_t(i) * m + j]) * double(tau);
  res.mean_pos_sim = sim_sum / double(res.positives);

  Var<S> num = lse_rows_masked(sel, std::move(pm));
  Var<S> den = lse_rows_masked(sel, std::move(dm));
  res.loss = scale(sum_all(sub(den, num)), S(1) / S(kn_rows));
  return res;
}

// Instance-level shape: one query vector, one positive key, optional negative
// rows. Empty negatives give exactly zero.
template <typename S>
Var<S> single_positive_nce(Var<S> q_vec, Var<S> pos_key, Var<S> negatives, S tau) {
  MA_CHECK(q_vec.val().ndim() == 2 && q_vec.dim(0) == 1, "query must be [1,dim]");
  MA_CHECK(pos_key.val().ndim() == 2 && pos_key.dim(0) == 1, "key must be [1,dim]");
  Var<S> keys = pos_key;
  int m = 1;
  if (negatives.valid() && negatives.dim(0) > 0) {
    MA_CHECK(negatives.dim(1) == pos_key.dim(1), "negative dim mismatch");
    keys = concat_rows(pos_key, negatives);
    m += negatives.dim(0);
  }
  Tensor<S> pm({1, m});
  pm[0] = S(1);
  return multi_positive_nce(q_vec, keys, pm, Tensor<S>{}, tau).loss;
}

// Clip-level contrast (vanilla / motion variants share the same structure).
template <typename S>
Var<S> loss_vv(Var<S> q_vec, Var<S> key_vec, Var<S> negatives, S tau = S(kTau)) {
  return single_positive_nce(q_vec, key_vec, negatives, tau);
}
template <typename S>
Var<S> loss_vd(Var<S> q_vec, Var<S> motion_key, Var<S> negatives, S tau = S(kTau)) {
  return single_positive_nce(q_vec, motion_key, negatives, tau);
}

struct PixLossSpec {
  double tau = kTau;
  bool mask_target = true;        // restrict positives to key-side foreground
  bool bg_in_denominator = true;  // masked-out key cells stay in the denominator
};

template <typename S>
struct PixResult {
  Var<S> loss;
  int contributing = 0;
  int64_t positives = 0;
  double mean_pos_sim = 0;
};

// Dense per-pixel contrast: query rows are per-(frame, cell) predictions; the
// key map contributes all T*HW cells, extra_negs appends cross-video rows.
// row_frame/row_cell give each query row's frame index and spatial cell.
// fg_key is the key-side spatial foreground mask ([HW] 0/1, empty = no target
// masking).
template <typename S>
PixResult<S> loss_pix(Var<S> decoded, const std::vector<int>& row_frame,
                      const std::vector<int>& row_cell, Var<S> key_map_rows, int t_feat,
                      int cells, const PositiveAssignment& pa,
                      const Tensor<uint8_t>& fg_key, Var<S> extra_negs,
                      const PixLossSpec& spec) {
  MA_CHECK(key_map_rows.val().ndim() == 2 && key_map_rows.dim(0) == t_feat * cells,
           "key map rows must be [T*HW, dim]");
  int n = decoded.dim(0);
  MA_CHECK(int(row_frame.size()) == n && int(row_cell.size()) == n,
           "row index bookkeeping mismatch");
  bool masked = spec.mask_target && !fg_key.empty();
  if (masked) MA_CHECK(fg_key.numel() == cells, "foreground mask size");

  Var<S> keys = key_map_rows;
  int m = t_feat * cells;
  int extra = 0;
  if (extra_negs.valid() && extra_negs.dim(0) > 0) {
    extra = extra_negs.dim(0);
    keys = concat_rows(key_map_rows, extra_negs);
  }
  Tensor<S> pos_mask({n, m + extra});
  Tensor<S> denom_mask = Tensor<S>::full({n, m + extra}, S(1));
  for (int r = 0; r < n; ++r) {
    int fi = row_frame[size_t(r)], cj = row_cell[size_t(r)];
    MA_CHECK(0 <= fi && fi < t_feat && 0 <= cj && cj < cells, "row index range");
    for (int kc : pa.pos[size_t(cj)]) {
      if (masked && fg_key[kc] == 0) continue;
      pos_mask[(int64_t(r)) * (m + extra) + fi * cells + kc] = S(1);
    }
    if (masked && !spec.bg_in_denominator) {
      // drop masked-out background cells (never positives) from the denominator
      for (int t = 0; t < t_feat; ++t)
        for (int c = 0; c < cells; ++c)
          if (fg_key[c] == 0)
            denom_mask[(int64_t(r)) * (m + extra) + t * cells + c] = S(0);
    }
  }
  NceResult<S> r = multi_positive_nce(decoded, keys, pos_mask, denom_mask, S(spec.tau));
  return {r.loss, r.contributing, r.positives, r.mean_pos_sim};
}

template <typename S>
struct FraResult {
  Var<S> loss;
  int frames = 0;
};

// Frame-level reconstruction contrast: cls row i is positive with sub-clip
// key i; negatives are the other sub-clips (intra) plus queue rows (inter).
// Triplet and MSE variants for the loss-type ablation.
template <typename S>
FraResult<S> loss_fra(Var<S> cls_rows, Var<S> local_keys, Var<S> inter_negs,
                      FraLossType type = FraLossType::infonce, S tau = S(kTau),
                      S margin = S(kTripletMargin)) {
  Graph<S>& g = *cls_rows.g;
  int t = cls_rows.dim(0);
  MA_CHECK(local_keys.val().ndim() == 2 && local_keys.dim(0) == t,
           "one local key per feature frame");
  int extra = (inter_negs.valid() && inter_negs.dim(0) > 0) ? inter_negs.dim(0) : 0;

  if (type == FraLossType::infonce) {
    Var<S> keys = extra > 0 ? concat_rows(local_keys, inter_negs) : local_keys;
    Tensor<S> pm({t, t + extra});
    for (int i = 0; i < t; ++i) pm[int64_t(i) * (t + extra) + i] = S(1);
    NceResult<S> r = multi_positive_nce(cls_rows, keys, pm, Tensor<S>{}, tau);
    return {r.loss, r.contributing};
  }

  Var<S> qn = rows_l2_normalize(cls_rows, S(kCosEps));
  Var<S> kn = rows_l2_normalize(local_keys, S(kCosEps));
  Var<S> sim = matmul_nt(qn, kn);  // [t,t]; diagonal = positive similarities

  if (type == FraLossType::mse) {
    // squared distance of unit vectors = 2 - 2*cos; negatives unused
    Tensor<S> eye({t, t});
    for (int i = 0; i < t; ++i) eye[int64_t(i) * t + i] = S(1);
    Var<S> diag = rows_reduce_sum(mul(sim, g.constant(std::move(eye))));
    Var<S> per = add_scalar(scale(diag, S(-2)), S(2));
    return {scale(sum_all(per), S(1) / S(t)), t};
  }

  // triplet: mean over negatives of max(0, margin - s_pos + s_neg)
  Var<S> negs = extra > 0
                    ? concat_rows(local_keys, inter_negs)
                    : local_keys;
  Var<S> nn = rows_l2_normalize(negs, S(kCosEps));
  Var<S> all_sim = matmul_nt(qn, nn);  // [t, t+extra]
  Tensor<S> eye({t, t});
  for (int i = 0; i < t; ++i) eye[int64_t(i) * t + i] = S(1);
  Var<S> pos = rows_reduce_sum(mul(sim, g.constant(std::move(eye))));  // [t]
  Var<S> hinge = relu(add_scalar(sub(all_sim, expand_colvec(pos, t + extra)), margin));
  // zero out the positive's own column so it is not treated as a negative
  Tensor<S> negmask = Tensor<S>::full({t, t + extra}, S(1));
  for (int i = 0; i < t; ++i) negmask[int64_t(i) * (t + extra) + i] = S(0);
  Var<S> masked = mul(hinge, g.constant(std::move(negmask)));
  int negs_per = t - 1 + extra;
  MA_CHECK(negs_per >= 1, "triplet needs at least one negative");
  return {scale(sum_all(masked), S(1) / (S(t) * S(negs_per))), t};
}

// Per-step scalar record of every term (after .item() extraction).
struct LossBundle {
  double vv = 0, vd = 0, pix = 0, fra = 0, total = 0;
  int pix_contributing = 0;
  int64_t pix_positives = 0;
  double vv_pos_sim = 0, pix_pos_sim = 0;  // mean positive cosine diagnostics
  bool vv_on = true, vd_on = false, pix_on = true, fra_on = true;
};

}  // namespace ma
