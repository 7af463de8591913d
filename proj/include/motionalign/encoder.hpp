#pragma once

#include <array>

#include "motionalign/nn.hpp"

// Dense spatiotemporal encoder: four Conv3d+GroupNorm+ReLU blocks reducing
// 8x64x64 inputs to a [C, 2, 4, 4] feature map, plus the three projection
// heads (global / dense per-pixel / frame-level) and the momentum pairing.

namespace ma {

struct EncoderConfig {
  int in_channels = 3;
  int in_frames = 8;   // RGB view length; frame-difference inputs arrive as T-1
  int feat_t = 2;      // temporal size of the output map
  int feat_hw = 4;     // spatial size of the output map (64-px views)
  std::array<int, 4> widths{8, 16, 32, 64};  // per-block output channels
  int gn_groups = 4;
  int proj_dim = 32;
  int proj_hidden = 0;  // 0 → widths[3]
  int channels() const { return widths[3]; }
  int hidden() const { return proj_hidden > 0 ? proj_hidden : widths[3]; }
};

template <typename S>
struct EncoderModel {
  EncoderConfig cfg;
  std::array<Conv3dLayer<S>, 4> conv;
  std::array<GroupNormLayer<S>, 4> norm;
  ProjectionHead<S> head_global, head_dense, head_fra;
  bool linear_mode = false;  // test fixture: skip norm and nonlinearity

  EncoderModel(ParamStore<S>& ps, const EncoderConfig& c, Rng& rng) : cfg(c) {
    // Strides: blocks 1 and 3 halve time; every block halves space.
    // 8 frames -> 2, 64 px -> 4 via the conv floor formula with pad 1.
    const std::array<ConvSpec, 4> specs{
        ConvSpec{3, 3, 3, 2, 2, 2, 1, 1, 1}, ConvSpec{3, 3, 3, 1, 2, 2, 1, 1, 1},
        ConvSpec{3, 3, 3, 2, 2, 2, 1, 1, 1}, ConvSpec{3, 3, 3, 1, 2, 2, 1, 1, 1}};
    int ci = c.in_channels;
    for (int i = 0; i < 4; ++i) {
      conv[size_t(i)] = Conv3dLayer<S>(ps, "enc.b" + std::to_string(i + 1) + ".conv", ci,
                                       c.widths[size_t(i)], specs[size_t(i)], rng);
      norm[size_t(i)] = GroupNormLayer<S>(ps, "enc.b" + std::to_string(i + 1) + ".norm",
                                          c.widths[size_t(i)], c.gn_groups);
      ci = c.widths[size_t(i)];
    }
    head_global = ProjectionHead<S>(ps, "head.global", c.channels(), c.hidden(),
                                    c.proj_dim, rng);
    head_dense = ProjectionHead<S>(ps, "head.dense", c.channels(), c.hidden(),
                                   c.proj_dim, rng);
    head_fra = ProjectionHead<S>(ps, "head.fra", c.channels(), c.hidden(), c.proj_dim,
                                 rng);
  }

  void set_linear_mode(bool on) {
    linear_mode = on;
    head_global.linear_mode = on;
    head_dense.linear_mode = on;
    head_fra.linear_mode = on;
  }

  // [3,T,H,W] -> [C,T',H',W'] backbone features (pre-projection).
  Var<S> encode_map(const Binding<S>& bd, Var<S> x) const {
    MA_CHECK(x.val().ndim() == 4 && x.dim(0) == cfg.in_channels,
             "encoder expects [3,T,H,W] input");
    Var<S> h = x;
    for (int i = 0; i < 4; ++i) {
      h = conv[size_t(i)](bd, h);
      if (!linear_mode) {
        h = norm[size_t(i)](bd, h);
        h = relu(h);
      }
    }
    return h;
  }

  // map -> [1,C] pooled row.
  Var<S> pooled_row(const Binding<S>& bd, Var<S> map) const {
    (void)bd;
    return reshape(pool_thw(map), {1, map.dim(0)});
  }

  Var<S> global_embed(const Binding<S>& bd, Var<S> map) const {
    return head_global(bd, pooled_row(bd, map));
  }
  // map -> [T'H'W', proj]; row order (t,u,v) row-major.
  Var<S> dense_embed(const Binding<S>& bd, Var<S> map) const {
    return head_dense(bd, map_rows(map));
  }
  Var<S> fra_embed(const Binding<S>& bd, Var<S> map) const {
    return head_fra(bd, pooled_row(bd, map));
  }
};

// Query store plus its momentum (key) copy. The key side never sees
// gradients; it trails the query parameters by EMA.
template <typename S>
struct EncoderPair {
  EncoderConfig cfg;
  ParamStore<S> query, key;
  EncoderModel<S> model;  // indices valid for both stores (identical layout)
  S ema_momentum;

  EncoderPair(const EncoderConfig& c, S m, Rng& rng)
      : cfg(c), model(build(query, c, rng)), ema_momentum(m) {
    Rng dummy(0);
    EncoderModel<S> key_model(key, c, dummy);  // same layout, values overwritten
    key.copy_from(query);
  }

  void momentum_update() { key.ema_from(query, ema_momentum); }

 private:
  static EncoderModel<S> build(ParamStore<S>& ps, const EncoderConfig& c, Rng& rng) {
    return EncoderModel<S>(ps, c, rng);
  }
};

}  // namespace ma
