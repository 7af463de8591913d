#pragma once

#include <cmath>

#include "motionalign/nn.hpp"

// Cross-attention reconstruction decoder: query rows attend over a context
// feature sequence (keys = values = context). Pre-norm transformer blocks,
// no query self-attention, shared between the per-pixel and cls-token paths.

namespace ma {

struct DecoderConfig {
  int depth = 2;
  int width = 128;
  int heads = 4;
  double dropout = 0.1;
  int ffn_mult = 4;
  int in_dim = 64;          // encoder channel count C (adapter input/output)
  int max_context = 64;     // positional table length upper bound
  bool query_pos = false;   // sensitivity switch: also add positions to queries
  int head_dim() const { return width / heads; }
};

template <typename S>
struct MotionDecoder {
  struct Block {
    LayerNormLayer<S> ln_q, ln_ctx, ln_ffn;
    LinearLayer<S> wq, wk, wv, wo, ffn1, ffn2;
  };

  DecoderConfig cfg;
  LinearLayer<S> adapter_in, adapter_out;
  std::vector<Block> blocks;
  LayerNormLayer<S> ln_final;
  int cls = -1;                 // learnable [width] token
  Tensor<S> pos_table;          // fixed sinusoidal [max_context, width]

  MotionDecoder(ParamStore<S>& ps, const DecoderConfig& c, Rng& rng,
                const std::string& prefix = "dec.")
      : cfg(c) {
    MA_CHECK(c.width % c.heads == 0, "decoder width not divisible by heads");
    MA_CHECK(c.depth >= 1, "decoder depth must be >= 1");
    adapter_in = LinearLayer<S>(ps, prefix + "adapter_in", c.in_dim, c.width, rng);
    adapter_out = LinearLayer<S>(ps, prefix + "adapter_out", c.width, c.in_dim, rng);
    for (int i = 0; i < c.depth; ++i) {
      std::string p = prefix + "blk" + std::to_string(i);
      Block b;
      b.ln_q = LayerNormLayer<S>(ps, p + ".ln_q", c.width);
      b.ln_ctx = LayerNormLayer<S>(ps, p + ".ln_ctx", c.width);
      b.ln_ffn = LayerNormLayer<S>(ps, p + ".ln_ffn", c.width);
      b.wq = LinearLayer<S>(ps, p + ".wq", c.width, c.width, rng);
      b.wk = LinearLayer<S>(ps, p + ".wk", c.width, c.width, rng);
      b.wv = LinearLayer<S>(ps, p + ".wv", c.width, c.width, rng);
      b.wo = LinearLayer<S>(ps, p + ".wo", c.width, c.width, rng);
      b.ffn1 = LinearLayer<S>(ps, p + ".ffn1", c.width, c.width * c.ffn_mult, rng);
      b.ffn2 = LinearLayer<S>(ps, p + ".ffn2", c.width * c.ffn_mult, c.width, rng);
      blocks.push_back(std::move(b));
    }
    ln_final = LayerNormLayer<S>(ps, prefix + "ln_final", c.width);
    Tensor<S> cls_init({c.width});
    for (int i = 0; i < c.width; ++i) cls_init[i] = S(0.02) * S(rng.normal());
    cls = ps.add(prefix + "cls", std::move(cls_init), /*decay=*/false);
    pos_table = make_pos_table(c.max_context, c.width);
  }

  // Standard fixed sinusoid over flattened sequence positions.
  static Tensor<S> make_pos_table(int len, int width) {
    Tensor<S> t({len, width});
    for (int p = 0; p < len; ++p)
      for (int i = 0; i < width; ++i) {
        double freq = std::pow(10000.0, -2.0 * double(i / 2) / double(width));
        double angle = double(p) * freq;
        t.at2(p, i) = S(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
      }
    return t;
  }

  // Context rows [Nc,in_dim] -> adapted rows plus positional table.
  Var<S> encode_context(const Binding<S>& bd, Var<S> context) const {
    int nc = context.dim(0);
    MA_CHECK(nc <= pos_table.dims[0], "context longer than positional table");
    Var<S> c = adapter_in(bd, context);
    Tensor<S> pos({nc, cfg.width});
    std::copy_n(pos_table.data(), int64_t(nc) * cfg.width, pos.data());
    return add(c, bd.g->constant(std::move(pos)));
  }

  // queries [Nq,in_dim] (Nq may be 0), context [Nc,in_dim].
  // Returns [Nq(+1), in_dim]; row 0 is the cls output when with_cls.
  Var<S> decode(const Binding<S>& bd, Var<S> queries, Var<S> context, bool with_cls,
                int nq) const {
    MA_CHECK(with_cls || nq > 0, "decoder needs at least one query row");
    Var<S> q;
    if (nq > 0) {
      q = adapter_in(bd, queries);
      if (cfg.query_pos) {
        Tensor<S> pos({nq, cfg.width});
        std::copy_n(pos_table.data(), int64_t(nq) * cfg.width, pos.data());
        q = add(q, bd.g->constant(std::move(pos)));
      }
    }
    if (with_cls) {
      Var<S> cls_row = reshape(bd[cls], {1, cfg.width});
      q = nq > 0 ? concat_rows(cls_row, q) : cls_row;
    }
    Var<S> ctx = encode_context(bd, context);

    const S inv_sqrt_d = S(1) / std::sqrt(S(cfg.head_dim()));
    for (const Block& b : blocks) {
      // cross-attention sublayer (pre-norm)
      Var<S> qn = b.ln_q(bd, q);
      Var<S> cn = b.ln_ctx(bd, ctx);
      Var<S> qp = b.wq(bd, qn), kp = b.wk(bd, cn), vp = b.wv(bd, cn);
      Var<S> heads_out;
      for (int h = 0; h < cfg.heads; ++h) {
        int c0 = h * cfg.head_dim(), c1 = c0 + cfg.head_dim();
        Var<S> qh = cols_slice(qp, c0, c1);
        Var<S> kh = cols_slice(kp, c0, c1);
        Var<S> vh = cols_slice(vp, c0, c1);
        Var<S> attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_d));
        Var<S> oh = matmul(attn, vh);
        heads_out = h == 0 ? oh : concat_cols(heads_out, oh);
      }
      Var<S> att = dropout(b.wo(bd, heads_out), cfg.dropout, *pick_rng(bd), bd.train);
      q = add(q, att);
      // feed-forward sublayer
      Var<S> f = b.ffn2(bd, relu(b.ffn1(bd, b.ln_ffn(bd, q))));
      q = add(q, dropout(f, cfg.dropout, *pick_rng(bd), bd.train));
    }
    return adapter_out(bd, ln_final(bd, q));
  }

  // Pixel queries only (per-pixel reconstruction path).
  Var<S> decode_pixels(const Binding<S>& bd, Var<S> queries, Var<S> context) const {
    return decode(bd, queries, context, /*with_cls=*/false, queries.dim(0));
  }
  // cls alone over the context (frame-summary path); returns a [1,in_dim] row.
  Var<S> decode_cls(const Binding<S>& bd, Var<S> context) const {
    return decode(bd, Var<S>{}, context, /*with_cls=*/true, 0);
  }

 private:
  Rng* pick_rng(const Binding<S>& bd) const {
    static Rng inert(0);
    if (!bd.train || cfg.dropout <= 0.0) return &inert;  // dropout is a no-op
    MA_CHECK(bd.rng != nullptr, "training-mode dropout needs a bound rng");
    return bd.rng;
  }
};

}  // namespace ma
