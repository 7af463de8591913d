#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "motionalign/decoder.hpp"
#include "motionalign/encoder.hpp"
#include "testutil.hpp"

using namespace ma;
using test::max_param_grad_err;
using test::rand_tensor;
using test::weighted_sum;

namespace {
using T = Tensor<double>;
using V = Var<double>;
using G = Graph<double>;

EncoderConfig tiny_encoder_cfg() {
  EncoderConfig c;
  c.widths = {2, 2, 4, 4};
  c.gn_groups = 2;
  c.proj_dim = 3;
  return c;
}
}  // namespace

TEST_CASE("encoder output grid for every input length it meets in training") {
  Rng rng(21);
  EncoderConfig cfg;  // default desk config
  ParamStore<double> ps;
  EncoderModel<double> enc(ps, cfg, rng);

  G g;
  Binding<double> bd = bind(g, ps, false);
  Rng data(1);

  // 8-frame RGB view, 7-frame difference clip, 3-frame sub-clip difference.
  V m8 = enc.encode_map(bd, g.constant(rand_tensor(data, {3, 8, 64, 64})));
  CHECK(m8.dims() == std::vector<int>{64, 2, 4, 4});
  V m7 = enc.encode_map(bd, g.constant(rand_tensor(data, {3, 7, 64, 64})));
  CHECK(m7.dims() == std::vector<int>{64, 2, 4, 4});
  V m3 = enc.encode_map(bd, g.constant(rand_tensor(data, {3, 3, 64, 64})));
  CHECK(m3.dims() == std::vector<int>{64, 1, 4, 4});

  V gv = enc.global_embed(bd, m8);
  CHECK(gv.dims() == std::vector<int>{1, 32});
  V dv = enc.dense_embed(bd, m8);
  CHECK(dv.dims() == std::vector<int>{32, 32});
  V fv = enc.fra_embed(bd, m3);
  CHECK(fv.dims() == std::vector<int>{1, 32});
}

TEST_CASE("encoder distinguishes inputs and zero-propagates in linear mode") {
  Rng rng(22);
  EncoderConfig cfg = tiny_encoder_cfg();
  ParamStore<double> ps;
  EncoderModel<double> enc(ps, cfg, rng);

  G g;
  Binding<double> bd = bind(g, ps, false);
  Rng data(2);
  V a = enc.encode_map(bd, g.constant(rand_tensor(data, {3, 4, 16, 16})));
  V b = enc.encode_map(bd, g.constant(rand_tensor(data, {3, 4, 16, 16})));
  double diff = 0;
  for (int64_t i = 0; i < a.numel(); ++i) diff += std::abs(a.val()[i] - b.val()[i]);
  CHECK(diff > 1e-6);

  // Zero input through the bias-free linearized network stays exactly zero.
  enc.set_linear_mode(true);
  V z = enc.encode_map(bd, g.constant(T::zeros({3, 4, 16, 16})));
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.val()[i] == 0.0);
}

TEST_CASE("pooling and projection commute exactly when the head is linear") {
  Rng rng(23);
  EncoderConfig cfg = tiny_encoder_cfg();
  ParamStore<double> ps;
  EncoderModel<double> enc(ps, cfg, rng);

  Rng data(3);
  T map0 = rand_tensor(data, {4, 2, 3, 3});

  auto run_both = [&](bool linear) {
    enc.head_dense.linear_mode = linear;
    G g;
    Binding<double> bd = bind(g, ps, false);
    V map = g.constant(map0);
    // pool-then-project vs project-then-pool, same (dense) head both ways.
    V a = enc.head_dense(bd, reshape(pool_thw(map), {1, 4}));
    V rows = enc.head_dense(bd, map_rows(map));
    V b = scale(matmul(g.constant(T::full({1, rows.dim(0)}, 1.0)), rows),
                1.0 / rows.dim(0));
    double gap = 0;
    for (int j = 0; j < 3; ++j) gap = std::max(gap, std::abs(a.val()[j] - b.val()[j]));
    return gap;
  };

  CHECK(run_both(true) < 1e-12);   // linear head: exact commutation
  CHECK(run_both(false) > 1e-6);   // nonlinearity breaks it
}

TEST_CASE("momentum pair: EMA limits, contraction, and key isolation") {
  Rng rng(24);
  EncoderConfig cfg = tiny_encoder_cfg();

  SUBCASE("m=1 freezes the key; m=0 copies the query") {
    EncoderPair<double> p1(cfg, 1.0, rng);
    T before = p1.key.param(0).value;
    p1.query.param(0).value[0] += 5.0;
    p1.momentum_update();
    CHECK(p1.key.param(0).value[0] == before[0]);

    EncoderPair<double> p0(cfg, 0.0, rng);
    p0.query.param(0).value[0] = 7.25;
    p0.momentum_update();
    CHECK(p0.key.param(0).value[0] == 7.25);
  }

  SUBCASE("scalar fixture: key trails by factor m per step") {
    ParamStore<double> q, k;
    q.add("x", T({1}, {0.0}));
    k.add("x", T({1}, {1.0}));
    k.ema_from(q, 0.999);
    CHECK(k.param(0).value[0] == doctest::Approx(0.999));
    for (int i = 0; i < 9; ++i) k.ema_from(q, 0.999);
    CHECK(k.param(0).value[0] == doctest::Approx(std::pow(0.999, 10)));
  }

  SUBCASE("key copy starts identical and key forwards carry no gradient") {
    EncoderPair<double> pair(cfg, 0.999, rng);
    REQUIRE(pair.query.size() == pair.key.size());
    for (int i = 0; i < pair.query.size(); ++i) {
      const T& a = pair.query.param(i).value;
      const T& b = pair.key.param(i).value;
      REQUIRE(a.same_shape(b));
      for (int64_t j = 0; j < a.numel(); ++j) CHECK(a[j] == b[j]);
      CHECK(pair.query.param(i).name == pair.key.param(i).name);
    }

    G g;
    Rng data(4);
    Binding<double> kb;
    {
      NoGrad<double> guard(g);
      kb = bind(g, pair.key, false);
      V km = pair.model.encode_map(kb, g.constant(rand_tensor(data, {3, 4, 16, 16})));
      CHECK_FALSE(km.needs_grad());
    }
  }

  SUBCASE("norm affine parameters are flagged decay-exempt") {
    EncoderPair<double> pair(cfg, 0.999, rng);
    int seen = 0;
    for (int i = 0; i < pair.query.size(); ++i) {
      const auto& p = pair.query.param(i);
      bool is_norm = p.name.find(".norm.") != std::string::npos;
      CHECK(p.decay == !is_norm);
      seen += is_norm;
    }
    CHECK(seen == 8);  // gamma+beta per block
  }
}

TEST_CASE("encoder end-to-end gradients match finite differences") {
  Rng rng(25);
  EncoderConfig cfg = tiny_encoder_cfg();
  ParamStore<double> ps;
  EncoderModel<double> enc(ps, cfg, rng);
  Rng data(5);
  T clip = rand_tensor(data, {3, 4, 8, 8});

  auto build = [&](G& g, Binding<double>& bd) {
    V map = enc.encode_map(bd, g.constant(clip));
    V loss = weighted_sum(enc.global_embed(bd, map), 11);
    loss = add(loss, weighted_sum(enc.dense_embed(bd, map), 12));
    loss = add(loss, weighted_sum(enc.fra_embed(bd, map), 13));
    return loss;
  };
  CHECK(max_param_grad_err(ps, build, /*per_param=*/4, 1e-5) < 1e-7);
}

// ---------------------------------------------------------------------------
// decoder
// ---------------------------------------------------------------------------

namespace {
DecoderConfig small_decoder_cfg() {
  DecoderConfig c;
  c.depth = 1;
  c.width = 8;
  c.heads = 2;
  c.dropout = 0.0;
  c.ffn_mult = 2;
  c.in_dim = 5;
  c.max_context = 32;
  return c;
}

// Independent straight-line re-implementation of one decoder forward pass
// (depth 1), in plain loops over std::vector<double>.
std::vector<double> oracle_decode(const ParamStore<double>& ps, const DecoderConfig& cfg,
                                  const std::vector<double>& query,
                                  const std::vector<std::vector<double>>& context,
                                  bool with_cls, const Tensor<double>& pos_table) {
  auto P = [&](const std::string& n) -> const Tensor<double>& {
    int i = ps.find(n);
    REQUIRE(i >= 0);
    return ps.param(i).value;
  };
  auto lin = [&](const std::string& n, const std::vector<double>& x) {
    const Tensor<double>& w = P(n + ".w");
    const Tensor<double>& b = P(n + ".b");
    std::vector<double> y(size_t(w.dims[0]));
    for (int o = 0; o < w.dims[0]; ++o) {
      double s = b[o];
      for (int i = 0; i < w.dims[1]; ++i) s += w.at2(o, i) * x[size_t(i)];
      y[size_t(o)] = s;
    }
    return y;
  };
  auto ln = [&](const std::string& n, const std::vector<double>& x) {
    const Tensor<double>& gm = P(n + ".gamma");
    const Tensor<double>& bt = P(n + ".beta");
    double mu = 0;
    for (double v : x) mu += v;
    mu /= double(x.size());
    double var = 0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= double(x.size());
    double inv = 1.0 / std::sqrt(var + 1e-5);
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) * inv * gm[int64_t(i)] + bt[int64_t(i)];
    return y;
  };

  // adapters and positions
  std::vector<double> q;
  if (with_cls) {
    const Tensor<double>& cls = P("dec.cls");
    q.assign(cls.data(), cls.data() + cls.numel());
  } else {
    q = lin("dec.adapter_in", query);
  }
  std::vector<std::vector<double>> ctx;
  for (size_t j = 0; j < context.size(); ++j) {
    std::vector<double> c = lin("dec.adapter_in", context[j]);
    for (int i = 0; i < cfg.width; ++i) c[size_t(i)] += pos_table.at2(int(j), i);
    ctx.push_back(std::move(c));
  }

  // one pre-norm block
  std::vector<double> qn = ln("dec.blk0.ln_q", q);
  std::vector<std::vector<double>> cn;
  for (auto& c : ctx) cn.push_back(ln("dec.blk0.ln_ctx", c));
  std::vector<double> qp = lin("dec.blk0.wq", qn);
  std::vector<std::vector<double>> kp, vp;
  for (auto& c : cn) {
    kp.push_back(lin("dec.blk0.wk", c));
    vp.push_back(lin("dec.blk0.wv", c));
  }
  int hd = cfg.head_dim();
  std::vector<double> mixed(size_t(cfg.width), 0.0);
  for (int h = 0; h < cfg.heads; ++h) {
    std::vector<double> scores(context.size());
    double mx = -1e300;
    for (size_t j = 0; j < context.size(); ++j) {
      double s = 0;
      for (int i = 0; i < hd; ++i) s += qp[size_t(h * hd + i)] * kp[j][size_t(h * hd + i)];
      scores[j] = s / std::sqrt(double(hd));
      mx = std::max(mx, scores[j]);
    }
    double z = 0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      z += s;
    }
    for (size_t j = 0; j < context.size(); ++j)
      for (int i = 0; i < hd; ++i)
        mixed[size_t(h * hd + i)] += scores[j] / z * vp[j][size_t(h * hd + i)];
  }
  std::vector<double> att = lin("dec.blk0.wo", mixed);
  for (int i = 0; i < cfg.width; ++i) q[size_t(i)] += att[size_t(i)];

  std::vector<double> f = ln("dec.blk0.ln_ffn", q);
  f = lin("dec.blk0.ffn1", f);
  for (double& v : f) v = std::max(v, 0.0);
  f = lin("dec.blk0.ffn2", f);
  for (int i = 0; i < cfg.width; ++i) q[size_t(i)] += f[size_t(i)];

  return lin("dec.adapter_out", ln("dec.ln_final", q));
}
}  // namespace

TEST_CASE("decoder matches the straight-line oracle") {
  Rng rng(31);
  DecoderConfig cfg = small_decoder_cfg();
  ParamStore<double> ps;
  MotionDecoder<double> dec(ps, cfg, rng);

  Rng data(6);
  T q0 = rand_tensor(data, {1, 5});
  T ctx0 = rand_tensor(data, {16, 5});
  std::vector<std::vector<double>> ctx_rows;
  for (int j = 0; j < 16; ++j)
    ctx_rows.push_back(
        {ctx0.at2(j, 0), ctx0.at2(j, 1), ctx0.at2(j, 2), ctx0.at2(j, 3), ctx0.at2(j, 4)});

  G g;
  Binding<double> bd = bind(g, ps, false);

  SUBCASE("pixel path") {
    V y = dec.decode_pixels(bd, g.constant(q0), g.constant(ctx0));
    REQUIRE(y.dims() == std::vector<int>{1, 5});
    std::vector<double> qrow{q0[0], q0[1], q0[2], q0[3], q0[4]};
    std::vector<double> want = oracle_decode(ps, cfg, qrow, ctx_rows, false, dec.pos_table);
    for (int i = 0; i < 5; ++i) CHECK(y.val()[i] == doctest::Approx(want[size_t(i)]).epsilon(1e-12));
  }

  SUBCASE("cls path shares every parameter with the pixel path") {
    V y = dec.decode_cls(bd, g.constant(ctx0));
    REQUIRE(y.dims() == std::vector<int>{1, 5});
    std::vector<double> want = oracle_decode(ps, cfg, {}, ctx_rows, true, dec.pos_table);
    for (int i = 0; i < 5; ++i) CHECK(y.val()[i] == doctest::Approx(want[size_t(i)]).epsilon(1e-12));

    // nudge one attention weight: both paths must move (single shared store)
    double keep = ps.param(ps.find("dec.blk0.wq.w")).value[0];
    ps.param(ps.find("dec.blk0.wq.w")).value[0] = keep + 0.5;
    G g2;
    Binding<double> bd2 = bind(g2, ps, false);
    V y2p = dec.decode_pixels(bd2, g2.constant(q0), g2.constant(ctx0));
    V y2c = dec.decode_cls(bd2, g2.constant(ctx0));
    ps.param(ps.find("dec.blk0.wq.w")).value[0] = keep;
    G g3;
    Binding<double> bd3 = bind(g3, ps, false);
    V y1p = dec.decode_pixels(bd3, g3.constant(q0), g3.constant(ctx0));
    double moved_p = 0, moved_c = 0;
    for (int i = 0; i < 5; ++i) {
      moved_p += std::abs(y2p.val()[i] - y1p.val()[i]);
      moved_c += std::abs(y2c.val()[i] - y.val()[i]);
    }
    CHECK(moved_p > 1e-9);
    CHECK(moved_c > 1e-9);
  }
}

TEST_CASE("attention unit: identical keys make the mix equal their value") {
  // The cross-attention sub-assembly on a context of one repeated vector:
  // softmax weights sum to 1, so the mixed output equals that vector for
  // every query row regardless of the scores.
  Rng rng(32);
  G g;
  T q0 = rand_tensor(rng, {3, 4});
  T v_row = rand_tensor(rng, {1, 4});
  T k_rep({8, 4}), v_rep({8, 4});
  for (int j = 0; j < 8; ++j)
    for (int i = 0; i < 4; ++i) {
      k_rep.at2(j, i) = rng.uniform(-1, 1) * 0 + q0.at2(0, i);  // any identical rows
      v_rep.at2(j, i) = v_row[i];
    }
  V attn = softmax_rows(scale(matmul_nt(g.constant(q0), g.constant(k_rep)), 0.5));
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int j = 0; j < 8; ++j) s += attn.val().at2(r, j);
    CHECK(s == doctest::Approx(1.0));
  }
  V mix = matmul(attn, g.constant(v_rep));
  for (int r = 0; r < 3; ++r)
    for (int i = 0; i < 4; ++i) CHECK(mix.val().at2(r, i) == doctest::Approx(v_row[i]));
}

TEST_CASE("decoder invariances") {
  Rng rng(33);
  DecoderConfig cfg = small_decoder_cfg();
  cfg.depth = 2;
  ParamStore<double> ps;
  MotionDecoder<double> dec(ps, cfg, rng);
  Rng data(7);
  T ctx0 = rand_tensor(data, {10, 5});

  SUBCASE("positional table is fixed and injective at small indices") {
    T t1 = MotionDecoder<double>::make_pos_table(16, 8);
    T t2 = MotionDecoder<double>::make_pos_table(16, 8);
    for (int64_t i = 0; i < t1.numel(); ++i) CHECK(t1[i] == t2[i]);
    double d01 = 0;
    for (int i = 0; i < 8; ++i) d01 += std::abs(t1.at2(0, i) - t1.at2(1, i));
    CHECK(d01 > 1e-3);
  }

  SUBCASE("zero context through adapter equals bias path plus table") {
    G g;
    Binding<double> bd = bind(g, ps, false);
    V enc = dec.encode_context(bd, g.constant(T::zeros({4, 5})));
    const T& bias = ps.param(ps.find("dec.adapter_in.b")).value;
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < cfg.width; ++i)
        CHECK(enc.val().at2(j, i) ==
              doctest::Approx(bias[i] + dec.pos_table.at2(j, i)).epsilon(1e-12));
  }

  SUBCASE("cls output is permutation-invariant once positions are carried along") {
    dec.pos_table = T::zeros({cfg.max_context, cfg.width});
    G g;
    Binding<double> bd = bind(g, ps, false);
    V y = dec.decode_cls(bd, g.constant(ctx0));
    // reverse the context rows
    T rev({10, 5});
    for (int j = 0; j < 10; ++j)
      for (int i = 0; i < 5; ++i) rev.at2(j, i) = ctx0.at2(9 - j, i);
    V yr = dec.decode_cls(bd, g.constant(rev));
    for (int i = 0; i < 5; ++i) CHECK(y.val()[i] == doctest::Approx(yr.val()[i]).epsilon(1e-12));
  }

  SUBCASE("cls output responds to context change") {
    G g;
    Binding<double> bd = bind(g, ps, false);
    V a = dec.decode_cls(bd, g.constant(ctx0));
    V b = dec.decode_cls(bd, g.constant(rand_tensor(data, {10, 5})));
    double moved = 0;
    for (int i = 0; i < 5; ++i) moved += std::abs(a.val()[i] - b.val()[i]);
    CHECK(moved > 1e-9);
  }

  SUBCASE("eval repeatable; dropout 0 makes train equal eval") {
    G g;
    Binding<double> ev = bind(g, ps, false, /*train=*/false);
    Rng drop(77);
    Binding<double> tr = bind(g, ps, false, /*train=*/true, &drop);
    Rng d2(8);
    T q0 = rand_tensor(d2, {2, 5});
    V y1 = dec.decode_pixels(ev, g.constant(q0), g.constant(ctx0));
    V y2 = dec.decode_pixels(ev, g.constant(q0), g.constant(ctx0));
    V y3 = dec.decode_pixels(tr, g.constant(q0), g.constant(ctx0));
    for (int64_t i = 0; i < y1.numel(); ++i) {
      CHECK(y1.val()[i] == y2.val()[i]);
      CHECK(y1.val()[i] == y3.val()[i]);
    }
  }

  SUBCASE("train-mode dropout perturbs the output but stays seeded") {
    DecoderConfig cd = cfg;
    cd.dropout = 0.5;
    ParamStore<double> ps2;
    Rng r2(34);
    MotionDecoder<double> dec2(ps2, cd, r2);
    Rng d3(9);
    T q0 = rand_tensor(d3, {2, 5});
    G g;
    Binding<double> ev = bind(g, ps2, false);
    Rng dropA(123), dropB(123), dropC(9);
    Binding<double> trA = bind(g, ps2, false, true, &dropA);
    Binding<double> trB = bind(g, ps2, false, true, &dropB);
    Binding<double> trC = bind(g, ps2, false, true, &dropC);
    V ye = dec2.decode_pixels(ev, g.constant(q0), g.constant(ctx0));
    V ya = dec2.decode_pixels(trA, g.constant(q0), g.constant(ctx0));
    V yb = dec2.decode_pixels(trB, g.constant(q0), g.constant(ctx0));
    V yc = dec2.decode_pixels(trC, g.constant(q0), g.constant(ctx0));
    double same_seed_gap = 0, eval_gap = 0, cross_seed_gap = 0;
    for (int64_t i = 0; i < ye.numel(); ++i) {
      same_seed_gap += std::abs(ya.val()[i] - yb.val()[i]);
      eval_gap += std::abs(ya.val()[i] - ye.val()[i]);
      cross_seed_gap += std::abs(ya.val()[i] - yc.val()[i]);
    }
    CHECK(same_seed_gap == 0.0);
    CHECK(eval_gap > 1e-9);
    CHECK(cross_seed_gap > 1e-9);
  }
}

TEST_CASE("decoder gradients match finite differences at desk width") {
  Rng rng(35);
  DecoderConfig cfg;
  cfg.depth = 2;
  cfg.width = 32;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.ffn_mult = 2;
  cfg.in_dim = 6;
  ParamStore<double> ps;
  MotionDecoder<double> dec(ps, cfg, rng);
  Rng data(10);
  T q0 = rand_tensor(data, {3, 6});
  T ctx0 = rand_tensor(data, {12, 6});

  auto build = [&](G& g, Binding<double>& bd) {
    V yp = dec.decode_pixels(bd, g.constant(q0), g.constant(ctx0));
    V yc = dec.decode_cls(bd, g.constant(ctx0));
    return add(weighted_sum(yp, 21), weighted_sum(yc, 22));
  };
  CHECK(max_param_grad_err(ps, build, /*per_param=*/4, 1e-5) < 1e-7);
}
