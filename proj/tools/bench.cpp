// Microbenchmark for the training-step compute inventory: per sample, the
// step runs 2 query-encoder passes with gradients, 4 key passes on full
// views/diffs, 4 key passes on sub-clip diffs, and 4 small decoder calls.
// Prints projected seconds/step at batch 16 and hours for a 15-run sweep.

#include <chrono>
#include <cstdio>

#include "motionalign/decoder.hpp"
#include "motionalign/encoder.hpp"

using namespace ma;
using clock_t_ = std::chrono::steady_clock;

template <typename F>
double time_ms(F f, int iters) {
  f();  // warm
  auto t0 = clock_t_::now();
  for (int i = 0; i < iters; ++i) f();
  auto t1 = clock_t_::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

int main(int argc, char** argv) {
  int w0 = argc > 1 ? std::atoi(argv[1]) : 8;
  EncoderConfig cfg;
  cfg.widths = {w0, 2 * w0, 4 * w0, 64};
  Rng rng(1);
  ParamStore<float> ps;
  EncoderModel<float> enc(ps, cfg, rng);

  DecoderConfig dc;
  ParamStore<float> dps;
  MotionDecoder<float> dec(dps, dc, rng);

  Rng data(2);
  auto rnd = [&](std::vector<int> dims) {
    Tensor<float> t(std::move(dims));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = float(data.uniform(-1, 1));
    return t;
  };
  Tensor<float> rgb8 = rnd({3, 8, 64, 64});
  Tensor<float> diff7 = rnd({3, 7, 64, 64});
  Tensor<float> diff3 = rnd({3, 3, 64, 64});

  double key_full = time_ms(
      [&] {
        Graph<float> g;
        NoGrad<float> guard(g);
        Binding<float> bd = bind(g, ps, false);
        Var<float> m = enc.encode_map(bd, g.constant(diff7));
        enc.global_embed(bd, m);
        enc.dense_embed(bd, m);
      },
      5);

  double key_sub = time_ms(
      [&] {
        Graph<float> g;
        NoGrad<float> guard(g);
        Binding<float> bd = bind(g, ps, false);
        Var<float> m = enc.encode_map(bd, g.constant(diff3));
        enc.fra_embed(bd, m);
      },
      5);

  double query_grad = time_ms(
      [&] {
        Graph<float> g;
        Binding<float> bd = bind(g, ps, true);
        Var<float> m = enc.encode_map(bd, g.constant(rgb8));
        Var<float> loss = mean_all(enc.dense_embed(bd, m));
        loss = add(loss, mean_all(enc.global_embed(bd, m)));
        g.backward(loss);
      },
      5);

  Tensor<float> q9 = rnd({9, 64});
  Tensor<float> ctx16 = rnd({16, 64});
  double dec_grad = time_ms(
      [&] {
        Graph<float> g;
        Binding<float> bd = bind(g, dps, true);
        Var<float> y = dec.decode(bd, g.constant(q9), g.constant(ctx16), true, 9);
        g.backward(mean_all(y));
      },
      10);

  double per_sample =
      2 * query_grad + 4 * key_full + 4 * key_sub + 4 * dec_grad;
  double per_step = per_sample * 16;
  double sweep_hours = per_step / 1000.0 * 3750 * 15 / 3600.0;

  std::printf("widths (%d,%d,%d,64)\n", w0, 2 * w0, 4 * w0);
  std::printf("key full pass    : %7.2f ms\n", key_full);
  std::printf("key subclip pass : %7.2f ms\n", key_sub);
  std::printf("query fwd+bwd    : %7.2f ms\n", query_grad);
  std::printf("decoder fwd+bwd  : %7.2f ms\n", dec_grad);
  std::printf("per sample       : %7.2f ms\n", per_sample);
  std::printf("per step (b=16)  : %7.2f ms\n", per_step);
  std::printf("15-run sweep     : %7.2f h\n", sweep_hours);
  return 0;
}
