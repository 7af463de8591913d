#pragma once

#include <algorithm>
#include <cmath>

#include "motionalign/nn.hpp"
#include "motionalign/ops.hpp"
#include "motionalign/rng.hpp"
#include "motionalign/tape.hpp"
#include "motionalign/tensor.hpp"

namespace ma::test {

inline Tensor<double> rand_tensor(Rng& rng, std::vector<int> dims, double lo = -1.0,
                                  double hi = 1.0) {
  Tensor<double> t(std::move(dims));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Reduce an arbitrary tensor to a scalar with fixed random weights, so every
// output element contributes a distinct term to the loss.
template <typename S>
Var<S> weighted_sum(Var<S> y, uint64_t salt = 7) {
  Rng rng(salt);
  Tensor<S> w(y.dims());
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = S(rng.uniform(-1.0, 1.0));
  return sum_all(mul(y, y.g->constant(std::move(w))));
}

// Central-difference check of d(build)/dx at x0. `build` must be a pure
// function of (graph, x): any constants it needs are rebuilt identically on
// every call. Returns the worst relative error over all elements.
template <typename F>
double max_rel_grad_err(const Tensor<double>& x0, F build, double h = 1e-5) {
  Graph<double> g;
  Var<double> x = g.leaf(x0, true);
  Var<double> loss = build(g, x);
  g.backward(loss);
  Tensor<double> analytic = g.grad(x.id);

  double worst = 0.0;
  for (int64_t i = 0; i < x0.numel(); ++i) {
    Tensor<double> xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    Graph<double> gp;
    double lp = build(gp, gp.leaf(std::move(xp), false)).item();
    Graph<double> gm;
    double lm = build(gm, gm.leaf(std::move(xm), false)).item();
    double numeric = (lp - lm) / (2.0 * h);
    double err = std::abs(analytic[i] - numeric) /
                 std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

// Central-difference check over every parameter in a store. `build` maps
// (graph, binding) to a scalar loss and must be deterministic. When
// `per_param` > 0, only that many elements per parameter tensor are probed
// (chosen by a fixed-seed draw); otherwise every element is checked.
template <typename BuildFn>
double max_param_grad_err(ma::ParamStore<double>& ps, BuildFn build, int per_param = 0,
                          double h = 1e-5) {
  using namespace ma;
  Graph<double> g;
  Binding<double> bd = bind(g, ps, /*needs_grad=*/true);
  Var<double> loss = build(g, bd);
  g.backward(loss);
  std::vector<Tensor<double>> analytic;
  for (int i = 0; i < ps.size(); ++i) {
    if (g.grad_touched(bd.vars[size_t(i)].id))
      analytic.push_back(g.grad(bd.vars[size_t(i)].id));
    else
      analytic.push_back(Tensor<double>::zeros(ps.param(i).value.dims));
  }

  auto eval_loss = [&]() {
    Graph<double> gg;
    Binding<double> bb = bind(gg, ps, /*needs_grad=*/false);
    return build(gg, bb).item();
  };

  double worst = 0.0;
  for (int i = 0; i < ps.size(); ++i) {
    Tensor<double>& value = ps.param(i).value;
    std::vector<int64_t> probe;
    if (per_param <= 0 || per_param >= value.numel()) {
      for (int64_t j = 0; j < value.numel(); ++j) probe.push_back(j);
    } else {
      Rng pick(uint64_t(1000003 * (i + 1)));
      for (int k = 0; k < per_param; ++k)
        probe.push_back(pick.uniform_int(0, int(value.numel()) - 1));
    }
    for (int64_t j : probe) {
      double keep = value[j];
      value[j] = keep + h;
      double lp = eval_loss();
      value[j] = keep - h;
      double lm = eval_loss();
      value[j] = keep;
      double numeric = (lp - lm) / (2.0 * h);
      double a = analytic[size_t(i)][j];
      double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ma::test
