#pragma once

#include <Eigen/Core>
#include <cmath>

#include "motionalign/rng.hpp"
#include "motionalign/tape.hpp"

// Differentiable op library over Graph/Var. Conventions:
//  - matrices are row-major [rows, cols];
//  - feature maps are [C, T, H, W];
//  - every op computes its value eagerly and registers a backward closure
//    only when some input requires gradients.

namespace ma {

template <typename S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<EigenMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const EigenMat<S>>;

template <typename S>
ConstMatMap<S> as_mat(const Tensor<S>& t, int rows, int cols) {
  MA_CHECK(t.numel() == int64_t(rows) * cols, "matrix view size mismatch");
  return ConstMatMap<S>(t.data(), rows, cols);
}
template <typename S>
MatMap<S> as_mat(Tensor<S>& t, int rows, int cols) {
  MA_CHECK(t.numel() == int64_t(rows) * cols, "matrix view size mismatch");
  return MatMap<S>(t.data(), rows, cols);
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().same_shape(b.val()), "add shape mismatch");
  Tensor<S> out = a.val();
  const S* pb = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  bool needs = g.want_grad({a, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, b, y](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      if (g.needs(a.id)) {
        Tensor<S>& ga = g.grad(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
      }
      if (g.needs(b.id)) {
        Tensor<S>& gb = g.grad(b.id);
        for (int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i];
      }
    });
  return y;
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().same_shape(b.val()), "sub shape mismatch");
  Tensor<S> out = a.val();
  const S* pb = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  bool needs = g.want_grad({a, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, b, y](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      if (g.needs(a.id)) {
        Tensor<S>& ga = g.grad(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
      }
      if (g.needs(b.id)) {
        Tensor<S>& gb = g.grad(b.id);
        for (int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
      }
    });
  return y;
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().same_shape(b.val()), "mul shape mismatch");
  Tensor<S> out = a.val();
  const S* pb = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  bool needs = g.want_grad({a, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, b, y](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      if (g.needs(a.id)) {
        Tensor<S>& ga = g.grad(a.id);
        const Tensor<S>& bv = g.val(b.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * bv[i];
      }
      if (g.needs(b.id)) {
        Tensor<S>& gb = g.grad(b.id);
        const Tensor<S>& av = g.val(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * av[i];
      }
    });
  return y;
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Graph<S>& g = *a.g;
  Tensor<S> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, c](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * c;
    });
  return y;
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  Graph<S>& g = *a.g;
  Tensor<S> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
  return y;
}

namespace detail {
// Generic unary op: fwd(x) and dfdx expressed via (x, y).
template <typename S, typename F, typename DF>
Var<S> unary(Var<S> a, F fwd, DF dfdx) {
  Graph<S>& g = *a.g;
  Tensor<S> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(out[i]);
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, dfdx](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      const Tensor<S>& xv = g.val(a.id);
      const Tensor<S>& yv = g.val(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * dfdx(xv[i], yv[i]);
    });
  return y;
}
}  // namespace detail

template <typename S>
Var<S> relu(Var<S> a) {
  return detail::unary(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> exp_op(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> log_op(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Var<S> sqrt_op(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Var<S> rsqrt_op(Var<S> a) {
  return detail::unary(
      a, [](S x) { return S(1) / std::sqrt(x); },
      [](S x, S y) { return S(-0.5) * y / x; });
}

template <typename S>
Var<S> square(Var<S> a) {
  return detail::unary(
      a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

template <typename S>
Var<S> reshape(Var<S> a, std::vector<int> dims) {
  Graph<S>& g = *a.g;
  Tensor<S> out = a.val().reshaped(dims);
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
  return y;
}

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2 && b.val().ndim() == 2, "concat_rows expects matrices");
  MA_CHECK(a.dim(1) == b.dim(1), "concat_rows column mismatch");
  int na = a.dim(0), nb = b.dim(0), d = a.dim(1);
  Tensor<S> out = Tensor<S>::uninit({na + nb, d});
  std::copy(a.val().v.begin(), a.val().v.end(), out.v.begin());
  std::copy(b.val().v.begin(), b.val().v.end(), out.v.begin() + int64_t(na) * d);
  bool needs = g.want_grad({a, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, b, y, na, d](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      if (g.needs(a.id)) {
        Tensor<S>& ga = g.grad(a.id);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += go[i];
      }
      if (g.needs(b.id)) {
        Tensor<S>& gb = g.grad(b.id);
        int64_t off = int64_t(na) * d;
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += go[off + i];
      }
    });
  return y;
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2 && b.val().ndim() == 2, "concat_cols expects matrices");
  MA_CHECK(a.dim(0) == b.dim(0), "concat_cols row mismatch");
  int n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor<S> out = Tensor<S>::uninit({n, da + db});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.val().data() + int64_t(i) * da, da, out.data() + int64_t(i) * (da + db));
    std::copy_n(b.val().data() + int64_t(i) * db, db,
                out.data() + int64_t(i) * (da + db) + da);
  }
  bool needs = g.want_grad({a, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, b, y, n, da, db](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      if (g.needs(a.id)) {
        Tensor<S>& ga = g.grad(a.id);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < da; ++j)
            ga[int64_t(i) * da + j] += go[int64_t(i) * (da + db) + j];
      }
      if (g.needs(b.id)) {
        Tensor<S>& gb = g.grad(b.id);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < db; ++j)
            gb[int64_t(i) * db + j] += go[int64_t(i) * (da + db) + da + j];
      }
    });
  return y;
}

template <typename S>
Var<S> rows_slice(Var<S> a, int r0, int r1) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2, "rows_slice expects a matrix");
  MA_CHECK(0 <= r0 && r0 < r1 && r1 <= a.dim(0), "rows_slice range");
  int d = a.dim(1);
  Tensor<S> out = Tensor<S>::uninit({r1 - r0, d});
  std::copy_n(a.val().data() + int64_t(r0) * d, int64_t(r1 - r0) * d, out.data());
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, r0, d](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      int64_t off = int64_t(r0) * d;
      for (int64_t i = 0; i < go.numel(); ++i) ga[off + i] += go[i];
    });
  return y;
}

template <typename S>
Var<S> cols_slice(Var<S> a, int c0, int c1) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2, "cols_slice expects a matrix");
  MA_CHECK(0 <= c0 && c0 < c1 && c1 <= a.dim(1), "cols_slice range");
  int n = a.dim(0), d = a.dim(1), w = c1 - c0;
  Tensor<S> out = Tensor<S>::uninit({n, w});
  for (int i = 0; i < n; ++i)
    std::copy_n(a.val().data() + int64_t(i) * d + c0, w, out.data() + int64_t(i) * w);
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, c0, w](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      int n = ga.dims[0], d = ga.dims[1];
      (void)n;
      for (int i = 0; i < go.dims[0]; ++i)
        for (int j = 0; j < w; ++j) ga[int64_t(i) * d + c0 + j] += go[int64_t(i) * w + j];
    });
  return y;
}

// Gather rows by index; backward scatter-adds.
template <typename S>
Var<S> rows_select(Var<S> a, std::vector<int> idx) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2, "rows_select expects a matrix");
  int d = a.dim(1);
  Tensor<S> out = Tensor<S>::uninit({int(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i) {
    MA_CHECK(0 <= idx[i] && idx[i] < a.dim(0), "rows_select index out of range");
    std::copy_n(a.val().data() + int64_t(idx[i]) * d, d, out.data() + int64_t(i) * d);
  }
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, idx = std::move(idx), d](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < d; ++j) ga[int64_t(idx[i]) * d + j] += go[int64_t(i) * d + j];
    });
  return y;
}

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum_all(Var<S> a) {
  Graph<S>& g = *a.g;
  S acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.val()[i];
  bool needs = g.want_grad({a});
  Var<S> y = g.push(Tensor<S>::scalar(acc), needs);
  if (needs)
    g.set_back(y, [a, y](Graph<S>& g) {
      S go = g.grad(y.id).v[0];
      Tensor<S>& ga = g.grad(a.id);
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += go;
    });
  return y;
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  return scale(sum_all(a), S(1) / S(a.numel()));
}

template <typename S>
Var<S> rows_reduce_sum(Var<S> a) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2, "rows_reduce_sum expects a matrix");
  int n = a.dim(0), d = a.dim(1);
  Tensor<S> out = Tensor<S>::uninit({n});
  for (int i = 0; i < n; ++i) {
    S acc = 0;
    const S* p = a.val().data() + int64_t(i) * d;
    for (int j = 0; j < d; ++j) acc += p[j];
    out[i] = acc;
  }
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, n, d](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) ga[int64_t(i) * d + j] += go[i];
    });
  return y;
}

// v[N] -> [N,D], each row i filled with v[i].
template <typename S>
Var<S> expand_colvec(Var<S> v, int d) {
  Graph<S>& g = *v.g;
  MA_CHECK(v.val().ndim() == 1, "expand_colvec expects a vector");
  int n = v.dim(0);
  Tensor<S> out = Tensor<S>::uninit({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[int64_t(i) * d + j] = v.val()[i];
  bool needs = g.want_grad({v});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [v, y, n, d](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& gv = g.grad(v.id);
      for (int i = 0; i < n; ++i) {
        S acc = 0;
        for (int j = 0; j < d; ++j) acc += go[int64_t(i) * d + j];
        gv[i] += acc;
      }
    });
  return y;
}

// v[D] -> [N,D], every row a copy of v.
template <typename S>
Var<S> expand_rowvec(Var<S> v, int n) {
  Graph<S>& g = *v.g;
  MA_CHECK(v.val().ndim() == 1, "expand_rowvec expects a vector");
  int d = v.dim(0);
  Tensor<S> out = Tensor<S>::uninit({n, d});
  for (int i = 0; i < n; ++i) std::copy_n(v.val().data(), d, out.data() + int64_t(i) * d);
  bool needs = g.want_grad({v});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [v, y, n, d](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& gv = g.grad(v.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gv[j] += go[int64_t(i) * d + j];
    });
  return y;
}

// Per-group mean over a [C,T,H,W] map; channels split into `groups`
// contiguous spans.
template <typename S>
Var<S> group_mean(Var<S> a, int groups) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 4, "group_mean expects [C,T,H,W]");
  int c = a.dim(0);
  MA_CHECK(c % groups == 0, "channels not divisible by groups");
  int64_t inner = a.numel() / c;
  int span = c / groups;
  int64_t per = span * inner;
  Tensor<S> out = Tensor<S>::uninit({groups});
  for (int gi = 0; gi < groups; ++gi) {
    S acc = 0;
    const S* p = a.val().data() + int64_t(gi) * per;
    for (int64_t i = 0; i < per; ++i) acc += p[i];
    out[gi] = acc / S(per);
  }
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, groups, per](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int gi = 0; gi < groups; ++gi) {
        S d = go[gi] / S(per);
        S* p = ga.data() + int64_t(gi) * per;
        for (int64_t i = 0; i < per; ++i) p[i] += d;
      }
    });
  return y;
}

// v[groups] -> [C,T,H,W] broadcast over each group span.
template <typename S>
Var<S> group_expand(Var<S> v, const std::vector<int>& dims, int groups) {
  Graph<S>& g = *v.g;
  MA_CHECK(v.val().ndim() == 1 && v.dim(0) == groups, "group_expand size");
  MA_CHECK(dims.size() == 4 && dims[0] % groups == 0, "group_expand dims");
  int64_t per = Tensor<S>::count(dims) / groups;
  Tensor<S> out = Tensor<S>::uninit(dims);
  for (int gi = 0; gi < groups; ++gi) {
    S val = v.val()[gi];
    S* p = out.data() + int64_t(gi) * per;
    for (int64_t i = 0; i < per; ++i) p[i] = val;
  }
  bool needs = g.want_grad({v});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [v, y, groups, per](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& gv = g.grad(v.id);
      for (int gi = 0; gi < groups; ++gi) {
        S acc = 0;
        const S* p = go.data() + int64_t(gi) * per;
        for (int64_t i = 0; i < per; ++i) acc += p[i];
        gv[gi] += acc;
      }
    });
  return y;
}

// v[C] -> [C,T,H,W] broadcast per channel.
template <typename S>
Var<S> channel_expand(Var<S> v, const std::vector<int>& dims) {
  return group_expand(v, dims, dims[0]);
}

// Mean over T,H,W of a [C,T,H,W] map -> [C].
template <typename S>
Var<S> pool_thw(Var<S> a) {
  return group_mean(a, a.dim(0));
}

// [C,T,H,W] -> rows [(t,u,v), channel] = [T*H*W, C].
template <typename S>
Var<S> map_rows(Var<S> a) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 4, "map_rows expects [C,T,H,W]");
  int c = a.dim(0);
  int64_t cells = a.numel() / c;
  Tensor<S> out = Tensor<S>::uninit({int(cells), c});
  const S* src = a.val().data();
  for (int ci = 0; ci < c; ++ci)
    for (int64_t s = 0; s < cells; ++s) out[s * c + ci] = src[int64_t(ci) * cells + s];
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, c, cells](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int ci = 0; ci < c; ++ci)
        for (int64_t s = 0; s < cells; ++s) ga[int64_t(ci) * cells + s] += go[s * c + ci];
    });
  return y;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2 && b.val().ndim() == 2, "matmul expects matrices");
  MA_CHECK(a.dim(1) == b.dim(0), "matmul inner dim mismatch");
  int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor<S> out = Tensor<S>::uninit({n, m});
  as_mat(out, n, m).noalias() = as_mat(a.val(), n, k) * as_mat(b.val(), k, m);
  bool needs = g.want_grad({a, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, b, y, n, k, m](Graph<S>& g) {
      ConstMatMap<S> go(g.grad(y.id).data(), n, m);
      if (g.needs(a.id))
        as_mat(g.grad(a.id), n, k).noalias() += go * as_mat(g.val(b.id), k, m).transpose();
      if (g.needs(b.id))
        as_mat(g.grad(b.id), k, m).noalias() += as_mat(g.val(a.id), n, k).transpose() * go;
    });
  return y;
}

// A[N,D] * B[M,D]^T -> [N,M].
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2 && b.val().ndim() == 2, "matmul_nt expects matrices");
  MA_CHECK(a.dim(1) == b.dim(1), "matmul_nt inner dim mismatch");
  int n = a.dim(0), d = a.dim(1), m = b.dim(0);
  Tensor<S> out = Tensor<S>::uninit({n, m});
  as_mat(out, n, m).noalias() = as_mat(a.val(), n, d) * as_mat(b.val(), m, d).transpose();
  bool needs = g.want_grad({a, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, b, y, n, d, m](Graph<S>& g) {
      ConstMatMap<S> go(g.grad(y.id).data(), n, m);
      if (g.needs(a.id))
        as_mat(g.grad(a.id), n, d).noalias() += go * as_mat(g.val(b.id), m, d);
      if (g.needs(b.id))
        as_mat(g.grad(b.id), m, d).noalias() += go.transpose() * as_mat(g.val(a.id), n, d);
    });
  return y;
}

// X[N,in] * W[out,in]^T + b -> [N,out].
template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  Graph<S>& g = *x.g;
  MA_CHECK(x.val().ndim() == 2 && w.val().ndim() == 2, "linear expects matrices");
  MA_CHECK(x.dim(1) == w.dim(1), "linear in-features mismatch");
  MA_CHECK(b.val().ndim() == 1 && b.dim(0) == w.dim(0), "linear bias size");
  int n = x.dim(0), in = x.dim(1), out_d = w.dim(0);
  Tensor<S> out = Tensor<S>::uninit({n, out_d});
  as_mat(out, n, out_d).noalias() =
      as_mat(x.val(), n, in) * as_mat(w.val(), out_d, in).transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_d; ++j) out[int64_t(i) * out_d + j] += b.val()[j];
  bool needs = g.want_grad({x, w, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [x, w, b, y, n, in, out_d](Graph<S>& g) {
      ConstMatMap<S> go(g.grad(y.id).data(), n, out_d);
      if (g.needs(x.id))
        as_mat(g.grad(x.id), n, in).noalias() += go * as_mat(g.val(w.id), out_d, in);
      if (g.needs(w.id))
        as_mat(g.grad(w.id), out_d, in).noalias() +=
            go.transpose() * as_mat(g.val(x.id), n, in);
      if (g.needs(b.id)) {
        Tensor<S>& gb = g.grad(b.id);
        const Tensor<S>& got = g.grad(y.id);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < out_d; ++j) gb[j] += got[int64_t(i) * out_d + j];
      }
    });
  return y;
}

// ---------------------------------------------------------------------------
// softmax / logsumexp
// ---------------------------------------------------------------------------

template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2, "softmax_rows expects a matrix");
  int n = a.dim(0), d = a.dim(1);
  Tensor<S> out = a.val();
  for (int i = 0; i < n; ++i) {
    S* p = out.data() + int64_t(i) * d;
    S mx = p[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, p[j]);
    S z = 0;
    for (int j = 0; j < d; ++j) {
      p[j] = std::exp(p[j] - mx);
      z += p[j];
    }
    for (int j = 0; j < d; ++j) p[j] /= z;
  }
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, n, d](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      const Tensor<S>& yv = g.val(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int i = 0; i < n; ++i) {
        const S* gy = go.data() + int64_t(i) * d;
        const S* py = yv.data() + int64_t(i) * d;
        S dot = 0;
        for (int j = 0; j < d; ++j) dot += gy[j] * py[j];
        S* gx = ga.data() + int64_t(i) * d;
        for (int j = 0; j < d; ++j) gx[j] += py[j] * (gy[j] - dot);
      }
    });
  return y;
}

// Stable per-row logsumexp restricted to mask!=0 entries; mask is a constant
// [N,D] 0/1 tensor (empty mask tensor = all ones). Rows must contain at least
// one unmasked entry.
template <typename S>
Var<S> lse_rows_masked(Var<S> a, Tensor<S> mask) {
  Graph<S>& g = *a.g;
  MA_CHECK(a.val().ndim() == 2, "lse_rows_masked expects a matrix");
  int n = a.dim(0), d = a.dim(1);
  bool has_mask = !mask.empty();
  if (has_mask) MA_CHECK(mask.dims == a.dims(), "mask shape mismatch");
  Tensor<S> out = Tensor<S>::uninit({n});
  for (int i = 0; i < n; ++i) {
    const S* p = a.val().data() + int64_t(i) * d;
    const S* m = has_mask ? mask.data() + int64_t(i) * d : nullptr;
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < d; ++j)
      if (!m || m[j] != S(0)) mx = std::max(mx, p[j]);
    MA_CHECK(mx > -std::numeric_limits<S>::infinity(), "empty mask row in logsumexp");
    S z = 0;
    for (int j = 0; j < d; ++j)
      if (!m || m[j] != S(0)) z += std::exp(p[j] - mx);
    out[i] = mx + std::log(z);
  }
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, n, d, mask = std::move(mask), has_mask](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      const Tensor<S>& yv = g.val(y.id);
      const Tensor<S>& xv = g.val(a.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int i = 0; i < n; ++i) {
        const S* p = xv.data() + int64_t(i) * d;
        const S* m = has_mask ? mask.data() + int64_t(i) * d : nullptr;
        S* gx = ga.data() + int64_t(i) * d;
        for (int j = 0; j < d; ++j)
          if (!m || m[j] != S(0)) gx[j] += go[i] * std::exp(p[j] - yv[i]);
      }
    });
  return y;
}

template <typename S>
Var<S> lse_rows(Var<S> a) {
  return lse_rows_masked(a, Tensor<S>{});
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

// Inverted dropout; identity when train=false or rate=0. The mask draws from
// `rng`, which the caller owns, so eval passes never consume randomness.
template <typename S>
Var<S> dropout(Var<S> a, double rate, Rng& rng, bool train) {
  if (!train || rate <= 0.0) return a;
  Graph<S>& g = *a.g;
  Tensor<S> mask = Tensor<S>::uninit(a.dims());
  S keep_inv = S(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.bernoulli(rate) ? S(0) : keep_inv;
  Tensor<S> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  bool needs = g.want_grad({a});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [a, y, mask = std::move(mask)](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      Tensor<S>& ga = g.grad(a.id);
      for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * mask[i];
    });
  return y;
}

// ---------------------------------------------------------------------------
// 3-d convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

struct ConvSpec {
  int kt = 3, kh = 3, kw = 3;
  int st = 1, sh = 1, sw = 1;
  int pt = 1, ph = 1, pw = 1;
  static int out_dim(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
};

namespace detail {
template <typename S>
Tensor<S> im2col3d(const Tensor<S>& x, const ConvSpec& c, int to, int ho, int wo) {
  int ci = x.dims[0], t = x.dims[1], h = x.dims[2], w = x.dims[3];
  int64_t cols = int64_t(to) * ho * wo;
  // Every slot is written below (pad positions get explicit zeros).
  Tensor<S> col = Tensor<S>::uninit({ci * c.kt * c.kh * c.kw, int(cols)});
  int64_t r = 0;
  for (int cc = 0; cc < ci; ++cc)
    for (int dt = 0; dt < c.kt; ++dt)
      for (int dh = 0; dh < c.kh; ++dh)
        for (int dw = 0; dw < c.kw; ++dw, ++r) {
          S* dst = col.data() + r * cols;
          for (int ot = 0; ot < to; ++ot) {
            int it = ot * c.st - c.pt + dt;
            if (it < 0 || it >= t) {
              std::fill_n(dst + int64_t(ot) * ho * wo, int64_t(ho) * wo, S(0));
              continue;
            }
            for (int oh = 0; oh < ho; ++oh) {
              int ih = oh * c.sh - c.ph + dh;
              S* drow = dst + (int64_t(ot) * ho + oh) * wo;
              if (ih < 0 || ih >= h) {
                std::fill_n(drow, wo, S(0));
                continue;
              }
              const S* srow = x.data() + ((int64_t(cc) * t + it) * h + ih) * w;
              int iw0 = -c.pw + dw;
              for (int ow = 0; ow < wo; ++ow) {
                int iw = iw0 + ow * c.sw;
                drow[ow] = (iw >= 0 && iw < w) ? srow[iw] : S(0);
              }
            }
          }
        }
  return col;
}

template <typename S>
void col2im3d(const Tensor<S>& col, const ConvSpec& c, Tensor<S>& dx, int to, int ho,
              int wo) {
  int ci = dx.dims[0], t = dx.dims[1], h = dx.dims[2], w = dx.dims[3];
  int64_t cols = int64_t(to) * ho * wo;
  int64_t r = 0;
  for (int cc = 0; cc < ci; ++cc)
    for (int dt = 0; dt < c.kt; ++dt)
      for (int dh = 0; dh < c.kh; ++dh)
        for (int dw = 0; dw < c.kw; ++dw, ++r) {
          const S* src = col.data() + r * cols;
          for (int ot = 0; ot < to; ++ot) {
            int it = ot * c.st - c.pt + dt;
            if (it < 0 || it >= t) continue;
            for (int oh = 0; oh < ho; ++oh) {
              int ih = oh * c.sh - c.ph + dh;
              if (ih < 0 || ih >= h) continue;
              const S* srow = src + (int64_t(ot) * ho + oh) * wo;
              S* drow = dx.data() + ((int64_t(cc) * t + it) * h + ih) * w;
              int iw0 = -c.pw + dw;
              for (int ow = 0; ow < wo; ++ow) {
                int iw = iw0 + ow * c.sw;
                if (iw >= 0 && iw < w) drow[iw] += srow[ow];
              }
            }
          }
        }
}
}  // namespace detail

// x [Ci,T,H,W], w [Co, Ci*kt*kh*kw], b [Co] -> [Co,T',H',W'].
template <typename S>
Var<S> conv3d(Var<S> x, Var<S> w, Var<S> b, const ConvSpec& c) {
  Graph<S>& g = *x.g;
  MA_CHECK(x.val().ndim() == 4, "conv3d expects [C,T,H,W] input");
  int ci = x.dim(0), t = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int k = ci * c.kt * c.kh * c.kw;
  MA_CHECK(w.val().ndim() == 2 && w.dim(1) == k, "conv3d weight shape");
  int co = w.dim(0);
  MA_CHECK(b.val().ndim() == 1 && b.dim(0) == co, "conv3d bias shape");
  int to = ConvSpec::out_dim(t, c.kt, c.st, c.pt);
  int ho = ConvSpec::out_dim(h, c.kh, c.sh, c.ph);
  int wo = ConvSpec::out_dim(wd, c.kw, c.sw, c.pw);
  MA_CHECK(to >= 1 && ho >= 1 && wo >= 1, "conv3d output collapsed");
  int64_t cells = int64_t(to) * ho * wo;

  Tensor<S> col = detail::im2col3d(x.val(), c, to, ho, wo);
  Tensor<S> out = Tensor<S>::uninit({co, to, ho, wo});
  as_mat(out, co, int(cells)).noalias() =
      as_mat(w.val(), co, k) * as_mat(col, k, int(cells));
  for (int oc = 0; oc < co; ++oc) {
    S* p = out.data() + oc * cells;
    for (int64_t i = 0; i < cells; ++i) p[i] += b.val()[oc];
  }
  bool needs = g.want_grad({x, w, b});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [x, w, b, y, c, co, k, to, ho, wo, cells,
                   col = std::move(col)](Graph<S>& g) {
      ConstMatMap<S> go(g.grad(y.id).data(), co, int(cells));
      if (g.needs(w.id))
        as_mat(g.grad(w.id), co, k).noalias() += go * as_mat(col, k, int(cells)).transpose();
      if (g.needs(b.id)) {
        Tensor<S>& gb = g.grad(b.id);
        const Tensor<S>& got = g.grad(y.id);
        for (int oc = 0; oc < co; ++oc) {
          S acc = 0;
          const S* p = got.data() + oc * cells;
          for (int64_t i = 0; i < cells; ++i) acc += p[i];
          gb[oc] += acc;
        }
      }
      if (g.needs(x.id)) {
        Tensor<S> dcol = Tensor<S>::uninit({k, int(cells)});
        as_mat(dcol, k, int(cells)).noalias() =
            as_mat(g.val(w.id), co, k).transpose() * go;
        detail::col2im3d(dcol, c, g.grad(x.id), to, ho, wo);
      }
    });
  return y;
}

// ---------------------------------------------------------------------------
// composite helpers
// ---------------------------------------------------------------------------

// Row-wise x / sqrt(||x||^2 + eps^2); maps zero rows to zero.
template <typename S>
Var<S> rows_l2_normalize(Var<S> x, S eps) {
  Var<S> nrm2 = rows_reduce_sum(mul(x, x));
  Var<S> inv = rsqrt_op(add_scalar(nrm2, eps * eps));
  return mul(x, expand_colvec(inv, x.dim(1)));
}

// GroupNorm over a [C,T,H,W] map (per-sample statistics). Fused single node:
// only the per-group mean and inverse stddev are saved; the normalized values
// are recomputed from x in the backward pass.
template <typename S>
Var<S> group_norm(Var<S> x, Var<S> gamma, Var<S> beta, int groups, S eps) {
  Graph<S>& g = *x.g;
  MA_CHECK(x.val().ndim() == 4, "group_norm expects [C,T,H,W]");
  int c = x.dim(0);
  MA_CHECK(c % groups == 0, "channels not divisible by groups");
  MA_CHECK(gamma.val().ndim() == 1 && gamma.dim(0) == c, "group_norm gamma size");
  MA_CHECK(beta.val().ndim() == 1 && beta.dim(0) == c, "group_norm beta size");
  int64_t inner = x.numel() / c;
  int span = c / groups;
  int64_t per = span * inner;

  std::vector<S> mu(groups), inv(groups);
  const S* px = x.val().data();
  for (int gi = 0; gi < groups; ++gi) {
    const S* p = px + int64_t(gi) * per;
    S m = 0;
    for (int64_t i = 0; i < per; ++i) m += p[i];
    m /= S(per);
    S var = 0;
    for (int64_t i = 0; i < per; ++i) {
      S dv = p[i] - m;
      var += dv * dv;
    }
    mu[gi] = m;
    inv[gi] = S(1) / std::sqrt(var / S(per) + eps);
  }
  Tensor<S> out = Tensor<S>::uninit(x.dims());
  for (int ci = 0; ci < c; ++ci) {
    S gm = gamma.val()[ci], bt = beta.val()[ci];
    S m = mu[ci / span], iv = inv[ci / span];
    const S* p = px + int64_t(ci) * inner;
    S* q = out.data() + int64_t(ci) * inner;
    for (int64_t i = 0; i < inner; ++i) q[i] = (p[i] - m) * iv * gm + bt;
  }
  bool needs = g.want_grad({x, gamma, beta});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [x, gamma, beta, y, groups, span, inner, per, mu = std::move(mu),
                   inv = std::move(inv)](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      const Tensor<S>& xv = g.val(x.id);
      const Tensor<S>& gmv = g.val(gamma.id);
      if (g.needs(gamma.id) || g.needs(beta.id)) {
        bool ng = g.needs(gamma.id), nb = g.needs(beta.id);
        for (int gi = 0; gi < groups; ++gi)
          for (int sc = 0; sc < span; ++sc) {
            int ci = gi * span + sc;
            const S* pg = go.data() + int64_t(ci) * inner;
            const S* p = xv.data() + int64_t(ci) * inner;
            S sg = 0, sb = 0;
            for (int64_t i = 0; i < inner; ++i) {
              sg += pg[i] * (p[i] - mu[gi]) * inv[gi];
              sb += pg[i];
            }
            if (ng) g.grad(gamma.id)[ci] += sg;
            if (nb) g.grad(beta.id)[ci] += sb;
          }
      }
      if (g.needs(x.id)) {
        Tensor<S>& gx = g.grad(x.id);
        // dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat)) per group,
        // where dxhat = go * gamma.
        for (int gi = 0; gi < groups; ++gi) {
          S s1 = 0, s2 = 0;
          for (int sc = 0; sc < span; ++sc) {
            int ci = gi * span + sc;
            S gm = gmv[ci];
            const S* pg = go.data() + int64_t(ci) * inner;
            const S* p = xv.data() + int64_t(ci) * inner;
            for (int64_t i = 0; i < inner; ++i) {
              S dxh = pg[i] * gm;
              s1 += dxh;
              s2 += dxh * (p[i] - mu[gi]) * inv[gi];
            }
          }
          s1 /= S(per);
          s2 /= S(per);
          for (int sc = 0; sc < span; ++sc) {
            int ci = gi * span + sc;
            S gm = gmv[ci];
            const S* pg = go.data() + int64_t(ci) * inner;
            const S* p = xv.data() + int64_t(ci) * inner;
            S* pd = gx.data() + int64_t(ci) * inner;
            for (int64_t i = 0; i < inner; ++i) {
              S xh = (p[i] - mu[gi]) * inv[gi];
              pd[i] += inv[gi] * (pg[i] * gm - s1 - xh * s2);
            }
          }
        }
      }
    });
  return y;
}

// LayerNorm over the last axis of [N,D] rows; fused like group_norm.
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps) {
  Graph<S>& g = *x.g;
  MA_CHECK(x.val().ndim() == 2, "layer_norm expects [N,D]");
  int n = x.dim(0), d = x.dim(1);
  MA_CHECK(gamma.val().ndim() == 1 && gamma.dim(0) == d, "layer_norm gamma size");
  MA_CHECK(beta.val().ndim() == 1 && beta.dim(0) == d, "layer_norm beta size");

  std::vector<S> mu(n), inv(n);
  Tensor<S> out = Tensor<S>::uninit(x.dims());
  const S* gmv0 = gamma.val().data();
  const S* btv0 = beta.val().data();
  for (int i = 0; i < n; ++i) {
    const S* p = x.val().data() + int64_t(i) * d;
    S m = 0;
    for (int j = 0; j < d; ++j) m += p[j];
    m /= S(d);
    S var = 0;
    for (int j = 0; j < d; ++j) {
      S dv = p[j] - m;
      var += dv * dv;
    }
    mu[i] = m;
    inv[i] = S(1) / std::sqrt(var / S(d) + eps);
    S* q = out.data() + int64_t(i) * d;
    for (int j = 0; j < d; ++j) q[j] = (p[j] - m) * inv[i] * gmv0[j] + btv0[j];
  }
  bool needs = g.want_grad({x, gamma, beta});
  Var<S> y = g.push(std::move(out), needs);
  if (needs)
    g.set_back(y, [x, gamma, beta, y, n, d, mu = std::move(mu),
                   inv = std::move(inv)](Graph<S>& g) {
      const Tensor<S>& go = g.grad(y.id);
      const Tensor<S>& xv = g.val(x.id);
      const Tensor<S>& gmv = g.val(gamma.id);
      if (g.needs(gamma.id) || g.needs(beta.id)) {
        bool ng = g.needs(gamma.id), nb = g.needs(beta.id);
        for (int i = 0; i < n; ++i) {
          const S* pg = go.data() + int64_t(i) * d;
          const S* p = xv.data() + int64_t(i) * d;
          for (int j = 0; j < d; ++j) {
            if (ng) g.grad(gamma.id)[j] += pg[j] * (p[j] - mu[i]) * inv[i];
            if (nb) g.grad(beta.id)[j] += pg[j];
          }
        }
      }
      if (g.needs(x.id)) {
        Tensor<S>& gx = g.grad(x.id);
        for (int i = 0; i < n; ++i) {
          const S* pg = go.data() + int64_t(i) * d;
          const S* p = xv.data() + int64_t(i) * d;
          S* pd = gx.data() + int64_t(i) * d;
          S s1 = 0, s2 = 0;
          for (int j = 0; j < d; ++j) {
            S dxh = pg[j] * gmv[j];
            s1 += dxh;
            s2 += dxh * (p[j] - mu[i]) * inv[i];
          }
          s1 /= S(d);
          s2 /= S(d);
          for (int j = 0; j < d; ++j) {
            S xh = (p[j] - mu[i]) * inv[i];
            pd[j] += inv[i] * (pg[j] * gmv[j] - s1 - xh * s2);
          }
        }
      }
    });
  return y;
}

}  // namespace ma
