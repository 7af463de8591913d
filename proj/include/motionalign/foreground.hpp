#pragma once

#include <algorithm>
#include <numeric>

#include "motionalign/tensor.hpp"

// Class-agnostic activation maps from pre-projection encoder features, fused
// across modalities, and the quantile-based foreground/background partition.

namespace ma {

// Where foreground masks are applied in the pixel loss.
enum class MaskPosition { none, prediction, target, both };
// Which activation modality feeds the fused mask.
enum class MaskSource { rgb, diff, both };

// [C,T,H,W] features -> [H,W]; mean over channel and time of rectified
// activations.
template <typename S>
Tensor<S> caam(const Tensor<S>& map) {
  MA_CHECK(map.ndim() == 4, "caam expects [C,T,H,W]");
  int c = map.dims[0], t = map.dims[1], h = map.dims[2], w = map.dims[3];
  Tensor<S> act({h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int ti = 0; ti < t; ++ti) {
      const S* p = map.data() + (int64_t(ci) * t + ti) * h * w;
      for (int64_t i = 0; i < int64_t(h) * w; ++i)
        if (p[i] > 0) act[i] += p[i];
    }
  S inv = S(1) / S(c * t);
  for (int64_t i = 0; i < act.numel(); ++i) act[i] *= inv;
  return act;
}

// Min-max normalizes a map to [0,1] in place; a degenerate (constant) map
// becomes all 0.5.
template <typename S>
void minmax_normalize(Tensor<S>& m) {
  S lo = m[0], hi = m[0];
  for (int64_t i = 1; i < m.numel(); ++i) {
    lo = std::min(lo, m[i]);
    hi = std::max(hi, m[i]);
  }
  if (hi - lo <= 0) {
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = S(0.5);
    return;
  }
  S inv = S(1) / (hi - lo);
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = (m[i] - lo) * inv;
}

// Point-wise addition of the two activation maps, each min-max normalized
// first (normalize=false gives the raw-addition reading of the fusion).
template <typename S>
Tensor<S> fuse(const Tensor<S>& rgb, const Tensor<S>& diff, bool normalize = true) {
  MA_CHECK(rgb.same_shape(diff), "activation map shapes differ");
  Tensor<S> a = rgb, b = diff;
  if (normalize) {
    minmax_normalize(a);
    minmax_normalize(b);
  }
  for (int64_t i = 0; i < a.numel(); ++i) a[i] += b[i];
  return a;
}

// Foreground = the round(beta*H*W) cells with the highest values; ties break
// by ascending linear index. Returns a 0/1 mask with exactly that popcount.
template <typename S>
Tensor<uint8_t> foreground_partition(const Tensor<S>& fused, double beta) {
  MA_CHECK(fused.ndim() == 2, "foreground_partition expects [H,W]");
  MA_CHECK(beta > 0 && beta < 1, "beta must lie in (0,1)");
  int n = int(fused.numel());
  int k = int(std::lround(beta * n));
  std::vector<int> order(size_t(n), 0);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return fused[a] > fused[b]; });
  Tensor<uint8_t> mask(fused.dims);
  for (int i = 0; i < k; ++i) mask[order[size_t(i)]] = 1;
  return mask;
}

// Convenience: ascending linear indices of foreground cells.
inline std::vector<int> mask_indices(const Tensor<uint8_t>& mask, bool foreground) {
  std::vector<int> idx;
  for (int64_t i = 0; i < mask.numel(); ++i)
    if ((mask[i] != 0) == foreground) idx.push_back(int(i));
  return idx;
}

}  // namespace ma
