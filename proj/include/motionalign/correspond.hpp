#pragma once

#include <cmath>

#include "motionalign/augment.hpp"
#include "motionalign/tensor.hpp"

// Geometric positive-pair machinery: warp both views' feature-cell centers to
// original-canvas coordinates, normalize pairwise distances by a feature-bin
// diagonal, and threshold. Plus the fixed-capacity FIFO negative queue.

namespace ma {

// Which view's crop defines the bin diagonal used as the distance normalizer.
enum class BinDiagonalView { key, query, mean };

inline float bin_diagonal(const GeomParams& g, int hp, int wp) {
  float bh = float(g.crop_h) / float(hp), bw = float(g.crop_w) / float(wp);
  return std::sqrt(bh * bh + bw * bw);
}

// Entry (j, j') = |warp(query_geom, j) - warp(key_geom, j')| / bin_diagonal,
// with cells in row-major (u,v) order. Distances live in original-canvas
// pixels; both warps land there.
inline Tensor<float> pairwise_normalized_distance(const GeomParams& query_geom,
                                                  const GeomParams& key_geom, int hp,
                                                  int wp, int canvas,
                                                  BinDiagonalView nv
                                                  = BinDiagonalView::key) {
  MA_CHECK(query_geom.crop_top + query_geom.crop_h <= canvas &&
               query_geom.crop_left + query_geom.crop_w <= canvas &&
               key_geom.crop_top + key_geom.crop_h <= canvas &&
               key_geom.crop_left + key_geom.crop_w <= canvas,
           "crop rectangles exceed the canvas");
  int n = hp * wp;
  std::vector<float> qx(size_t(n), 0.0f), qy(size_t(n), 0.0f), kx(size_t(n), 0.0f),
      ky(size_t(n), 0.0f);
  for (int u = 0; u < hp; ++u)
    for (int v = 0; v < wp; ++v) {
      auto [xq, yq] = warp_pixel_to_original(query_geom, hp, wp, u, v);
      auto [xk, yk] = warp_pixel_to_original(key_geom, hp, wp, u, v);
      qx[size_t(u * wp + v)] = xq;
      qy[size_t(u * wp + v)] = yq;
      kx[size_t(u * wp + v)] = xk;
      ky[size_t(u * wp + v)] = yk;
    }
  float norm = 0;
  switch (nv) {
    case BinDiagonalView::key: norm = bin_diagonal(key_geom, hp, wp); break;
    case BinDiagonalView::query: norm = bin_diagonal(query_geom, hp, wp); break;
    case BinDiagonalView::mean:
      norm = 0.5f * (bin_diagonal(key_geom, hp, wp) + bin_diagonal(query_geom, hp, wp));
      break;
  }
  Tensor<float> dist = Tensor<float>::uninit({n, n});
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      float dx = qx[size_t(j)] - kx[size_t(k)], dy = qy[size_t(j)] - ky[size_t(k)];
      dist[int64_t(j) * n + k] = std::sqrt(dx * dx + dy * dy) / norm;
    }
  return dist;
}

// Spatial positive relation, shared by every feature frame (pairs are
// same-frame only; the warp has no time dependence, so the relation is
// replicated across t by construction).
struct PositiveAssignment {
  float threshold = 0;
  std::vector<std::vector<int>> pos;  // query cell j -> ascending key cells

  int num_cells() const { return int(pos.size()); }
  bool any() const {
    for (const auto& p : pos)
      if (!p.empty()) return true;
    return false;
  }
};

// Strict inequality: only distances < threshold become positives.
inline PositiveAssignment assign_positives(const Tensor<float>& dist, float threshold) {
  MA_CHECK(threshold > 0, "threshold must be positive");
  MA_CHECK(dist.ndim() == 2 && dist.dims[0] == dist.dims[1],
           "distance matrix must be square");
  int n = dist.dims[0];
  PositiveAssignment pa;
  pa.threshold = threshold;
  pa.pos.resize(size_t(n));
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k)
      if (dist[int64_t(j) * n + k] < threshold) pa.pos[size_t(j)].push_back(k);
  return pa;
}

// Fixed-capacity FIFO of unit-normalized feature rows; oldest evicted first.
struct NegativeQueue {
  int dim = 0;
  int capacity = 0;
  std::vector<std::vector<float>> entries;  // oldest first

  NegativeQueue() = default;
  NegativeQueue(int d, int cap) : dim(d), capacity(cap) {
    MA_CHECK(d >= 1 && cap >= 1, "queue needs positive dim and capacity");
  }

  int size() const { return int(entries.size()); }

  void push(const float* v) {
    double nrm = 0;
    for (int i = 0; i < dim; ++i) nrm += double(v[i]) * v[i];
    nrm = std::sqrt(nrm);
    std::vector<float> row(size_t(dim), 0.0f);
    if (nrm > 1e-12)
      for (int i = 0; i < dim; ++i) row[size_t(i)] = float(v[i] / nrm);
    entries.push_back(std::move(row));
    if (int(entries.size()) > capacity) entries.erase(entries.begin());
  }

  void push_rows(const Tensor<float>& rows) {
    MA_CHECK(rows.ndim() == 2 && rows.dims[1] == dim, "queue row dim mismatch");
    for (int i = 0; i < rows.dims[0]; ++i) push(rows.data() + int64_t(i) * dim);
  }

  // All current entries, oldest-first; empty queue -> [0, dim].
  Tensor<float> view() const {
    Tensor<float> m = Tensor<float>::uninit({int(entries.size()), dim});
    for (size_t i = 0; i < entries.size(); ++i)
      std::copy_n(entries[i].data(), dim, m.data() + int64_t(i) * dim);
    return m;
  }
};

}  // namespace ma
