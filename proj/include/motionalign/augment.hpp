#pragma once

#include <algorithm>
#include <cmath>

#include "motionalign/rng.hpp"
#include "motionalign/video.hpp"

// Temporally consistent two-view augmentation with exact bookkeeping of the
// geometric parameters, so feature pixels can later be warped back to
// original video coordinates.

namespace ma {

struct GeomParams {
  int crop_top = 0, crop_left = 0;  // original-space pixels
  int crop_h = 0, crop_w = 0;
  bool flip = false;
  int out_size = 0;
};

struct AugConfig {
  int window = 8;   // frames per view
  int stride = 2;   // temporal stride over raw frames
  int out_size = 64;
  double scale_lo = 0.2, scale_hi = 1.0;       // crop area / original area
  double aspect_lo = 3.0 / 4.0, aspect_hi = 4.0 / 3.0;
  double p_flip = 0.5;
  double p_gray = 0.2;
  double p_jitter = 0.2;
  double jitter_strength = 0.4;  // brightness/contrast/saturation half-range
  double p_blur = 0.2;
  double blur_sigma_lo = 0.1, blur_sigma_hi = 2.0;
};

struct ViewRecord {
  Tensor<float> view;  // [T,3,out,out]
  GeomParams geom;
  uint64_t photometric_seed = 0;
  int start_frame = 0;
  int stride = 1;
};

// Area-in-range random crop rectangle; falls back to the full canvas when no
// attempt fits (full canvas has area ratio 1, inside [lo,hi] by config).
inline GeomParams sample_crop(Rng& rng, int s, const AugConfig& cfg) {
  GeomParams gp;
  gp.out_size = cfg.out_size;
  double area = double(s) * s;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = area * rng.uniform(cfg.scale_lo, cfg.scale_hi);
    double ratio = std::exp(rng.uniform(std::log(cfg.aspect_lo), std::log(cfg.aspect_hi)));
    int w = int(std::lround(std::sqrt(target * ratio)));
    int h = int(std::lround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > s || h > s) continue;
    double r = double(w) * h / area;
    if (r < cfg.scale_lo || r > cfg.scale_hi) continue;  // rounding pushed it out
    gp.crop_w = w;
    gp.crop_h = h;
    gp.crop_top = rng.uniform_int(0, s - h);
    gp.crop_left = rng.uniform_int(0, s - w);
    return gp;
  }
  gp.crop_top = gp.crop_left = 0;
  gp.crop_h = gp.crop_w = s;
  return gp;
}

namespace detail {

// Bilinear sample of one channel plane [s,s] at (y,x), clamped to the crop
// rectangle so no pixels outside the crop leak in.
inline float sample_bilinear(const float* plane, int s, float y, float x, int top,
                             int left, int h, int w) {
  float ylo = float(top), yhi = float(top + h - 1);
  float xlo = float(left), xhi = float(left + w - 1);
  y = std::min(std::max(y, ylo), yhi);
  x = std::min(std::max(x, xlo), xhi);
  int y0 = int(std::floor(y)), x0 = int(std::floor(x));
  int y1 = std::min(y0 + 1, top + h - 1), x1 = std::min(x0 + 1, left + w - 1);
  float fy = y - y0, fx = x - x0;
  float a = plane[int64_t(y0) * s + x0] * (1 - fx) + plane[int64_t(y0) * s + x1] * fx;
  float b = plane[int64_t(y1) * s + x0] * (1 - fx) + plane[int64_t(y1) * s + x1] * fx;
  return a * (1 - fy) + b * fy;
}

}  // namespace detail

// Crops, resizes, and optionally mirrors every frame of the window with the
// same geometry (temporal consistency).
inline Tensor<float> apply_geometry(const Tensor<float>& frames, int start, int stride,
                                    int window, const GeomParams& gp) {
  int s = frames.dims[2];
  int o = gp.out_size;
  Tensor<float> out = Tensor<float>::uninit({window, 3, o, o});
  for (int t = 0; t < window; ++t) {
    const float* fr = frames.data() + int64_t(start + t * stride) * 3 * s * s;
    for (int c = 0; c < 3; ++c) {
      const float* plane = fr + int64_t(c) * s * s;
      float* op = out.data() + (int64_t(t) * 3 + c) * o * o;
      for (int i = 0; i < o; ++i) {
        float sy = gp.crop_top + (i + 0.5f) * gp.crop_h / float(o) - 0.5f;
        for (int j = 0; j < o; ++j) {
          int jj = gp.flip ? o - 1 - j : j;
          float sx = gp.crop_left + (jj + 0.5f) * gp.crop_w / float(o) - 0.5f;
          op[int64_t(i) * o + j] = detail::sample_bilinear(
              plane, s, sy, sx, gp.crop_top, gp.crop_left, gp.crop_h, gp.crop_w);
        }
      }
    }
  }
  return out;
}

// Grayscale / brightness / contrast / saturation / blur, one draw per view,
// identical across frames. Values are clamped back to [0,1].
inline void apply_photometric(Tensor<float>& view, const AugConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  bool gray = rng.bernoulli(cfg.p_gray);
  bool jitter = rng.bernoulli(cfg.p_jitter);
  float jb = 1, jc = 1, js = 1;
  if (jitter) {
    jb = float(rng.uniform(1 - cfg.jitter_strength, 1 + cfg.jitter_strength));
    jc = float(rng.uniform(1 - cfg.jitter_strength, 1 + cfg.jitter_strength));
    js = float(rng.uniform(1 - cfg.jitter_strength, 1 + cfg.jitter_strength));
  }
  bool blur = rng.bernoulli(cfg.p_blur);
  float sigma = blur ? float(rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi)) : 0.0f;

  int t_n = view.dims[0], o = view.dims[2];
  int64_t plane = int64_t(o) * o;
  auto clamp01 = [](float v) { return v < 0 ? 0.0f : (v > 1 ? 1.0f : v); };

  for (int t = 0; t < t_n; ++t) {
    float* fr = view.data() + int64_t(t) * 3 * plane;
    if (jitter) {
      // brightness: scale; contrast: blend with the frame's gray mean;
      // saturation: blend each pixel with its own gray value.
      for (int64_t i = 0; i < 3 * plane; ++i) fr[i] = clamp01(fr[i] * jb);
      double mean_gray = 0;
      for (int64_t i = 0; i < plane; ++i)
        mean_gray += 0.299f * fr[i] + 0.587f * fr[plane + i] + 0.114f * fr[2 * plane + i];
      float mg = float(mean_gray / double(plane));
      for (int64_t i = 0; i < 3 * plane; ++i) fr[i] = clamp01(mg + jc * (fr[i] - mg));
      for (int64_t i = 0; i < plane; ++i) {
        float gy = 0.299f * fr[i] + 0.587f * fr[plane + i] + 0.114f * fr[2 * plane + i];
        fr[i] = clamp01(gy + js * (fr[i] - gy));
        fr[plane + i] = clamp01(gy + js * (fr[plane + i] - gy));
        fr[2 * plane + i] = clamp01(gy + js * (fr[2 * plane + i] - gy));
      }
    }
    if (gray) {
      for (int64_t i = 0; i < plane; ++i) {
        float gy = 0.299f * fr[i] + 0.587f * fr[plane + i] + 0.114f * fr[2 * plane + i];
        fr[i] = fr[plane + i] = fr[2 * plane + i] = gy;
      }
    }
    if (blur) {
      // Separable Gaussian, radius 5 (covers 2.5 sigma at the top of the range).
      const int r = 5;
      float k[2 * r + 1];
      float ksum = 0;
      for (int d = -r; d <= r; ++d) {
        k[d + r] = std::exp(-0.5f * d * d / (sigma * sigma));
        ksum += k[d + r];
      }
      for (int d = 0; d < 2 * r + 1; ++d) k[d] /= ksum;
      std::vector<float> tmp(size_t(plane), 0.0f);
      for (int c = 0; c < 3; ++c) {
        float* p = fr + int64_t(c) * plane;
        for (int y = 0; y < o; ++y)
          for (int x = 0; x < o; ++x) {
            float acc = 0;
            for (int d = -r; d <= r; ++d) {
              int xx = std::min(std::max(x + d, 0), o - 1);
              acc += k[d + r] * p[int64_t(y) * o + xx];
            }
            tmp[size_t(y) * o + x] = acc;
          }
        for (int y = 0; y < o; ++y)
          for (int x = 0; x < o; ++x) {
            float acc = 0;
            for (int d = -r; d <= r; ++d) {
              int yy = std::min(std::max(y + d, 0), o - 1);
              acc += k[d + r] * tmp[size_t(yy) * o + x];
            }
            p[int64_t(y) * o + x] = clamp01(acc);
          }
      }
    }
  }
}

// Two views at distinct start frames, independent geometry and photometric
// draws per view. The returned views have NOT had photometrics applied yet:
// the pipeline differences frames first, then calls apply_photometric on the
// RGB view (see motionsource).
inline std::pair<ViewRecord, ViewRecord> sample_two_views(const LabeledClip& clip,
                                                          const AugConfig& cfg,
                                                          uint64_t seed) {
  int t_raw = clip.frames.dims[0];
  int span = cfg.window * cfg.stride;
  MA_CHECK(t_raw >= span + 1, "clip too short for two distinct windows");
  int max_start = t_raw - span;
  Rng rng(seed);

  int s0 = rng.uniform_int(0, max_start);
  int s1 = rng.uniform_int(0, max_start - 1);
  if (s1 >= s0) ++s1;  // distinct timestamps

  auto make = [&](int start) {
    ViewRecord vr;
    vr.start_frame = start;
    vr.stride = cfg.stride;
    vr.geom = sample_crop(rng, clip.frames.dims[2], cfg);
    vr.geom.flip = rng.bernoulli(cfg.p_flip);
    vr.photometric_seed = rng.next_u64();
    vr.view = apply_geometry(clip.frames, start, cfg.stride, cfg.window, vr.geom);
    return vr;
  };
  ViewRecord a = make(s0);
  ViewRecord b = make(s1);
  return {std::move(a), std::move(b)};
}

// Original-space center of feature cell (u,v) on an hp-by-wp grid over the
// view: flip mirrors the column, then the cell center maps through the crop.
inline std::pair<float, float> warp_pixel_to_original(const GeomParams& geom, int hp,
                                                      int wp, int u, int v) {
  MA_CHECK(0 <= u && u < hp && 0 <= v && v < wp, "cell index outside grid");
  int vp = geom.flip ? wp - 1 - v : v;
  float x = geom.crop_left + (vp + 0.5f) / float(wp) * geom.crop_w;
  float y = geom.crop_top + (u + 0.5f) / float(hp) * geom.crop_h;
  return {x, y};
}

}  // namespace ma
