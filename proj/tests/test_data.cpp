#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "motionalign/augment.hpp"
#include "motionalign/motionsource.hpp"
#include "motionalign/video.hpp"

using namespace ma;

namespace {

SceneSpec basic_spec(MotionClass mc, Background bg, uint64_t seed,
                     float noise = 0.0f) {
  SceneSpec sp;
  sp.motion_class = mc;
  sp.background = bg;
  sp.noise_std = noise;
  sp.seed = seed;
  sp.sprite_kinds = {SpriteKind::square};
  return sp;
}

// Mask centroid of one frame, (cx, cy); returns false for empty masks.
bool mask_centroid(const LabeledClip& c, int t, double& cx, double& cy) {
  int s = c.fg_mask.dims[1];
  double sx = 0, sy = 0;
  int n = 0;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      if (c.fg_mask[(int64_t(t) * s + y) * s + x]) {
        sx += x;
        sy += y;
        ++n;
      }
  if (n == 0) return false;
  cx = sx / n;
  cy = sy / n;
  return true;
}

ViewRecord identity_view(const LabeledClip& clip, int start, int stride, int window) {
  ViewRecord vr;
  vr.start_frame = start;
  vr.stride = stride;
  vr.geom = {0, 0, clip.frames.dims[2], clip.frames.dims[3], false, clip.frames.dims[2]};
  vr.view = apply_geometry(clip.frames, start, stride, window, vr.geom);
  return vr;
}

}  // namespace

TEST_CASE("translation shifts the sprite raster exactly") {
  LabeledClip c = generate_clip(basic_spec(MotionClass::translate_right,
                                           Background::static_texture, 11),
                                32);
  int s = c.fg_mask.dims[1];

  // Infer the fixed integer velocity from the first mask pair.
  int v = 0;
  for (int cand = 1; cand <= 2 && v == 0; ++cand) {
    bool ok = true;
    for (int y = 0; y < s && ok; ++y)
      for (int x = 0; x < s && ok; ++x) {
        uint8_t want = x - cand >= 0 ? c.fg_mask[(int64_t(0) * s + y) * s + x - cand] : 0;
        ok = c.fg_mask[(int64_t(1) * s + y) * s + x] == want;
      }
    if (ok) v = cand;
  }
  REQUIRE(v >= 1);

  for (int t = 0; t + 1 < 32; ++t)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        uint8_t mprev = x - v >= 0 ? c.fg_mask[(int64_t(t) * s + y) * s + x - v] : 0;
        uint8_t mnext = c.fg_mask[(int64_t(t + 1) * s + y) * s + x];
        REQUIRE(mnext == mprev);
        if (mnext) {
          for (int ch = 0; ch < 3; ++ch)
            REQUIRE(c.frames[((int64_t(t + 1) * 3 + ch) * s + y) * s + x] ==
                    c.frames[((int64_t(t) * 3 + ch) * s + y) * s + x - v]);
        } else if (!c.fg_mask[(int64_t(t) * s + y) * s + x]) {
          // static background: uncovered pixels are constant across frames
          for (int ch = 0; ch < 3; ++ch)
            REQUIRE(c.frames[((int64_t(t + 1) * 3 + ch) * s + y) * s + x] ==
                    c.frames[((int64_t(t) * 3 + ch) * s + y) * s + x]);
        }
      }
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  SceneSpec sp = basic_spec(MotionClass::oscillate, Background::jitter_texture, 7, 0.02f);
  LabeledClip a = generate_clip(sp, 16);
  LabeledClip b = generate_clip(sp, 16);
  REQUIRE(a.frames.v == b.frames.v);
  REQUIRE(a.fg_mask.v == b.fg_mask.v);

  LabeledClip c = generate_clip(basic_spec(MotionClass::oscillate,
                                           Background::jitter_texture, 8, 0.02f),
                                16);
  double ax, ay, cx, cy;
  REQUIRE(mask_centroid(a, 0, ax, ay));
  REQUIRE(mask_centroid(c, 0, cx, cy));
  REQUIRE((ax != cx || ay != cy));

  for (int64_t i = 0; i < a.frames.numel(); ++i) {
    REQUIRE(std::isfinite(a.frames[i]));
    REQUIRE(a.frames[i] >= 0.0f);
    REQUIRE(a.frames[i] <= 1.0f);
  }
}

TEST_CASE("two-stage motion switches regime exactly at the midpoint") {
  const int t_n = 32, t_sw = t_n / 2;
  LabeledClip c = generate_clip(basic_spec(MotionClass::two_stage,
                                           Background::static_texture, 3),
                                t_n);
  std::vector<double> cx(t_n), cy(t_n);
  for (int t = 0; t < t_n; ++t) REQUIRE(mask_centroid(c, t, cx[t], cy[t]));

  // Stage one: constant per-frame displacement (pure translation).
  double v0 = cx[1] - cx[0];
  REQUIRE(v0 > 0.0);
  for (int t = 0; t + 1 < t_sw; ++t) {
    REQUIRE(cx[t + 1] - cx[t] == doctest::Approx(v0).epsilon(1e-9));
    REQUIRE(cy[t + 1] - cy[t] == doctest::Approx(0.0).epsilon(1e-9));
  }
  // Stage two: displacements are no longer the stage-one constant.
  double max_dev = 0;
  for (int t = t_sw; t + 1 < t_n; ++t) {
    double dx = cx[t + 1] - cx[t], dy = cy[t + 1] - cy[t];
    max_dev = std::max(max_dev, std::fabs(dx - v0) + std::fabs(dy));
  }
  REQUIRE(max_dev > 0.5);
}

TEST_CASE("dataset specs are balanced and deterministic") {
  auto d7 = make_dataset(7, true, 1);
  std::map<int, int> counts;
  for (auto& sp : d7) counts[int(sp.motion_class)]++;
  REQUIRE(counts.size() == 7);
  for (auto& [k, v] : counts) REQUIRE(v == 1);

  auto d14 = make_dataset(14, true, 1);
  counts.clear();
  for (auto& sp : d14) counts[int(sp.motion_class)]++;
  for (auto& [k, v] : counts) REQUIRE(v == 2);

  auto d10 = make_dataset(10, true, 1);
  counts.clear();
  for (auto& sp : d10) counts[int(sp.motion_class)]++;
  for (auto& [k, v] : counts) REQUIRE((v == 1 || v == 2));

  auto a = make_dataset(100, false, 42);
  auto b = make_dataset(100, false, 42);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(a[size_t(i)].seed == b[size_t(i)].seed);
    REQUIRE(int(a[size_t(i)].motion_class) == int(b[size_t(i)].motion_class));
  }
  // every spec generates without infeasibility
  for (int i = 0; i < 20; ++i) (void)generate_clip(a[size_t(i)], 32);
}

TEST_CASE("clip export and load round-trip") {
  LabeledClip c = generate_clip(basic_spec(MotionClass::rotate,
                                           Background::drift_texture, 5),
                                8);
  std::string dir = "/tmp/ma_clip_rt";
  std::filesystem::remove_all(dir);
  export_clip(dir, c);
  LabeledClip r = load_clip(dir, 8, c.label);
  REQUIRE(r.frames.dims == c.frames.dims);
  // noise_std=0 values are already 8-bit quantized, so the round-trip is exact
  for (int64_t i = 0; i < c.frames.numel(); ++i) REQUIRE(r.frames[i] == c.frames[i]);
  REQUIRE(r.fg_mask.v == c.fg_mask.v);
  std::filesystem::remove_all(dir);
}

TEST_CASE("two views: start frames, distinctness, determinism") {
  LabeledClip c = generate_clip(basic_spec(MotionClass::translate_down,
                                           Background::static_texture, 21),
                                32);
  AugConfig cfg;
  std::set<int> starts;
  for (uint64_t seed = 0; seed < 300; ++seed) {
    auto [a, b] = sample_two_views(c, cfg, seed);
    REQUIRE(a.start_frame >= 0);
    REQUIRE(a.start_frame <= 16);
    REQUIRE(b.start_frame >= 0);
    REQUIRE(b.start_frame <= 16);
    REQUIRE(a.start_frame != b.start_frame);
    starts.insert(a.start_frame);
    starts.insert(b.start_frame);
  }
  REQUIRE(starts.count(0) == 1);
  REQUIRE(starts.count(16) == 1);
  REQUIRE(int(starts.size()) == 17);

  auto [a1, b1] = sample_two_views(c, cfg, 99);
  auto [a2, b2] = sample_two_views(c, cfg, 99);
  REQUIRE(a1.view.v == a2.view.v);
  REQUIRE(b1.view.v == b2.view.v);
  REQUIRE(a1.photometric_seed == a2.photometric_seed);

  LabeledClip tiny = generate_clip(basic_spec(MotionClass::rotate,
                                              Background::static_texture, 1),
                                   16);
  REQUIRE_THROWS(sample_two_views(tiny, cfg, 0));  // 16 == window*stride: too short
}

TEST_CASE("sampled crops respect the area-ratio bound") {
  AugConfig cfg;
  Rng rng(123);
  for (int i = 0; i < 1000; ++i) {
    GeomParams gp = sample_crop(rng, 64, cfg);
    REQUIRE(gp.crop_top >= 0);
    REQUIRE(gp.crop_left >= 0);
    REQUIRE(gp.crop_top + gp.crop_h <= 64);
    REQUIRE(gp.crop_left + gp.crop_w <= 64);
    double r = double(gp.crop_w) * gp.crop_h / (64.0 * 64.0);
    REQUIRE(r >= cfg.scale_lo);
    REQUIRE(r <= cfg.scale_hi);
  }
}

TEST_CASE("warp maps cell centers through flip and crop") {
  GeomParams ident{0, 0, 64, 64, false, 64};
  auto [x0, y0] = warp_pixel_to_original(ident, 4, 4, 0, 0);
  REQUIRE(x0 == doctest::Approx(8.0));
  REQUIRE(y0 == doctest::Approx(8.0));

  GeomParams fl = ident;
  fl.flip = true;
  auto [x1, y1] = warp_pixel_to_original(fl, 4, 4, 0, 0);
  REQUIRE(x1 == doctest::Approx(56.0));
  REQUIRE(y1 == doctest::Approx(8.0));

  GeomParams cr{16, 16, 32, 32, false, 64};
  auto [x2, y2] = warp_pixel_to_original(cr, 4, 4, 2, 1);
  REQUIRE(x2 == doctest::Approx(28.0));
  REQUIRE(y2 == doctest::Approx(36.0));

  // independent oracle: enumerate the affine map over a random crop
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    GeomParams gp;
    gp.crop_top = rng.uniform_int(0, 30);
    gp.crop_left = rng.uniform_int(0, 30);
    gp.crop_h = rng.uniform_int(8, 64 - gp.crop_top);
    gp.crop_w = rng.uniform_int(8, 64 - gp.crop_left);
    gp.flip = rng.bernoulli(0.5);
    gp.out_size = 64;
    for (int u = 0; u < 4; ++u)
      for (int v = 0; v < 4; ++v) {
        auto [x, y] = warp_pixel_to_original(gp, 4, 4, u, v);
        int vp = gp.flip ? 3 - v : v;
        double ox = gp.crop_left + (vp + 0.5) * gp.crop_w / 4.0;
        double oy = gp.crop_top + (u + 0.5) * gp.crop_h / 4.0;
        REQUIRE(x == doctest::Approx(ox).epsilon(1e-6));
        REQUIRE(y == doctest::Approx(oy).epsilon(1e-6));
        // inside the crop rectangle
        REQUIRE(x >= gp.crop_left);
        REQUIRE(x <= gp.crop_left + gp.crop_w);
        REQUIRE(y >= gp.crop_top);
        REQUIRE(y <= gp.crop_top + gp.crop_h);
      }
    // flip involution and monotonicity in v
    for (int u = 0; u < 4; ++u) {
      GeomParams nf = gp;
      nf.flip = false;
      GeomParams yf = gp;
      yf.flip = true;
      float prev = -1;
      for (int v = 0; v < 4; ++v) {
        auto [xa, ya] = warp_pixel_to_original(yf, 4, 4, u, v);
        auto [xb, yb] = warp_pixel_to_original(nf, 4, 4, u, 3 - v);
        REQUIRE(xa == xb);
        REQUIRE(ya == yb);
        auto [xm, ym] = warp_pixel_to_original(nf, 4, 4, u, v);
        REQUIRE(xm > prev);
        prev = xm;
      }
    }
  }
}

TEST_CASE("geometry application: identity, flip, temporal consistency") {
  LabeledClip c = generate_clip(basic_spec(MotionClass::oscillate,
                                           Background::drift_texture, 9),
                                32);
  int s = c.frames.dims[2];
  GeomParams ident{0, 0, s, s, false, s};
  Tensor<float> v = apply_geometry(c.frames, 4, 2, 8, ident);
  for (int t = 0; t < 8; ++t)
    for (int64_t i = 0; i < int64_t(3) * s * s; ++i)
      REQUIRE(v[int64_t(t) * 3 * s * s + i] ==
              c.frames[int64_t(4 + 2 * t) * 3 * s * s + i]);

  GeomParams fl = ident;
  fl.flip = true;
  Tensor<float> vf = apply_geometry(c.frames, 4, 2, 8, fl);
  for (int t = 0; t < 8; ++t)
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          REQUIRE(vf[((int64_t(t) * 3 + ch) * s + y) * s + x] ==
                  v[((int64_t(t) * 3 + ch) * s + y) * s + (s - 1 - x)]);

  // frames that are constant in space stay constant through crop+resize
  Tensor<float> flat({8, 3, 16, 16});
  for (int t = 0; t < 8; ++t)
    for (int64_t i = 0; i < 3 * 16 * 16; ++i) flat[int64_t(t) * 3 * 16 * 16 + i] = 0.1f * t;
  GeomParams gp{3, 2, 9, 11, true, 8};
  Tensor<float> fv = apply_geometry(flat, 0, 1, 8, gp);
  for (int t = 0; t < 8; ++t)
    for (int64_t i = 0; i < int64_t(3) * 8 * 8; ++i)
      REQUIRE(fv[int64_t(t) * 3 * 8 * 8 + i] == doctest::Approx(0.1f * t).epsilon(1e-6));
}

TEST_CASE("photometric transforms") {
  LabeledClip c = generate_clip(basic_spec(MotionClass::translate_left,
                                           Background::jitter_texture, 13, 0.01f),
                                32);
  AugConfig cfg;
  auto [a, b] = sample_two_views(c, cfg, 1);

  AugConfig off = cfg;
  off.p_gray = off.p_jitter = off.p_blur = 0.0;
  Tensor<float> v0 = a.view;
  apply_photometric(v0, off, a.photometric_seed);
  REQUIRE(v0.v == a.view.v);  // all probabilities zero: identity

  AugConfig grayc = cfg;
  grayc.p_gray = 1.0;
  grayc.p_jitter = grayc.p_blur = 0.0;
  Tensor<float> vg = a.view;
  apply_photometric(vg, grayc, 77);
  int o = vg.dims[2];
  int64_t plane = int64_t(o) * o;
  for (int t = 0; t < vg.dims[0]; ++t) {
    const float* fr = vg.data() + int64_t(t) * 3 * plane;
    for (int64_t i = 0; i < plane; ++i) {
      REQUIRE(fr[i] == fr[plane + i]);
      REQUIRE(fr[i] == fr[2 * plane + i]);
    }
  }

  AugConfig allc = cfg;
  allc.p_gray = allc.p_jitter = allc.p_blur = 1.0;
  Tensor<float> v1 = a.view, v2 = a.view;
  apply_photometric(v1, allc, 123);
  apply_photometric(v2, allc, 123);
  REQUIRE(v1.v == v2.v);  // same seed, same transform
  for (int64_t i = 0; i < v1.numel(); ++i) {
    REQUIRE(v1[i] >= 0.0f);
    REQUIRE(v1[i] <= 1.0f);
  }
  Tensor<float> v3 = a.view;
  apply_photometric(v3, allc, 124);
  REQUIRE(v3.v != v1.v);
}

TEST_CASE("frame differences are exact, signed, and antisymmetric") {
  LabeledClip c = generate_clip(basic_spec(MotionClass::translate_up,
                                           Background::static_texture, 17),
                                32);
  ViewRecord vr = identity_view(c, 0, 2, 8);
  MotionClip mc = frame_difference(vr);
  REQUIRE(mc.diff.dims == std::vector<int>({7, 3, 64, 64}));
  int64_t per = int64_t(3) * 64 * 64;
  for (int t = 0; t < 7; ++t)
    for (int64_t i = 0; i < per; ++i)
      REQUIRE(mc.diff[int64_t(t) * per + i] ==
              vr.view[int64_t(t + 1) * per + i] - vr.view[int64_t(t) * per + i]);

  // constant view -> zero diff
  ViewRecord cv = vr;
  for (int64_t i = 0; i < cv.view.numel(); ++i) cv.view[i] = 0.25f;
  MotionClip zc = frame_difference(cv);
  for (int64_t i = 0; i < zc.diff.numel(); ++i) REQUIRE(zc.diff[i] == 0.0f);

  // reversed view -> negated, reversed diff
  ViewRecord rv = vr;
  for (int t = 0; t < 8; ++t)
    std::copy_n(vr.view.data() + int64_t(7 - t) * per, per,
                rv.view.data() + int64_t(t) * per);
  MotionClip rd = frame_difference(rv);
  for (int t = 0; t < 7; ++t)
    for (int64_t i = 0; i < per; ++i)
      REQUIRE(rd.diff[int64_t(t) * per + i] == -mc.diff[int64_t(6 - t) * per + i]);

  // diff nonzero only inside the union of consecutive sprite masks
  // (static background, zero noise, identity geometry, stride 1)
  ViewRecord s1 = identity_view(c, 0, 1, 8);
  MotionClip d1 = frame_difference(s1);
  int s = 64;
  for (int t = 0; t < 7; ++t)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        bool inmask = c.fg_mask[(int64_t(t) * s + y) * s + x] ||
                      c.fg_mask[(int64_t(t + 1) * s + y) * s + x];
        if (!inmask)
          for (int ch = 0; ch < 3; ++ch)
            REQUIRE(d1.diff[((int64_t(t) * 3 + ch) * s + y) * s + x] == 0.0f);
      }
}

TEST_CASE("sub-clips partition the view and difference with stride one") {
  LabeledClip c = generate_clip(basic_spec(MotionClass::rotate,
                                           Background::drift_texture, 29),
                                32);
  ViewRecord vr = identity_view(c, 2, 2, 8);
  auto subs = local_subclips(vr, 2);
  REQUIRE(subs.size() == 2);
  int64_t per = int64_t(3) * 64 * 64;
  for (int i = 0; i < 2; ++i) {
    REQUIRE(subs[size_t(i)].diff.dims[0] == 3);  // T_view/T_feat - 1
    for (int t = 0; t < 3; ++t)
      for (int64_t j = 0; j < per; ++j)
        REQUIRE(subs[size_t(i)].diff[int64_t(t) * per + j] ==
                vr.view[int64_t(i * 4 + t + 1) * per + j] -
                    vr.view[int64_t(i * 4 + t) * per + j]);
  }
  REQUIRE(subs[0].start_frame == 2);
  REQUIRE(subs[1].start_frame == 2 + 4 * 2);

  auto whole = local_subclips(vr, 1);
  MotionClip fd = frame_difference(vr);
  REQUIRE(whole.size() == 1);
  REQUIRE(whole[0].diff.v == fd.diff.v);

  REQUIRE_THROWS(local_subclips(vr, 3));  // 8 not divisible by 3
}

TEST_CASE("background jitter raises motion energy") {
  SceneSpec stat = basic_spec(MotionClass::oscillate, Background::static_texture, 31);
  SceneSpec jit = stat;
  jit.background = Background::jitter_texture;
  LabeledClip cs = generate_clip(stat, 16);
  LabeledClip cj = generate_clip(jit, 16);
  // same seed: identical sprite, different background behavior
  REQUIRE(cs.fg_mask.v == cj.fg_mask.v);

  auto energy = [](const LabeledClip& c) {
    ViewRecord vr;
    vr.geom = {0, 0, 64, 64, false, 64};
    vr.view = apply_geometry(c.frames, 0, 1, 16, vr.geom);
    MotionClip d = frame_difference(vr);
    double e = 0;
    for (int64_t i = 0; i < d.diff.numel(); ++i) e += double(d.diff[i]) * d.diff[i];
    return e;
  };
  REQUIRE(energy(cs) <= energy(cj));
}
