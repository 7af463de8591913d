#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "motionalign/image_io.hpp"
#include "motionalign/rng.hpp"
#include "motionalign/tensor.hpp"

// Deterministic synthetic clips: moving sprites over textured backgrounds,
// with exact per-pixel foreground masks and a motion-class label.

namespace ma {

enum class SpriteKind { disk, square, bar };
enum class MotionClass {
  translate_left,
  translate_right,
  translate_up,
  translate_down,
  rotate,
  oscillate,
  two_stage,  // translate, then oscillate from the midpoint frame on
};
enum class Background { static_texture, jitter_texture, drift_texture };

constexpr int kNumMotionClasses = 7;

inline const char* motion_class_name(MotionClass m) {
  switch (m) {
    case MotionClass::translate_left: return "translate-left";
    case MotionClass::translate_right: return "translate-right";
    case MotionClass::translate_up: return "translate-up";
    case MotionClass::translate_down: return "translate-down";
    case MotionClass::rotate: return "rotate";
    case MotionClass::oscillate: return "oscillate";
    case MotionClass::two_stage: return "two-stage";
  }
  return "?";
}

inline const char* background_name(Background b) {
  switch (b) {
    case Background::static_texture: return "static-texture";
    case Background::jitter_texture: return "jitter-texture";
    case Background::drift_texture: return "drift-texture";
  }
  return "?";
}

inline const char* sprite_kind_name(SpriteKind k) {
  switch (k) {
    case SpriteKind::disk: return "disk";
    case SpriteKind::square: return "square";
    case SpriteKind::bar: return "bar";
  }
  return "?";
}

struct SceneSpec {
  int canvas_size = 64;
  std::vector<SpriteKind> sprite_kinds = {SpriteKind::square};  // 1..3 sprites
  MotionClass motion_class = MotionClass::translate_right;
  Background background = Background::static_texture;
  float noise_std = 0.0f;
  uint64_t seed = 0;
};

struct LabeledClip {
  Tensor<float> frames;    // [T,3,S,S] in [0,1]
  Tensor<uint8_t> fg_mask; // [T,S,S], 1 exactly on sprite-covered pixels
  int label = 0;           // int(motion_class)
  SceneSpec scene;
};

namespace detail {

// Value-noise texture: a coarse random grid bilinearly upsampled, per channel.
// Sampled toroidally so jitter/drift have no edge seams.
struct ValueTexture {
  int size = 0;
  int grid = 8;
  std::vector<float> coarse;  // [3, grid, grid]

  ValueTexture(Rng& rng, int s, float lo, float hi) : size(s) {
    coarse.resize(size_t(3) * grid * grid);
    for (float& v : coarse) v = float(rng.uniform(lo, hi));
  }

  float at(int c, float y, float x) const {
    float gy = y / float(size) * grid, gx = x / float(size) * grid;
    int y0 = int(std::floor(gy)), x0 = int(std::floor(gx));
    float fy = gy - y0, fx = gx - x0;
    auto cell = [&](int yy, int xx) {
      yy = ((yy % grid) + grid) % grid;
      xx = ((xx % grid) + grid) % grid;
      return coarse[(size_t(c) * grid + yy) * grid + xx];
    };
    float a = cell(y0, x0) * (1 - fx) + cell(y0, x0 + 1) * fx;
    float b = cell(y0 + 1, x0) * (1 - fx) + cell(y0 + 1, x0 + 1) * fx;
    return a * (1 - fy) + b * fy;
  }
};

struct Sprite {
  SpriteKind kind;
  float color[3];
  float half;             // radius / half-side / half-length
  float thick;            // bar half-thickness
  std::vector<float> cx, cy, angle;  // per-frame trajectory

  bool covers(int t, float px, float py) const {
    float dx = px - cx[size_t(t)], dy = py - cy[size_t(t)];
    switch (kind) {
      case SpriteKind::disk:
        return dx * dx + dy * dy <= half * half;
      case SpriteKind::square: {
        float ca = std::cos(-angle[size_t(t)]), sa = std::sin(-angle[size_t(t)]);
        float rx = ca * dx - sa * dy, ry = sa * dx + ca * dy;
        return std::fabs(rx) <= half && std::fabs(ry) <= half;
      }
      case SpriteKind::bar: {
        float ca = std::cos(-angle[size_t(t)]), sa = std::sin(-angle[size_t(t)]);
        float rx = ca * dx - sa * dy, ry = sa * dx + ca * dy;
        return std::fabs(rx) <= half && std::fabs(ry) <= thick;
      }
    }
    return false;
  }

  // Loose bounding radius for feasibility checks under rotation.
  float bound() const {
    if (kind == SpriteKind::disk) return half;
    return std::sqrt(half * half + (kind == SpriteKind::bar ? thick * thick : half * half));
  }
};

// Draws a start position from the exact feasible interval for the class and
// fills cx/cy/angle for all frames; returns false only if no start fits.
inline bool plan_trajectory(Sprite& sp, MotionClass mc, int s, int num_frames,
                            Rng& rng) {
  int speed = rng.uniform_int(1, 2);  // integer px/frame keeps shifts exact
  float omega = float(rng.uniform(0.10, 0.22));
  float osc_amp = float(rng.uniform(4.0, 9.0));
  float osc_w = float(2.0 * 3.14159265358979323846 / rng.uniform(8.0, 16.0));
  int osc_axis = rng.uniform_int(0, 1);
  float phase0 = float(rng.uniform(0.0, 2.0 * 3.14159265358979323846));
  float b = sp.bound();
  int t_switch = num_frames / 2;

  // Feasible [lo,hi] per axis: start such that the whole trajectory, offset by
  // the sprite bound, stays inside [0,s].
  auto draw_start = [&](float lo, float hi, float& out) {
    int ilo = int(std::ceil(lo)), ihi = int(std::floor(hi));
    if (ilo > ihi) return false;
    out = float(rng.uniform_int(ilo, ihi));  // integer starts keep shifts exact
    return true;
  };

  float x0 = 0, y0 = 0;
  bool ok = true;
  bool translate = mc == MotionClass::translate_left ||
                   mc == MotionClass::translate_right ||
                   mc == MotionClass::translate_up || mc == MotionClass::translate_down;
  if (translate) {
    float travel = float(speed) * float(num_frames - 1);
    if (2 * b + travel > float(s)) {
      speed = 1;
      travel = float(num_frames - 1);
    }
    float lo = b, hi = float(s) - b;
    float tlo = lo, thi = hi - travel;  // start interval along motion axis
    switch (mc) {
      case MotionClass::translate_right:
        ok = draw_start(tlo, thi, x0) && draw_start(lo, hi, y0);
        break;
      case MotionClass::translate_left:
        ok = draw_start(lo + travel, hi, x0) && draw_start(lo, hi, y0);
        break;
      case MotionClass::translate_down:
        ok = draw_start(lo, hi, x0) && draw_start(tlo, thi, y0);
        break;
      default:  // translate_up
        ok = draw_start(lo, hi, x0) && draw_start(lo + travel, hi, y0);
        break;
    }
  } else if (mc == MotionClass::rotate) {
    ok = draw_start(b, float(s) - b, x0) && draw_start(b, float(s) - b, y0);
  } else if (mc == MotionClass::oscillate) {
    float lo0 = b + osc_amp, hi0 = float(s) - b - osc_amp;
    ok = (osc_axis == 0 ? draw_start(lo0, hi0, x0) && draw_start(b, float(s) - b, y0)
                        : draw_start(b, float(s) - b, x0) && draw_start(lo0, hi0, y0));
  } else {  // two_stage: translate by speed*t_switch, then oscillate around there
    float travel = float(speed) * float(t_switch);
    if (2 * b + travel + osc_amp > float(s)) {
      speed = 1;
      travel = float(t_switch);
    }
    float lox = b, hix = float(s) - b - travel - (osc_axis == 0 ? osc_amp : 0.0f);
    if (osc_axis == 0) lox = std::max(lox, b + osc_amp - travel);
    float loy = b + (osc_axis == 1 ? osc_amp : 0.0f);
    float hiy = float(s) - b - (osc_axis == 1 ? osc_amp : 0.0f);
    ok = draw_start(lox, hix, x0) && draw_start(loy, hiy, y0);
  }
  if (!ok) return false;

  sp.cx.assign(size_t(num_frames), x0);
  sp.cy.assign(size_t(num_frames), y0);
  sp.angle.assign(size_t(num_frames), 0.0f);
  for (int t = 0; t < num_frames; ++t) {
    switch (mc) {
      case MotionClass::translate_left: sp.cx[size_t(t)] = x0 - float(speed) * t; break;
      case MotionClass::translate_right: sp.cx[size_t(t)] = x0 + float(speed) * t; break;
      case MotionClass::translate_up: sp.cy[size_t(t)] = y0 - float(speed) * t; break;
      case MotionClass::translate_down: sp.cy[size_t(t)] = y0 + float(speed) * t; break;
      case MotionClass::rotate: sp.angle[size_t(t)] = omega * t; break;
      case MotionClass::oscillate: {
        float d = osc_amp * std::sin(osc_w * t + phase0);
        (osc_axis == 0 ? sp.cx : sp.cy)[size_t(t)] += d;
        break;
      }
      case MotionClass::two_stage: {
        // Stage one: integer translation along x; stage two: oscillation
        // around the switch-point position (zero phase keeps it continuous).
        sp.cx[size_t(t)] = x0 + float(speed) * std::min(t, t_switch);
        if (t >= t_switch) {
          float d = osc_amp * std::sin(osc_w * float(t - t_switch));
          (osc_axis == 0 ? sp.cx : sp.cy)[size_t(t)] += d;
        }
        break;
      }
    }
    float bb = sp.bound();
    if (sp.cx[size_t(t)] - bb < 0 || sp.cx[size_t(t)] + bb > float(s) ||
        sp.cy[size_t(t)] - bb < 0 || sp.cy[size_t(t)] + bb > float(s))
      return false;
  }
  return true;
}

}  // namespace detail

inline LabeledClip generate_clip(const SceneSpec& spec, int num_frames) {
  MA_CHECK(num_frames >= 2, "num_frames must be >= 2");
  MA_CHECK(spec.canvas_size >= 32, "canvas_size must be >= 32");
  MA_CHECK(!spec.sprite_kinds.empty() && spec.sprite_kinds.size() <= 3,
           "1..3 sprites required");
  int s = spec.canvas_size;
  Rng root(spec.seed);
  Rng bg_rng = root.fork(1);
  Rng sprite_rng = root.fork(2);
  Rng noise_rng = root.fork(3);

  detail::ValueTexture tex(bg_rng, s, 0.05f, 0.65f);

  // Background offset per frame (toroidal sampling).
  std::vector<int> offx(size_t(num_frames), 0), offy(size_t(num_frames), 0);
  if (spec.background == Background::jitter_texture) {
    for (int t = 1; t < num_frames; ++t) {
      offx[size_t(t)] = offx[size_t(t) - 1] + bg_rng.uniform_int(-1, 1);
      offy[size_t(t)] = offy[size_t(t) - 1] + bg_rng.uniform_int(-1, 1);
    }
  } else if (spec.background == Background::drift_texture) {
    int dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    int d = bg_rng.uniform_int(0, 3);
    for (int t = 0; t < num_frames; ++t) {
      offx[size_t(t)] = dirs[d][0] * t;
      offy[size_t(t)] = dirs[d][1] * t;
    }
  }

  // Place sprites; retry infeasible placements deterministically.
  std::vector<detail::Sprite> sprites;
  for (SpriteKind kind : spec.sprite_kinds) {
    detail::Sprite sp;
    sp.kind = kind;
    if (spec.motion_class == MotionClass::rotate && kind == SpriteKind::disk)
      sp.kind = SpriteKind::bar;  // a rotating disk is invisible motion
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      sp.half = float(sprite_rng.uniform(s / 10.0, s / 6.0));
      sp.thick = float(sprite_rng.uniform(s / 24.0, s / 14.0));
      for (int c = 0; c < 3; ++c) sp.color[c] = float(sprite_rng.uniform(0.45, 1.0));
      sp.color[sprite_rng.uniform_int(0, 2)] = float(sprite_rng.uniform(0.85, 1.0));
      placed = detail::plan_trajectory(sp, spec.motion_class, s, num_frames, sprite_rng);
    }
    MA_CHECK(placed, "infeasible scene spec: sprite trajectory leaves canvas");
    sprites.push_back(std::move(sp));
  }

  LabeledClip clip;
  clip.label = int(spec.motion_class);
  clip.scene = spec;
  clip.frames = Tensor<float>::uninit({num_frames, 3, s, s});
  clip.fg_mask = Tensor<uint8_t>({num_frames, s, s});

  for (int t = 0; t < num_frames; ++t) {
    float* fr = clip.frames.data() + int64_t(t) * 3 * s * s;
    uint8_t* mk = clip.fg_mask.data() + int64_t(t) * s * s;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        float px = x + 0.5f, py = y + 0.5f;
        float rgb[3];
        for (int c = 0; c < 3; ++c)
          rgb[c] = tex.at(c, py + float(offy[size_t(t)]), px + float(offx[size_t(t)]));
        for (const detail::Sprite& sp : sprites)
          if (sp.covers(t, px, py)) {
            rgb[0] = sp.color[0];
            rgb[1] = sp.color[1];
            rgb[2] = sp.color[2];
            mk[int64_t(y) * s + x] = 1;
          }
        for (int c = 0; c < 3; ++c) {
          // 8-bit quantization first (mask applies to the clean raster),
          // then sensor noise.
          float q = float(to_byte(rgb[c])) / 255.0f;
          if (spec.noise_std > 0)
            q += spec.noise_std * float(noise_rng.normal());
          fr[(int64_t(c) * s + y) * s + x] = q < 0 ? 0 : (q > 1 ? 1 : q);
        }
      }
  }
  return clip;
}

// Deterministic list of scene specs; balanced assigns each motion class
// floor(n/7) or ceil(n/7) times.
inline std::vector<SceneSpec> make_dataset(int n, bool class_balance, uint64_t seed) {
  MA_CHECK(n >= 1, "dataset size must be >= 1");
  Rng rng(seed);
  std::vector<SceneSpec> specs;
  specs.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    SceneSpec sp;
    sp.motion_class = MotionClass(class_balance ? i % kNumMotionClasses
                                                : rng.uniform_int(0, 6));
    int ns = 1 + (rng.uniform() < 0.35 ? 1 : 0);
    sp.sprite_kinds.clear();
    for (int k = 0; k < ns; ++k)
      sp.sprite_kinds.push_back(SpriteKind(rng.uniform_int(0, 2)));
    sp.background = Background(rng.uniform_int(0, 2));
    sp.noise_std = 0.01f;
    sp.seed = rng.next_u64();
    specs.push_back(std::move(sp));
  }
  if (class_balance) rng.shuffle(specs);
  return specs;
}

// ---------------------------------------------------------------------------
// Disk layout: one directory per clip (frame_XX.ppm + mask_XX.pgm) plus a
// JSON-lines sidecar with one record per clip. The loader accepts the same
// layout for externally supplied frames.
// ---------------------------------------------------------------------------

inline void export_clip(const std::string& dir, const LabeledClip& clip) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  int t_n = clip.frames.dims[0], s = clip.frames.dims[2];
  for (int t = 0; t < t_n; ++t) {
    Tensor<float> img = Tensor<float>::uninit({3, s, s});
    std::copy_n(clip.frames.data() + int64_t(t) * 3 * s * s, int64_t(3) * s * s,
                img.data());
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%02d.ppm", t);
    write_ppm(dir + "/" + name, img);
    Tensor<float> m = Tensor<float>::uninit({s, s});
    for (int64_t i = 0; i < m.numel(); ++i)
      m[i] = clip.fg_mask[int64_t(t) * s * s + i] ? 1.0f : 0.0f;
    std::snprintf(name, sizeof(name), "mask_%02d.pgm", t);
    write_pgm(dir + "/" + name, m);
  }
}

inline LabeledClip load_clip(const std::string& dir, int num_frames, int label) {
  LabeledClip clip;
  clip.label = label;
  for (int t = 0; t < num_frames; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%02d.ppm", t);
    Tensor<float> img = read_ppm(dir + "/" + name);
    int s = img.dims[1];
    if (t == 0) {
      clip.frames = Tensor<float>::uninit({num_frames, 3, s, s});
      clip.fg_mask = Tensor<uint8_t>({num_frames, s, s});
      clip.scene.canvas_size = s;
    }
    MA_CHECK(img.dims[1] == clip.frames.dims[2] && img.dims[2] == clip.frames.dims[3],
             "inconsistent frame sizes in " << dir);
    std::copy_n(img.data(), img.numel(), clip.frames.data() + int64_t(t) * img.numel());
    std::snprintf(name, sizeof(name), "mask_%02d.pgm", t);
    if (std::filesystem::exists(dir + "/" + name)) {
      Tensor<float> m = read_pgm(dir + "/" + name);
      MA_CHECK(m.dims[0] == s && m.dims[1] == s, "mask size mismatch in " << dir);
      for (int64_t i = 0; i < m.numel(); ++i)
        clip.fg_mask[int64_t(t) * s * s + i] = m[i] > 0.5f ? 1 : 0;
    }
  }
  return clip;
}

}  // namespace ma
