#pragma once

#include "motionalign/augment.hpp"

// Frame-difference motion inputs derived from a view, plus the per-feature-
// frame sub-clip differences used by the frame-level task. Differences are
// taken after geometric but before photometric augmentation, stay signed, and
// are never clamped.

namespace ma {

struct MotionClip {
  Tensor<float> diff;  // [T_view-1, 3, out, out], signed in [-1,1]
  int start_frame = 0;
  int stride = 1;
};

// diff[t] = view[t+1] - view[t], exactly.
inline MotionClip frame_difference(const ViewRecord& vr) {
  int t_n = vr.view.dims[0];
  MA_CHECK(t_n >= 2, "frame difference needs at least two frames");
  int64_t per = vr.view.numel() / t_n;
  MotionClip mc;
  mc.start_frame = vr.start_frame;
  mc.stride = vr.stride;
  mc.diff = Tensor<float>::uninit({t_n - 1, vr.view.dims[1], vr.view.dims[2],
                                   vr.view.dims[3]});
  for (int t = 0; t + 1 < t_n; ++t) {
    const float* a = vr.view.data() + int64_t(t) * per;
    const float* b = vr.view.data() + int64_t(t + 1) * per;
    float* d = mc.diff.data() + int64_t(t) * per;
    for (int64_t i = 0; i < per; ++i) d[i] = b[i] - a[i];
  }
  return mc;
}

// Partitions the view's frames into t_feat equal sub-clips and differences
// each with stride 1; sub-clip i overlaps exactly with feature frame i.
inline std::vector<MotionClip> local_subclips(const ViewRecord& vr, int t_feat) {
  int t_n = vr.view.dims[0];
  MA_CHECK(t_feat >= 1 && t_n % t_feat == 0, "view length not divisible by T_feat");
  int seg = t_n / t_feat;
  MA_CHECK(seg >= 2, "sub-clips too short to difference");
  int64_t per = vr.view.numel() / t_n;
  std::vector<MotionClip> out;
  out.reserve(size_t(t_feat));
  for (int i = 0; i < t_feat; ++i) {
    MotionClip mc;
    mc.start_frame = vr.start_frame + i * seg * vr.stride;
    mc.stride = vr.stride;
    mc.diff = Tensor<float>::uninit({seg - 1, vr.view.dims[1], vr.view.dims[2],
                                     vr.view.dims[3]});
    for (int t = 0; t + 1 < seg; ++t) {
      const float* a = vr.view.data() + int64_t(i * seg + t) * per;
      const float* b = vr.view.data() + int64_t(i * seg + t + 1) * per;
      float* d = mc.diff.data() + int64_t(t) * per;
      for (int64_t j = 0; j < per; ++j) d[j] = b[j] - a[j];
    }
    out.push_back(std::move(mc));
  }
  return out;
}

}  // namespace ma
