#pragma once

#include <string>
#include <utility>
#include <vector>

// Named configuration sweeps for the ablate command. Each variant is a list
// of config-key overrides applied on top of the base run configuration, so
// every swept value passes the same schema validation as hand-written files.

namespace ma {

struct SweepVariant {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct SweepPreset {
  std::string name;
  std::string dimension;  // what the sweep varies, for table headers
  std::vector<SweepVariant> variants;
};

inline const std::vector<SweepPreset>& sweep_presets() {
  using V = SweepVariant;
  static const std::vector<SweepPreset> presets = {
      {"loss-table-1",
       "losses",
       {
           V{"vv", {{"model.use_pix", "false"}, {"model.use_fra", "false"}}},
           V{"vv+vd",
             {{"model.use_vd", "true"}, {"model.use_pix", "false"}, {"model.use_fra", "false"}}},
           V{"vv+pix", {{"model.use_fra", "false"}}},
           V{"vv+fra", {{"model.use_pix", "false"}}},
           V{"vv+pix+fra", {}},
       }},
      {"components-table-2",
       "dense-loss components",
       {
           V{"plain(vd)",
             {{"model.use_pix", "false"}, {"model.use_vd", "true"}, {"model.use_fra", "false"}}},
           V{"dc",
             {{"model.use_fra", "false"},
              {"model.use_decoder", "false"},
              {"model.mask_position", "none"}}},
           V{"dc+fs", {{"model.use_fra", "false"}, {"model.use_decoder", "false"}}},
           V{"dc+md", {{"model.use_fra", "false"}, {"model.mask_position", "none"}}},
           V{"dc+fs+md", {{"model.use_fra", "false"}}},
       }},
      {"threshold-3a",
       "distance threshold",
       {
           V{"0.35", {{"model.threshold", "0.35"}}},
           V{"0.7", {{"model.threshold", "0.7"}}},
           V{"1.4", {{"model.threshold", "1.4"}}},
           V{"2.8", {{"model.threshold", "2.8"}}},
       }},
      {"depth-3b",
       "decoder depth",
       {
           V{"1", {{"decoder.depth", "1"}}},
           V{"2", {{"decoder.depth", "2"}}},
           V{"3", {{"decoder.depth", "3"}}},
       }},
      {"width-3c",
       "decoder width x heads",
       {
           V{"64x4", {{"decoder.width", "64"}, {"decoder.heads", "4"}}},
           V{"64x8", {{"decoder.width", "64"}, {"decoder.heads", "8"}}},
           V{"128x4", {{"decoder.width", "128"}, {"decoder.heads", "4"}}},
           V{"128x8", {{"decoder.width", "128"}, {"decoder.heads", "8"}}},
       }},
      {"beta-3d",
       "foreground ratio",
       {
           V{"0.3", {{"model.beta", "0.3"}}},
           V{"0.5", {{"model.beta", "0.5"}}},
           V{"0.7", {{"model.beta", "0.7"}}},
       }},
      {"mask-source-3e",
       "mask source",
       {
           V{"rgb", {{"model.mask_source", "rgb"}}},
           V{"diff", {{"model.mask_source", "diff"}}},
           V{"both", {{"model.mask_source", "both"}}},
       }},
      {"mask-position-3f",
       "mask position",
       {
           V{"none", {{"model.mask_position", "none"}}},
           V{"prediction", {{"model.mask_position", "prediction"}}},
           V{"target", {{"model.mask_position", "target"}}},
           V{"both", {{"model.mask_position", "both"}}},
       }},
      {"shared-decoder-t7",
       "cls-path decoder",
       {
           V{"shared", {{"model.shared_decoder", "true"}}},
           V{"separate", {{"model.shared_decoder", "false"}}},
       }},
      {"fra-type-t8",
       "frame-loss type",
       {
           V{"infonce", {{"model.fra_type", "infonce"}}},
           V{"triplet", {{"model.fra_type", "triplet"}}},
           V{"mse", {{"model.fra_type", "mse"}}},
       }},
      {"negatives-t9",
       "dense-loss negatives",
       {
           V{"own_map", {{"model.pix_neg_mode", "own_map"}}},
           V{"in_batch", {{"model.pix_neg_mode", "in_batch"}}},
           V{"queue", {{"model.pix_neg_mode", "queue"}}},
       }},
  };
  return presets;
}

inline const SweepPreset* find_preset(const std::string& name) {
  for (const SweepPreset& p : sweep_presets())
    if (p.name == name) return &p;
  return nullptr;
}

}  // namespace ma
