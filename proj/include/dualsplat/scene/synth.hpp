#pragma once

#include <string>
#include <vector>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

// Synthetic desk-scale fixtures with analytic ground truth: a textured
// ground plane, optional boxes, and a sky gradient, ray-cast per pixel.
// Presets: "plane" (road only), "boxes" (road + 3 boxes), "road-corridor"
// (road strip walled in by building rows).

struct SynthOptions {
  int width = 64;
  int height = 64;
  int n_views = 6;
  uint64_t seed = 1;
  double road_noise_sigma = 0.03;  // z jitter on road points (LiDAR-like)
  size_t road_points = 1500;
  size_t env_points = 1200;
  double lateral_shift = 1.0;      // held-out cameras move +shift in world y
};

struct SyntheticScene {
  SemanticPointCloud cloud;  // colored, unlabeled (all non-road)
  std::vector<Camera> cameras;
  std::vector<ImageD> images;
  std::vector<SemanticMask> masks;
  std::vector<Camera> heldout_cameras;
  std::vector<ImageD> heldout_images;
};

SyntheticScene generate_scene(const std::string& preset, const SynthOptions& opt);

/// Ray-cast ground truth for one camera (color + road mask).
void render_ground_truth(const std::string& preset, const Camera& cam,
                         ImageD* image, SemanticMask* mask);

}  // namespace dualsplat
