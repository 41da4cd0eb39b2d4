#pragma once

#include <cstdint>
#include <vector>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

enum class SkyColorMode { Constant, Texture };

/// Labels every point by projecting it into the given frames: majority label
/// across frames that see it (ties break to non-road), color is the mean of
/// the sampled image colors. Points seen by no frame become gray non-road.
/// Visibility is frustum membership with positive depth; no occlusion test.
SemanticPointCloud label_points(const SemanticPointCloud& points,
                                const std::vector<Camera>& cameras,
                                const std::vector<ImageD>& images,
                                const std::vector<SemanticMask>& masks);

/// Partition by label; sky counts as environment. Throws BadInput when the
/// road partition ends up empty (the road prior would be impossible).
struct SplitCloud {
  SemanticPointCloud road;
  SemanticPointCloud environment;
};
SplitCloud split(const SemanticPointCloud& pc);

/// Appends n_points sky-labeled samples on the upper hemisphere of radius
/// kappa * (max pairwise extent) around the centroid, uniform in solid angle.
SemanticPointCloud add_sky_sphere(const SemanticPointCloud& pc, size_t n_points,
                                  SkyColorMode color_mode, uint64_t seed,
                                  double kappa = 1.5);

/// Uniform random subset without replacement (identity when target >= size).
SemanticPointCloud downsample(const SemanticPointCloud& pc, size_t target,
                              uint64_t seed);

/// Scene diameter used for the sky-sphere radius. Exact for small clouds,
/// computed on a deterministic farthest-point subset above 4096 points.
double max_pairwise_extent(const std::vector<Vec3>& positions);

}  // namespace dualsplat
