#pragma once

#include <string>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

// Semantic point clouds: properties x,y,z (float32), red,green,blue (uint8),
// semantic (uint8; 0 non-road, 1 road, 2 sky). The semantic property is
// optional on read (defaults to non-road) and always written.

void write_pointcloud_ply(const std::string& path, const SemanticPointCloud& pc,
                          bool binary = true);
SemanticPointCloud read_pointcloud_ply(const std::string& path);

// Primitive sets use the community splat layout, binary little-endian:
// x,y,z, f_dc_0..2, f_rest_*, opacity (pre-sigmoid logit), log scales,
// rot_0..3 (w,x,y,z) for ellipsoids / tu_0..2, tv_0..2 for surfels.

void write_gaussians_ply(const std::string& path, const GaussianCloud& g);
GaussianCloud read_gaussians_ply(const std::string& path);

void write_surfels_ply(const std::string& path, const SurfelCloud& s);
SurfelCloud read_surfels_ply(const std::string& path);

}  // namespace dualsplat
