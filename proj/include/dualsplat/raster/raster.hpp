#pragma once

#include <vector>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

// Forward tile-based splatting of one layer into color/depth/transmittance,
// plus the matching analytic backward pass. Per pixel, splats are blended
// front to back; a splat's contribution is skipped below alpha 1/255 and
// blending stops once transmittance falls under 1e-4. Depth is the
// unnormalized alpha-weighted sum; pixels no splat touches keep kEmptyDepth.

struct ProjectedGaussian {
  bool culled = true;
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Zero();  // includes the 0.3 px low-pass dilation
  double depth = 0.0;         // view-space z of the mean
};

/// First-order (Jacobian) projection of a 3D Gaussian to screen space.
/// Culled when the mean is behind the near plane or the projected
/// footprint degenerates.
ProjectedGaussian project_gaussian3d(const Gaussian3D& g, const Camera& cam);

struct SurfelHit {
  bool valid = false;
  double u = 0.0, v = 0.0;  // splat-local coordinates in units of scale
  double depth = 0.0;       // view-space z at the intersection
};

/// Ray-splat intersection through the homogeneous-plane formulation:
/// two pixel planes h_u, h_v are pulled into splat space and their
/// intersection line solved for (u, v). Near-parallel rays are skipped.
SurfelHit intersect_surfel(const Surfel2D& s, const Camera& cam, const Vec2& pixel);

LayerRender render_layer(const GaussianCloud& cloud, const Camera& cam);
LayerRender render_layer(const SurfelCloud& cloud, const Camera& cam);

/// Upstream gradients for a layer render (any may be empty = zero).
struct LayerGradients {
  ImageD d_color;
  ImageD d_depth;
  ImageD d_transmittance;
};

struct GaussianParamGrads {
  std::vector<Vec3> d_mean;
  std::vector<Vec4> d_rotation;   // w.r.t. the stored (possibly unnormalized) quaternion
  std::vector<Vec3> d_scale;
  std::vector<double> d_opacity;
  std::vector<Eigen::Matrix<double, 3, 9>> d_sh;
};

struct SurfelParamGrads {
  std::vector<Vec3> d_center;
  std::vector<Vec3> d_tangent_u;
  std::vector<Vec3> d_tangent_v;
  std::vector<double> d_scale_u;
  std::vector<double> d_scale_v;
  std::vector<double> d_opacity;
  std::vector<Eigen::Matrix<double, 3, 9>> d_sh;
};

GaussianParamGrads render_layer_backward(const GaussianCloud& cloud,
                                         const Camera& cam,
                                         const LayerGradients& upstream);
SurfelParamGrads render_layer_backward(const SurfelCloud& cloud, const Camera& cam,
                                       const LayerGradients& upstream);

}  // namespace dualsplat
