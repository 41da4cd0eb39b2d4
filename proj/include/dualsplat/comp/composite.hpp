#pragma once

#include "dualsplat/core/types.hpp"

namespace dualsplat {

// Depth-ordered hybrid compositing of two layer renders. Per pixel the
// fusing weights are
//   lambda_r = T_e * delta + (1 - delta)
//   lambda_e = T_r * (1 - delta) + delta
// with delta the hard indicator [D_r > D_e] or its sigmoid relaxation on
// the depth difference. The composite depth lambda_r*D_r + lambda_e*D_e
// feeds the boundary TV loss.

enum class CompositeMode { Hard, Smooth };

/// Hard ordering indicator per pixel: 1 where road depth exceeds environment
/// depth, else 0.
ImageD delta_hard(const ImageD& depth_road, const ImageD& depth_env);

/// Sigmoid relaxation 1/(1+exp(-s_sigma*(D_r-D_e))).
ImageD delta_smooth(const ImageD& depth_road, const ImageD& depth_env,
                    double s_sigma);

struct CompositeResult {
  ImageD color;      // H x W x 3
  ImageD depth;      // H x W
  ImageD lambda_r;   // H x W
  ImageD lambda_e;   // H x W
  ImageD delta;      // H x W
};

CompositeResult composite(const LayerRender& road, const LayerRender& env,
                          CompositeMode mode, double s_sigma = 10.0);

struct CompositeGrads {
  ImageD d_road_color, d_road_depth, d_road_trans;
  ImageD d_env_color, d_env_depth, d_env_trans;
};

/// Exact chain rule through the composite. In hard mode the indicator is a
/// constant; in smooth mode gradients flow through the sigmoid into both
/// depth maps. d_depth_c may be empty when no loss consumes the composite
/// depth.
CompositeGrads composite_backward(const LayerRender& road, const LayerRender& env,
                                  CompositeMode mode, double s_sigma,
                                  const ImageD& d_color_c,
                                  const ImageD& d_depth_c = {});

}  // namespace dualsplat
