#pragma once

#include <vector>

#include "dualsplat/comp/composite.hpp"
#include "dualsplat/core/types.hpp"

namespace dualsplat {

/// 10*log10(1/MSE) on [0,1] images; identical images report the 99 dB cap.
double psnr(const ImageD& a, const ImageD& b);

struct ViewMetrics {
  double psnr = 0;
  double ssim = 0;
};

struct MetricsTable {
  std::vector<ViewMetrics> per_view;
  ViewMetrics mean;
};

/// Renders both layers for every camera, composites and scores against the
/// ground-truth images.
MetricsTable evaluate(const SurfelCloud& road, const GaussianCloud& environment,
                      const std::vector<Camera>& cameras,
                      const std::vector<ImageD>& ground_truth,
                      CompositeMode mode = CompositeMode::Smooth,
                      double s_sigma = 10.0);

}  // namespace dualsplat
