#pragma once

#include <vector>

#include "dualsplat/core/types.hpp"
#include "dualsplat/sdf/prior.hpp"

namespace dualsplat {

struct LossWeights {
  double lambda_mix = 0.8;   // L1 vs D-SSIM mix inside the photometric term
  double lambda_tran = 0.1;
  double lambda_sdf = 1.0;
  double lambda_cons = 0.04;
  double lambda_tv = 0.1;
  double lambda_d = 0.1;     // SDF distance term
  double lambda_n = 0.1;     // SDF normal-alignment term
};

/// Photometric loss: lambda*L1 + (1-lambda)*(1-SSIM)/2.
double loss_gs(const ImageD& img, const ImageD& gt, double lambda,
               ImageD* d_img = nullptr);

/// Road-prior loss over surfels: mean of lambda_d*|f| plus lambda_n times the
/// squared sine between the SDF gradient and the primitive normal t_u x t_v.
/// Gradients flow to centers (through the frozen network's gradient and
/// Hessian) and to the tangents.
struct SurfelSdfGrads {
  std::vector<Vec3> d_center;
  std::vector<Vec3> d_tangent_u;
  std::vector<Vec3> d_tangent_v;
};
double loss_sdf(const std::vector<Surfel2D>& surfels, const SdfModel& sdf,
                double lambda_d, double lambda_n,
                SurfelSdfGrads* grads = nullptr);

/// Transmittance supervision (|T_e - M|_F^2 + |T_r - (1-M)|_F^2) / |M|.
double loss_tran(const ImageD& trans_env, const ImageD& trans_road,
                 const SemanticMask& mask, ImageD* d_env = nullptr,
                 ImageD* d_road = nullptr);

/// Band of pixels within Chebyshev distance `width` of a road/non-road
/// transition (i.e. distance <= width-1 from a pixel that borders the other
/// label).
SemanticMask banded_boundary(const SemanticMask& mask, int width);

enum class ConsMode { MaxMin, Mean };

/// Depth consistency over the banded boundary: per column the minimum
/// |D_e - D_r| over band rows, then the maximum over columns. smooth_tau > 0
/// replaces both extrema with logsumexp relaxations; ConsMode::Mean averages
/// |D_e - D_r| over the band instead.
double loss_cons(const ImageD& depth_env, const ImageD& depth_road,
                 const SemanticMask& band, ImageD* d_env = nullptr,
                 ImageD* d_road = nullptr, ConsMode mode = ConsMode::MaxMin,
                 double smooth_tau = 0.0);

/// Total variation of the composite depth over the band, appendix form:
/// sum of sqrt(left_diff^2 + down_diff^2) with zero for missing neighbors.
double loss_tv(const ImageD& depth, const SemanticMask& band,
               ImageD* d_depth = nullptr);

struct LossParts {
  double gs = 0, tran = 0, sdf = 0, cons = 0, tv = 0;
};

/// Weighted total; throws Divergence naming the offending part when any
/// component is non-finite.
double loss_total(const LossParts& parts, const LossWeights& weights);

}  // namespace dualsplat
