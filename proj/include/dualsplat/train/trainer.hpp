#pragma once

#include <string>
#include <vector>

#include "dualsplat/comp/composite.hpp"
#include "dualsplat/core/types.hpp"
#include "dualsplat/loss/losses.hpp"
#include "dualsplat/sdf/prior.hpp"

namespace dualsplat {

struct TrainConfig {
  int iterations = 2000;
  double lr_position = 1.6e-4;
  double lr_rotation = 1e-3;
  double lr_scale = 5e-3;
  double lr_opacity = 5e-2;
  double lr_color = 2.5e-3;
  LossWeights weights;
  CompositeMode composite_mode = CompositeMode::Smooth;
  double s_sigma = 10.0;
  int band_width = 5;
  uint64_t seed = 0;
  int snapshot_interval = 0;  // 0 = final snapshot only
  int sh_degree = 0;
  double env_offset_bound = 1.0;  // lambda_sigma; 0 trains raw positions
  bool prune_opacity = false;
  double prune_threshold = 0.005;
  int prune_interval = 500;
  ConsMode cons_mode = ConsMode::MaxMin;
  double cons_smooth_tau = 0.0;
  std::string out_dir;    // empty = keep everything in memory
  std::string sdf_path;   // recorded in snapshot manifests
};

/// Sigmoid-bounded anchor offset: the realized center stays inside the
/// closed box anchor +- bound on every axis for any finite parameter.
struct AnchorOffset {
  Vec3 anchor = Vec3::Zero();
  Vec3 offset = Vec3::Zero();        // raw parameter O_v
  Vec3 scale_factor = Vec3::Ones();  // l_v
  double bound = 1.0;                // lambda_sigma, meters
};

Vec3 realize_offset(const AnchorOffset& a);
/// d(loss)/d(offset) for an upstream center gradient.
Vec3 realize_offset_backward(const AnchorOffset& a, const Vec3& g_center);

struct TrainView {
  Camera camera;
  ImageD image;        // ground truth, H x W x 3 in [0,1]
  SemanticMask mask;   // road mask at image resolution
};

struct LossLogRow {
  long iteration = 0;
  double gs = 0, tran = 0, sdf = 0, cons = 0, tv = 0, total = 0;
};

struct TrainResult {
  SurfelCloud road;
  GaussianCloud environment;
  std::vector<LossLogRow> loss_log;
};

/// One surfel per road point: tangent frame from the frozen SDF gradient,
/// scales from local point spacing.
SurfelCloud init_road_surfels(const SemanticPointCloud& road, const SdfModel& sdf,
                              int sh_degree, uint64_t seed);

/// One isotropic Gaussian per environment point, scale from mean
/// nearest-neighbor spacing.
GaussianCloud init_env_gaussians(const SemanticPointCloud& environment,
                                 int sh_degree, uint64_t seed);

/// Joint optimization of both layers against the composite objective.
/// Deterministic given cfg.seed; throws Divergence (with the offending term)
/// on a non-finite loss.
TrainResult train(const SemanticPointCloud& road_init,
                  const SemanticPointCloud& env_init, const SdfModel& sdf,
                  const std::vector<TrainView>& views, const TrainConfig& cfg);

}  // namespace dualsplat
