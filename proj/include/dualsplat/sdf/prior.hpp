#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dualsplat/core/types.hpp"
#include "dualsplat/sdf/mlp.hpp"

namespace dualsplat {

/// One SDF training sample. Surface points carry distance 0 and, where the
/// local neighborhood admits one, a unit normal. Distances are in meters;
/// fitting rescales them with the model normalization.
struct SdfSample {
  Vec3 position = Vec3::Zero();
  double distance = 0.0;
  bool is_surface = false;
  std::optional<Vec3> normal;
};

/// Frozen road prior: network weights plus the world -> normalized map
/// x_tilde = (x - centroid) * scale.
struct SdfModel {
  Mlp mlp;
  Vec3 centroid = Vec3::Zero();
  double scale = 1.0;

  Vec3 normalize(const Vec3& x) const { return (x - centroid) * scale; }
  Vec3 denormalize(const Vec3& xt) const { return xt / scale + centroid; }
};

/// Per-point unit normals from SVD plane fits over k nearest neighbors,
/// oriented so the z component is >= 0. Neighborhoods of rank < 2 yield
/// nullopt and are excluded from the normal loss downstream.
std::vector<std::optional<Vec3>> estimate_normals(const std::vector<Vec3>& road,
                                                  int k);

/// Surface samples (distance zero) followed by `per_point` off-surface
/// samples per road point, drawn uniformly in the +-radius cube and labeled
/// with the signed euclidean distance sgn(dz) * |x_s - nearest|.
std::vector<SdfSample> sample_offsurface(
    const std::vector<Vec3>& road, int per_point, double radius, uint64_t seed,
    const std::vector<std::optional<Vec3>>* normals = nullptr);

struct SdfFitConfig {
  int hidden = 128;
  int layers = 8;
  int iterations = 20000;
  double lr = 1e-3;
  double lr_decay = 0.1;   // final lr = lr * lr_decay
  int batch = 4096;        // value-supervision samples per step
  int surface_batch = 1024;  // surface samples per step (normal + eikonal)
  double lambda_n = 0.1;
  double lambda_eik = 0.01;
  uint64_t seed = 0;
};

/// Fits the SDF by Adam on the value / normal-alignment / eikonal objective.
/// Throws Divergence on a non-finite loss. `loss_log`, when given, receives
/// one total-loss entry per iteration.
SdfModel fit_sdf(const std::vector<SdfSample>& samples, const SdfFitConfig& cfg,
                 std::vector<double>* loss_log = nullptr);

SdfModel fit_sdf(const std::vector<SdfSample>& samples, double lambda_n,
                 double lambda_eik, int iterations, uint64_t seed);

/// Value and exact input gradient at a world point. The gradient is in
/// normalized coordinates.
struct SdfQuery {
  double value = 0;
  Vec3 gradient = Vec3::Zero();
};
SdfQuery query(const SdfModel& model, const Vec3& x_world);

struct SdfQueryH {
  double value = 0;
  Vec3 gradient = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();
};
SdfQueryH query_with_hessian(const SdfModel& model, const Vec3& x_world);

/// "SDF1" checkpoint: magic, layer count, per-layer (rows, cols) with
/// row-major float32 weights then biases, then float64 centroid and scale.
void save_sdf(const std::string& path, const SdfModel& model);
SdfModel load_sdf(const std::string& path);

/// Held-out diagnostics: mean |f - d_normalized| over samples and mean
/// eikonal residual | |grad| - 1 | over surface samples.
struct SdfEval {
  double value_mae = 0;
  double eikonal_residual = 0;
};
SdfEval evaluate_sdf(const SdfModel& model, const std::vector<SdfSample>& samples);

}  // namespace dualsplat
