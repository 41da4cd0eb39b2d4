#include "dualsplat/pcd/prep.hpp"

#include <algorithm>
#include <cmath>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/rng.hpp"

namespace dualsplat {

namespace {
const Vec3 kSkyColor(0.7, 0.8, 0.95);
}

SemanticPointCloud label_points(const SemanticPointCloud& points,
                                const std::vector<Camera>& cameras,
                                const std::vector<ImageD>& images,
                                const std::vector<SemanticMask>& masks) {
  if (cameras.empty() || cameras.size() != images.size() ||
      cameras.size() != masks.size())
    throw BadInput("", "cameras, images and masks must align, one each per frame");
  for (size_t f = 0; f < cameras.size(); ++f) {
    if (images[f].width != masks[f].width || images[f].height != masks[f].height)
      throw BadInput("", "image/mask resolution mismatch in frame " +
                             std::to_string(f));
    if (images[f].width != cameras[f].width ||
        images[f].height != cameras[f].height)
      throw BadInput("", "camera/image resolution mismatch in frame " +
                             std::to_string(f));
  }

  SemanticPointCloud out = points;
  for (size_t i = 0; i < points.size(); ++i) {
    int road_votes = 0, total_votes = 0;
    Vec3 color_sum = Vec3::Zero();
    for (size_t f = 0; f < cameras.size(); ++f) {
      const Camera& cam = cameras[f];
      const Vec3 pc = cam.to_camera(points.positions[i]);
      if (pc.z() <= 0) continue;
      const Vec2 uv = cam.project_cam(pc);
      const int px = static_cast<int>(std::floor(uv.x()));
      const int py = static_cast<int>(std::floor(uv.y()));
      if (px < 0 || py < 0 || px >= cam.width || py >= cam.height) continue;
      ++total_votes;
      if (masks[f].at(px, py)) ++road_votes;
      color_sum += Vec3(images[f].at(px, py, 0), images[f].at(px, py, 1),
                        images[f].at(px, py, 2));
    }
    if (total_votes == 0) {
      out.labels[i] = SemanticLabel::NonRoad;
      out.colors[i] = Vec3(0.5, 0.5, 0.5);
    } else {
      // Ties break toward non-road.
      out.labels[i] = 2 * road_votes > total_votes ? SemanticLabel::Road
                                                   : SemanticLabel::NonRoad;
      out.colors[i] = color_sum / total_votes;
    }
  }
  return out;
}

SplitCloud split(const SemanticPointCloud& pc) {
  SplitCloud out;
  for (size_t i = 0; i < pc.size(); ++i) {
    if (pc.labels[i] == SemanticLabel::Road)
      out.road.append(pc.positions[i], pc.colors[i], pc.labels[i]);
    else
      out.environment.append(pc.positions[i], pc.colors[i], pc.labels[i]);
  }
  if (out.road.size() == 0)
    throw BadInput("", "degenerate scene: no road points after split");
  return out;
}

double max_pairwise_extent(const std::vector<Vec3>& positions) {
  if (positions.size() < 2) return 0.0;
  const size_t n = positions.size();
  constexpr size_t kBruteLimit = 4096;

  auto brute = [](const std::vector<Vec3>& pts) {
    double best = 0.0;
    for (size_t i = 0; i < pts.size(); ++i)
      for (size_t j = i + 1; j < pts.size(); ++j)
        best = std::max(best, (pts[i] - pts[j]).squaredNorm());
    return std::sqrt(best);
  };

  if (n <= kBruteLimit) return brute(positions);

  // Farthest-point subset keeps the hull extremes; start from the
  // lexicographically smallest point so the result is seed-free.
  size_t start = 0;
  for (size_t i = 1; i < n; ++i) {
    const Vec3 &a = positions[i], &b = positions[start];
    if (std::tie(a.x(), a.y(), a.z()) < std::tie(b.x(), b.y(), b.z())) start = i;
  }
  std::vector<Vec3> subset;
  subset.reserve(256);
  subset.push_back(positions[start]);
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  for (int round = 1; round < 256; ++round) {
    size_t far_idx = 0;
    double far_d2 = -1.0;
    for (size_t i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], (positions[i] - subset.back()).squaredNorm());
      if (dist2[i] > far_d2) {
        far_d2 = dist2[i];
        far_idx = i;
      }
    }
    if (far_d2 <= 0) break;
    subset.push_back(positions[far_idx]);
  }
  return brute(subset);
}

SemanticPointCloud add_sky_sphere(const SemanticPointCloud& pc, size_t n_points,
                                  SkyColorMode color_mode, uint64_t seed,
                                  double kappa) {
  if (pc.size() == 0) throw BadInput("", "cannot add a sky sphere to an empty cloud");
  if (n_points == 0) return pc;

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pc.positions) centroid += p;
  centroid /= static_cast<double>(pc.size());
  const double radius = kappa * max_pairwise_extent(pc.positions);

  SemanticPointCloud out = pc;
  const Rng base(seed);
  for (size_t i = 0; i < n_points; ++i) {
    Rng rng = base.stream(i);  // per-point stream, order-independent
    const double cos_theta = rng.uniform();  // uniform area on the hemisphere
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    const double phi = rng.uniform(0.0, 6.283185307179586);
    const Vec3 dir(std::cos(phi) * sin_theta, std::sin(phi) * sin_theta, cos_theta);
    Vec3 color = kSkyColor;
    if (color_mode == SkyColorMode::Texture) {
      // Mild horizon-to-zenith gradient plus low-frequency variation.
      const double t = cos_theta;
      color = (1 - t) * Vec3(0.82, 0.87, 0.95) + t * Vec3(0.45, 0.62, 0.92);
      color += 0.03 * std::sin(5.0 * phi) * Vec3(1, 1, 1);
    }
    out.append(centroid + radius * dir, color, SemanticLabel::Sky);
  }
  return out;
}

SemanticPointCloud downsample(const SemanticPointCloud& pc, size_t target,
                              uint64_t seed) {
  if (target == 0) throw BadInput("", "downsample target must be >= 1");
  if (target >= pc.size()) return pc;

  // Partial Fisher-Yates over an index array, then restore input order.
  std::vector<size_t> idx(pc.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = 0; i < target; ++i) {
    const size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(target);
  std::sort(idx.begin(), idx.end());

  SemanticPointCloud out;
  out.positions.reserve(target);
  for (const size_t i : idx) out.append(pc.positions[i], pc.colors[i], pc.labels[i]);
  return out;
}

}  // namespace dualsplat
