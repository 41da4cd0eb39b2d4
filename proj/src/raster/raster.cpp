#include "dualsplat/raster/raster.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dualsplat/core/parallel.hpp"
#include "dualsplat/core/sh.hpp"

namespace dualsplat {

namespace {

constexpr int kTile = 16;
constexpr double kAlphaSkip = 1.0 / 255.0;
constexpr double kAlphaMax = 0.9999;
constexpr double kTermination = 1e-4;
constexpr double kLowPass2D = 0.3;      // px^2 isotropic dilation, ellipsoids
constexpr double kScreenSigma = 0.5;    // px, surfel object-space low-pass
// 3.5 sigma bounding boxes: everything with alpha >= 1/255 lies inside
// (exp(-6.125) < 1/255), so binning never truncates a visible contribution.
constexpr double kCutoffSigma = 3.5;

using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat29 = Eigen::Matrix<double, 3, 9>;

Mat23 pinhole_jacobian(const Camera& cam, const Vec3& pc) {
  const double z = pc.z(), iz = 1.0 / z;
  Mat23 j;
  j << cam.fx * iz, 0, -cam.fx * pc.x() * iz * iz,
      0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
  return j;
}

Mat3 intrinsics(const Camera& cam) {
  Mat3 k;
  k << cam.fx, 0, cam.cx,
      0, cam.fy, cam.cy,
      0, 0, 1;
  return k;
}

struct PixelBounds {
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
  bool empty() const { return x1 < x0 || y1 < y0; }
};

PixelBounds clip_bounds(double min_x, double max_x, double min_y, double max_y,
                        int width, int height) {
  PixelBounds b;
  b.x0 = std::max(0, static_cast<int>(std::floor(min_x - 1.0)));
  b.x1 = std::min(width - 1, static_cast<int>(std::ceil(max_x + 1.0)));
  b.y0 = std::max(0, static_cast<int>(std::floor(min_y - 1.0)));
  b.y1 = std::min(height - 1, static_cast<int>(std::ceil(max_y + 1.0)));
  return b;
}

// ---------------------------------------------------------------------------
// Screen-space records

struct GaussRecord {
  int prim = -1;
  Vec2 mean2d = Vec2::Zero();
  Mat2 conic = Mat2::Zero();
  double depth = 0;
  double opacity = 0;
  Vec3 rgb = Vec3::Zero();
  bool clamp[3] = {false, false, false};
  Vec3 p_cam = Vec3::Zero();
  Mat2 cov2d = Mat2::Zero();
  PixelBounds bounds;
};

struct SurfelRecord {
  int prim = -1;
  Mat3 m = Mat3::Zero();  // (u, v, 1) -> homogeneous pixel
  Vec2 center2d = Vec2::Zero();
  double sort_depth = 0;  // view-space z of the center
  double opacity = 0;
  Vec3 rgb = Vec3::Zero();
  bool clamp[3] = {false, false, false};
  Vec3 p_cam = Vec3::Zero();
  PixelBounds bounds;
};

struct SurfelSample {
  bool valid = false;
  double u = 0, v = 0, depth = 0;
  double g_obj = 0, g_scr = 0;
  Vec3 h_u = Vec3::Zero(), h_v = Vec3::Zero();
  double nu = 0, nv = 0, den = 0;
};

SurfelSample sample_surfel(const SurfelRecord& r, const Camera& cam, double px,
                           double py) {
  SurfelSample s;
  const Vec3 h_u = px * r.m.row(2).transpose() - r.m.row(0).transpose();
  const Vec3 h_v = py * r.m.row(2).transpose() - r.m.row(1).transpose();
  const double den = h_u[0] * h_v[1] - h_u[1] * h_v[0];
  const double scale = h_u.norm() * h_v.norm();
  if (std::abs(den) <= 1e-8 * std::max(scale, 1e-300)) return s;
  const double nu = h_u[1] * h_v[2] - h_u[2] * h_v[1];
  const double nv = h_u[2] * h_v[0] - h_u[0] * h_v[2];
  s.u = nu / den;
  s.v = nv / den;
  s.depth = r.m(2, 0) * s.u + r.m(2, 1) * s.v + r.m(2, 2);
  if (s.depth <= cam.near) return s;
  s.g_obj = std::exp(-0.5 * (s.u * s.u + s.v * s.v));
  const double dx = px - r.center2d.x(), dy = py - r.center2d.y();
  s.g_scr = std::exp(-(dx * dx + dy * dy) / (2 * kScreenSigma * kScreenSigma));
  s.h_u = h_u;
  s.h_v = h_v;
  s.nu = nu;
  s.nv = nv;
  s.den = den;
  s.valid = true;
  return s;
}

// ---------------------------------------------------------------------------
// Record construction

GaussRecord make_gauss_record(const Gaussian3D& g, int index, const Camera& cam) {
  GaussRecord r;
  const Vec3 pc = cam.to_camera(g.mean);
  if (pc.z() <= cam.near) return r;
  const Mat23 j = pinhole_jacobian(cam, pc);
  const Mat3 rw = cam.rotation();
  const Mat2 cov2d =
      j * rw * covariance_of(g) * rw.transpose() * j.transpose() +
      kLowPass2D * Mat2::Identity();
  const double det = cov2d.determinant();
  if (det < 1e-12) return r;
  r.conic << cov2d(1, 1), -cov2d(0, 1), -cov2d(1, 0), cov2d(0, 0);
  r.conic /= det;
  r.mean2d = cam.project_cam(pc);
  const double radius =
      kCutoffSigma *
      std::sqrt(std::max(cov2d(0, 0), cov2d(1, 1)) + std::abs(cov2d(0, 1)));
  r.bounds = clip_bounds(r.mean2d.x() - radius, r.mean2d.x() + radius,
                         r.mean2d.y() - radius, r.mean2d.y() + radius,
                         cam.width, cam.height);
  if (r.bounds.empty()) return r;
  const Vec3 dir = (g.mean - cam.center()).normalized();
  r.rgb = eval_sh(g.color, dir, r.clamp);
  r.prim = index;
  r.depth = pc.z();
  r.opacity = g.opacity;
  r.p_cam = pc;
  r.cov2d = cov2d;
  return r;
}

SurfelRecord make_surfel_record(const Surfel2D& s, int index, const Camera& cam) {
  SurfelRecord r;
  const Vec3 pc = cam.to_camera(s.center);
  if (pc.z() <= cam.near) return r;
  const Mat3 kr = intrinsics(cam) * cam.rotation();
  r.m.col(0) = kr * (s.scale_u * s.tangent_u);
  r.m.col(1) = kr * (s.scale_v * s.tangent_v);
  r.m.col(2) = kr * s.center + intrinsics(cam) * cam.translation();
  r.center2d = cam.project_cam(pc);

  // Project the +-3.5 sigma corners of the disk plane for the footprint;
  // any corner crossing the near plane falls back to the whole image.
  double min_x = r.center2d.x() - kCutoffSigma * kScreenSigma;
  double max_x = r.center2d.x() + kCutoffSigma * kScreenSigma;
  double min_y = r.center2d.y() - kCutoffSigma * kScreenSigma;
  double max_y = r.center2d.y() + kCutoffSigma * kScreenSigma;
  bool whole_image = false;
  for (const double su : {-kCutoffSigma, kCutoffSigma}) {
    for (const double sv : {-kCutoffSigma, kCutoffSigma}) {
      const Vec3 corner = cam.to_camera(s.center + su * s.scale_u * s.tangent_u +
                                        sv * s.scale_v * s.tangent_v);
      if (corner.z() <= cam.near) {
        whole_image = true;
        break;
      }
      const Vec2 p = cam.project_cam(corner);
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
    if (whole_image) break;
  }
  r.bounds = whole_image
                 ? clip_bounds(0, cam.width, 0, cam.height, cam.width, cam.height)
                 : clip_bounds(min_x, max_x, min_y, max_y, cam.width, cam.height);
  if (r.bounds.empty()) return r;
  const Vec3 dir = (s.center - cam.center()).normalized();
  r.rgb = eval_sh(s.color, dir, r.clamp);
  r.prim = index;
  r.sort_depth = pc.z();
  r.opacity = s.opacity;
  r.p_cam = pc;
  return r;
}

// ---------------------------------------------------------------------------
// Tiling

struct TileGrid {
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> bins;  // sorted record positions per tile

  int count() const { return tiles_x * tiles_y; }
};

template <typename Record>
TileGrid build_bins(const std::vector<Record>& records, int width, int height) {
  TileGrid grid;
  grid.tiles_x = (width + kTile - 1) / kTile;
  grid.tiles_y = (height + kTile - 1) / kTile;
  grid.bins.resize(static_cast<size_t>(grid.count()));
  for (size_t pos = 0; pos < records.size(); ++pos) {
    const PixelBounds& b = records[pos].bounds;
    const int tx0 = b.x0 / kTile, tx1 = b.x1 / kTile;
    const int ty0 = b.y0 / kTile, ty1 = b.y1 / kTile;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        grid.bins[static_cast<size_t>(ty) * grid.tiles_x + tx].push_back(
            static_cast<int>(pos));
  }
  return grid;
}

struct Contribution {
  int bin_pos;       // index into the tile's bin
  double alpha;      // effective per-pixel alpha
  double trans;      // transmittance in front of this splat
  double depth;      // per-pixel depth used in the blend
};

// ---------------------------------------------------------------------------
// Forward

template <typename Record, typename AlphaDepthFn>
LayerRender render_records(const std::vector<Record>& sorted, const Camera& cam,
                           const AlphaDepthFn& alpha_depth) {
  LayerRender out;
  out.color = ImageD(cam.width, cam.height, 3, 0.0);
  out.depth = ImageD(cam.width, cam.height, 1, kEmptyDepth);
  out.transmittance = ImageD(cam.width, cam.height, 1, 1.0);

  const TileGrid grid = build_bins(sorted, cam.width, cam.height);
  parallel_for(grid.count(), [&](int tile) {
    const auto& bin = grid.bins[tile];
    if (bin.empty()) return;
    const int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
    const int px0 = tx * kTile, py0 = ty * kTile;
    const int px1 = std::min(cam.width, px0 + kTile);
    const int py1 = std::min(cam.height, py0 + kTile);
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        double trans = 1.0;
        Vec3 color = Vec3::Zero();
        double depth = 0.0;
        bool touched = false;
        for (const int pos : bin) {
          const Record& r = sorted[pos];
          if (x < r.bounds.x0 || x > r.bounds.x1 || y < r.bounds.y0 ||
              y > r.bounds.y1)
            continue;
          double a, d;
          if (!alpha_depth(r, cam, cx, cy, a, d)) continue;
          if (a < kAlphaSkip) continue;
          a = std::min(a, kAlphaMax);
          color += r.rgb * (a * trans);
          depth += d * (a * trans);
          trans *= 1.0 - a;
          touched = true;
          if (trans < kTermination) break;
        }
        for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = color[c];
        out.transmittance.at(x, y) = trans;
        if (touched) out.depth.at(x, y) = depth;
      }
    }
  });
  return out;
}

bool gauss_alpha_depth(const GaussRecord& r, const Camera&, double px, double py,
                       double& alpha, double& depth) {
  const double dx = px - r.mean2d.x(), dy = py - r.mean2d.y();
  const double q = r.conic(0, 0) * dx * dx + 2 * r.conic(0, 1) * dx * dy +
                   r.conic(1, 1) * dy * dy;
  if (q < 0 || q > 50) return false;
  alpha = r.opacity * std::exp(-0.5 * q);
  depth = r.depth;
  return true;
}

bool surfel_alpha_depth(const SurfelRecord& r, const Camera& cam, double px,
                        double py, double& alpha, double& depth) {
  const SurfelSample s = sample_surfel(r, cam, px, py);
  if (!s.valid) return false;
  alpha = r.opacity * std::max(s.g_obj, s.g_scr);
  depth = s.depth;
  return true;
}

// ---------------------------------------------------------------------------
// Backward

// Record-space gradient slots accumulated per tile, merged in tile order.
struct GaussRecordGrad {
  Vec2 d_mean2d = Vec2::Zero();
  Mat2 d_conic = Mat2::Zero();
  double d_opacity = 0;
  Vec3 d_rgb = Vec3::Zero();
  double d_depth = 0;
};

struct SurfelRecordGrad {
  Mat3 d_m = Mat3::Zero();
  Vec2 d_center2d = Vec2::Zero();
  double d_opacity = 0;
  Vec3 d_rgb = Vec3::Zero();
};

struct Upstream {
  const ImageD* color = nullptr;
  const ImageD* depth = nullptr;
  const ImageD* trans = nullptr;

  Vec3 g_color(int x, int y) const {
    if (!color || color->size() == 0) return Vec3::Zero();
    return Vec3(color->at(x, y, 0), color->at(x, y, 1), color->at(x, y, 2));
  }
  double g_depth(int x, int y) const {
    return depth && depth->size() ? depth->at(x, y) : 0.0;
  }
  double g_trans(int x, int y) const {
    return trans && trans->size() ? trans->at(x, y) : 0.0;
  }
};

// Re-runs the per-pixel blend, then walks it in reverse accumulating
// gradients w.r.t. per-contribution (alpha, rgb, depth). The suffix
// recurrences keep everything division-free.
template <typename Record, typename AlphaDepthFn, typename PixelBackFn>
void backward_records(const std::vector<Record>& sorted, const Camera& cam,
                      const Upstream& up, const AlphaDepthFn& alpha_depth,
                      const PixelBackFn& pixel_back,
                      std::vector<std::vector<std::pair<int, GaussRecordGrad>>>* gauss_tiles,
                      std::vector<std::vector<std::pair<int, SurfelRecordGrad>>>* surfel_tiles) {
  const TileGrid grid = build_bins(sorted, cam.width, cam.height);
  if (gauss_tiles) gauss_tiles->resize(grid.count());
  if (surfel_tiles) surfel_tiles->resize(grid.count());

  parallel_for(grid.count(), [&](int tile) {
    const auto& bin = grid.bins[tile];
    if (bin.empty()) return;
    std::vector<GaussRecordGrad> gauss_local;
    std::vector<SurfelRecordGrad> surfel_local;
    if (gauss_tiles) gauss_local.resize(bin.size());
    if (surfel_tiles) surfel_local.resize(bin.size());

    const int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
    const int px0 = tx * kTile, py0 = ty * kTile;
    const int px1 = std::min(cam.width, px0 + kTile);
    const int py1 = std::min(cam.height, py0 + kTile);
    std::vector<Contribution> stack;
    for (int y = py0; y < py1; ++y) {
      for (int x = px0; x < px1; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        stack.clear();
        double trans = 1.0;
        for (size_t k = 0; k < bin.size(); ++k) {
          const Record& r = sorted[bin[k]];
          if (x < r.bounds.x0 || x > r.bounds.x1 || y < r.bounds.y0 ||
              y > r.bounds.y1)
            continue;
          double a, d;
          if (!alpha_depth(r, cam, cx, cy, a, d)) continue;
          if (a < kAlphaSkip) continue;
          a = std::min(a, kAlphaMax);
          stack.push_back({static_cast<int>(k), a, trans, d});
          trans *= 1.0 - a;
          if (trans < kTermination) break;
        }
        if (stack.empty()) continue;

        const Vec3 g_color = up.g_color(x, y);
        const double g_depth = up.g_depth(x, y);
        const double g_trans = up.g_trans(x, y);

        Vec3 behind_color = Vec3::Zero();  // blend restarted just behind i
        double behind_depth = 0.0;
        double suffix_trans = 1.0;  // product of (1 - a_k) for k > i
        for (int i = static_cast<int>(stack.size()) - 1; i >= 0; --i) {
          const Contribution& c = stack[i];
          const Record& r = sorted[bin[c.bin_pos]];
          const double at = c.alpha * c.trans;
          const Vec3 g_rgb = g_color * at;
          const double g_d = g_depth * at;
          double g_a = g_color.dot(r.rgb - behind_color) * c.trans;
          g_a += g_depth * (c.depth - behind_depth) * c.trans;
          g_a += g_trans * (-c.trans * suffix_trans);
          pixel_back(bin[c.bin_pos], c, cam, cx, cy, g_a, g_rgb, g_d,
                     gauss_tiles ? &gauss_local[c.bin_pos] : nullptr,
                     surfel_tiles ? &surfel_local[c.bin_pos] : nullptr);
          behind_color = r.rgb * c.alpha + (1.0 - c.alpha) * behind_color;
          behind_depth = c.depth * c.alpha + (1.0 - c.alpha) * behind_depth;
          suffix_trans *= 1.0 - c.alpha;
        }
      }
    }
    if (gauss_tiles) {
      auto& out = (*gauss_tiles)[tile];
      for (size_t k = 0; k < bin.size(); ++k)
        out.emplace_back(bin[k], gauss_local[k]);
    }
    if (surfel_tiles) {
      auto& out = (*surfel_tiles)[tile];
      for (size_t k = 0; k < bin.size(); ++k)
        out.emplace_back(bin[k], surfel_local[k]);
    }
  });
}

Vec4 rotation_grad(const Vec4& q_raw, const Mat3& g_r) {
  const Vec4 q = q_raw.normalized();
  Vec4 g_unit;
  for (int k = 0; k < 4; ++k)
    g_unit[k] = (g_r.array() * quat_rotation_derivative(q, k).array()).sum();
  return quat_normalize_backward(q_raw, g_unit);
}

// dL/d(world point) for gradients arriving at the normalized view direction.
Vec3 direction_grad(const Vec3& p, const Vec3& cam_center, const Vec3& g_dir) {
  const Vec3 d = p - cam_center;
  const double n = d.norm();
  if (n < 1e-12) return Vec3::Zero();
  const Vec3 u = d / n;
  return (g_dir - u * u.dot(g_dir)) / n;
}

}  // namespace

ProjectedGaussian project_gaussian3d(const Gaussian3D& g, const Camera& cam) {
  ProjectedGaussian out;
  const Vec3 pc = cam.to_camera(g.mean);
  if (pc.z() <= cam.near) return out;
  const Mat23 j = pinhole_jacobian(cam, pc);
  const Mat3 rw = cam.rotation();
  out.cov2d = j * rw * covariance_of(g) * rw.transpose() * j.transpose() +
              kLowPass2D * Mat2::Identity();
  if (out.cov2d.determinant() < 1e-12) return out;
  out.mean2d = cam.project_cam(pc);
  out.depth = pc.z();
  out.culled = false;
  return out;
}

SurfelHit intersect_surfel(const Surfel2D& s, const Camera& cam, const Vec2& pixel) {
  SurfelHit hit;
  SurfelRecord r;
  const Mat3 kr = intrinsics(cam) * cam.rotation();
  r.m.col(0) = kr * (s.scale_u * s.tangent_u);
  r.m.col(1) = kr * (s.scale_v * s.tangent_v);
  r.m.col(2) = kr * s.center + intrinsics(cam) * cam.translation();
  r.center2d = Vec2::Zero();
  const SurfelSample smp = sample_surfel(r, cam, pixel.x(), pixel.y());
  if (!smp.valid) return hit;
  hit.valid = true;
  hit.u = smp.u;
  hit.v = smp.v;
  hit.depth = smp.depth;
  return hit;
}

LayerRender render_layer(const GaussianCloud& cloud, const Camera& cam) {
  std::vector<GaussRecord> records(cloud.prims.size());
  parallel_for(static_cast<int>(cloud.prims.size()), [&](int i) {
    records[i] = make_gauss_record(cloud.prims[i], i, cam);
  });
  std::vector<GaussRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records)
    if (r.prim >= 0) kept.push_back(r);
  std::sort(kept.begin(), kept.end(), [](const GaussRecord& a, const GaussRecord& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.prim < b.prim);
  });
  return render_records(kept, cam, gauss_alpha_depth);
}

LayerRender render_layer(const SurfelCloud& cloud, const Camera& cam) {
  std::vector<SurfelRecord> records(cloud.prims.size());
  parallel_for(static_cast<int>(cloud.prims.size()), [&](int i) {
    records[i] = make_surfel_record(cloud.prims[i], i, cam);
  });
  std::vector<SurfelRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records)
    if (r.prim >= 0) kept.push_back(r);
  std::sort(kept.begin(), kept.end(),
            [](const SurfelRecord& a, const SurfelRecord& b) {
              return a.sort_depth < b.sort_depth ||
                     (a.sort_depth == b.sort_depth && a.prim < b.prim);
            });
  return render_records(kept, cam, surfel_alpha_depth);
}

GaussianParamGrads render_layer_backward(const GaussianCloud& cloud,
                                         const Camera& cam,
                                         const LayerGradients& upstream) {
  const size_t n = cloud.prims.size();
  GaussianParamGrads out;
  out.d_mean.assign(n, Vec3::Zero());
  out.d_rotation.assign(n, Vec4::Zero());
  out.d_scale.assign(n, Vec3::Zero());
  out.d_opacity.assign(n, 0.0);
  out.d_sh.assign(n, Mat29::Zero());

  std::vector<GaussRecord> records(n);
  parallel_for(static_cast<int>(n), [&](int i) {
    records[i] = make_gauss_record(cloud.prims[i], i, cam);
  });
  std::vector<GaussRecord> kept;
  for (auto& r : records)
    if (r.prim >= 0) kept.push_back(r);
  std::sort(kept.begin(), kept.end(), [](const GaussRecord& a, const GaussRecord& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.prim < b.prim);
  });

  Upstream up{&upstream.d_color, &upstream.d_depth, &upstream.d_transmittance};

  auto pixel_back = [&](int pos, const Contribution& c, const Camera&, double px,
                        double py, double g_a, const Vec3& g_rgb, double g_d,
                        GaussRecordGrad* grad, SurfelRecordGrad*) {
    const GaussRecord& r = kept[pos];
    const double dx = px - r.mean2d.x(), dy = py - r.mean2d.y();
    const double q = r.conic(0, 0) * dx * dx + 2 * r.conic(0, 1) * dx * dy +
                     r.conic(1, 1) * dy * dy;
    const double g = std::exp(-0.5 * q);
    grad->d_rgb += g_rgb;
    grad->d_depth += g_d;
    if (c.alpha >= kAlphaMax) return;  // clamped alpha: no geometry gradient
    grad->d_opacity += g_a * g;
    const double g_q = -0.5 * r.opacity * g * g_a;
    const Vec2 delta(dx, dy);
    grad->d_mean2d -= g_q * 2.0 * (r.conic * delta);
    grad->d_conic += g_q * delta * delta.transpose();
  };

  std::vector<std::vector<std::pair<int, GaussRecordGrad>>> tiles;
  backward_records(kept, cam, up, gauss_alpha_depth, pixel_back, &tiles, nullptr);

  // Merge per-tile contributions in tile order (bitwise reproducible).
  std::vector<GaussRecordGrad> rec_grads(kept.size());
  for (const auto& tile : tiles) {
    for (const auto& [pos, g] : tile) {
      rec_grads[pos].d_mean2d += g.d_mean2d;
      rec_grads[pos].d_conic += g.d_conic;
      rec_grads[pos].d_opacity += g.d_opacity;
      rec_grads[pos].d_rgb += g.d_rgb;
      rec_grads[pos].d_depth += g.d_depth;
    }
  }

  // Chain record-space gradients back to primitive parameters.
  const Mat3 rw = cam.rotation();
  const Vec3 cam_center = cam.center();
  parallel_for(static_cast<int>(kept.size()), [&](int pos) {
    const GaussRecord& r = kept[pos];
    const GaussRecordGrad& g = rec_grads[pos];
    const Gaussian3D& prim = cloud.prims[r.prim];

    // conic = inv(cov2d)
    const Mat2 cov_inv = r.conic;
    const Mat2 g_cov2d = -cov_inv * g.d_conic * cov_inv;

    const Mat23 j = pinhole_jacobian(cam, r.p_cam);
    const Mat3 sigma_cam = rw * covariance_of(prim) * rw.transpose();
    const Mat3 g_sigma_cam = j.transpose() * g_cov2d * j;
    const Eigen::Matrix<double, 2, 3> g_j =
        (g_cov2d + g_cov2d.transpose()) * j * sigma_cam;
    const Mat3 g_sigma = rw.transpose() * g_sigma_cam * rw;

    const Vec4 q_unit = prim.rotation.normalized();
    const Mat3 rot = quat_to_rotation(q_unit);
    const Mat3 m3 = rot * prim.scale.asDiagonal();
    const Mat3 g_m3 = 2.0 * g_sigma * m3;  // g_sigma is symmetric
    Vec3 g_scale;
    for (int k = 0; k < 3; ++k) g_scale[k] = rot.col(k).dot(g_m3.col(k));
    const Mat3 g_rot = g_m3 * prim.scale.asDiagonal();

    // Gradients flowing into the camera-space mean.
    Vec3 g_pcam = j.transpose() * g.d_mean2d;
    g_pcam.z() += g.d_depth;
    const double z = r.p_cam.z(), iz2 = 1.0 / (z * z), iz3 = iz2 / z;
    g_pcam.x() += g_j(0, 2) * (-cam.fx * iz2);
    g_pcam.y() += g_j(1, 2) * (-cam.fy * iz2);
    g_pcam.z() += g_j(0, 0) * (-cam.fx * iz2) + g_j(1, 1) * (-cam.fy * iz2) +
                  g_j(0, 2) * (2 * cam.fx * r.p_cam.x() * iz3) +
                  g_j(1, 2) * (2 * cam.fy * r.p_cam.y() * iz3);

    Vec3 g_mean = rw.transpose() * g_pcam;
    const Vec3 dir = (prim.mean - cam_center).normalized();
    const ShGrads sh = eval_sh_backward(prim.color, dir, g.d_rgb, r.clamp);
    g_mean += direction_grad(prim.mean, cam_center, sh.d_dir);

    out.d_mean[r.prim] = g_mean;
    out.d_rotation[r.prim] = rotation_grad(prim.rotation, g_rot);
    out.d_scale[r.prim] = g_scale;
    out.d_opacity[r.prim] = g.d_opacity;
    out.d_sh[r.prim] = sh.d_coeffs;
  });
  return out;
}

SurfelParamGrads render_layer_backward(const SurfelCloud& cloud, const Camera& cam,
                                       const LayerGradients& upstream) {
  const size_t n = cloud.prims.size();
  SurfelParamGrads out;
  out.d_center.assign(n, Vec3::Zero());
  out.d_tangent_u.assign(n, Vec3::Zero());
  out.d_tangent_v.assign(n, Vec3::Zero());
  out.d_scale_u.assign(n, 0.0);
  out.d_scale_v.assign(n, 0.0);
  out.d_opacity.assign(n, 0.0);
  out.d_sh.assign(n, Mat29::Zero());

  std::vector<SurfelRecord> records(n);
  parallel_for(static_cast<int>(n), [&](int i) {
    records[i] = make_surfel_record(cloud.prims[i], i, cam);
  });
  std::vector<SurfelRecord> kept;
  for (auto& r : records)
    if (r.prim >= 0) kept.push_back(r);
  std::sort(kept.begin(), kept.end(),
            [](const SurfelRecord& a, const SurfelRecord& b) {
              return a.sort_depth < b.sort_depth ||
                     (a.sort_depth == b.sort_depth && a.prim < b.prim);
            });

  Upstream up{&upstream.d_color, &upstream.d_depth, &upstream.d_transmittance};

  auto pixel_back = [&](int pos, const Contribution& c, const Camera& camera,
                        double px, double py, double g_a, const Vec3& g_rgb,
                        double g_d, GaussRecordGrad*, SurfelRecordGrad* grad) {
    const SurfelRecord& r = kept[pos];
    const SurfelSample s = sample_surfel(r, camera, px, py);
    if (!s.valid) return;
    grad->d_rgb += g_rgb;
    const bool clamped = c.alpha >= kAlphaMax;
    const double g_hat = std::max(s.g_obj, s.g_scr);
    if (!clamped) grad->d_opacity += g_a * g_hat;
    const double g_ghat = clamped ? 0.0 : g_a * r.opacity;

    double g_u = 0, g_v = 0;
    if (s.g_obj >= s.g_scr) {
      g_u += g_ghat * (-s.u * s.g_obj);
      g_v += g_ghat * (-s.v * s.g_obj);
    } else {
      const double inv_s2 = 1.0 / (kScreenSigma * kScreenSigma);
      grad->d_center2d +=
          g_ghat * s.g_scr * inv_s2 *
          Vec2(px - r.center2d.x(), py - r.center2d.y());
    }
    // depth at the intersection: z = m20 u + m21 v + m22
    g_u += g_d * r.m(2, 0);
    g_v += g_d * r.m(2, 1);
    grad->d_m(2, 0) += g_d * s.u;
    grad->d_m(2, 1) += g_d * s.v;
    grad->d_m(2, 2) += g_d;

    // u = nu/den, v = nv/den over the plane vectors h_u, h_v.
    const double g_nu = g_u / s.den;
    const double g_nv = g_v / s.den;
    const double g_den = -(s.u * g_u + s.v * g_v) / s.den;
    const Vec3 &p = s.h_u, &q = s.h_v;
    Vec3 g_p, g_q;
    g_p[0] = -g_nv * q[2] + g_den * q[1];
    g_p[1] = g_nu * q[2] - g_den * q[0];
    g_p[2] = -g_nu * q[1] + g_nv * q[0];
    g_q[0] = g_nv * p[2] - g_den * p[1];
    g_q[1] = -g_nu * p[2] + g_den * p[0];
    g_q[2] = g_nu * p[1] - g_nv * p[0];

    grad->d_m.row(0) -= g_p.transpose();
    grad->d_m.row(1) -= g_q.transpose();
    grad->d_m.row(2) += (px * g_p + py * g_q).transpose();
  };

  std::vector<std::vector<std::pair<int, SurfelRecordGrad>>> tiles;
  backward_records(kept, cam, up, surfel_alpha_depth, pixel_back, nullptr, &tiles);

  std::vector<SurfelRecordGrad> rec_grads(kept.size());
  for (const auto& tile : tiles) {
    for (const auto& [pos, g] : tile) {
      rec_grads[pos].d_m += g.d_m;
      rec_grads[pos].d_center2d += g.d_center2d;
      rec_grads[pos].d_opacity += g.d_opacity;
      rec_grads[pos].d_rgb += g.d_rgb;
    }
  }

  const Mat3 kr = intrinsics(cam) * cam.rotation();
  const Mat3 rw = cam.rotation();
  const Vec3 cam_center = cam.center();
  parallel_for(static_cast<int>(kept.size()), [&](int pos) {
    const SurfelRecord& r = kept[pos];
    const SurfelRecordGrad& g = rec_grads[pos];
    const Surfel2D& prim = cloud.prims[r.prim];

    const Vec3 g_a = kr.transpose() * g.d_m.col(0);
    const Vec3 g_b = kr.transpose() * g.d_m.col(1);
    Vec3 g_center = kr.transpose() * g.d_m.col(2);

    const Mat23 j = pinhole_jacobian(cam, r.p_cam);
    g_center += rw.transpose() * (j.transpose() * g.d_center2d);

    const Vec3 dir = (prim.center - cam_center).normalized();
    const ShGrads sh = eval_sh_backward(prim.color, dir, g.d_rgb, r.clamp);
    g_center += direction_grad(prim.center, cam_center, sh.d_dir);

    out.d_center[r.prim] = g_center;
    out.d_tangent_u[r.prim] = prim.scale_u * g_a;
    out.d_tangent_v[r.prim] = prim.scale_v * g_b;
    out.d_scale_u[r.prim] = prim.tangent_u.dot(g_a);
    out.d_scale_v[r.prim] = prim.tangent_v.dot(g_b);
    out.d_opacity[r.prim] = g.d_opacity;
    out.d_sh[r.prim] = sh.d_coeffs;
  });
  return out;
}

}  // namespace dualsplat
