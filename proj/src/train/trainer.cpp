#include "dualsplat/train/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/rng.hpp"
#include "dualsplat/core/sh.hpp"
#include "dualsplat/io/ply.hpp"
#include "dualsplat/raster/raster.hpp"
#include "dualsplat/sdf/kdtree.hpp"

namespace dualsplat {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double logit(double p) {
  const double q = std::clamp(p, 1e-9, 1.0 - 1e-9);
  return std::log(q / (1.0 - q));
}

Vec4 quat_from_rotation(const Mat3& r) {
  Vec4 q;
  const double trace = r.trace();
  if (trace > 0) {
    const double s = std::sqrt(trace + 1.0) * 2;
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
        (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
        (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
        (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s,
        (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  return q.normalized();
}

/// Mean distance to the 3 nearest distinct neighbors, 3DGS-style isotropic
/// scale init. Falls back to 0.1 m for singleton clouds.
std::vector<double> local_spacing(const std::vector<Vec3>& points) {
  std::vector<double> out(points.size(), 0.1);
  if (points.size() < 2) return out;
  const KdTree tree(points);
  const int k = std::min<int>(4, static_cast<int>(points.size()));
  for (size_t i = 0; i < points.size(); ++i) {
    const auto nn = tree.knn(points[i], k);
    double sum = 0;
    int count = 0;
    for (const int j : nn) {
      if (j == static_cast<int>(i)) continue;
      sum += (points[i] - points[j]).norm();
      ++count;
    }
    if (count > 0) out[i] = std::max(sum / count, 1e-4);
  }
  return out;
}

struct ParamGroup {
  std::vector<double> value, m, v;
  long step = 0;

  void init(size_t n) {
    value.assign(n, 0.0);
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }

  void adam(const std::vector<double>& grad, double lr) {
    ++step;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, step);
    const double c2 = 1.0 - std::pow(b2, step);
    for (size_t i = 0; i < value.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }

  void keep(const std::vector<int>& idx, int stride) {
    auto filter = [&](std::vector<double>& a) {
      std::vector<double> out(idx.size() * stride);
      for (size_t k = 0; k < idx.size(); ++k)
        for (int s = 0; s < stride; ++s)
          out[k * stride + s] = a[static_cast<size_t>(idx[k]) * stride + s];
      a = std::move(out);
    };
    filter(value);
    filter(m);
    filter(v);
  }
};

struct LayerParams {
  size_t count = 0;
  int n_coeff = 1;
  std::vector<Vec3> anchors;  // env only; fixed
  ParamGroup pos, rot, scale, opacity, sh;
  int scale_dims = 3;

  void keep(const std::vector<int>& idx) {
    std::vector<Vec3> kept_anchors;
    if (!anchors.empty()) {
      for (const int i : idx) kept_anchors.push_back(anchors[i]);
      anchors = std::move(kept_anchors);
    }
    pos.keep(idx, 3);
    rot.keep(idx, 4);
    scale.keep(idx, scale_dims);
    opacity.keep(idx, 1);
    sh.keep(idx, 3 * n_coeff);
    count = idx.size();
  }
};

void write_loss_csv(const std::string& path, const std::vector<LossLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw BadInput(path, "cannot open for writing");
  out << "iteration,gs,tran,sdf,cons,tv,total\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  r.iteration, r.gs, r.tran, r.sdf, r.cons, r.tv, r.total);
    out << buf;
  }
}

}  // namespace

Vec3 realize_offset(const AnchorOffset& a) {
  Vec3 out;
  for (int k = 0; k < 3; ++k)
    out[k] = a.anchor[k] +
             a.bound * (2.0 * sigmoid(a.offset[k] * a.scale_factor[k]) - 1.0);
  return out;
}

Vec3 realize_offset_backward(const AnchorOffset& a, const Vec3& g_center) {
  Vec3 out;
  for (int k = 0; k < 3; ++k) {
    const double s = sigmoid(a.offset[k] * a.scale_factor[k]);
    out[k] = g_center[k] * a.bound * 2.0 * s * (1.0 - s) * a.scale_factor[k];
  }
  return out;
}

SurfelCloud init_road_surfels(const SemanticPointCloud& road, const SdfModel& sdf,
                              int sh_degree, uint64_t seed) {
  if (road.size() == 0) throw BadInput("", "init_road_surfels: empty road cloud");
  (void)seed;  // init is deterministic; seed kept for interface stability
  const auto spacing = local_spacing(road.positions);
  SurfelCloud cloud;
  cloud.sh_degree = sh_degree;
  cloud.prims.resize(road.size());
  for (size_t i = 0; i < road.size(); ++i) {
    Surfel2D& s = cloud.prims[i];
    s.center = road.positions[i];
    Vec3 n = query(sdf, s.center).gradient;
    if (n.norm() < 1e-9) n = Vec3(0, 0, 1);
    n.normalize();
    if (n.z() < 0) n = -n;
    const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    s.tangent_u = n.cross(helper).normalized();
    s.tangent_v = n.cross(s.tangent_u);
    s.scale_u = s.scale_v = spacing[i];
    s.opacity = 0.1;
    s.color = sh_from_rgb(road.colors[i], sh_degree);
  }
  return cloud;
}

GaussianCloud init_env_gaussians(const SemanticPointCloud& environment,
                                 int sh_degree, uint64_t seed) {
  if (environment.size() == 0)
    throw BadInput("", "init_env_gaussians: empty environment cloud");
  (void)seed;
  const auto spacing = local_spacing(environment.positions);
  GaussianCloud cloud;
  cloud.sh_degree = sh_degree;
  cloud.prims.resize(environment.size());
  for (size_t i = 0; i < environment.size(); ++i) {
    Gaussian3D& g = cloud.prims[i];
    g.mean = environment.positions[i];
    g.rotation = Vec4(1, 0, 0, 0);
    g.scale = Vec3::Constant(spacing[i]);
    g.opacity = 0.1;
    g.color = sh_from_rgb(environment.colors[i], sh_degree);
  }
  return cloud;
}

TrainResult train(const SemanticPointCloud& road_init,
                  const SemanticPointCloud& env_init, const SdfModel& sdf,
                  const std::vector<TrainView>& views, const TrainConfig& cfg) {
  if (views.empty()) throw BadInput("", "train: need at least one view");
  if (cfg.iterations < 1) throw BadInput("", "train: iterations must be >= 1");
  for (const auto& v : views)
    if (v.image.width != v.mask.width || v.image.height != v.mask.height)
      throw BadInput("", "train: image/mask resolution mismatch");

  const int n_coeff = ShColor::coeff_count(cfg.sh_degree);
  const bool bounded = cfg.env_offset_bound > 0;

  // --- parameterize both layers from their initial clouds
  const SurfelCloud road0 = init_road_surfels(road_init, sdf, cfg.sh_degree, cfg.seed);
  const GaussianCloud env0 = init_env_gaussians(env_init, cfg.sh_degree, cfg.seed);

  LayerParams road;
  road.count = road0.prims.size();
  road.n_coeff = n_coeff;
  road.scale_dims = 2;
  road.pos.init(road.count * 3);
  road.rot.init(road.count * 4);
  road.scale.init(road.count * 2);
  road.opacity.init(road.count);
  road.sh.init(road.count * 3 * n_coeff);
  for (size_t i = 0; i < road.count; ++i) {
    const Surfel2D& s = road0.prims[i];
    for (int k = 0; k < 3; ++k) road.pos.value[3 * i + k] = s.center[k];
    Mat3 frame;
    frame.col(0) = s.tangent_u;
    frame.col(1) = s.tangent_v;
    frame.col(2) = s.tangent_u.cross(s.tangent_v);
    const Vec4 q = quat_from_rotation(frame);
    for (int k = 0; k < 4; ++k) road.rot.value[4 * i + k] = q[k];
    road.scale.value[2 * i] = std::log(s.scale_u);
    road.scale.value[2 * i + 1] = std::log(s.scale_v);
    road.opacity.value[i] = logit(s.opacity);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < n_coeff; ++k)
        road.sh.value[(i * 3 + c) * n_coeff + k] = s.color.coeffs(c, k);
  }

  LayerParams env;
  env.count = env0.prims.size();
  env.n_coeff = n_coeff;
  env.scale_dims = 3;
  env.pos.init(env.count * 3);
  env.rot.init(env.count * 4);
  env.scale.init(env.count * 3);
  env.opacity.init(env.count);
  env.sh.init(env.count * 3 * n_coeff);
  env.anchors.resize(env.count);
  for (size_t i = 0; i < env.count; ++i) {
    const Gaussian3D& g = env0.prims[i];
    env.anchors[i] = g.mean;
    if (!bounded)
      for (int k = 0; k < 3; ++k) env.pos.value[3 * i + k] = g.mean[k];
    // bounded mode: zero offsets realize exactly the anchor
    for (int k = 0; k < 4; ++k) env.rot.value[4 * i + k] = g.rotation[k];
    for (int k = 0; k < 3; ++k) env.scale.value[3 * i + k] = std::log(g.scale[k]);
    env.opacity.value[i] = logit(g.opacity);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < n_coeff; ++k)
        env.sh.value[(i * 3 + c) * n_coeff + k] = g.color.coeffs(c, k);
  }

  auto build_road = [&]() {
    SurfelCloud cloud;
    cloud.sh_degree = cfg.sh_degree;
    cloud.prims.resize(road.count);
    for (size_t i = 0; i < road.count; ++i) {
      Surfel2D& s = cloud.prims[i];
      for (int k = 0; k < 3; ++k) s.center[k] = road.pos.value[3 * i + k];
      Vec4 q;
      for (int k = 0; k < 4; ++k) q[k] = road.rot.value[4 * i + k];
      const Mat3 r = quat_to_rotation(q.normalized());
      s.tangent_u = r.col(0);
      s.tangent_v = r.col(1);
      s.scale_u = std::exp(road.scale.value[2 * i]);
      s.scale_v = std::exp(road.scale.value[2 * i + 1]);
      s.opacity = sigmoid(road.opacity.value[i]);
      s.color.degree = cfg.sh_degree;
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < n_coeff; ++k)
          s.color.coeffs(c, k) = road.sh.value[(i * 3 + c) * n_coeff + k];
    }
    return cloud;
  };

  auto build_env = [&]() {
    GaussianCloud cloud;
    cloud.sh_degree = cfg.sh_degree;
    cloud.prims.resize(env.count);
    for (size_t i = 0; i < env.count; ++i) {
      Gaussian3D& g = cloud.prims[i];
      if (bounded) {
        AnchorOffset ao;
        ao.anchor = env.anchors[i];
        for (int k = 0; k < 3; ++k) ao.offset[k] = env.pos.value[3 * i + k];
        ao.bound = cfg.env_offset_bound;
        g.mean = realize_offset(ao);
      } else {
        for (int k = 0; k < 3; ++k) g.mean[k] = env.pos.value[3 * i + k];
      }
      for (int k = 0; k < 4; ++k) g.rotation[k] = env.rot.value[4 * i + k];
      for (int k = 0; k < 3; ++k) g.scale[k] = std::exp(env.scale.value[3 * i + k]);
      g.opacity = sigmoid(env.opacity.value[i]);
      g.color.degree = cfg.sh_degree;
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < n_coeff; ++k)
          g.color.coeffs(c, k) = env.sh.value[(i * 3 + c) * n_coeff + k];
    }
    return cloud;
  };

  // Band masks per view are pure functions of the mask.
  std::vector<SemanticMask> bands;
  bands.reserve(views.size());
  for (const auto& v : views) bands.push_back(banded_boundary(v.mask, cfg.band_width));

  namespace fs = std::filesystem;
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  auto snapshot = [&](const std::string& tag, const SurfelCloud& r,
                      const GaussianCloud& e) {
    if (cfg.out_dir.empty()) return;
    write_surfels_ply(cfg.out_dir + "/" + tag + "_road.ply", r);
    write_gaussians_ply(cfg.out_dir + "/" + tag + "_env.ply", e);
    std::ofstream manifest(cfg.out_dir + "/" + tag + ".json");
    manifest << "{\n  \"road\": \"" << tag << "_road.ply\",\n  \"environment\": \""
             << tag << "_env.ply\",\n  \"sdf\": \"" << cfg.sdf_path << "\"\n}\n";
  };

  TrainResult result;
  Rng view_rng = Rng(cfg.seed).stream(17);

  for (int it = 0; it < cfg.iterations; ++it) {
    const size_t view_idx = view_rng.uniform_index(views.size());
    const TrainView& view = views[view_idx];
    const SemanticMask& band = bands[view_idx];

    const SurfelCloud road_cloud = build_road();
    const GaussianCloud env_cloud = build_env();

    const LayerRender road_render = render_layer(road_cloud, view.camera);
    const LayerRender env_render = render_layer(env_cloud, view.camera);
    const CompositeResult comp =
        composite(road_render, env_render, cfg.composite_mode, cfg.s_sigma);

    // Boundary losses only act where both layers rendered real geometry;
    // pixels carrying the empty-depth sentinel would otherwise inject 1e6 m
    // differences into the consistency and TV terms.
    SemanticMask active_band = band;
    {
      auto touched = [&](int x, int y) {
        return road_render.depth.at(x, y) < kEmptyDepth / 2 &&
               env_render.depth.at(x, y) < kEmptyDepth / 2;
      };
      for (int y = 0; y < active_band.height; ++y)
        for (int x = 0; x < active_band.width; ++x) {
          if (!active_band.at(x, y)) continue;
          bool ok = touched(x, y);
          if (ok && x > 0) ok = touched(x - 1, y);
          if (ok && y + 1 < active_band.height) ok = touched(x, y + 1);
          if (!ok) active_band.at(x, y) = 0;
        }
    }

    LossParts parts;
    ImageD d_color_c;
    parts.gs = loss_gs(comp.color, view.image, cfg.weights.lambda_mix, &d_color_c);
    ImageD d_te, d_tr;
    parts.tran = loss_tran(env_render.transmittance, road_render.transmittance,
                           view.mask, &d_te, &d_tr);
    SurfelSdfGrads sdf_grads;
    parts.sdf = loss_sdf(road_cloud.prims, sdf, cfg.weights.lambda_d,
                         cfg.weights.lambda_n, &sdf_grads);
    ImageD d_de_cons, d_dr_cons;
    parts.cons = loss_cons(env_render.depth, road_render.depth, active_band,
                           &d_de_cons, &d_dr_cons, cfg.cons_mode,
                           cfg.cons_smooth_tau);
    ImageD d_dc;
    parts.tv = loss_tv(comp.depth, active_band, &d_dc);
    const double total = loss_total(parts, cfg.weights);

    result.loss_log.push_back(
        {it, parts.gs, parts.tran, parts.sdf, parts.cons, parts.tv, total});

    // Scale upstream gradients by the objective weights and push them back
    // through the composite into per-layer render gradients.
    for (double& g : d_dc.data) g *= cfg.weights.lambda_tv;
    const CompositeGrads cg = composite_backward(
        road_render, env_render, cfg.composite_mode, cfg.s_sigma, d_color_c, d_dc);

    LayerGradients road_up;
    road_up.d_color = cg.d_road_color;
    road_up.d_depth = cg.d_road_depth;
    for (size_t i = 0; i < road_up.d_depth.size(); ++i)
      road_up.d_depth.data[i] += cfg.weights.lambda_cons * d_dr_cons.data[i];
    road_up.d_transmittance = cg.d_road_trans;
    for (size_t i = 0; i < road_up.d_transmittance.size(); ++i)
      road_up.d_transmittance.data[i] += cfg.weights.lambda_tran * d_tr.data[i];

    LayerGradients env_up;
    env_up.d_color = cg.d_env_color;
    env_up.d_depth = cg.d_env_depth;
    for (size_t i = 0; i < env_up.d_depth.size(); ++i)
      env_up.d_depth.data[i] += cfg.weights.lambda_cons * d_de_cons.data[i];
    env_up.d_transmittance = cg.d_env_trans;
    for (size_t i = 0; i < env_up.d_transmittance.size(); ++i)
      env_up.d_transmittance.data[i] += cfg.weights.lambda_tran * d_te.data[i];

    const SurfelParamGrads road_grads =
        render_layer_backward(road_cloud, view.camera, road_up);
    const GaussianParamGrads env_grads =
        render_layer_backward(env_cloud, view.camera, env_up);

    // --- road parameter gradients
    std::vector<double> g_road_pos(road.count * 3), g_road_rot(road.count * 4),
        g_road_scale(road.count * 2), g_road_op(road.count),
        g_road_sh(road.count * 3 * n_coeff);
    for (size_t i = 0; i < road.count; ++i) {
      const Surfel2D& s = road_cloud.prims[i];
      const Vec3 g_center = road_grads.d_center[i] +
                            cfg.weights.lambda_sdf * sdf_grads.d_center[i];
      const Vec3 g_tu = road_grads.d_tangent_u[i] +
                        cfg.weights.lambda_sdf * sdf_grads.d_tangent_u[i];
      const Vec3 g_tv = road_grads.d_tangent_v[i] +
                        cfg.weights.lambda_sdf * sdf_grads.d_tangent_v[i];
      for (int k = 0; k < 3; ++k) g_road_pos[3 * i + k] = g_center[k];

      Vec4 q_raw;
      for (int k = 0; k < 4; ++k) q_raw[k] = road.rot.value[4 * i + k];
      Mat3 g_r = Mat3::Zero();
      g_r.col(0) = g_tu;
      g_r.col(1) = g_tv;
      const Vec4 q_unit = q_raw.normalized();
      Vec4 g_unit;
      for (int k = 0; k < 4; ++k)
        g_unit[k] = (g_r.array() * quat_rotation_derivative(q_unit, k).array()).sum();
      const Vec4 g_q = quat_normalize_backward(q_raw, g_unit);
      for (int k = 0; k < 4; ++k) g_road_rot[4 * i + k] = g_q[k];

      g_road_scale[2 * i] = road_grads.d_scale_u[i] * s.scale_u;
      g_road_scale[2 * i + 1] = road_grads.d_scale_v[i] * s.scale_v;
      g_road_op[i] = road_grads.d_opacity[i] * s.opacity * (1.0 - s.opacity);
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < n_coeff; ++k)
          g_road_sh[(i * 3 + c) * n_coeff + k] = road_grads.d_sh[i](c, k);
    }

    // --- environment parameter gradients
    std::vector<double> g_env_pos(env.count * 3), g_env_rot(env.count * 4),
        g_env_scale(env.count * 3), g_env_op(env.count),
        g_env_sh(env.count * 3 * n_coeff);
    for (size_t i = 0; i < env.count; ++i) {
      const Gaussian3D& g = env_cloud.prims[i];
      Vec3 g_pos = env_grads.d_mean[i];
      if (bounded) {
        AnchorOffset ao;
        ao.anchor = env.anchors[i];
        for (int k = 0; k < 3; ++k) ao.offset[k] = env.pos.value[3 * i + k];
        ao.bound = cfg.env_offset_bound;
        g_pos = realize_offset_backward(ao, g_pos);
      }
      for (int k = 0; k < 3; ++k) g_env_pos[3 * i + k] = g_pos[k];
      for (int k = 0; k < 4; ++k) g_env_rot[4 * i + k] = env_grads.d_rotation[i][k];
      for (int k = 0; k < 3; ++k)
        g_env_scale[3 * i + k] = env_grads.d_scale[i][k] * g.scale[k];
      g_env_op[i] = env_grads.d_opacity[i] * g.opacity * (1.0 - g.opacity);
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < n_coeff; ++k)
          g_env_sh[(i * 3 + c) * n_coeff + k] = env_grads.d_sh[i](c, k);
    }

    road.pos.adam(g_road_pos, cfg.lr_position);
    road.rot.adam(g_road_rot, cfg.lr_rotation);
    road.scale.adam(g_road_scale, cfg.lr_scale);
    road.opacity.adam(g_road_op, cfg.lr_opacity);
    road.sh.adam(g_road_sh, cfg.lr_color);
    env.pos.adam(g_env_pos, cfg.lr_position);
    env.rot.adam(g_env_rot, cfg.lr_rotation);
    env.scale.adam(g_env_scale, cfg.lr_scale);
    env.opacity.adam(g_env_op, cfg.lr_opacity);
    env.sh.adam(g_env_sh, cfg.lr_color);

    if (cfg.prune_opacity && cfg.prune_interval > 0 &&
        (it + 1) % cfg.prune_interval == 0) {
      auto prune = [&](LayerParams& layer) {
        std::vector<int> keep;
        for (size_t i = 0; i < layer.count; ++i)
          if (sigmoid(layer.opacity.value[i]) >= cfg.prune_threshold)
            keep.push_back(static_cast<int>(i));
        if (!keep.empty() && keep.size() < layer.count) layer.keep(keep);
      };
      prune(road);
      prune(env);
    }

    if (cfg.snapshot_interval > 0 && (it + 1) % cfg.snapshot_interval == 0 &&
        it + 1 < cfg.iterations) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "snap_%06d", it + 1);
      snapshot(tag, build_road(), build_env());
    }
  }

  result.road = build_road();
  result.environment = build_env();
  snapshot("final", result.road, result.environment);
  if (!cfg.out_dir.empty())
    write_loss_csv(cfg.out_dir + "/loss_log.csv", result.loss_log);
  return result;
}

}  // namespace dualsplat
