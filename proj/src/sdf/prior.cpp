#include "dualsplat/sdf/prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/parallel.hpp"
#include "dualsplat/core/rng.hpp"
#include "dualsplat/sdf/kdtree.hpp"

namespace dualsplat {

std::vector<std::optional<Vec3>> estimate_normals(const std::vector<Vec3>& road,
                                                  int k) {
  if (k < 3) throw BadInput("", "estimate_normals: k must be >= 3");
  if (road.size() <= static_cast<size_t>(k))
    throw BadInput("", "estimate_normals: need more points than neighbors");
  const KdTree tree(road);
  std::vector<std::optional<Vec3>> normals(road.size());
  parallel_for(static_cast<int>(road.size()), [&](int i) {
    const auto nn = tree.knn(road[i], k);
    Eigen::MatrixXd pts(static_cast<int>(nn.size()), 3);
    for (size_t r = 0; r < nn.size(); ++r) pts.row(r) = road[nn[r]].transpose();
    const Eigen::RowVector3d mean = pts.colwise().mean();
    pts.rowwise() -= mean;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(pts, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    // rank < 2 (collinear or coincident neighborhood): no reliable normal
    if (sv(0) <= 0 || sv(1) <= 1e-10 * sv(0)) return;
    Vec3 n = svd.matrixV().col(2);
    if (n.z() < 0) n = -n;
    normals[i] = n.normalized();
  });
  return normals;
}

std::vector<SdfSample> sample_offsurface(
    const std::vector<Vec3>& road, int per_point, double radius, uint64_t seed,
    const std::vector<std::optional<Vec3>>* normals) {
  if (radius <= 0) throw BadInput("", "sample_offsurface: radius must be positive");
  const KdTree tree(road);
  std::vector<SdfSample> out;
  out.reserve(road.size() * (1 + std::max(per_point, 0)));
  for (size_t i = 0; i < road.size(); ++i) {
    SdfSample s;
    s.position = road[i];
    s.distance = 0.0;
    s.is_surface = true;
    if (normals) s.normal = (*normals)[i];
    out.push_back(s);
  }
  const Rng base(seed);
  const size_t n_surface = road.size();
  out.resize(n_surface + road.size() * static_cast<size_t>(std::max(per_point, 0)));
  parallel_for(static_cast<int>(road.size()), [&](int i) {
    Rng rng = base.stream(static_cast<uint64_t>(i));
    for (int j = 0; j < per_point; ++j) {
      Vec3 p = road[i];
      for (int a = 0; a < 3; ++a) p[a] += rng.uniform(-radius, radius);
      const int nearest = tree.nearest(p);
      const Vec3& q = road[nearest];
      const double dz = p.z() - q.z();
      const double sgn = dz > 0 ? 1.0 : (dz < 0 ? -1.0 : 0.0);
      SdfSample s;
      s.position = p;
      s.distance = sgn * (p - q).norm();
      s.is_surface = false;
      out[n_surface + static_cast<size_t>(i) * per_point + j] = s;
    }
  });
  return out;
}

namespace {

struct Adam {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  explicit Adam(const Mlp& net) {
    for (int l = 0; l < net.layer_count(); ++l) {
      mw.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      vw.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      mb.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
      vb.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    }
  }

  void update(Mlp& net, const MlpGrads& g, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, step);
    const double c2 = 1.0 - std::pow(beta2, step);
    for (size_t l = 0; l < mw.size(); ++l) {
      mw[l] = beta1 * mw[l] + (1 - beta1) * g.d_weights[l];
      vw[l] = beta2 * vw[l] + (1 - beta2) * g.d_weights[l].cwiseProduct(g.d_weights[l]);
      net.weights[l] -= lr * (mw[l] / c1).cwiseQuotient(
                            ((vw[l] / c2).cwiseSqrt().array() + eps).matrix());
      mb[l] = beta1 * mb[l] + (1 - beta1) * g.d_biases[l];
      vb[l] = beta2 * vb[l] + (1 - beta2) * g.d_biases[l].cwiseProduct(g.d_biases[l]);
      net.biases[l] -= lr * (mb[l] / c1).cwiseQuotient(
                           ((vb[l] / c2).cwiseSqrt().array() + eps).matrix());
    }
  }
};

}  // namespace

SdfModel fit_sdf(const std::vector<SdfSample>& samples, const SdfFitConfig& cfg,
                 std::vector<double>* loss_log) {
  std::vector<int> surface_idx;
  for (size_t i = 0; i < samples.size(); ++i)
    if (samples[i].is_surface) surface_idx.push_back(static_cast<int>(i));
  if (surface_idx.empty() || surface_idx.size() == samples.size())
    throw BadInput("", "fit_sdf: need both surface and off-surface samples");

  SdfModel model;
  // Normalization from the surface cloud: centroid-centered, half the max
  // axis extent mapped to 1.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  Vec3 sum = Vec3::Zero();
  for (const int i : surface_idx) {
    const Vec3& p = samples[i].position;
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    sum += p;
  }
  model.centroid = sum / static_cast<double>(surface_idx.size());
  const double half_extent = 0.5 * (hi - lo).maxCoeff();
  model.scale = half_extent > 0 ? 1.0 / half_extent : 1.0;

  model.mlp = Mlp::make(3, cfg.hidden, 1, cfg.layers, cfg.seed ^ 0x5df15df1ULL);
  Adam adam(model.mlp);
  Rng rng(cfg.seed);

  const int n_all = static_cast<int>(samples.size());
  const int n_surf = static_cast<int>(surface_idx.size());
  const int bv = std::min(cfg.batch, n_all);
  const int bs = std::min(cfg.surface_batch, n_surf);

  Eigen::Matrix3Xd xv(3, bv), xs(3, bs);
  Eigen::RowVectorXd target(bv);

  for (int it = 0; it < cfg.iterations; ++it) {
    for (int c = 0; c < bv; ++c) {
      const auto& s = samples[rng.uniform_index(n_all)];
      xv.col(c) = model.normalize(s.position);
      target(c) = s.distance * model.scale;
    }
    std::vector<const SdfSample*> surf(bs);
    for (int c = 0; c < bs; ++c) {
      surf[c] = &samples[surface_idx[rng.uniform_index(n_surf)]];
      xs.col(c) = model.normalize(surf[c]->position);
    }

    // Value supervision over all samples.
    MlpBatch value_pass = mlp_forward(model.mlp, xv, false);
    const Eigen::RowVectorXd residual = value_pass.value - target;
    const double loss_value = residual.squaredNorm() / bv;
    const Eigen::RowVectorXd g_value = 2.0 * residual / bv;
    MlpGrads grads = mlp_backward(model.mlp, value_pass, g_value, {});

    // Normal alignment and eikonal terms over surface points.
    MlpBatch surf_pass = mlp_forward(model.mlp, xs, true);
    Eigen::Matrix3Xd g_grad = Eigen::Matrix3Xd::Zero(3, bs);
    double loss_normal = 0, loss_eik = 0;
    int n_with_normal = 0;
    for (int c = 0; c < bs; ++c)
      if (surf[c]->normal) ++n_with_normal;
    for (int c = 0; c < bs; ++c) {
      const Vec3 g = surf_pass.grad.col(c);
      const double gn = g.norm();
      if (gn > 1e-12) {
        loss_eik += (gn - 1.0) * (gn - 1.0);
        g_grad.col(c) += cfg.lambda_eik * (2.0 * (gn - 1.0) / bs) * (g / gn);
        if (surf[c]->normal) {
          const Vec3& n = *surf[c]->normal;
          const double dot = g.dot(n);
          const double g2 = gn * gn;
          loss_normal += 1.0 - dot * dot / g2;
          const Vec3 dldg = (-2.0 * dot / g2) * n + (2.0 * dot * dot / (g2 * g2)) * g;
          g_grad.col(c) += cfg.lambda_n * dldg / n_with_normal;
        }
      }
    }
    loss_eik /= bs;
    if (n_with_normal > 0) loss_normal /= n_with_normal;
    grads.accumulate(mlp_backward(model.mlp, surf_pass,
                                  Eigen::RowVectorXd::Zero(bs), g_grad));

    const double loss =
        loss_value + cfg.lambda_n * loss_normal + cfg.lambda_eik * loss_eik;
    if (!std::isfinite(loss))
      throw Divergence("fit_sdf: non-finite loss at iteration " + std::to_string(it));
    if (loss_log) loss_log->push_back(loss);

    const double lr =
        cfg.lr * std::pow(cfg.lr_decay,
                          cfg.iterations > 1
                              ? static_cast<double>(it) / (cfg.iterations - 1)
                              : 0.0);
    adam.update(model.mlp, grads, lr);
  }
  return model;
}

SdfModel fit_sdf(const std::vector<SdfSample>& samples, double lambda_n,
                 double lambda_eik, int iterations, uint64_t seed) {
  SdfFitConfig cfg;
  cfg.lambda_n = lambda_n;
  cfg.lambda_eik = lambda_eik;
  cfg.iterations = iterations;
  cfg.seed = seed;
  return fit_sdf(samples, cfg);
}

SdfQuery query(const SdfModel& model, const Vec3& x_world) {
  const MlpPoint p = mlp_point(model.mlp, model.normalize(x_world), false);
  return {p.value, p.grad};
}

SdfQueryH query_with_hessian(const SdfModel& model, const Vec3& x_world) {
  const MlpPoint p = mlp_point(model.mlp, model.normalize(x_world), true);
  return {p.value, p.grad, p.hess};
}

void save_sdf(const std::string& path, const SdfModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BadInput(path, "cannot open for writing");
  out.write("SDF1", 4);
  const uint32_t layers = static_cast<uint32_t>(model.mlp.layer_count());
  out.write(reinterpret_cast<const char*>(&layers), 4);
  for (uint32_t l = 0; l < layers; ++l) {
    const auto& w = model.mlp.weights[l];
    const uint32_t rows = static_cast<uint32_t>(w.rows());
    const uint32_t cols = static_cast<uint32_t>(w.cols());
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c) {
        const float f = static_cast<float>(w(r, c));
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    for (uint32_t r = 0; r < rows; ++r) {
      const float f = static_cast<float>(model.mlp.biases[l](r));
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  for (int a = 0; a < 3; ++a) {
    const double d = model.centroid[a];
    out.write(reinterpret_cast<const char*>(&d), 8);
  }
  out.write(reinterpret_cast<const char*>(&model.scale), 8);
  if (!out) throw BadInput(path, "write failed");
}

SdfModel load_sdf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BadInput(path, "cannot open for reading");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SDF1", 4) != 0)
    throw BadInput(path, "not an SDF1 checkpoint");
  uint32_t layers = 0;
  in.read(reinterpret_cast<char*>(&layers), 4);
  if (!in || layers == 0 || layers > 64) throw BadInput(path, "bad layer count");
  SdfModel model;
  for (uint32_t l = 0; l < layers; ++l) {
    uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in || rows == 0 || cols == 0 || rows > 65536 || cols > 65536)
      throw BadInput(path, "bad layer shape");
    Eigen::MatrixXd w(rows, cols);
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        w(r, c) = f;
      }
    Eigen::VectorXd b(rows);
    for (uint32_t r = 0; r < rows; ++r) {
      float f;
      in.read(reinterpret_cast<char*>(&f), 4);
      b(r) = f;
    }
    if (!in) throw BadInput(path, "truncated checkpoint");
    model.mlp.weights.push_back(std::move(w));
    model.mlp.biases.push_back(std::move(b));
  }
  for (int a = 0; a < 3; ++a) in.read(reinterpret_cast<char*>(&model.centroid[a]), 8);
  in.read(reinterpret_cast<char*>(&model.scale), 8);
  if (!in) throw BadInput(path, "truncated checkpoint");
  if (!(model.scale > 0)) throw BadInput(path, "normalization scale must be positive");
  if (model.mlp.input_dim() != 3 || model.mlp.output_dim() != 1)
    throw BadInput(path, "checkpoint arity must be 3 -> 1");
  return model;
}

SdfEval evaluate_sdf(const SdfModel& model, const std::vector<SdfSample>& samples) {
  SdfEval eval;
  size_t n_surface = 0;
  std::vector<double> mae(samples.size(), 0.0), eik(samples.size(), 0.0);
  std::vector<uint8_t> is_surf(samples.size(), 0);
  parallel_for(static_cast<int>(samples.size()), [&](int i) {
    const SdfQuery q = query(model, samples[i].position);
    mae[i] = std::abs(q.value - samples[i].distance * model.scale);
    if (samples[i].is_surface) {
      is_surf[i] = 1;
      eik[i] = std::abs(q.gradient.norm() - 1.0);
    }
  });
  for (size_t i = 0; i < samples.size(); ++i) {
    eval.value_mae += mae[i];
    if (is_surf[i]) {
      eval.eikonal_residual += eik[i];
      ++n_surface;
    }
  }
  if (!samples.empty()) eval.value_mae /= static_cast<double>(samples.size());
  if (n_surface) eval.eikonal_residual /= static_cast<double>(n_surface);
  return eval;
}

}  // namespace dualsplat
