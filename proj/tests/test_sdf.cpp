#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/rng.hpp"
#include "dualsplat/sdf/prior.hpp"
#include "test_util.hpp"

using namespace dualsplat;
using testutil::check_grad;
using testutil::temp_path;

namespace {

/// f(x) = z, exactly: softplus(z) - softplus(-z) = z for the softplus pair.
SdfModel exact_plane_model() {
  SdfModel m;
  m.mlp.weights.push_back((Eigen::MatrixXd(2, 3) << 0, 0, 1, 0, 0, -1).finished());
  m.mlp.biases.push_back(Eigen::VectorXd::Zero(2));
  m.mlp.weights.push_back((Eigen::MatrixXd(1, 2) << 1, -1).finished());
  m.mlp.biases.push_back(Eigen::VectorXd::Zero(1));
  return m;
}

std::vector<Vec3> plane_grid(int n_side, double extent, double z = 0.0) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n_side; ++i)
    for (int j = 0; j < n_side; ++j)
      pts.emplace_back(-extent + 2 * extent * i / (n_side - 1),
                       -extent + 2 * extent * j / (n_side - 1), z);
  return pts;
}

std::vector<SdfSample> plane_samples(int n_surface, int per_point, double radius,
                                     uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> road;
  for (int i = 0; i < n_surface; ++i)
    road.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
  std::vector<std::optional<Vec3>> normals(road.size(), Vec3(0, 0, 1));
  return sample_offsurface(road, per_point, radius, seed + 1, &normals);
}

/// Plane fixture with exact analytic labels d = z (no point-set
/// discretization in the targets).
std::vector<SdfSample> plane_samples_exact(int n_surface, int per_point,
                                           double radius, uint64_t seed) {
  Rng rng(seed);
  std::vector<SdfSample> out;
  for (int i = 0; i < n_surface; ++i) {
    SdfSample s;
    s.position = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
    s.is_surface = true;
    s.normal = Vec3(0, 0, 1);
    out.push_back(s);
    for (int j = 0; j < per_point; ++j) {
      SdfSample o;
      o.position = s.position + Vec3(rng.uniform(-radius, radius),
                                     rng.uniform(-radius, radius),
                                     rng.uniform(-radius, radius));
      o.distance = o.position.z();
      out.push_back(o);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("estimate_normals: exact planes") {
  const auto flat = plane_grid(12, 1.0);
  for (const auto& n : estimate_normals(flat, 8)) {
    REQUIRE(n.has_value());
    CHECK((*n - Vec3(0, 0, 1)).norm() < 1e-6);
  }

  // vertical plane x = 0: z-orientation rule is vacuous, normal is +-x
  std::vector<Vec3> wall;
  for (const auto& p : plane_grid(12, 1.0)) wall.emplace_back(0.0, p.x(), p.y());
  for (const auto& n : estimate_normals(wall, 8)) {
    REQUIRE(n.has_value());
    CHECK(std::abs(std::abs(n->x()) - 1.0) < 1e-6);
    CHECK(n->z() >= 0.0);
  }
}

TEST_CASE("estimate_normals: noisy plane within 2 degrees") {
  Rng rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) {
    const double r = std::sqrt(rng.uniform());
    const double a = rng.uniform(0, 2 * M_PI);
    pts.emplace_back(r * std::cos(a), r * std::sin(a), rng.uniform(-0.01, 0.01));
  }
  const auto normals = estimate_normals(pts, 50);
  for (const auto& n : normals) {
    REQUIRE(n.has_value());
    const double angle = std::acos(std::clamp(n->dot(Vec3(0, 0, 1)), -1.0, 1.0));
    CHECK(angle < 2.0 * M_PI / 180.0);
  }
}

TEST_CASE("estimate_normals: collinear neighborhoods have no normal") {
  std::vector<Vec3> line;
  for (int i = 0; i < 30; ++i) line.emplace_back(0.1 * i, 0.2 * i, 0.05 * i);
  for (const auto& n : estimate_normals(line, 6)) CHECK(!n.has_value());
  CHECK_THROWS_AS(estimate_normals(line, 2), BadInput);
  CHECK_THROWS_AS(estimate_normals(line, 40), BadInput);
}

TEST_CASE("sample_offsurface: signed distances against brute force") {
  Rng rng(9);
  std::vector<Vec3> road;
  for (int i = 0; i < 120; ++i)
    road.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2),
                      0.1 * std::sin(rng.uniform(0, 6)));
  const auto samples = sample_offsurface(road, 4, 0.5, 77);
  REQUIRE(samples.size() == road.size() * 5);

  for (size_t i = 0; i < road.size(); ++i) {
    CHECK(samples[i].is_surface);
    CHECK(samples[i].distance == 0.0);
  }
  for (size_t i = road.size(); i < samples.size(); ++i) {
    const SdfSample& s = samples[i];
    CHECK(!s.is_surface);
    double best = 1e30;
    Vec3 nearest;
    for (const Vec3& q : road) {
      const double d = (s.position - q).norm();
      if (d < best) {
        best = d;
        nearest = q;
      }
    }
    const double dz = s.position.z() - nearest.z();
    const double expected = (dz > 0 ? 1.0 : (dz < 0 ? -1.0 : 0.0)) * best;
    CHECK(s.distance == doctest::Approx(expected).epsilon(1e-12));
    // off-surface samples stay inside the +-radius cube of some road point
    CHECK(std::abs(s.position.z() - road[(i - road.size()) / 4].z()) <= 0.5 + 1e-12);
  }

  const auto again = sample_offsurface(road, 4, 0.5, 77);
  for (size_t i = 0; i < samples.size(); ++i)
    CHECK(samples[i].position == again[i].position);
}

TEST_CASE("exact plane model: value, gradient, eikonal residual") {
  const SdfModel m = exact_plane_model();
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 x(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const SdfQuery q = query(m, x);
    CHECK(q.value == doctest::Approx(x.z()).epsilon(1e-12));
    CHECK((q.gradient - Vec3(0, 0, 1)).norm() < 1e-9);
    CHECK(std::abs(q.gradient.norm() - 1.0) < 1e-9);  // zero eikonal residual
  }
}

TEST_CASE("mlp: query gradient and hessian match finite differences") {
  const Mlp net = Mlp::make(3, 24, 1, 4, 31);
  SdfModel m;
  m.mlp = net;
  m.centroid = Vec3(0.3, -0.2, 0.1);
  m.scale = 0.7;
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const SdfQueryH q = query_with_hessian(m, x);
    CHECK(query(m, x).value == q.value);  // deterministic, same path
    for (int a = 0; a < 3; ++a) {
      // d(value)/d(x_tilde_a): probe in normalized coordinates
      const double h = 1e-4;
      Vec3 hi = x, lo = x;
      hi[a] += h / m.scale;
      lo[a] -= h / m.scale;
      const double fd = (query(m, hi).value - query(m, lo).value) / (2 * h);
      check_grad(q.gradient[a], fd, 1e-3, 1e-9);
      for (int b = 0; b < 3; ++b) {
        const double fd_h =
            (query(m, hi).gradient[b] - query(m, lo).gradient[b]) / (2 * h);
        check_grad(q.hessian(b, a), fd_h, 2e-3, 1e-7);
      }
    }
  }
}

TEST_CASE("mlp_backward: weight gradients match finite differences") {
  Mlp net = Mlp::make(3, 12, 1, 3, 77);
  Rng rng(13);
  Eigen::Matrix3Xd x(3, 6);
  for (int c = 0; c < 6; ++c)
    x.col(c) = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  Eigen::RowVectorXd g_value(6);
  Eigen::Matrix3Xd g_grad(3, 6);
  for (int c = 0; c < 6; ++c) {
    g_value(c) = rng.uniform(-1, 1);
    g_grad.col(c) = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  }
  auto objective = [&] {
    const MlpBatch b = mlp_forward(net, x, true);
    return (b.value.array() * g_value.array()).sum() +
           (b.grad.array() * g_grad.array()).sum();
  };
  const MlpBatch batch = mlp_forward(net, x, true);
  const MlpGrads grads = mlp_backward(net, batch, g_value, g_grad);
  for (int l = 0; l < net.layer_count(); ++l) {
    for (int trial = 0; trial < 8; ++trial) {
      const int r = static_cast<int>(rng.uniform_index(net.weights[l].rows()));
      const int c = static_cast<int>(rng.uniform_index(net.weights[l].cols()));
      check_grad(grads.d_weights[l](r, c),
                 testutil::central_diff(objective, net.weights[l](r, c), 1e-5));
    }
    const int r = static_cast<int>(rng.uniform_index(net.biases[l].size()));
    check_grad(grads.d_biases[l](r),
               testutil::central_diff(objective, net.biases[l](r), 1e-5));
  }
}

TEST_CASE("fit_sdf: recovers the plane and satisfies the eikonal property") {
  const auto samples = plane_samples_exact(1200, 3, 0.4, 5);
  SdfFitConfig cfg;
  cfg.hidden = 64;
  cfg.iterations = 1500;
  cfg.lr = 2e-3;
  cfg.batch = 256;
  cfg.surface_batch = 64;
  cfg.seed = 5;
  std::vector<double> log;
  const SdfModel model = fit_sdf(samples, cfg, &log);

  const auto heldout = plane_samples_exact(400, 3, 0.4, 99);
  const SdfEval eval = evaluate_sdf(model, heldout);
  CHECK(eval.value_mae < 0.01);
  CHECK(eval.eikonal_residual < 0.1);

  // sign agreement away from the surface
  Rng rng(6);
  int correct = 0, total = 0;
  for (int i = 0; i < 400; ++i) {
    const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.4, 0.4));
    const Vec3 xt = model.normalize(x);
    if (std::abs(xt.z()) <= 0.05) continue;
    ++total;
    if (query(model, x).value * xt.z() > 0) ++correct;
  }
  REQUIRE(total > 100);
  CHECK(static_cast<double>(correct) / total >= 0.95);

  // disjoint 500-iteration windows of the loss are non-increasing
  REQUIRE(log.size() >= 1000);
  double prev = std::numeric_limits<double>::infinity();
  for (size_t start = 0; start + 500 <= log.size(); start += 500) {
    double mean = 0;
    for (size_t i = start; i < start + 500; ++i) mean += log[i];
    mean /= 500;
    CHECK(mean <= prev * 1.0 + 1e-9);
    prev = mean;
  }

  // round trip: normalization inverse
  for (int i = 0; i < 20; ++i) {
    const Vec3 x(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    CHECK((model.denormalize(model.normalize(x)) - x).norm() < 1e-9);
  }
}

TEST_CASE("fit_sdf: needs both sample kinds and detects divergence") {
  std::vector<SdfSample> only_surface(10);
  for (auto& s : only_surface) s.is_surface = true;
  CHECK_THROWS_AS(fit_sdf(only_surface, 0.1, 0.01, 10, 1), BadInput);

  auto samples = plane_samples(50, 2, 0.3, 1);
  samples[60].distance = std::nan("");
  SdfFitConfig cfg;
  cfg.hidden = 8;
  cfg.iterations = 50;
  cfg.batch = samples.size();
  cfg.surface_batch = 16;
  CHECK_THROWS_AS(fit_sdf(samples, cfg), Divergence);
}

TEST_CASE("sdf checkpoint: bit-exact write-read-write") {
  const auto samples = plane_samples(200, 2, 0.3, 2);
  SdfFitConfig cfg;
  cfg.hidden = 16;
  cfg.iterations = 30;
  cfg.batch = 128;
  cfg.surface_batch = 32;
  const SdfModel model = fit_sdf(samples, cfg);

  const auto a = temp_path("model_a.sdf1");
  const auto b = temp_path("model_b.sdf1");
  save_sdf(a, model);
  save_sdf(b, load_sdf(a));
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {});
  const std::string sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  CHECK(!sa.empty());

  const SdfModel back = load_sdf(a);
  CHECK(back.centroid == model.centroid);
  CHECK(back.scale == model.scale);
  CHECK(back.mlp.layer_count() == model.mlp.layer_count());

  // queries identical between two loads
  const SdfModel back2 = load_sdf(a);
  const Vec3 x(0.3, -0.1, 0.2);
  CHECK(query(back, x).value == query(back2, x).value);

  CHECK_THROWS_AS(load_sdf(temp_path("missing.sdf1")), BadInput);
}
