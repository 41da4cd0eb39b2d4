#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "dualsplat/core/rng.hpp"
#include "dualsplat/core/sh.hpp"
#include "dualsplat/core/types.hpp"
#include "test_util.hpp"

using namespace dualsplat;
using testutil::check_grad;
using testutil::random_unit_quat;

TEST_CASE("covariance: identity rotation unit scale") {
  Gaussian3D g;
  CHECK(covariance_of(g).isApprox(Mat3::Identity(), 1e-12));
}

TEST_CASE("covariance: axis-aligned scaling") {
  Gaussian3D g;
  g.scale = Vec3(2, 1, 1);
  CHECK(covariance_of(g).isApprox(Vec3(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-12));
}

TEST_CASE("covariance: 90 degree z-rotation swaps axes") {
  Gaussian3D g;
  const double s = std::sin(M_PI / 4), c = std::cos(M_PI / 4);
  g.rotation = Vec4(c, 0, 0, s);  // 90deg about z
  g.scale = Vec3(2, 1, 1);
  // Hand multiplication of R S S^T R^T with R = rotz(90):
  // R diag(4,1,1) R^T = diag(1,4,1).
  CHECK(covariance_of(g).isApprox(Vec3(1, 4, 1).asDiagonal().toDenseMatrix(), 1e-9));
}

TEST_CASE("covariance invariants: sign flip and eigenvalues") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Gaussian3D g;
    g.rotation = random_unit_quat(rng);
    g.scale = Vec3(rng.uniform(0.2, 3), rng.uniform(0.2, 3), rng.uniform(0.2, 3));
    const Mat3 cov = covariance_of(g);
    Gaussian3D flipped = g;
    flipped.rotation = -g.rotation;
    CHECK(cov.isApprox(covariance_of(flipped), 1e-12));

    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 expected = g.scale.cwiseProduct(g.scale);
    std::sort(expected.data(), expected.data() + 3);
    CHECK((eig.eigenvalues() - expected).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("surfel normal: cross product and orthogonality") {
  Surfel2D s;
  CHECK(surfel_normal(s).isApprox(Vec3(0, 0, 1), 1e-12));
  s.tangent_u = Vec3(0, 1, 0);
  s.tangent_v = Vec3(1, 0, 0);
  CHECK(surfel_normal(s).isApprox(Vec3(0, 0, -1), 1e-12));

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 a(rng.normal(), rng.normal(), rng.normal());
    a.normalize();
    Vec3 helper(rng.normal(), rng.normal(), rng.normal());
    Vec3 b = (helper - helper.dot(a) * a).normalized();
    Surfel2D t;
    t.tangent_u = a;
    t.tangent_v = b;
    const Vec3 n = surfel_normal(t);
    CHECK(n.isApprox(a.cross(b), 1e-12));
    CHECK(std::abs(n.dot(a)) < 1e-9);
    CHECK(std::abs(n.dot(b)) < 1e-9);
    CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("quaternion rotation derivative matches finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec4 q = random_unit_quat(rng);
    for (int k = 0; k < 4; ++k) {
      const Mat3 d = quat_rotation_derivative(q, k);
      const double h = 1e-6;
      Vec4 hi = q, lo = q;
      hi[k] += h;
      lo[k] -= h;
      // compare against the unnormalized quadratic form derivative
      const Mat3 fd = (quat_to_rotation(hi) - quat_to_rotation(lo)) / (2 * h);
      CHECK((d - fd).cwiseAbs().maxCoeff() < 1e-5);
    }
  }
}

TEST_CASE("sh: degree 0 is view independent, gradients match fd") {
  Rng rng(5);
  ShColor sh;
  sh.degree = 2;
  for (int c = 0; c < 3; ++c) {
    sh.coeffs(c, 0) = rng.uniform(-0.3, 0.3);
    for (int k = 1; k < 9; ++k) sh.coeffs(c, k) = rng.uniform(-0.05, 0.05);
  }
  Vec3 dir(rng.normal(), rng.normal(), rng.normal());
  dir.normalize();
  bool clamp[3];
  const Vec3 rgb = eval_sh(sh, dir, clamp);
  for (int c = 0; c < 3; ++c) {
    CHECK(!clamp[c]);
    CHECK(rgb[c] >= 0.0);
    CHECK(rgb[c] <= 1.0);
  }

  const Vec3 up(rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1));
  const ShGrads grads = eval_sh_backward(sh, dir, up, clamp);
  // coefficient gradients
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 9; ++k) {
      const double fd = testutil::central_diff(
          [&] {
            bool m[3];
            return eval_sh(sh, dir, m).dot(up);
          },
          sh.coeffs(c, k), 1e-5);
      check_grad(grads.d_coeffs(c, k), fd, 1e-5, 1e-9);
    }
  // direction gradients (unnormalized perturbation is fine: eval_sh treats
  // dir as a free argument)
  for (int a = 0; a < 3; ++a) {
    const double fd = testutil::central_diff(
        [&] {
          bool m[3];
          return eval_sh(sh, dir, m).dot(up);
        },
        dir[a], 1e-5);
    check_grad(grads.d_dir[a], fd, 1e-5, 1e-9);
  }
}

TEST_CASE("rng: derived streams are deterministic and independent of order") {
  Rng a(42), b(42);
  std::vector<double> first, second;
  for (int i = 0; i < 10; ++i) first.push_back(a.stream(i).uniform());
  for (int i = 9; i >= 0; --i) second.push_back(b.stream(i).uniform());
  for (int i = 0; i < 10; ++i) CHECK(first[i] == second[9 - i]);
}

TEST_CASE("image buffer indexing") {
  ImageD img(4, 3, 2, 0.0);
  img.at(2, 1, 1) = 5.0;
  CHECK(img.data[(1 * 4 + 2) * 2 + 1] == 5.0);
  CHECK(img.same_shape(ImageD(4, 3, 2)));
  CHECK(!img.same_shape(ImageD(3, 4, 2)));
}
