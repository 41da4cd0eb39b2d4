#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dualsplat/core/parallel.hpp"
#include "dualsplat/core/rng.hpp"
#include "dualsplat/core/sh.hpp"
#include "dualsplat/raster/raster.hpp"
#include "test_util.hpp"

using namespace dualsplat;
using testutil::check_grad;
using testutil::test_camera;

namespace {

constexpr double kH = 1e-4;

LayerGradients random_upstream(const Camera& cam, uint64_t seed) {
  Rng rng(seed);
  LayerGradients up;
  up.d_color = ImageD(cam.width, cam.height, 3);
  up.d_depth = ImageD(cam.width, cam.height, 1);
  up.d_transmittance = ImageD(cam.width, cam.height, 1);
  for (double& v : up.d_color.data) v = rng.uniform(-1, 1);
  for (double& v : up.d_depth.data) v = rng.uniform(-1, 1);
  for (double& v : up.d_transmittance.data) v = rng.uniform(-1, 1);
  return up;
}

double objective(const LayerRender& r, const LayerGradients& up) {
  double total = 0;
  for (size_t i = 0; i < r.color.size(); ++i) total += r.color.data[i] * up.d_color.data[i];
  for (size_t i = 0; i < r.depth.size(); ++i) {
    // sentinel pixels are constants; keep them out of the objective
    if (r.depth.data[i] != kEmptyDepth) total += r.depth.data[i] * up.d_depth.data[i];
  }
  for (size_t i = 0; i < r.transmittance.size(); ++i)
    total += r.transmittance.data[i] * up.d_transmittance.data[i];
  return total;
}

GaussianCloud gauss_fixture(uint64_t seed) {
  Rng rng(seed);
  GaussianCloud cloud;
  cloud.sh_degree = 2;
  for (int i = 0; i < 5; ++i) {
    Gaussian3D g;
    const double z = rng.uniform(2.5, 5.5);
    g.mean = Vec3(rng.uniform(-0.25, 0.25) * z, rng.uniform(-0.25, 0.25) * z, z);
    g.rotation = testutil::random_unit_quat(rng);
    g.scale = Vec3(rng.uniform(0.25, 0.6), rng.uniform(0.25, 0.6),
                   rng.uniform(0.25, 0.6));
    g.opacity = rng.uniform(0.3, 0.7);
    g.color.degree = 2;
    for (int c = 0; c < 3; ++c) {
      g.color.coeffs(c, 0) = rng.uniform(-0.2, 0.2);
      for (int k = 1; k < 9; ++k) g.color.coeffs(c, k) = rng.uniform(-0.04, 0.04);
    }
    cloud.prims.push_back(g);
  }
  return cloud;
}

SurfelCloud surfel_fixture(uint64_t seed) {
  Rng rng(seed);
  SurfelCloud cloud;
  cloud.sh_degree = 2;
  for (int i = 0; i < 5; ++i) {
    Surfel2D s;
    const double z = rng.uniform(2.5, 5.5);
    s.center = Vec3(rng.uniform(-0.25, 0.25) * z, rng.uniform(-0.25, 0.25) * z, z);
    // tilted but not edge-on frames
    Vec3 n(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 1.0);
    n.normalize();
    const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    s.tangent_u = n.cross(helper).normalized();
    s.tangent_v = n.cross(s.tangent_u);
    s.scale_u = rng.uniform(0.25, 0.6);
    s.scale_v = rng.uniform(0.25, 0.6);
    s.opacity = rng.uniform(0.3, 0.7);
    s.color.degree = 2;
    for (int c = 0; c < 3; ++c) {
      s.color.coeffs(c, 0) = rng.uniform(-0.2, 0.2);
      for (int k = 1; k < 9; ++k) s.color.coeffs(c, k) = rng.uniform(-0.04, 0.04);
    }
    cloud.prims.push_back(s);
  }
  return cloud;
}

}  // namespace

TEST_CASE("gaussian rasterizer gradients match finite differences") {
  const Camera cam = test_camera(16, 20.0);
  GaussianCloud cloud = gauss_fixture(101);
  const LayerGradients up = random_upstream(cam, 202);
  const GaussianParamGrads grads = render_layer_backward(cloud, cam, up);

  auto fd = [&](double& param) {
    return testutil::central_diff(
        [&] { return objective(render_layer(cloud, cam), up); }, param, kH);
  };

  for (size_t i = 0; i < cloud.prims.size(); ++i) {
    Gaussian3D& g = cloud.prims[i];
    for (int k = 0; k < 3; ++k) check_grad(grads.d_mean[i][k], fd(g.mean[k]));
    for (int k = 0; k < 4; ++k) check_grad(grads.d_rotation[i][k], fd(g.rotation[k]));
    for (int k = 0; k < 3; ++k) check_grad(grads.d_scale[i][k], fd(g.scale[k]));
    check_grad(grads.d_opacity[i], fd(g.opacity));
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 9; ++k)
        check_grad(grads.d_sh[i](c, k), fd(g.color.coeffs(c, k)));
  }
}

TEST_CASE("surfel rasterizer gradients match finite differences") {
  const Camera cam = test_camera(16, 20.0);
  SurfelCloud cloud = surfel_fixture(303);
  const LayerGradients up = random_upstream(cam, 404);
  const SurfelParamGrads grads = render_layer_backward(cloud, cam, up);

  auto fd = [&](double& param) {
    return testutil::central_diff(
        [&] { return objective(render_layer(cloud, cam), up); }, param, kH);
  };

  for (size_t i = 0; i < cloud.prims.size(); ++i) {
    Surfel2D& s = cloud.prims[i];
    for (int k = 0; k < 3; ++k) check_grad(grads.d_center[i][k], fd(s.center[k]));
    for (int k = 0; k < 3; ++k)
      check_grad(grads.d_tangent_u[i][k], fd(s.tangent_u[k]));
    for (int k = 0; k < 3; ++k)
      check_grad(grads.d_tangent_v[i][k], fd(s.tangent_v[k]));
    check_grad(grads.d_scale_u[i], fd(s.scale_u));
    check_grad(grads.d_scale_v[i], fd(s.scale_v));
    check_grad(grads.d_opacity[i], fd(s.opacity));
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 9; ++k)
        check_grad(grads.d_sh[i](c, k), fd(s.color.coeffs(c, k)));
  }
}

TEST_CASE("zero upstream gradient yields zero parameter gradients") {
  const Camera cam = test_camera(16, 20.0);
  const GaussianCloud cloud = gauss_fixture(7);
  LayerGradients up;
  up.d_color = ImageD(cam.width, cam.height, 3, 0.0);
  up.d_depth = ImageD(cam.width, cam.height, 1, 0.0);
  up.d_transmittance = ImageD(cam.width, cam.height, 1, 0.0);
  const GaussianParamGrads grads = render_layer_backward(cloud, cam, up);
  for (size_t i = 0; i < cloud.prims.size(); ++i) {
    CHECK(grads.d_mean[i].norm() == 0.0);
    CHECK(grads.d_rotation[i].norm() == 0.0);
    CHECK(grads.d_scale[i].norm() == 0.0);
    CHECK(grads.d_opacity[i] == 0.0);
  }
}

TEST_CASE("single covering splat: d(color)/d(opacity) equals splat color") {
  // With G = 1 at the pixel and upstream dL/dI = 1 on one channel, the
  // closed-form derivative of the blend w.r.t. alpha is the splat color.
  Camera cam = test_camera(3, 100.0);
  GaussianCloud cloud;
  Gaussian3D g;
  g.mean = Vec3(0, 0, 2);
  g.scale = Vec3::Constant(10.0);
  g.opacity = 0.5;
  g.color = sh_from_rgb(Vec3(0.8, 0.3, 0.1));
  cloud.prims.push_back(g);

  LayerGradients up;
  up.d_color = ImageD(3, 3, 3, 0.0);
  up.d_depth = ImageD(3, 3, 1, 0.0);
  up.d_transmittance = ImageD(3, 3, 1, 0.0);
  up.d_color.at(1, 1, 0) = 1.0;
  const GaussianParamGrads grads = render_layer_backward(cloud, cam, up);
  CHECK(grads.d_opacity[0] == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("backward is bitwise reproducible across thread counts") {
  const Camera cam = test_camera(64, 60.0);
  const GaussianCloud cloud = gauss_fixture(911);
  const LayerGradients up = random_upstream(cam, 912);

  set_thread_count(1);
  const GaussianParamGrads a = render_layer_backward(cloud, cam, up);
  const LayerRender ra = render_layer(cloud, cam);
  set_thread_count(7);
  const GaussianParamGrads b = render_layer_backward(cloud, cam, up);
  const LayerRender rb = render_layer(cloud, cam);
  set_thread_count(0);

  CHECK(ra.color.data == rb.color.data);
  for (size_t i = 0; i < cloud.prims.size(); ++i) {
    CHECK(a.d_mean[i] == b.d_mean[i]);
    CHECK(a.d_rotation[i] == b.d_rotation[i]);
    CHECK(a.d_scale[i] == b.d_scale[i]);
    CHECK(a.d_opacity[i] == b.d_opacity[i]);
  }
}
