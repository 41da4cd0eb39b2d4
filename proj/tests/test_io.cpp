#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/rng.hpp"
#include "dualsplat/core/sh.hpp"
#include "dualsplat/io/camera_io.hpp"
#include "dualsplat/io/image_io.hpp"
#include "dualsplat/io/ply.hpp"
#include "test_util.hpp"

using namespace dualsplat;
using testutil::temp_path;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

SemanticPointCloud sample_cloud(int n, uint64_t seed) {
  Rng rng(seed);
  SemanticPointCloud pc;
  for (int i = 0; i < n; ++i)
    pc.append(Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1)),
              Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
              static_cast<SemanticLabel>(i % 3));
  return pc;
}

}  // namespace

TEST_CASE("pointcloud ply: binary and ascii round trip") {
  const auto pc = sample_cloud(57, 1);
  for (const bool binary : {true, false}) {
    const auto path = temp_path(binary ? "pc_bin.ply" : "pc_ascii.ply");
    write_pointcloud_ply(path, pc, binary);
    const auto back = read_pointcloud_ply(path);
    REQUIRE(back.size() == pc.size());
    for (size_t i = 0; i < pc.size(); ++i) {
      CHECK((back.positions[i] - pc.positions[i]).norm() < 1e-5);
      CHECK((back.colors[i] - pc.colors[i]).cwiseAbs().maxCoeff() < 1.0 / 255.0);
      CHECK(back.labels[i] == pc.labels[i]);
    }
    // second write of the readback is byte-identical
    const auto path2 = temp_path("pc_rt.ply");
    write_pointcloud_ply(path2, back, binary);
    const auto path3 = temp_path("pc_rt2.ply");
    write_pointcloud_ply(path3, read_pointcloud_ply(path2), binary);
    CHECK(slurp(path2) == slurp(path3));
  }
}

TEST_CASE("gaussian ply: write-read-write is byte identical") {
  Rng rng(2);
  GaussianCloud cloud;
  cloud.sh_degree = 2;
  for (int i = 0; i < 23; ++i) {
    Gaussian3D g;
    g.mean = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(1, 5));
    g.rotation = testutil::random_unit_quat(rng);
    g.scale = Vec3(rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2));
    g.opacity = rng.uniform(0.05, 0.95);
    g.color.degree = 2;
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 9; ++k) g.color.coeffs(c, k) = rng.uniform(-1, 1);
    cloud.prims.push_back(g);
  }
  const auto a = temp_path("gauss_a.ply");
  const auto b = temp_path("gauss_b.ply");
  write_gaussians_ply(a, cloud);
  write_gaussians_ply(b, read_gaussians_ply(a));
  CHECK(slurp(a) == slurp(b));

  const auto back = read_gaussians_ply(a);
  CHECK(back.sh_degree == 2);
  REQUIRE(back.prims.size() == cloud.prims.size());
  CHECK(std::abs(back.prims[3].opacity - cloud.prims[3].opacity) < 1e-6);
}

TEST_CASE("surfel ply: write-read-write is byte identical") {
  Rng rng(3);
  SurfelCloud cloud;
  cloud.sh_degree = 0;
  for (int i = 0; i < 17; ++i) {
    Surfel2D s;
    s.center = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(1, 5));
    Vec3 n(rng.normal(), rng.normal(), rng.normal());
    n.normalize();
    const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    s.tangent_u = n.cross(helper).normalized();
    s.tangent_v = n.cross(s.tangent_u);
    s.scale_u = rng.uniform(0.1, 1);
    s.scale_v = rng.uniform(0.1, 1);
    s.opacity = rng.uniform(0.05, 0.95);
    s.color = sh_from_rgb(Vec3(rng.uniform(), rng.uniform(), rng.uniform()));
    cloud.prims.push_back(s);
  }
  const auto a = temp_path("surf_a.ply");
  const auto b = temp_path("surf_b.ply");
  write_surfels_ply(a, cloud);
  write_surfels_ply(b, read_surfels_ply(a));
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("camera json: write-read-write is byte identical") {
  std::vector<Camera> cams;
  Rng rng(4);
  for (int i = 0; i < 3; ++i) {
    Camera c = testutil::test_camera(64, 57.3);
    c.world_to_cam(0, 3) = rng.uniform(-2, 2);
    c.world_to_cam(1, 3) = 0.1234567890123456;
    cams.push_back(c);
  }
  const auto a = temp_path("cams_a.json");
  const auto b = temp_path("cams_b.json");
  write_cameras_json(a, cams);
  write_cameras_json(b, read_cameras_json(a));
  CHECK(slurp(a) == slurp(b));

  const auto back = read_cameras_json(a);
  REQUIRE(back.size() == 3);
  CHECK(back[1].world_to_cam(1, 3) == 0.1234567890123456);
}

TEST_CASE("ppm round trip quantizes to 8 bits") {
  ImageD img(7, 5, 3);
  Rng rng(5);
  for (double& v : img.data) v = rng.uniform();
  const auto path = temp_path("img.ppm");
  write_ppm(path, img);
  const ImageD back = read_ppm(path);
  REQUIRE(back.same_shape(img));
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("pfm round trip is float exact") {
  ImageD img(6, 4, 1);
  Rng rng(6);
  for (double& v : img.data) v = static_cast<float>(rng.uniform(-10, 10));
  const auto path = temp_path("img.pfm");
  write_pfm(path, img);
  const ImageD back = read_pfm(path);
  REQUIRE(back.same_shape(img));
  for (size_t i = 0; i < img.size(); ++i) CHECK(back.data[i] == img.data[i]);
}

TEST_CASE("masks: pgm and png round trip") {
  SemanticMask m(9, 6);
  Rng rng(7);
  for (auto& v : m.road) v = rng.uniform() < 0.5 ? 0 : 1;
  const auto pgm = temp_path("mask.pgm");
  write_pgm_mask(pgm, m);
  const SemanticMask back = read_mask(pgm);
  REQUIRE(back.width == m.width);
  CHECK(back.road == m.road);

  const auto png = temp_path("mask.png");
  write_png_mask(png, m);
  const SemanticMask back_png = read_mask(png);
  REQUIRE(back_png.width == m.width);
  CHECK(back_png.road == m.road);
}

TEST_CASE("io errors carry paths and reject junk") {
  CHECK_THROWS_AS(read_pointcloud_ply(temp_path("missing.ply")), BadInput);
  const auto junk = temp_path("junk.ply");
  std::ofstream(junk) << "not a ply\n";
  CHECK_THROWS_AS(read_pointcloud_ply(junk), BadInput);
  CHECK_THROWS_AS(read_mask(junk), BadInput);
}
