#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/rng.hpp"
#include "dualsplat/pcd/prep.hpp"
#include "test_util.hpp"

using namespace dualsplat;

namespace {

// Frame whose camera sits at `pos` looking down +z (world == camera axes).
Camera identity_camera(int size, const Vec3& pos) {
  Camera cam = testutil::test_camera(size, 20.0);
  cam.world_to_cam.topRightCorner<3, 1>() = -pos;
  return cam;
}

struct Frame {
  Camera cam;
  ImageD img;
  SemanticMask mask;
};

// Left half of the mask is road; image encodes the x pixel in the red channel.
Frame make_frame(const Vec3& pos, int size = 16) {
  Frame f;
  f.cam = identity_camera(size, pos);
  f.img = ImageD(size, size, 3, 0.25);
  f.mask = SemanticMask(size, size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      f.mask.at(x, y) = x < size / 2 ? 1 : 0;
      f.img.at(x, y, 0) = static_cast<double>(x) / size;
    }
  return f;
}

}  // namespace

TEST_CASE("label_points: unanimous vote, invisibility, majority") {
  const int size = 16;
  std::vector<Frame> frames = {make_frame({0, 0, 0}), make_frame({0.2, 0, 0}),
                               make_frame({-0.2, 0, 0})};
  // flip the third frame's mask so its vote disagrees everywhere
  for (auto& v : frames[2].mask.road) v = v ? 0 : 1;

  SemanticPointCloud pc;
  pc.append(Vec3(-1.2, 0, 5), Vec3::Zero(), SemanticLabel::NonRoad);  // left: road in 2/3
  pc.append(Vec3(1.2, 0, 5), Vec3::Zero(), SemanticLabel::NonRoad);   // right: road in 1/3
  pc.append(Vec3(0, 0, -5), Vec3::Zero(), SemanticLabel::NonRoad);    // behind all cameras

  std::vector<Camera> cams;
  std::vector<ImageD> imgs;
  std::vector<SemanticMask> masks;
  for (auto& f : frames) {
    cams.push_back(f.cam);
    imgs.push_back(f.img);
    masks.push_back(f.mask);
  }
  const auto labeled = label_points(pc, cams, imgs, masks);
  CHECK(labeled.labels[0] == SemanticLabel::Road);     // majority 2/3
  CHECK(labeled.labels[1] == SemanticLabel::NonRoad);  // minority 1/3
  CHECK(labeled.labels[2] == SemanticLabel::NonRoad);  // invisible
  CHECK(labeled.colors[2].isApprox(Vec3(0.5, 0.5, 0.5)));

  // unanimous: all frames agree for a clearly-left point
  SemanticPointCloud uni;
  uni.append(Vec3(-1.2, 0, 5), Vec3::Zero(), SemanticLabel::NonRoad);
  auto frames_same = frames;
  std::vector<SemanticMask> masks_same = {frames[0].mask, frames[1].mask,
                                          frames[0].mask};
  CHECK(label_points(uni, cams, imgs, masks_same).labels[0] == SemanticLabel::Road);
}

TEST_CASE("label_points: frame order invariance and mean color") {
  const int size = 16;
  std::vector<Frame> frames = {make_frame({0, 0, 0}), make_frame({0.3, 0, 0}),
                               make_frame({-0.15, 0, 0})};
  SemanticPointCloud pc;
  Rng rng(1);
  for (int i = 0; i < 40; ++i)
    pc.append(Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(3, 8)),
              Vec3::Zero(), SemanticLabel::NonRoad);

  std::vector<Camera> cams{frames[0].cam, frames[1].cam, frames[2].cam};
  std::vector<ImageD> imgs{frames[0].img, frames[1].img, frames[2].img};
  std::vector<SemanticMask> masks{frames[0].mask, frames[1].mask, frames[2].mask};
  const auto a = label_points(pc, cams, imgs, masks);
  const auto b = label_points(pc, {cams[2], cams[0], cams[1]},
                              {imgs[2], imgs[0], imgs[1]},
                              {masks[2], masks[0], masks[1]});
  for (size_t i = 0; i < pc.size(); ++i) {
    CHECK(a.labels[i] == b.labels[i]);
    CHECK(a.colors[i].isApprox(b.colors[i], 1e-12));
  }
}

TEST_CASE("label_points rejects mismatched resolutions") {
  Frame f = make_frame({0, 0, 0});
  SemanticMask small(8, 8, 0);
  SemanticPointCloud pc;
  pc.append(Vec3(0, 0, 5), Vec3::Zero(), SemanticLabel::NonRoad);
  CHECK_THROWS_AS(label_points(pc, {f.cam}, {f.img}, {small}), BadInput);
}

TEST_CASE("split partitions by label; sky goes to environment") {
  SemanticPointCloud pc;
  for (int i = 0; i < 10; ++i)
    pc.append(Vec3(i, 0, 0), Vec3::Zero(), SemanticLabel::Road);
  for (int i = 0; i < 5; ++i)
    pc.append(Vec3(i, 1, 0), Vec3::Zero(), SemanticLabel::NonRoad);
  for (int i = 0; i < 3; ++i)
    pc.append(Vec3(i, 2, 0), Vec3::Zero(), SemanticLabel::Sky);
  const auto parts = split(pc);
  CHECK(parts.road.size() == 10);
  CHECK(parts.environment.size() == 8);

  // split-then-concatenate is a permutation of the input
  std::multiset<std::array<double, 3>> in, out;
  for (const auto& p : pc.positions) in.insert({p.x(), p.y(), p.z()});
  for (const auto& p : parts.road.positions) out.insert({p.x(), p.y(), p.z()});
  for (const auto& p : parts.environment.positions) out.insert({p.x(), p.y(), p.z()});
  CHECK(in == out);

  SemanticPointCloud all_road;
  all_road.append(Vec3(0, 0, 0), Vec3::Zero(), SemanticLabel::Road);
  const auto only = split(all_road);
  CHECK(only.environment.size() == 0);

  SemanticPointCloud no_road;
  no_road.append(Vec3(0, 0, 0), Vec3::Zero(), SemanticLabel::NonRoad);
  CHECK_THROWS_AS(split(no_road), BadInput);
}

TEST_CASE("add_sky_sphere: hemisphere geometry and determinism") {
  Rng rng(9);
  SemanticPointCloud pc;
  for (int i = 0; i < 200; ++i)
    pc.append(Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)),
              Vec3::Zero(), SemanticLabel::Road);

  CHECK(add_sky_sphere(pc, 0, SkyColorMode::Constant, 1).size() == pc.size());

  const auto with_sky = add_sky_sphere(pc, 1000, SkyColorMode::Constant, 7);
  REQUIRE(with_sky.size() == pc.size() + 1000);

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pc.positions) centroid += p;
  centroid /= static_cast<double>(pc.size());
  const double radius = 1.5 * max_pairwise_extent(pc.positions);
  for (size_t i = pc.size(); i < with_sky.size(); ++i) {
    const Vec3 d = with_sky.positions[i] - centroid;
    CHECK(std::abs(d.norm() - radius) < 1e-6 * radius);
    CHECK(with_sky.positions[i].z() >= centroid.z() - 1e-9);
    CHECK(with_sky.labels[i] == SemanticLabel::Sky);
  }

  const auto again = add_sky_sphere(pc, 1000, SkyColorMode::Constant, 7);
  for (size_t i = 0; i < with_sky.size(); ++i)
    CHECK(with_sky.positions[i] == again.positions[i]);
}

TEST_CASE("max_pairwise_extent matches brute force on small clouds") {
  Rng rng(3);
  std::vector<Vec3> pts;
  for (int i = 0; i < 150; ++i)
    pts.emplace_back(rng.uniform(-2, 3), rng.uniform(1, 4), rng.uniform(-1, 1));
  double best = 0;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j)
      best = std::max(best, (pts[i] - pts[j]).norm());
  CHECK(max_pairwise_extent(pts) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("downsample: identity, subset, determinism") {
  const int n = 100;
  SemanticPointCloud pc;
  for (int i = 0; i < n; ++i)
    pc.append(Vec3(i, 0, 0), Vec3::Zero(), SemanticLabel::Road);

  CHECK(downsample(pc, 100, 1).size() == 100);
  CHECK(downsample(pc, 200, 1).size() == 100);

  const auto sub = downsample(pc, 10, 5);
  REQUIRE(sub.size() == 10);
  std::set<double> xs;
  for (const auto& p : sub.positions) {
    CHECK(p.x() >= 0);
    CHECK(p.x() < n);
    xs.insert(p.x());
  }
  CHECK(xs.size() == 10);  // distinct indices

  const auto sub2 = downsample(pc, 10, 5);
  for (size_t i = 0; i < sub.size(); ++i)
    CHECK(sub.positions[i] == sub2.positions[i]);
  CHECK_THROWS_AS(downsample(pc, 0, 1), BadInput);
}
