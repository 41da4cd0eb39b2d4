#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "dualsplat/core/rng.hpp"
#include "dualsplat/sdf/kdtree.hpp"

using namespace dualsplat;

namespace {

std::vector<Vec3> random_points(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i)
    pts.emplace_back(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
  return pts;
}

int brute_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  int best = 0;
  double best_d2 = (pts[0] - q).squaredNorm();
  for (size_t i = 1; i < pts.size(); ++i) {
    const double d2 = (pts[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("kdtree nearest matches brute force") {
  const auto pts = random_points(500, 1);
  const KdTree tree(pts);
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 q(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    double d2;
    const int got = tree.nearest(q, &d2);
    const int want = brute_nearest(pts, q);
    CHECK((pts[got] - q).squaredNorm() == doctest::Approx((pts[want] - q).squaredNorm()));
    CHECK(d2 == doctest::Approx((pts[want] - q).squaredNorm()));
  }
}

TEST_CASE("kdtree knn matches brute force ordering") {
  const auto pts = random_points(300, 3);
  const KdTree tree(pts);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 q(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    const int k = 1 + static_cast<int>(rng.uniform_index(20));
    const auto got = tree.knn(q, k);
    REQUIRE(got.size() == static_cast<size_t>(k));
    std::vector<std::pair<double, int>> all;
    for (size_t i = 0; i < pts.size(); ++i)
      all.emplace_back((pts[i] - q).squaredNorm(), static_cast<int>(i));
    std::sort(all.begin(), all.end());
    for (int i = 0; i < k; ++i) CHECK(got[i] == all[i].second);
  }
}

TEST_CASE("kdtree handles duplicates and tiny inputs") {
  std::vector<Vec3> pts = {{1, 1, 1}, {1, 1, 1}, {2, 2, 2}};
  const KdTree tree(pts);
  const auto nn = tree.knn(Vec3(1, 1, 1.1), 2);
  REQUIRE(nn.size() == 2);
  CHECK(((nn[0] == 0 && nn[1] == 1) || (nn[0] == 1 && nn[1] == 0)));
  CHECK(tree.nearest(Vec3(5, 5, 5)) == 2);
}
