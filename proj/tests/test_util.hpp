#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "dualsplat/core/rng.hpp"
#include "dualsplat/core/types.hpp"

namespace dualsplat::testutil {

/// Relative gradient comparison with an absolute floor for near-zero entries.
inline void check_grad(double analytic, double fd, double rel = 1e-3,
                       double abs_floor = 1e-7) {
  const double scale = std::max(std::abs(analytic), std::abs(fd));
  const double err = std::abs(analytic - fd);
  INFO("analytic=", analytic, " fd=", fd, " err=", err);
  CHECK(err <= rel * scale + abs_floor);
}

/// Central finite difference of a scalar functional.
template <typename Fn>
double central_diff(Fn&& fn, double& param, double h = 1e-4) {
  const double saved = param;
  param = saved + h;
  const double hi = fn();
  param = saved - h;
  const double lo = fn();
  param = saved;
  return (hi - lo) / (2 * h);
}

inline std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dualsplat_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

inline Vec4 random_unit_quat(Rng& rng) {
  Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized();
}

inline Camera test_camera(int size = 16, double focal = 20.0) {
  Camera cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = focal;
  cam.cx = cam.cy = size / 2.0;
  cam.near = 0.01;
  cam.far = 1e4;
  cam.world_to_cam.setIdentity();
  return cam;
}

}  // namespace dualsplat::testutil
