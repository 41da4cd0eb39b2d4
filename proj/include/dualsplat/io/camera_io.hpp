#pragma once

#include <string>
#include <vector>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

/// Cameras serialize to a JSON array of objects with fx, fy, cx, cy, width,
/// height, a 16-entry row-major world_to_cam, near and far.
void write_cameras_json(const std::string& path, const std::vector<Camera>& cams);
std::vector<Camera> read_cameras_json(const std::string& path);

}  // namespace dualsplat
