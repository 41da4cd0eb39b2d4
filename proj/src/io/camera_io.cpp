#include "dualsplat/io/camera_io.hpp"

#include <fstream>
#include <json.hpp>

#include "dualsplat/core/errors.hpp"

namespace dualsplat {

using nlohmann::json;

void write_cameras_json(const std::string& path, const std::vector<Camera>& cams) {
  json arr = json::array();
  for (const Camera& c : cams) {
    json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    std::vector<double> m(16);
    for (int r = 0; r < 4; ++r)
      for (int k = 0; k < 4; ++k) m[4 * r + k] = c.world_to_cam(r, k);
    j["world_to_cam"] = m;
    j["near"] = c.near;
    j["far"] = c.far;
    arr.push_back(std::move(j));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BadInput(path, "cannot open for writing");
  out << arr.dump(2) << "\n";
  if (!out) throw BadInput(path, "write failed");
}

std::vector<Camera> read_cameras_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BadInput(path, "cannot open for reading");
  json arr;
  try {
    in >> arr;
  } catch (const json::exception& e) {
    throw BadInput(path, std::string("json parse error: ") + e.what());
  }
  if (!arr.is_array()) throw BadInput(path, "expected a json array of cameras");
  std::vector<Camera> cams;
  for (const auto& j : arr) {
    try {
      Camera c;
      c.fx = j.at("fx").get<double>();
      c.fy = j.at("fy").get<double>();
      c.cx = j.at("cx").get<double>();
      c.cy = j.at("cy").get<double>();
      c.width = j.at("width").get<int>();
      c.height = j.at("height").get<int>();
      c.near = j.at("near").get<double>();
      c.far = j.at("far").get<double>();
      const auto m = j.at("world_to_cam").get<std::vector<double>>();
      if (m.size() != 16) throw BadInput(path, "world_to_cam must have 16 entries");
      for (int r = 0; r < 4; ++r)
        for (int k = 0; k < 4; ++k) c.world_to_cam(r, k) = m[4 * r + k];
      if (c.fx <= 0 || c.fy <= 0 || c.width <= 0 || c.height <= 0 ||
          !(0 < c.near && c.near < c.far))
        throw BadInput(path, "camera intrinsics out of range");
      cams.push_back(c);
    } catch (const json::exception& e) {
      throw BadInput(path, std::string("bad camera entry: ") + e.what());
    }
  }
  return cams;
}

}  // namespace dualsplat
