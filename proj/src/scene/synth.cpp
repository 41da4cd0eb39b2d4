#include "dualsplat/scene/synth.hpp"

#include <algorithm>
#include <cmath>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/rng.hpp"

namespace dualsplat {

namespace {

struct Box {
  Vec3 lo, hi;
  Vec3 base_color;
};

struct SceneModel {
  // Road plane z = 0 over [x0,x1] x [y0,y1]; lane lines only inside the strip.
  double x0 = -2, x1 = 34, y0 = -8, y1 = 8;
  double strip_half = 8;  // lane texture half width
  std::vector<Box> boxes;
};

Vec3 road_color(double x, double y) {
  Vec3 c = Vec3::Constant(0.32 + 0.05 * std::sin(2.1 * x) * std::sin(1.7 * y));
  c += Vec3::Constant(0.03 * (((static_cast<long>(std::floor(x)) +
                                static_cast<long>(std::floor(y))) & 1)
                                  ? 1.0
                                  : 0.0));
  // dashed lane lines at y = +-1.75, solid center line
  const double xm = x - 3.0 * std::floor(x / 3.0);
  if (std::abs(std::abs(y) - 1.75) < 0.09 && xm < 1.9) c = Vec3(0.85, 0.85, 0.8);
  if (std::abs(y) < 0.06) c = Vec3(0.8, 0.7, 0.25);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

Vec3 box_color(const Box& box, const Vec3& p, int face_axis) {
  Vec3 c = box.base_color;
  // horizontal banding plus per-face shading
  const double band = p.z() - 0.8 * std::floor(p.z() / 0.8);
  if (band < 0.35) c *= 0.6;
  if (face_axis == 0) c *= 0.85;
  if (face_axis == 1) c *= 0.95;
  const double u = face_axis == 0 ? p.y() : p.x();
  c += Vec3::Constant(0.05 * std::sin(3.0 * u));
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

Vec3 sky_color(const Vec3& dir) {
  const double t = std::clamp(dir.z(), 0.0, 1.0);
  return (1 - t) * Vec3(0.8, 0.85, 0.95) + t * Vec3(0.4, 0.6, 0.9);
}

SceneModel make_model(const std::string& preset) {
  SceneModel m;
  if (preset == "plane") {
    return m;
  }
  if (preset == "boxes") {
    m.boxes.push_back({{6, -3.5, 0}, {8, -1.8, 1.6}, {0.75, 0.3, 0.25}});
    m.boxes.push_back({{10, 1.2, 0}, {12.5, 3.2, 2.4}, {0.25, 0.55, 0.75}});
    m.boxes.push_back({{15, -2.8, 0}, {16.5, -0.8, 1.1}, {0.35, 0.7, 0.3}});
    return m;
  }
  if (preset == "road-corridor") {
    m.strip_half = 4;
    m.y0 = -4;
    m.y1 = 4;
    // building rows hugging the strip on both sides
    for (int i = 0; i < 6; ++i) {
      const double x = -1 + 6.0 * i;
      const double h = 2.5 + 1.3 * ((i * 2654435761u) % 5);
      m.boxes.push_back({{x, 4.0, 0}, {x + 4.5, 7.5, h}, //
                         {0.45 + 0.08 * (i % 3), 0.4, 0.35 + 0.06 * (i % 4)}});
      const double h2 = 2.0 + 1.1 * ((i * 40503u) % 5);
      m.boxes.push_back({{x + 2, -7.5, 0}, {x + 6.5, -4.0, h2},
                         {0.35, 0.42 + 0.07 * (i % 3), 0.5 - 0.05 * (i % 2)}});
    }
    return m;
  }
  throw BadInput(preset, "unknown preset (plane | boxes | road-corridor)");
}

struct Hit {
  bool valid = false;
  double t = 0;
  bool is_road = false;
  Vec3 color = Vec3::Zero();
};

bool intersect_box(const Box& box, const Vec3& origin, const Vec3& dir, double& t,
                   int& face_axis) {
  double t0 = 1e-4, t1 = 1e30;
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-12) {
      if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return false;
      continue;
    }
    double ta = (box.lo[a] - origin[a]) / dir[a];
    double tb = (box.hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis = a;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (axis < 0) return false;
  t = t0;
  face_axis = axis;
  return true;
}

Hit trace(const SceneModel& m, const Vec3& origin, const Vec3& dir) {
  Hit best;
  if (dir.z() < -1e-12) {
    const double t = -origin.z() / dir.z();
    if (t > 1e-4) {
      const Vec3 p = origin + t * dir;
      if (p.x() >= m.x0 && p.x() <= m.x1 && p.y() >= m.y0 && p.y() <= m.y1) {
        best.valid = true;
        best.t = t;
        best.is_road = true;
        best.color = road_color(p.x(), p.y());
      }
    }
  }
  for (const Box& box : m.boxes) {
    double t;
    int face_axis;
    if (intersect_box(box, origin, dir, t, face_axis) &&
        (!best.valid || t < best.t)) {
      best.valid = true;
      best.t = t;
      best.is_road = false;
      best.color = box_color(box, origin + t * dir, face_axis);
    }
  }
  return best;
}

Camera make_camera(int width, int height, const Vec3& position, double pitch_down) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 0.9 * width;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.near = 0.05;
  cam.far = 1e4;
  const Vec3 forward(std::cos(pitch_down), 0, -std::sin(pitch_down));
  const Vec3 right = forward.cross(Vec3(0, 0, 1)).normalized();
  const Vec3 down = forward.cross(right);
  Mat3 c2w;
  c2w.col(0) = right;
  c2w.col(1) = down;
  c2w.col(2) = forward;
  cam.world_to_cam.setIdentity();
  cam.world_to_cam.topLeftCorner<3, 3>() = c2w.transpose();
  cam.world_to_cam.topRightCorner<3, 1>() = -(c2w.transpose() * position);
  return cam;
}

}  // namespace

void render_ground_truth(const std::string& preset, const Camera& cam,
                         ImageD* image, SemanticMask* mask) {
  const SceneModel model = make_model(preset);
  *image = ImageD(cam.width, cam.height, 3);
  *mask = SemanticMask(cam.width, cam.height, 0);
  const Mat3 rt = cam.rotation().transpose();
  const Vec3 origin = cam.center();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir_cam((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy,
                         1.0);
      const Vec3 dir = (rt * dir_cam).normalized();
      const Hit hit = trace(model, origin, dir);
      const Vec3 c = hit.valid ? hit.color : sky_color(dir);
      for (int ch = 0; ch < 3; ++ch) image->at(x, y, ch) = c[ch];
      mask->at(x, y) = hit.valid && hit.is_road ? 1 : 0;
    }
  }
}

SyntheticScene generate_scene(const std::string& preset, const SynthOptions& opt) {
  const SceneModel model = make_model(preset);
  SyntheticScene scene;
  Rng rng(opt.seed);

  // cameras along the road, slight downward pitch
  const double pitch = 0.18;
  for (int i = 0; i < opt.n_views; ++i) {
    const double x = 0.5 + 3.2 * i;
    const Vec3 pos(x, 0.15 * std::sin(0.7 * i), 1.6);
    scene.cameras.push_back(make_camera(opt.width, opt.height, pos, pitch));
    scene.heldout_cameras.push_back(make_camera(
        opt.width, opt.height, pos + Vec3(0, opt.lateral_shift, 0), pitch));
  }
  for (const Camera& cam : scene.cameras) {
    ImageD img;
    SemanticMask mask;
    render_ground_truth(preset, cam, &img, &mask);
    scene.images.push_back(std::move(img));
    scene.masks.push_back(std::move(mask));
  }
  for (const Camera& cam : scene.heldout_cameras) {
    ImageD img;
    SemanticMask mask;
    render_ground_truth(preset, cam, &img, &mask);
    scene.heldout_images.push_back(std::move(img));
  }

  // road points: jittered grid with z noise
  {
    const double area = (model.x1 - model.x0) * (model.y1 - model.y0);
    const double spacing = std::sqrt(area / static_cast<double>(opt.road_points));
    size_t idx = 0;
    for (double x = model.x0 + spacing / 2; x < model.x1; x += spacing) {
      for (double y = model.y0 + spacing / 2; y < model.y1; y += spacing) {
        Rng stream = rng.stream(idx++);
        const double jx = x + stream.uniform(-0.4, 0.4) * spacing;
        const double jy = y + stream.uniform(-0.4, 0.4) * spacing;
        const double jz = opt.road_noise_sigma * stream.normal();
        scene.cloud.append(Vec3(jx, jy, jz), road_color(jx, jy),
                           SemanticLabel::NonRoad);
      }
    }
  }

  // environment points on exposed box faces (top + the four sides)
  if (!model.boxes.empty()) {
    double face_area = 0;
    for (const Box& b : model.boxes) {
      const Vec3 d = b.hi - b.lo;
      face_area += d.x() * d.y() + 2 * d.x() * d.z() + 2 * d.y() * d.z();
    }
    const double spacing =
        std::sqrt(face_area / static_cast<double>(std::max<size_t>(opt.env_points, 1)));
    size_t idx = 1u << 20;
    auto emit_face = [&](const Box& box, int axis, double plane, int ua, int va,
                         double ulo, double uhi, double vlo, double vhi) {
      for (double u = ulo + spacing / 2; u < uhi; u += spacing) {
        for (double v = vlo + spacing / 2; v < vhi; v += spacing) {
          Rng stream = rng.stream(idx++);
          Vec3 p;
          p[axis] = plane + 0.005 * stream.normal();
          p[ua] = u + stream.uniform(-0.4, 0.4) * spacing;
          p[va] = v + stream.uniform(-0.4, 0.4) * spacing;
          scene.cloud.append(p, box_color(box, p, axis), SemanticLabel::NonRoad);
        }
      }
    };
    for (const Box& b : model.boxes) {
      emit_face(b, 2, b.hi.z(), 0, 1, b.lo.x(), b.hi.x(), b.lo.y(), b.hi.y());
      emit_face(b, 1, b.lo.y(), 0, 2, b.lo.x(), b.hi.x(), b.lo.z(), b.hi.z());
      emit_face(b, 1, b.hi.y(), 0, 2, b.lo.x(), b.hi.x(), b.lo.z(), b.hi.z());
      emit_face(b, 0, b.lo.x(), 1, 2, b.lo.y(), b.hi.y(), b.lo.z(), b.hi.z());
      emit_face(b, 0, b.hi.x(), 1, 2, b.lo.y(), b.hi.y(), b.lo.z(), b.hi.z());
    }
  }
  return scene;
}

}  // namespace dualsplat
