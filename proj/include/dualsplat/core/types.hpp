#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace dualsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Depth written to pixels no splat ever touched. Large but finite so the
/// sigmoid depth blend downstream never sees a non-finite input.
inline constexpr double kEmptyDepth = 1e6;

/// Spherical-harmonics color, degrees 0..2, 3 channels. Rows are channels,
/// columns are the (degree+1)^2 <= 9 basis coefficients; unused columns stay 0.
struct ShColor {
  int degree = 0;
  Eigen::Matrix<double, 3, 9> coeffs = Eigen::Matrix<double, 3, 9>::Zero();

  static int coeff_count(int degree) { return (degree + 1) * (degree + 1); }
};

/// Rotation matrix of a unit quaternion stored as (w, x, y, z).
Mat3 quat_to_rotation(const Vec4& q);

/// d(rotation)/d(q_k) for a unit quaternion, k in {w,x,y,z}.
Mat3 quat_rotation_derivative(const Vec4& q, int k);

/// Pulls a gradient w.r.t. the normalized quaternion back to the raw one.
Vec4 quat_normalize_backward(const Vec4& q_raw, const Vec4& grad_unit);

/// Anisotropic 3D Gaussian primitive (ellipsoid).
struct Gaussian3D {
  Vec3 mean = Vec3::Zero();          // world meters
  Vec4 rotation{1, 0, 0, 0};         // unit quaternion (w, x, y, z)
  Vec3 scale{1, 1, 1};               // positive meters, diagonal of S
  double opacity = 0.5;              // in (0,1)
  ShColor color;
};

/// Full covariance R S S^T R^T of a Gaussian. Symmetric positive definite
/// whenever the primitive invariants hold.
Mat3 covariance_of(const Gaussian3D& g);

/// Flat elliptical disk primitive with an orthonormal tangent frame.
struct Surfel2D {
  Vec3 center = Vec3::Zero();
  Vec3 tangent_u{1, 0, 0};
  Vec3 tangent_v{0, 1, 0};
  double scale_u = 1.0;              // positive meters
  double scale_v = 1.0;
  double opacity = 0.5;              // in (0,1)
  ShColor color;
};

/// Primitive normal t_u x t_v, unit for valid surfels.
inline Vec3 surfel_normal(const Surfel2D& s) {
  return s.tangent_u.cross(s.tangent_v);
}

/// Pinhole camera with a rigid world-to-camera transform. Camera frame is
/// x right, y down, z forward; pixel (i,j) has its center at (i+0.5, j+0.5).
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat4 world_to_cam = Mat4::Identity();
  double near = 0.01, far = 1e4;

  Mat3 rotation() const { return world_to_cam.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_cam.topRightCorner<3, 1>(); }
  Vec3 to_camera(const Vec3& p) const { return rotation() * p + translation(); }
  Vec3 center() const { return -(rotation().transpose() * translation()); }

  // Projects a camera-space point; caller checks z > near.
  Vec2 project_cam(const Vec3& pc) const {
    return {fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy};
  }
};

/// Row-major interleaved image buffer, values are doubles.
struct ImageD {
  int width = 0, height = 0, channels = 0;
  std::vector<double> data;

  ImageD() = default;
  ImageD(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const ImageD& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// One layer's rasterization output: color I, depth D, transmittance T.
struct LayerRender {
  ImageD color;          // H x W x 3, values in [0,1]
  ImageD depth;          // H x W, meters; kEmptyDepth where untouched
  ImageD transmittance;  // H x W, in [0,1]
};

enum class SemanticLabel : uint8_t { NonRoad = 0, Road = 1, Sky = 2 };

struct SemanticPointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;               // [0,1]
  std::vector<SemanticLabel> labels;

  size_t size() const { return positions.size(); }
  void append(const Vec3& p, const Vec3& c, SemanticLabel l) {
    positions.push_back(p);
    colors.push_back(c);
    labels.push_back(l);
  }
};

/// Binary road mask paired with an image; nonzero = road.
struct SemanticMask {
  int width = 0, height = 0;
  std::vector<uint8_t> road;

  SemanticMask() = default;
  SemanticMask(int w, int h, uint8_t fill = 0)
      : width(w), height(h), road(static_cast<size_t>(w) * h, fill) {}

  uint8_t& at(int x, int y) { return road[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return road[static_cast<size_t>(y) * width + x]; }
};

/// Primitive sets carry their SH degree so serialization knows the f_rest count.
struct GaussianCloud {
  int sh_degree = 0;
  std::vector<Gaussian3D> prims;
};

struct SurfelCloud {
  int sh_degree = 0;
  std::vector<Surfel2D> prims;
};

}  // namespace dualsplat
