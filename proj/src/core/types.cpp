#include "dualsplat/core/types.hpp"

namespace dualsplat {

Mat3 quat_to_rotation(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 quat_rotation_derivative(const Vec4& q, int k) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 d;
  switch (k) {
    case 0:  // d/dw
      d << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
      break;
    case 1:  // d/dx
      d << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
      break;
    case 2:  // d/dy
      d << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
      break;
    default:  // d/dz
      d << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
      break;
  }
  return 2.0 * d;
}

Vec4 quat_normalize_backward(const Vec4& q_raw, const Vec4& grad_unit) {
  const double n = q_raw.norm();
  const Vec4 u = q_raw / n;
  return (grad_unit - u * u.dot(grad_unit)) / n;
}

Mat3 covariance_of(const Gaussian3D& g) {
  const Mat3 r = quat_to_rotation(g.rotation.normalized());
  const Mat3 rs = r * g.scale.asDiagonal();
  return rs * rs.transpose();
}

}  // namespace dualsplat
