#pragma once

#include "dualsplat/core/types.hpp"

namespace dualsplat {

// Real spherical harmonics bases up to degree 2, constants as used by the
// community splatting formats (channel value = 0.5 + sum_k c_k * Y_k(dir)).

inline constexpr double kSh0 = 0.28209479177387814;

/// Evaluates the SH basis at a unit direction. `basis` receives
/// (degree+1)^2 entries.
void sh_basis(int degree, const Vec3& dir, double* basis);

/// d(basis_k)/d(dir) rows for all k; `dbasis` is (degree+1)^2 x 3 row-major.
void sh_basis_gradient(int degree, const Vec3& dir, double* dbasis);

/// RGB at a unit view direction, clamped to [0,1]. `clamp_mask` (3 entries,
/// optional) records channels whose clamp was active (zero gradient).
Vec3 eval_sh(const ShColor& sh, const Vec3& dir, bool clamp_mask[3] = nullptr);

struct ShGrads {
  Eigen::Matrix<double, 3, 9> d_coeffs = Eigen::Matrix<double, 3, 9>::Zero();
  Vec3 d_dir = Vec3::Zero();
};

/// Backward of eval_sh for an upstream RGB gradient. Channels with an active
/// clamp contribute nothing.
ShGrads eval_sh_backward(const ShColor& sh, const Vec3& dir,
                         const Vec3& grad_rgb, const bool clamp_mask[3]);

/// Degree-0 coefficients reproducing `rgb` at every direction.
inline ShColor sh_from_rgb(const Vec3& rgb, int degree = 0) {
  ShColor c;
  c.degree = degree;
  c.coeffs.col(0) = (rgb - Vec3::Constant(0.5)) / kSh0;
  return c;
}

}  // namespace dualsplat
