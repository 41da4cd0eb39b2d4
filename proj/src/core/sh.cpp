#include "dualsplat/core/sh.hpp"

namespace dualsplat {

namespace {
constexpr double kSh1 = 0.4886025119029199;
constexpr double kSh2[5] = {1.0925484305920792, -1.0925484305920792,
                            0.31539156525252005, -1.0925484305920792,
                            0.5462742152960396};
}  // namespace

void sh_basis(int degree, const Vec3& dir, double* basis) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  basis[0] = kSh0;
  if (degree < 1) return;
  basis[1] = -kSh1 * y;
  basis[2] = kSh1 * z;
  basis[3] = -kSh1 * x;
  if (degree < 2) return;
  basis[4] = kSh2[0] * x * y;
  basis[5] = kSh2[1] * y * z;
  basis[6] = kSh2[2] * (2 * z * z - x * x - y * y);
  basis[7] = kSh2[3] * x * z;
  basis[8] = kSh2[4] * (x * x - y * y);
}

void sh_basis_gradient(int degree, const Vec3& dir, double* dbasis) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  auto row = [&](int k, double gx, double gy, double gz) {
    dbasis[3 * k + 0] = gx;
    dbasis[3 * k + 1] = gy;
    dbasis[3 * k + 2] = gz;
  };
  row(0, 0, 0, 0);
  if (degree < 1) return;
  row(1, 0, -kSh1, 0);
  row(2, 0, 0, kSh1);
  row(3, -kSh1, 0, 0);
  if (degree < 2) return;
  row(4, kSh2[0] * y, kSh2[0] * x, 0);
  row(5, 0, kSh2[1] * z, kSh2[1] * y);
  row(6, -2 * kSh2[2] * x, -2 * kSh2[2] * y, 4 * kSh2[2] * z);
  row(7, kSh2[3] * z, 0, kSh2[3] * x);
  row(8, 2 * kSh2[4] * x, -2 * kSh2[4] * y, 0);
}

Vec3 eval_sh(const ShColor& sh, const Vec3& dir, bool clamp_mask[3]) {
  double basis[9];
  const int n = ShColor::coeff_count(sh.degree);
  sh_basis(sh.degree, dir, basis);
  Vec3 rgb = Vec3::Constant(0.5);
  for (int k = 0; k < n; ++k) rgb += sh.coeffs.col(k) * basis[k];
  for (int c = 0; c < 3; ++c) {
    const bool clamped = rgb[c] < 0.0 || rgb[c] > 1.0;
    if (clamp_mask) clamp_mask[c] = clamped;
    rgb[c] = std::clamp(rgb[c], 0.0, 1.0);
  }
  return rgb;
}

ShGrads eval_sh_backward(const ShColor& sh, const Vec3& dir,
                         const Vec3& grad_rgb, const bool clamp_mask[3]) {
  ShGrads out;
  double basis[9];
  double dbasis[27];
  const int n = ShColor::coeff_count(sh.degree);
  sh_basis(sh.degree, dir, basis);
  sh_basis_gradient(sh.degree, dir, dbasis);
  for (int c = 0; c < 3; ++c) {
    if (clamp_mask && clamp_mask[c]) continue;
    const double g = grad_rgb[c];
    for (int k = 0; k < n; ++k) {
      out.d_coeffs(c, k) = g * basis[k];
      out.d_dir += g * sh.coeffs(c, k) *
                   Vec3(dbasis[3 * k], dbasis[3 * k + 1], dbasis[3 * k + 2]);
    }
  }
  return out;
}

}  // namespace dualsplat
