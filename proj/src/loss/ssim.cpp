#include "dualsplat/loss/ssim.hpp"

#include <array>
#include <cmath>

#include "dualsplat/core/errors.hpp"

namespace dualsplat {

namespace {

constexpr int kRadius = 5;
constexpr int kWin = 2 * kRadius + 1;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin * kWin>& window() {
  static const auto w = [] {
    std::array<double, kWin * kWin> out{};
    double sum = 0;
    for (int dy = -kRadius; dy <= kRadius; ++dy)
      for (int dx = -kRadius; dx <= kRadius; ++dx) {
        const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        out[(dy + kRadius) * kWin + (dx + kRadius)] = v;
        sum += v;
      }
    for (double& v : out) v /= sum;
    return out;
  }();
  return w;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

double ssim(const ImageD& a, const ImageD& b, ImageD* d_a) {
  if (!a.same_shape(b)) throw BadInput("", "ssim: image shapes differ");
  const auto& w = window();
  const int width = a.width, height = a.height, channels = a.channels;
  if (d_a) *d_a = ImageD(width, height, channels, 0.0);

  const double inv_count = 1.0 / (static_cast<double>(width) * height * channels);
  double total = 0;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double mu_x = 0, mu_y = 0, xx = 0, yy = 0, xy = 0;
        for (int dy = -kRadius; dy <= kRadius; ++dy) {
          const int sy = reflect(y + dy, height);
          for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const int sx = reflect(x + dx, width);
            const double wt = w[(dy + kRadius) * kWin + (dx + kRadius)];
            const double va = a.at(sx, sy, c), vb = b.at(sx, sy, c);
            mu_x += wt * va;
            mu_y += wt * vb;
            xx += wt * va * va;
            yy += wt * vb * vb;
            xy += wt * va * vb;
          }
        }
        const double var_x = xx - mu_x * mu_x;
        const double var_y = yy - mu_y * mu_y;
        const double cov = xy - mu_x * mu_y;
        const double a1 = 2 * mu_x * mu_y + kC1;
        const double a2 = 2 * cov + kC2;
        const double b1 = mu_x * mu_x + mu_y * mu_y + kC1;
        const double b2 = var_x + var_y + kC2;
        const double s1 = a1 / b1, s2 = a2 / b2;
        total += s1 * s2;
        if (!d_a) continue;

        const double ds_dmu = s2 * (2 * mu_y * b1 - 2 * mu_x * a1) / (b1 * b1);
        const double ds_dvar = -s1 * a2 / (b2 * b2);
        const double ds_dcov = s1 * 2.0 / b2;
        for (int dy = -kRadius; dy <= kRadius; ++dy) {
          const int sy = reflect(y + dy, height);
          for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const int sx = reflect(x + dx, width);
            const double wt = w[(dy + kRadius) * kWin + (dx + kRadius)];
            const double va = a.at(sx, sy, c), vb = b.at(sx, sy, c);
            d_a->at(sx, sy, c) +=
                inv_count * wt *
                (ds_dmu + ds_dvar * 2 * (va - mu_x) + ds_dcov * (vb - mu_y));
          }
        }
      }
    }
  }
  return total * inv_count;
}

}  // namespace dualsplat
