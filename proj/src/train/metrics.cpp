#include "dualsplat/train/metrics.hpp"

#include <cmath>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/loss/ssim.hpp"
#include "dualsplat/raster/raster.hpp"

namespace dualsplat {

double psnr(const ImageD& a, const ImageD& b) {
  if (!a.same_shape(b)) throw BadInput("", "psnr: image shapes differ");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

MetricsTable evaluate(const SurfelCloud& road, const GaussianCloud& environment,
                      const std::vector<Camera>& cameras,
                      const std::vector<ImageD>& ground_truth,
                      CompositeMode mode, double s_sigma) {
  if (cameras.size() != ground_truth.size())
    throw BadInput("", "evaluate: cameras and ground-truth images must align");
  MetricsTable table;
  for (size_t i = 0; i < cameras.size(); ++i) {
    const LayerRender rr = render_layer(road, cameras[i]);
    const LayerRender er = render_layer(environment, cameras[i]);
    const CompositeResult comp = composite(rr, er, mode, s_sigma);
    ViewMetrics m;
    m.psnr = psnr(comp.color, ground_truth[i]);
    m.ssim = ssim(comp.color, ground_truth[i]);
    table.per_view.push_back(m);
    table.mean.psnr += m.psnr;
    table.mean.ssim += m.ssim;
  }
  if (!table.per_view.empty()) {
    table.mean.psnr /= static_cast<double>(table.per_view.size());
    table.mean.ssim /= static_cast<double>(table.per_view.size());
  }
  return table;
}

}  // namespace dualsplat
