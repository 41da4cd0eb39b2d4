#include "dualsplat/loss/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/parallel.hpp"
#include "dualsplat/loss/ssim.hpp"

namespace dualsplat {

double loss_gs(const ImageD& img, const ImageD& gt, double lambda, ImageD* d_img) {
  if (!img.same_shape(gt)) throw BadInput("", "loss_gs: image shapes differ");
  const double inv_count = 1.0 / static_cast<double>(img.size());
  double l1 = 0;
  for (size_t i = 0; i < img.size(); ++i) l1 += std::abs(img.data[i] - gt.data[i]);
  l1 *= inv_count;

  ImageD d_ssim_map;
  const double s = ssim(img, gt, d_img ? &d_ssim_map : nullptr);
  const double dssim = (1.0 - s) / 2.0;

  if (d_img) {
    *d_img = ImageD(img.width, img.height, img.channels, 0.0);
    for (size_t i = 0; i < img.size(); ++i) {
      const double diff = img.data[i] - gt.data[i];
      const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      d_img->data[i] = lambda * sgn * inv_count -
                       (1.0 - lambda) * 0.5 * d_ssim_map.data[i];
    }
  }
  return lambda * l1 + (1.0 - lambda) * dssim;
}

double loss_sdf(const std::vector<Surfel2D>& surfels, const SdfModel& sdf,
                double lambda_d, double lambda_n, SurfelSdfGrads* grads) {
  if (surfels.empty()) return 0.0;
  const size_t n = surfels.size();
  if (grads) {
    grads->d_center.assign(n, Vec3::Zero());
    grads->d_tangent_u.assign(n, Vec3::Zero());
    grads->d_tangent_v.assign(n, Vec3::Zero());
  }
  std::vector<double> terms(n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  parallel_for(static_cast<int>(n), [&](int i) {
    const Surfel2D& s = surfels[i];
    SdfQueryH q;
    if (grads) {
      q = query_with_hessian(sdf, s.center);
    } else {
      const SdfQuery q0 = query(sdf, s.center);
      q.value = q0.value;
      q.gradient = q0.gradient;
    }
    const Vec3 g = q.gradient;
    const Vec3 m = s.tangent_u.cross(s.tangent_v);
    const double g2 = g.squaredNorm();
    const double m2 = m.squaredNorm();

    double term = lambda_d * std::abs(q.value);
    Vec3 dl_dg = Vec3::Zero();
    Vec3 dl_dm = Vec3::Zero();
    if (g2 > 1e-18 && m2 > 1e-18) {
      const double dot = g.dot(m);
      const double denom = g2 * m2;
      term += lambda_n * (1.0 - dot * dot / denom);
      if (grads) {
        // d/dg and d/dm of -(g.m)^2 / (|g|^2 |m|^2)
        dl_dg = lambda_n * (-(2.0 * dot / denom) * m +
                            (2.0 * dot * dot / (denom * g2)) * g);
        dl_dm = lambda_n * (-(2.0 * dot / denom) * g +
                            (2.0 * dot * dot / (denom * m2)) * m);
      }
    }
    terms[i] = term;
    if (grads) {
      const double sgn = q.value > 0 ? 1.0 : (q.value < 0 ? -1.0 : 0.0);
      // d(x_tilde)/d(center) is the isotropic normalization scale.
      Vec3 d_center = lambda_d * sgn * sdf.scale * g;
      d_center += sdf.scale * (q.hessian.transpose() * dl_dg);
      grads->d_center[i] = d_center * inv_n;
      grads->d_tangent_u[i] = s.tangent_v.cross(dl_dm) * inv_n;
      grads->d_tangent_v[i] = dl_dm.cross(s.tangent_u) * inv_n;
    }
  });
  double total = 0;
  for (const double t : terms) total += t;
  return total * inv_n;
}

double loss_tran(const ImageD& trans_env, const ImageD& trans_road,
                 const SemanticMask& mask, ImageD* d_env, ImageD* d_road) {
  if (trans_env.width != mask.width || trans_env.height != mask.height ||
      !trans_env.same_shape(trans_road))
    throw BadInput("", "loss_tran: shapes differ");
  const double inv_count = 1.0 / (static_cast<double>(mask.width) * mask.height);
  if (d_env) *d_env = ImageD(mask.width, mask.height, 1, 0.0);
  if (d_road) *d_road = ImageD(mask.width, mask.height, 1, 0.0);
  double total = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const double m = mask.at(x, y) ? 1.0 : 0.0;
      const double de = trans_env.at(x, y) - m;
      const double dr = trans_road.at(x, y) - (1.0 - m);
      total += de * de + dr * dr;
      if (d_env) d_env->at(x, y) = 2.0 * de * inv_count;
      if (d_road) d_road->at(x, y) = 2.0 * dr * inv_count;
    }
  }
  return total * inv_count;
}

SemanticMask banded_boundary(const SemanticMask& mask, int width) {
  if (width < 1) throw BadInput("", "banded_boundary: width must be >= 1");
  SemanticMask transition(mask.width, mask.height, 0);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const uint8_t v = mask.at(x, y);
      const bool edge = (x > 0 && mask.at(x - 1, y) != v) ||
                        (x + 1 < mask.width && mask.at(x + 1, y) != v) ||
                        (y > 0 && mask.at(x, y - 1) != v) ||
                        (y + 1 < mask.height && mask.at(x, y + 1) != v);
      transition.at(x, y) = edge ? 1 : 0;
    }
  }
  SemanticMask band(mask.width, mask.height, 0);
  const int r = width - 1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      bool hit = false;
      for (int dy = -r; dy <= r && !hit; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= mask.height) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= mask.width) continue;
          if (transition.at(sx, sy)) {
            hit = true;
            break;
          }
        }
      }
      band.at(x, y) = hit ? 1 : 0;
    }
  }
  return band;
}

double loss_cons(const ImageD& depth_env, const ImageD& depth_road,
                 const SemanticMask& band, ImageD* d_env, ImageD* d_road,
                 ConsMode mode, double smooth_tau) {
  if (depth_env.width != band.width || depth_env.height != band.height ||
      !depth_env.same_shape(depth_road))
    throw BadInput("", "loss_cons: shapes differ");
  const int w = band.width, h = band.height;
  if (d_env) *d_env = ImageD(w, h, 1, 0.0);
  if (d_road) *d_road = ImageD(w, h, 1, 0.0);

  auto diff_at = [&](int x, int y) {
    return depth_env.at(x, y) - depth_road.at(x, y);
  };
  auto sgn_at = [&](int x, int y) {
    const double d = diff_at(x, y);
    return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
  };

  if (mode == ConsMode::Mean) {
    double sum = 0;
    size_t count = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (band.at(x, y)) {
          sum += std::abs(diff_at(x, y));
          ++count;
        }
    if (count == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(count);
    if (d_env && d_road)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (band.at(x, y)) {
            d_env->at(x, y) = sgn_at(x, y) * inv;
            d_road->at(x, y) = -sgn_at(x, y) * inv;
          }
    return sum * inv;
  }

  // Per-column minima over band rows; columns without band pixels drop out.
  struct ColMin {
    int col = -1;
    double value = 0;
    int argmin_row = -1;
  };
  std::vector<ColMin> cols;
  for (int x = 0; x < w; ++x) {
    ColMin cm;
    for (int y = 0; y < h; ++y) {
      if (!band.at(x, y)) continue;
      const double v = std::abs(diff_at(x, y));
      if (cm.col < 0 || v < cm.value) {
        cm.col = x;
        cm.value = v;
        cm.argmin_row = y;
      }
    }
    if (cm.col >= 0) cols.push_back(cm);
  }
  if (cols.empty()) return 0.0;

  if (smooth_tau > 0) {
    // Smooth max over logsumexp of smooth column minima.
    std::vector<double> soft_min(cols.size());
    std::vector<std::vector<std::pair<int, double>>> min_weights(cols.size());
    for (size_t k = 0; k < cols.size(); ++k) {
      const int x = cols[k].col;
      double lo = std::numeric_limits<double>::infinity();
      for (int y = 0; y < h; ++y)
        if (band.at(x, y)) lo = std::min(lo, std::abs(diff_at(x, y)));
      double z = 0;
      for (int y = 0; y < h; ++y)
        if (band.at(x, y)) {
          const double e = std::exp(-(std::abs(diff_at(x, y)) - lo) / smooth_tau);
          min_weights[k].emplace_back(y, e);
          z += e;
        }
      soft_min[k] = lo - smooth_tau * std::log(z / min_weights[k].size());
      for (auto& [y, e] : min_weights[k]) e /= z;
    }
    const double hi = *std::max_element(soft_min.begin(), soft_min.end());
    double z = 0;
    std::vector<double> max_weights(cols.size());
    for (size_t k = 0; k < cols.size(); ++k) {
      max_weights[k] = std::exp((soft_min[k] - hi) / smooth_tau);
      z += max_weights[k];
    }
    const double loss =
        hi + smooth_tau * std::log(z / static_cast<double>(cols.size()));
    if (d_env && d_road) {
      for (size_t k = 0; k < cols.size(); ++k) {
        const double wk = max_weights[k] / z;
        for (const auto& [y, wy] : min_weights[k]) {
          const double g = wk * wy * sgn_at(cols[k].col, y);
          d_env->at(cols[k].col, y) += g;
          d_road->at(cols[k].col, y) -= g;
        }
      }
    }
    return loss;
  }

  // Exact max over per-column minima; ties break to the lowest index.
  size_t best = 0;
  for (size_t k = 1; k < cols.size(); ++k)
    if (cols[k].value > cols[best].value) best = k;
  const ColMin& top = cols[best];
  if (d_env && d_road) {
    const double s = sgn_at(top.col, top.argmin_row);
    d_env->at(top.col, top.argmin_row) = s;
    d_road->at(top.col, top.argmin_row) = -s;
  }
  return top.value;
}

double loss_tv(const ImageD& depth, const SemanticMask& band, ImageD* d_depth) {
  if (depth.width != band.width || depth.height != band.height)
    throw BadInput("", "loss_tv: shapes differ");
  const int w = band.width, h = band.height;
  if (d_depth) *d_depth = ImageD(w, h, 1, 0.0);
  double total = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (!band.at(j, i)) continue;
      const double center = depth.at(j, i);
      const double dl = j > 0 ? depth.at(j - 1, i) - center : 0.0;
      const double dd = i + 1 < h ? depth.at(j, i + 1) - center : 0.0;
      const double s = dl * dl + dd * dd;
      if (s <= 0) continue;
      const double r = std::sqrt(s);
      total += r;
      if (d_depth) {
        if (j > 0) {
          d_depth->at(j - 1, i) += dl / r;
          d_depth->at(j, i) -= dl / r;
        }
        if (i + 1 < h) {
          d_depth->at(j, i + 1) += dd / r;
          d_depth->at(j, i) -= dd / r;
        }
      }
    }
  }
  return total;
}

double loss_total(const LossParts& parts, const LossWeights& weights) {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw Divergence(std::string("loss_total: non-finite ") + name + " term");
    return v;
  };
  return check(parts.gs, "gs") + weights.lambda_tran * check(parts.tran, "tran") +
         weights.lambda_sdf * check(parts.sdf, "sdf") +
         weights.lambda_cons * check(parts.cons, "cons") +
         weights.lambda_tv * check(parts.tv, "tv");
}

}  // namespace dualsplat
