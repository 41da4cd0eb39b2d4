#include "dualsplat/comp/composite.hpp"

#include <cmath>

#include "dualsplat/core/errors.hpp"

namespace dualsplat {

namespace {

void check_shapes(const LayerRender& road, const LayerRender& env) {
  if (!road.color.same_shape(env.color) || !road.depth.same_shape(env.depth) ||
      !road.transmittance.same_shape(env.transmittance))
    throw BadInput("", "composite: road/environment layer shapes differ");
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

ImageD delta_hard(const ImageD& depth_road, const ImageD& depth_env) {
  if (!depth_road.same_shape(depth_env))
    throw BadInput("", "delta_hard: depth shapes differ");
  ImageD out(depth_road.width, depth_road.height, 1);
  for (size_t i = 0; i < out.size(); ++i)
    out.data[i] = depth_road.data[i] > depth_env.data[i] ? 1.0 : 0.0;
  return out;
}

ImageD delta_smooth(const ImageD& depth_road, const ImageD& depth_env,
                    double s_sigma) {
  if (!depth_road.same_shape(depth_env))
    throw BadInput("", "delta_smooth: depth shapes differ");
  if (s_sigma <= 0) throw BadInput("", "delta_smooth: s_sigma must be positive");
  ImageD out(depth_road.width, depth_road.height, 1);
  for (size_t i = 0; i < out.size(); ++i)
    out.data[i] = sigmoid(s_sigma * (depth_road.data[i] - depth_env.data[i]));
  return out;
}

CompositeResult composite(const LayerRender& road, const LayerRender& env,
                          CompositeMode mode, double s_sigma) {
  check_shapes(road, env);
  const int w = road.color.width, h = road.color.height;
  CompositeResult out;
  out.color = ImageD(w, h, 3);
  out.depth = ImageD(w, h, 1);
  out.lambda_r = ImageD(w, h, 1);
  out.lambda_e = ImageD(w, h, 1);
  out.delta = mode == CompositeMode::Hard
                  ? delta_hard(road.depth, env.depth)
                  : delta_smooth(road.depth, env.depth, s_sigma);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double d = out.delta.at(x, y);
      const double lr = env.transmittance.at(x, y) * d + (1.0 - d);
      const double le = road.transmittance.at(x, y) * (1.0 - d) + d;
      out.lambda_r.at(x, y) = lr;
      out.lambda_e.at(x, y) = le;
      for (int c = 0; c < 3; ++c)
        out.color.at(x, y, c) =
            lr * road.color.at(x, y, c) + le * env.color.at(x, y, c);
      out.depth.at(x, y) = lr * road.depth.at(x, y) + le * env.depth.at(x, y);
    }
  }
  return out;
}

CompositeGrads composite_backward(const LayerRender& road, const LayerRender& env,
                                  CompositeMode mode, double s_sigma,
                                  const ImageD& d_color_c,
                                  const ImageD& d_depth_c) {
  check_shapes(road, env);
  const int w = road.color.width, h = road.color.height;
  if (d_color_c.size() && !d_color_c.same_shape(road.color))
    throw BadInput("", "composite_backward: upstream color gradient shape");
  const bool has_depth_grad = d_depth_c.size() > 0;

  CompositeGrads out;
  out.d_road_color = ImageD(w, h, 3);
  out.d_env_color = ImageD(w, h, 3);
  out.d_road_depth = ImageD(w, h, 1);
  out.d_env_depth = ImageD(w, h, 1);
  out.d_road_trans = ImageD(w, h, 1);
  out.d_env_trans = ImageD(w, h, 1);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double tr = road.transmittance.at(x, y);
      const double te = env.transmittance.at(x, y);
      const double dr = road.depth.at(x, y);
      const double de = env.depth.at(x, y);
      const double d = mode == CompositeMode::Hard
                           ? (dr > de ? 1.0 : 0.0)
                           : sigmoid(s_sigma * (dr - de));
      const double lr = te * d + (1.0 - d);
      const double le = tr * (1.0 - d) + d;

      double g_lr = 0.0, g_le = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double g = d_color_c.size() ? d_color_c.at(x, y, c) : 0.0;
        out.d_road_color.at(x, y, c) = g * lr;
        out.d_env_color.at(x, y, c) = g * le;
        g_lr += g * road.color.at(x, y, c);
        g_le += g * env.color.at(x, y, c);
      }
      const double g_dc = has_depth_grad ? d_depth_c.at(x, y) : 0.0;
      g_lr += g_dc * dr;
      g_le += g_dc * de;

      out.d_road_trans.at(x, y) = g_le * (1.0 - d);
      out.d_env_trans.at(x, y) = g_lr * d;
      out.d_road_depth.at(x, y) = g_dc * lr;
      out.d_env_depth.at(x, y) = g_dc * le;

      if (mode == CompositeMode::Smooth) {
        const double g_delta = g_lr * (te - 1.0) + g_le * (1.0 - tr);
        const double dsig = s_sigma * d * (1.0 - d);
        out.d_road_depth.at(x, y) += g_delta * dsig;
        out.d_env_depth.at(x, y) -= g_delta * dsig;
      }
    }
  }
  return out;
}

}  // namespace dualsplat
