#include "dualsplat/sdf/mlp.hpp"

#include <cmath>

#include "dualsplat/core/rng.hpp"

namespace dualsplat {

double softplus(double x) {
  const double bx = Mlp::kBeta * x;
  // max(x,0) + log1p(exp(-|bx|))/beta, stable at both tails
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(bx))) / Mlp::kBeta;
}

double softplus_d(double x) {
  const double bx = Mlp::kBeta * x;
  if (bx >= 0) return 1.0 / (1.0 + std::exp(-bx));
  const double e = std::exp(bx);
  return e / (1.0 + e);
}

double softplus_dd(double x) {
  const double s = softplus_d(x);
  return Mlp::kBeta * s * (1.0 - s);
}

Mlp Mlp::make(int input, int hidden, int output, int layers, uint64_t seed) {
  Mlp net;
  Rng rng(seed);
  for (int l = 0; l < layers; ++l) {
    const int in = l == 0 ? input : hidden;
    const int out = l == layers - 1 ? output : hidden;
    // He-style fan-in bound: the sharp softplus behaves like a ReLU, and
    // fan-avg scaling starves deep narrow stacks.
    const double limit = std::sqrt(6.0 / in);
    Eigen::MatrixXd w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-limit, limit);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  return net;
}

MlpBatch mlp_forward(const Mlp& net, const Eigen::Matrix3Xd& x,
                     bool with_input_grad) {
  const int layers = net.layer_count();
  const auto cols = x.cols();
  MlpBatch b;
  b.with_grad = with_input_grad;
  b.pre.resize(layers);
  b.act.resize(layers);
  b.act[0] = x;
  if (with_input_grad) {
    for (int d = 0; d < 3; ++d) {
      b.pre_tan[d].resize(layers);
      b.act_tan[d].resize(layers);
      b.act_tan[d][0] = Eigen::MatrixXd::Zero(3, cols);
      b.act_tan[d][0].row(d).setOnes();
    }
  }
  for (int l = 0; l < layers; ++l) {
    b.pre[l] = net.weights[l] * b.act[l];
    b.pre[l].colwise() += net.biases[l];
    if (with_input_grad)
      for (int d = 0; d < 3; ++d) b.pre_tan[d][l] = net.weights[l] * b.act_tan[d][l];
    if (l + 1 < layers) {
      b.act[l + 1] = b.pre[l].unaryExpr([](double v) { return softplus(v); });
      if (with_input_grad) {
        const Eigen::MatrixXd s =
            b.pre[l].unaryExpr([](double v) { return softplus_d(v); });
        for (int d = 0; d < 3; ++d)
          b.act_tan[d][l + 1] = s.cwiseProduct(b.pre_tan[d][l]);
      }
    }
  }
  b.value = b.pre[layers - 1].row(0);
  if (with_input_grad) {
    b.grad.resize(3, cols);
    for (int d = 0; d < 3; ++d) b.grad.row(d) = b.pre_tan[d][layers - 1].row(0);
  }
  return b;
}

void MlpGrads::init_like(const Mlp& net) {
  d_weights.clear();
  d_biases.clear();
  for (int l = 0; l < net.layer_count(); ++l) {
    d_weights.push_back(
        Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
    d_biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
  }
}

void MlpGrads::accumulate(const MlpGrads& other) {
  for (size_t l = 0; l < d_weights.size(); ++l) {
    d_weights[l] += other.d_weights[l];
    d_biases[l] += other.d_biases[l];
  }
}

MlpGrads mlp_backward(const Mlp& net, const MlpBatch& batch,
                      const Eigen::RowVectorXd& g_value,
                      const Eigen::Matrix3Xd& g_grad) {
  const int layers = net.layer_count();
  const bool with_tan = batch.with_grad && g_grad.size() > 0;
  MlpGrads out;
  out.init_like(net);

  Eigen::MatrixXd g_pre = Eigen::MatrixXd::Zero(1, batch.value.cols());
  g_pre.row(0) = g_value;
  std::array<Eigen::MatrixXd, 3> g_pre_tan;
  if (with_tan) {
    for (int d = 0; d < 3; ++d) {
      g_pre_tan[d] = Eigen::MatrixXd::Zero(1, batch.value.cols());
      g_pre_tan[d].row(0) = g_grad.row(d);
    }
  }

  for (int l = layers - 1; l >= 0; --l) {
    out.d_weights[l] = g_pre * batch.act[l].transpose();
    out.d_biases[l] = g_pre.rowwise().sum();
    if (with_tan)
      for (int d = 0; d < 3; ++d)
        out.d_weights[l] += g_pre_tan[d] * batch.act_tan[d][l].transpose();
    if (l == 0) break;

    Eigen::MatrixXd g_act = net.weights[l].transpose() * g_pre;
    std::array<Eigen::MatrixXd, 3> g_act_tan;
    if (with_tan)
      for (int d = 0; d < 3; ++d)
        g_act_tan[d] = net.weights[l].transpose() * g_pre_tan[d];

    // act[l] = softplus(pre[l-1]); act_tan = softplus'(pre[l-1]) .* pre_tan
    const Eigen::MatrixXd s =
        batch.pre[l - 1].unaryExpr([](double v) { return softplus_d(v); });
    g_pre = s.cwiseProduct(g_act);
    if (with_tan) {
      const Eigen::MatrixXd s2 =
          batch.pre[l - 1].unaryExpr([](double v) { return softplus_dd(v); });
      for (int d = 0; d < 3; ++d) {
        g_pre += s2.cwiseProduct(batch.pre_tan[d][l - 1]).cwiseProduct(g_act_tan[d]);
        g_pre_tan[d] = s.cwiseProduct(g_act_tan[d]);
      }
    }
  }
  return out;
}

MlpPoint mlp_point(const Mlp& net, const Vec3& x, bool with_hessian) {
  const int layers = net.layer_count();
  Eigen::VectorXd act = x;
  Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(3, 3);  // width x 3
  std::vector<Mat3> hess(3, Mat3::Zero());                // per neuron

  for (int l = 0; l < layers; ++l) {
    const Eigen::MatrixXd& w = net.weights[l];
    Eigen::VectorXd pre = w * act + net.biases[l];
    Eigen::MatrixXd pre_jac = w * jac;
    std::vector<Mat3> pre_hess;
    if (with_hessian) {
      pre_hess.assign(w.rows(), Mat3::Zero());
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c)
          if (w(r, c) != 0.0) pre_hess[r] += w(r, c) * hess[c];
    }
    if (l + 1 < layers) {
      act = pre.unaryExpr([](double v) { return softplus(v); });
      jac.resize(pre.size(), 3);
      if (with_hessian) hess.assign(pre.size(), Mat3::Zero());
      for (int r = 0; r < pre.size(); ++r) {
        const double s = softplus_d(pre[r]);
        jac.row(r) = s * pre_jac.row(r);
        if (with_hessian) {
          const Vec3 g = pre_jac.row(r).transpose();
          hess[r] = s * pre_hess[r] + softplus_dd(pre[r]) * (g * g.transpose());
        }
      }
    } else {
      MlpPoint out;
      out.value = pre[0];
      out.grad = pre_jac.row(0).transpose();
      if (with_hessian) out.hess = pre_hess[0];
      return out;
    }
  }
  return {};
}

}  // namespace dualsplat
