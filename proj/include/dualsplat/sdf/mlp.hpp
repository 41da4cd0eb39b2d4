#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

// Small fully connected network with softplus activations, scalar output.
// Training needs gradients of loss terms that themselves contain the input
// gradient of the network (eikonal and normal alignment), so the forward
// pass can propagate input tangents and the backward pass differentiates
// through that propagation.

struct Mlp {
  std::vector<Eigen::MatrixXd> weights;  // layer l maps in -> out, W: out x in
  std::vector<Eigen::VectorXd> biases;

  static constexpr double kBeta = 10.0;  // softplus sharpness

  static Mlp make(int input, int hidden, int output, int layers, uint64_t seed);
  int layer_count() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
};

double softplus(double x);
double softplus_d(double x);   // sigmoid(beta x)
double softplus_dd(double x);  // beta s (1 - s)

/// Forward caches for one batch. Tangent states are only populated when the
/// input gradient is requested.
struct MlpBatch {
  std::vector<Eigen::MatrixXd> pre;   // z_l, one per layer
  std::vector<Eigen::MatrixXd> act;   // layer inputs; act[0] is X
  std::array<std::vector<Eigen::MatrixXd>, 3> pre_tan;
  std::array<std::vector<Eigen::MatrixXd>, 3> act_tan;
  Eigen::RowVectorXd value;                       // 1 x B
  Eigen::Matrix<double, 3, Eigen::Dynamic> grad;  // d(value)/d(x), 3 x B
  bool with_grad = false;
};

MlpBatch mlp_forward(const Mlp& net, const Eigen::Matrix3Xd& x, bool with_input_grad);

struct MlpGrads {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;

  void init_like(const Mlp& net);
  void accumulate(const MlpGrads& other);
};

/// Weight gradients for upstream d/d(value) (1 x B) and, when the batch was
/// run with input gradients, d/d(input gradient) (3 x B, may be empty).
MlpGrads mlp_backward(const Mlp& net, const MlpBatch& batch,
                      const Eigen::RowVectorXd& g_value,
                      const Eigen::Matrix3Xd& g_grad);

/// Single-point evaluation with exact input gradient and (optionally) the
/// full 3x3 Hessian, propagated forward layer by layer.
struct MlpPoint {
  double value = 0;
  Vec3 grad = Vec3::Zero();
  Mat3 hess = Mat3::Zero();
};
MlpPoint mlp_point(const Mlp& net, const Vec3& x, bool with_hessian);

}  // namespace dualsplat
