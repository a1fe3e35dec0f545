#pragma once

#include "nplps/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nplps {

enum class Head { Linear, Exp };

struct DenseLayer {
  MatX w;  // out x in
  VecX b;  // out
};

// Cached forward pass of one batch; reused by backprop so nothing is
// recomputed. p/g hold the input-jacobian chain blocked per sample:
// g[l] is out_l x (d*B) where columns [i*d, i*d+d) belong to sample i.
struct MlpState {
  MatX x;
  std::vector<MatX> z, a;
  std::vector<MatX> p, g;
  bool with_jacobian = false;
  Eigen::Index batch() const { return x.cols(); }
};

struct MlpGradients {
  std::vector<MatX> wg;
  std::vector<VecX> bg;

  void set_zero();
  void accumulate(const MlpGradients& other);
};

// Fully connected network with sine activations: sin(omega0 * z) on the first
// layer, sin(z) on the remaining hidden layers, and a linear or exponential
// output head. All math is double precision.
class SinusoidalMlp {
 public:
  SinusoidalMlp() = default;
  SinusoidalMlp(int in_dim, int width, int hidden_layers, int out_dim, Head head,
                std::uint64_t seed, double omega0 = 30.0);

  int input_dim() const { return in_dim_; }
  int output_dim() const { return out_dim_; }
  Head head() const { return head_; }
  double omega0() const { return omega0_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  void set_zero_weights();

  // Single-point evaluation.
  VecX forward(const VecX& x) const;
  // Exact Jacobian d(output)/d(input), out_dim x in_dim.
  MatX input_gradient(const VecX& x) const;

  // Batched evaluation; x is in_dim x B. Values land in st.a.back()
  // (out_dim x B); when with_jacobian, st.g.back() is out_dim x (in_dim*B).
  void forward_batch(const MatX& x, bool with_jacobian, MlpState& st) const;

  // Accumulates dLoss/d(parameters) into acc given upstream gradients with
  // respect to the batched output values (out_dim x B) and, optionally, with
  // respect to the input-jacobian (out_dim x (in_dim*B), blocked like st.g).
  // The second path carries the mixed second-derivative terms.
  void backprop(const MlpState& st, const MatX& value_bar, const MatX* jac_bar,
                MlpGradients& acc) const;

  MlpGradients make_gradients() const;

 private:
  std::vector<DenseLayer> layers_;
  int in_dim_ = 0, out_dim_ = 0;
  Head head_ = Head::Linear;
  double omega0_ = 30.0;

  double layer_omega(size_t l) const { return l == 0 ? omega0_ : 1.0; }
  bool is_hidden(size_t l) const { return l + 1 < layers_.size(); }
};

// For scalar-output nets, views the blocked jacobian row (1 x d*B) as a
// d x B matrix of per-sample input gradients.
inline Eigen::Map<const MatX> gradient_columns(const MlpState& st, int in_dim) {
  const MatX& g = st.g.back();
  return Eigen::Map<const MatX>(g.data(), in_dim, g.size() / in_dim);
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamView {
  double* value = nullptr;
  const double* grad = nullptr;
  Eigen::Index size = 0;
};

// Standard Adam with bias correction over a fixed list of parameter tensors.
// The view list must keep the same shapes and order across steps. Throws
// std::runtime_error on non-finite gradients.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  void step(const std::vector<ParamView>& views);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<VecX> m_, v_;
};

std::vector<ParamView> mlp_param_views(SinusoidalMlp& net, const MlpGradients& grads);

}  // namespace nplps
