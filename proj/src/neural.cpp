#include "nplps/neural.hpp"

#include <cmath>
#include <stdexcept>

namespace nplps {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void MlpGradients::set_zero() {
  for (auto& m : wg) m.setZero();
  for (auto& v : bg) v.setZero();
}

void MlpGradients::accumulate(const MlpGradients& other) {
  for (size_t i = 0; i < wg.size(); ++i) wg[i] += other.wg[i];
  for (size_t i = 0; i < bg.size(); ++i) bg[i] += other.bg[i];
}

SinusoidalMlp::SinusoidalMlp(int in_dim, int width, int hidden_layers, int out_dim, Head head,
                             std::uint64_t seed, double omega0)
    : in_dim_(in_dim), out_dim_(out_dim), head_(head), omega0_(omega0) {
  // hidden_layers == 0 degenerates to a single affine (or exp-affine) map.
  check(in_dim > 0 && width > 0 && hidden_layers >= 0 && out_dim > 0, "SinusoidalMlp: bad shape");
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  layers_.resize(static_cast<size_t>(hidden_layers) + 1);
  for (size_t l = 0; l < layers_.size(); ++l) {
    int in = (l == 0) ? in_dim : width;
    int out = (l + 1 == layers_.size()) ? out_dim : width;
    layers_[l].w.resize(out, in);
    layers_[l].b.resize(out);
    // SIREN scheme: first layer U(-1/n, 1/n), later layers U(-sqrt(6/n), sqrt(6/n)).
    double bound = (l == 0) ? 1.0 / in : std::sqrt(6.0 / in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layers_[l].w(r, c) = uniform(-bound, bound);
    double bbound = 1.0 / std::sqrt(static_cast<double>(in));
    for (int r = 0; r < out; ++r)
      layers_[l].b(r) = (l + 1 == layers_.size()) ? 0.0 : uniform(-bbound, bbound);
  }
}

void SinusoidalMlp::set_zero_weights() {
  for (auto& layer : layers_) {
    layer.w.setZero();
    layer.b.setZero();
  }
}

VecX SinusoidalMlp::forward(const VecX& x) const {
  check(x.size() == in_dim_, "forward: input dimension mismatch");
  VecX a = x;
  for (size_t l = 0; l < layers_.size(); ++l) {
    VecX z = layers_[l].w * a + layers_[l].b;
    if (is_hidden(l)) {
      a = (layer_omega(l) * z.array()).sin();
    } else {
      a = (head_ == Head::Exp) ? z.array().exp().matrix() : z;
    }
  }
  return a;
}

MatX SinusoidalMlp::input_gradient(const VecX& x) const {
  check(x.size() == in_dim_, "input_gradient: input dimension mismatch");
  VecX a = x;
  MatX jac;  // d(a)/d(x), rows follow the current layer width
  for (size_t l = 0; l < layers_.size(); ++l) {
    VecX z = layers_[l].w * a + layers_[l].b;
    MatX pre = (l == 0) ? layers_[l].w : MatX(layers_[l].w * jac);
    if (is_hidden(l)) {
      double om = layer_omega(l);
      a = (om * z.array()).sin();
      jac = (om * z.array()).cos().matrix().asDiagonal() * pre * om;
    } else if (head_ == Head::Exp) {
      a = z.array().exp();
      jac = a.asDiagonal() * pre;
    } else {
      a = z;
      jac = pre;
    }
  }
  return jac;
}

void SinusoidalMlp::forward_batch(const MatX& x, bool with_jacobian, MlpState& st) const {
  check(x.rows() == in_dim_, "forward_batch: input dimension mismatch");
  const size_t num_layers = layers_.size();
  const Eigen::Index batch = x.cols();
  const Eigen::Index d = in_dim_;
  st.x = x;
  st.with_jacobian = with_jacobian;
  st.z.resize(num_layers);
  st.a.resize(num_layers);
  st.p.assign(with_jacobian ? num_layers : 0, MatX());
  st.g.assign(with_jacobian ? num_layers : 0, MatX());

  for (size_t l = 0; l < num_layers; ++l) {
    const MatX& input = (l == 0) ? x : st.a[l - 1];
    st.z[l].noalias() = layers_[l].w * input;
    st.z[l].colwise() += layers_[l].b;
    if (is_hidden(l)) {
      st.a[l] = (layer_omega(l) * st.z[l].array()).sin();
    } else if (head_ == Head::Exp) {
      st.a[l] = st.z[l].array().exp();
    } else {
      st.a[l] = st.z[l];
    }
    if (!with_jacobian) continue;

    // p[l] = w[l] * g[l-1]; at l == 0 the previous jacobian is the identity,
    // so the block for every sample is just w[0] and p[0] stays empty.
    if (l > 0) st.p[l].noalias() = layers_[l].w * st.g[l - 1];
    const Eigen::Index out = st.z[l].rows();
    st.g[l].resize(out, d * batch);
    if (is_hidden(l)) {
      double om = layer_omega(l);
      MatX sp = om * (om * st.z[l].array()).cos();
      for (Eigen::Index i = 0; i < batch; ++i) {
        auto block = (l == 0) ? layers_[0].w : st.p[l].middleCols(i * d, d);
        st.g[l].middleCols(i * d, d) = block.array().colwise() * sp.col(i).array();
      }
    } else if (head_ == Head::Exp) {
      for (Eigen::Index i = 0; i < batch; ++i) {
        auto block = (l == 0) ? layers_[0].w : st.p[l].middleCols(i * d, d);
        st.g[l].middleCols(i * d, d) = block.array().colwise() * st.a[l].col(i).array();
      }
    } else {
      if (l == 0) {
        for (Eigen::Index i = 0; i < batch; ++i) st.g[l].middleCols(i * d, d) = layers_[0].w;
      } else {
        st.g[l] = st.p[l];
      }
    }
  }
}

void SinusoidalMlp::backprop(const MlpState& st, const MatX& value_bar, const MatX* jac_bar,
                             MlpGradients& acc) const {
  const size_t num_layers = layers_.size();
  const Eigen::Index batch = st.batch();
  const Eigen::Index d = in_dim_;
  check(value_bar.rows() == out_dim_ && value_bar.cols() == batch,
        "backprop: value_bar shape mismatch");
  const bool jac = jac_bar != nullptr;
  check(!jac || st.with_jacobian, "backprop: state lacks jacobian cache");
  if (jac)
    check(jac_bar->rows() == out_dim_ && jac_bar->cols() == d * batch,
          "backprop: jac_bar shape mismatch");

  MatX abar = value_bar;
  MatX gbar;
  if (jac) gbar = *jac_bar;

  MatX zbar, pbar, sp;
  for (size_t li = num_layers; li-- > 0;) {
    const MatX& z = st.z[li];
    const Eigen::Index out = z.rows();

    // Activation derivatives. spp-term folds the second derivative of the
    // activation into zbar: d(g)/d(z) couples the jacobian adjoint back to z.
    if (is_hidden(li)) {
      double om = layer_omega(li);
      sp = om * (om * z.array()).cos();
      zbar = sp.array() * abar.array();
      if (jac) {
        pbar.resize(out, d * batch);
        for (Eigen::Index i = 0; i < batch; ++i) {
          auto pblock = (li == 0) ? layers_[0].w : st.p[li].middleCols(i * d, d);
          auto gbblock = gbar.middleCols(i * d, d);
          pbar.middleCols(i * d, d) = gbblock.array().colwise() * sp.col(i).array();
          // spp = -om^2 * sin(om z) = -om^2 * a
          zbar.col(i).array() += (-om * om) * st.a[li].col(i).array() *
                                 (gbblock.array() * pblock.array()).rowwise().sum();
        }
      }
    } else if (head_ == Head::Exp) {
      zbar = st.a[li].array() * abar.array();
      if (jac) {
        pbar.resize(out, d * batch);
        for (Eigen::Index i = 0; i < batch; ++i) {
          auto pblock = (li == 0) ? layers_[0].w : st.p[li].middleCols(i * d, d);
          auto gbblock = gbar.middleCols(i * d, d);
          pbar.middleCols(i * d, d) = gbblock.array().colwise() * st.a[li].col(i).array();
          zbar.col(i).array() += st.a[li].col(i).array() *
                                 (gbblock.array() * pblock.array()).rowwise().sum();
        }
      }
    } else {
      zbar = abar;
      if (jac) pbar = gbar;
    }

    // Linear part.
    const MatX& input = (li == 0) ? st.x : st.a[li - 1];
    acc.wg[li].noalias() += zbar * input.transpose();
    acc.bg[li] += zbar.rowwise().sum();
    if (jac) {
      if (li > 0) {
        acc.wg[li].noalias() += pbar * st.g[li - 1].transpose();
      } else {
        for (Eigen::Index i = 0; i < batch; ++i) acc.wg[0] += pbar.middleCols(i * d, d);
      }
    }
    if (li > 0) {
      abar = layers_[li].w.transpose() * zbar;
      if (jac) gbar = layers_[li].w.transpose() * pbar;
    }
  }
}

MlpGradients SinusoidalMlp::make_gradients() const {
  MlpGradients g;
  g.wg.reserve(layers_.size());
  g.bg.reserve(layers_.size());
  for (const auto& layer : layers_) {
    g.wg.push_back(MatX::Zero(layer.w.rows(), layer.w.cols()));
    g.bg.push_back(VecX::Zero(layer.b.size()));
  }
  return g;
}

void Adam::step(const std::vector<ParamView>& views) {
  if (m_.empty()) {
    m_.resize(views.size());
    v_.resize(views.size());
    for (size_t i = 0; i < views.size(); ++i) {
      m_[i] = VecX::Zero(views[i].size);
      v_[i] = VecX::Zero(views[i].size);
    }
  }
  if (m_.size() != views.size()) throw std::runtime_error("Adam: view list changed size");
  for (size_t i = 0; i < views.size(); ++i) {
    Eigen::Map<const VecX> g(views[i].grad, views[i].size);
    if (!g.allFinite()) throw std::runtime_error("Adam: non-finite gradient");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < views.size(); ++i) {
    if (m_[i].size() != views[i].size) throw std::runtime_error("Adam: view shape changed");
    Eigen::Map<VecX> p(views[i].value, views[i].size);
    Eigen::Map<const VecX> g(views[i].grad, views[i].size);
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i].array().matrix() + (1.0 - cfg_.beta2) * g.array().square().matrix();
    p.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

std::vector<ParamView> mlp_param_views(SinusoidalMlp& net, const MlpGradients& grads) {
  std::vector<ParamView> views;
  auto& layers = net.layers();
  views.reserve(layers.size() * 2);
  for (size_t l = 0; l < layers.size(); ++l) {
    views.push_back({layers[l].w.data(), grads.wg[l].data(), layers[l].w.size()});
    views.push_back({layers[l].b.data(), grads.bg[l].data(), layers[l].b.size()});
  }
  return views;
}

}  // namespace nplps
