#include "nplps/fields.hpp"

#include "nplps/checkpoint.hpp"

#include <cmath>
#include <stdexcept>

namespace nplps {

FieldSet FieldSet::create(const FieldConfig& cfg, int num_lights) {
  FieldSet fs;
  fs.cfg = cfg;
  fs.sdf_net = SinusoidalMlp(3, cfg.sdf_width, cfg.sdf_layers, 1, Head::Linear, cfg.seed + 11);
  fs.albedo_net =
      SinusoidalMlp(3, cfg.albedo_width, cfg.albedo_layers, 1, Head::Exp, cfg.seed + 23);
  fs.reflect_net =
      SinusoidalMlp(3, cfg.reflect_width, cfg.reflect_layers, 1, Head::Exp, cfg.seed + 37);
  fs.brdf_net = SinusoidalMlp(3, cfg.brdf_width, cfg.brdf_layers, 1, Head::Exp, cfg.seed + 53);
  fs.beta = cfg.beta_init;
  fs.log_phi = VecX::Zero(num_lights);
  return fs;
}

double sdf_value(const FieldSet& fs, const Vec3& x) {
  return fs.cfg.coord_scale * fs.sdf_net.forward(x / fs.cfg.coord_scale)(0);
}

Vec3 sdf_gradient(const FieldSet& fs, const Vec3& x) {
  // F(x) = s * net(x/s), so dF/dx = net'(x/s) exactly.
  return fs.sdf_net.input_gradient(x / fs.cfg.coord_scale).row(0).transpose();
}

std::optional<Vec3> sdf_normal(const FieldSet& fs, const Vec3& x) {
  Vec3 g = sdf_gradient(fs, x);
  double n = g.norm();
  if (n < 1e-8) return std::nullopt;
  return Vec3(g / n);
}

double albedo_eval(const FieldSet& fs, const Vec3& x) {
  return fs.albedo_net.forward(x / fs.cfg.coord_scale)(0);
}

double reflect_eval(const FieldSet& fs, const Vec3& x) {
  return fs.reflect_net.forward(x / fs.cfg.coord_scale)(0);
}

double brdf_eval(const FieldSet& fs, const Vec3& n, const Vec3& l_unit, const Vec3& v) {
  double ndotl = n.dot(l_unit);
  if (ndotl <= 0.0) return 0.0;
  Vec3 h_raw = l_unit + v;
  double h_norm = h_raw.norm();
  if (h_norm < 1e-9) return 0.0;  // L = -V, half vector undefined
  Vec3 h = h_raw / h_norm;
  Vec3 angles(n.dot(h), ndotl, h.dot(l_unit));
  return ndotl * fs.brdf_net.forward(angles)(0);
}

void sdf_eval_batch(const FieldSet& fs, const MatX& positions_mm, bool with_gradient,
                    SdfBatch& out) {
  const double s = fs.cfg.coord_scale;
  MatX scaled = positions_mm / s;
  fs.sdf_net.forward_batch(scaled, with_gradient, out.state);
  out.values = s * out.state.a.back().row(0).transpose();
  if (with_gradient) out.gradients = gradient_columns(out.state, 3);
}

SphereInitResult init_sphere(FieldSet& fs, const Vec3& center, double radius,
                             std::uint64_t seed, int max_steps, double lr) {
  if (radius <= 0.0) throw std::invalid_argument("init_sphere: radius must be positive");
  std::mt19937_64 rng(seed);
  // Cover the volume ray sampling actually touches: the coarse window spans
  // +-50 mm around surface depth estimates.
  const double half = std::max(1.5 * radius, radius + 60.0);
  std::uniform_real_distribution<double> box(-half, half);
  const int batch = 512;
  const double s = fs.cfg.coord_scale;

  MlpGradients grads = fs.sdf_net.make_gradients();
  Adam adam_coarse({lr});
  Adam adam_fine({lr / 4.0});
  auto views = mlp_param_views(fs.sdf_net, grads);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss;
  auto sample_batch = [&](int n, MatX& pos, VecX& target) {
    pos.resize(3, n);
    target.resize(n);
    for (int i = 0; i < n; ++i) {
      Vec3 p;
      int lane = i % 8;
      if (lane == 0) {
        // The cone tip at the center needs dense local coverage or it never
        // receives gradient pressure.
        Vec3 dir = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
        p = dir * (0.15 * radius * std::cbrt(unit(rng)));
      } else if (lane == 1) {
        Vec3 dir = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
        p = dir * (0.6 * radius * std::cbrt(unit(rng)));
      } else {
        p = Vec3(box(rng), box(rng), box(rng));
      }
      pos.col(i) = center + p;
      target(i) = p.norm() - radius;
    }
  };

  SphereInitResult res;
  MlpState st;
  MatX pos;
  VecX target;
  auto l1_step = [&](Adam& adam) {
    fs.sdf_net.forward_batch(pos / s, false, st);
    VecX pred = s * st.a.back().row(0).transpose();
    // L1 regression toward the analytic sphere SDF; d(pred)/d(net) = s.
    MatX value_bar(1, batch);
    for (int i = 0; i < batch; ++i)
      value_bar(0, i) = s * ((pred(i) > target(i)) ? 1.0 : -1.0) / batch;
    grads.set_zero();
    fs.sdf_net.backprop(st, value_bar, nullptr, grads);
    adam.step(views);
  };
  for (int step = 0; step < max_steps; ++step) {
    sample_batch(batch, pos, target);
    l1_step(step < (2 * max_steps) / 3 ? adam_coarse : adam_fine);
    res.steps = step + 1;

    if ((step + 1) % 250 == 0) {
      sample_batch(1024, pos, target);
      fs.sdf_net.forward_batch(pos / s, false, st);
      VecX val = s * st.a.back().row(0).transpose();
      res.mean_abs_error = (val - target).cwiseAbs().mean();
      double tip_err = std::abs(sdf_value(fs, center) + radius);
      double far_err = std::abs(sdf_value(fs, center + Vec3(2 * radius, 0, 0)) - radius);
      if (res.mean_abs_error < 0.5 && tip_err < 0.8 && far_err < 0.8) {
        res.converged = true;
        return res;
      }
    }
  }
  return res;
}

void FieldGradients::set_zero() {
  sdf.set_zero();
  albedo.set_zero();
  reflect.set_zero();
  brdf.set_zero();
  beta = 0;
  log_phi.setZero();
}

void FieldGradients::accumulate(const FieldGradients& other) {
  sdf.accumulate(other.sdf);
  albedo.accumulate(other.albedo);
  reflect.accumulate(other.reflect);
  brdf.accumulate(other.brdf);
  beta += other.beta;
  log_phi += other.log_phi;
}

FieldGradients make_field_gradients(const FieldSet& fs) {
  FieldGradients g;
  g.sdf = fs.sdf_net.make_gradients();
  g.albedo = fs.albedo_net.make_gradients();
  g.reflect = fs.reflect_net.make_gradients();
  g.brdf = fs.brdf_net.make_gradients();
  g.log_phi = VecX::Zero(fs.log_phi.size());
  return g;
}

FieldOptimizer::FieldOptimizer(FieldSet& fs, FieldGradients& grads,
                               const FieldLearningRates& rates)
    : fs_(fs),
      grads_(grads),
      sdf_({rates.sdf}),
      albedo_({rates.albedo}),
      reflect_({rates.albedo}),
      brdf_({rates.brdf}),
      beta_({rates.beta}) {}

void FieldOptimizer::step() {
  sdf_.step(mlp_param_views(fs_.sdf_net, grads_.sdf));
  albedo_.step(mlp_param_views(fs_.albedo_net, grads_.albedo));
  reflect_.step(mlp_param_views(fs_.reflect_net, grads_.reflect));

  auto brdf_views = mlp_param_views(fs_.brdf_net, grads_.brdf);
  brdf_views.push_back({fs_.log_phi.data(), grads_.log_phi.data(), fs_.log_phi.size()});
  brdf_.step(brdf_views);

  beta_.step({{&fs_.beta, &grads_.beta, 1}});
  fs_.beta = std::max(fs_.beta, kBetaMin);
}

namespace {

void push_mlp(std::vector<NamedTensor>& out, const std::string& prefix,
              const SinusoidalMlp& net) {
  const auto& layers = net.layers();
  for (size_t l = 0; l < layers.size(); ++l) {
    out.push_back({prefix + "." + std::to_string(l) + ".w", layers[l].w});
    out.push_back({prefix + "." + std::to_string(l) + ".b", layers[l].b});
  }
}

void pull_mlp(const std::vector<NamedTensor>& in, const std::string& prefix, SinusoidalMlp& net) {
  auto& layers = net.layers();
  for (size_t l = 0; l < layers.size(); ++l) {
    const MatX& w = find_tensor(in, prefix + "." + std::to_string(l) + ".w");
    const MatX& b = find_tensor(in, prefix + "." + std::to_string(l) + ".b");
    if (w.rows() != layers[l].w.rows() || w.cols() != layers[l].w.cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix);
    layers[l].w = w;
    layers[l].b = b.col(0);
  }
}

MatX scalar_tensor(double v) {
  MatX m(1, 1);
  m(0, 0) = v;
  return m;
}

}  // namespace

void save_fieldset(const FieldSet& fs, const std::string& path) {
  std::vector<NamedTensor> t;
  t.push_back({"config", [&] {
                 MatX m(10, 1);
                 m << fs.cfg.sdf_layers, fs.cfg.sdf_width, fs.cfg.albedo_layers,
                     fs.cfg.albedo_width, fs.cfg.reflect_layers, fs.cfg.reflect_width,
                     fs.cfg.brdf_layers, fs.cfg.brdf_width, fs.cfg.coord_scale,
                     static_cast<double>(fs.log_phi.size());
                 return m;
               }()});
  push_mlp(t, "sdf", fs.sdf_net);
  push_mlp(t, "albedo", fs.albedo_net);
  push_mlp(t, "reflect", fs.reflect_net);
  push_mlp(t, "brdf", fs.brdf_net);
  t.push_back({"beta", scalar_tensor(fs.beta)});
  t.push_back({"log_phi", fs.log_phi});
  t.push_back({"bbox_min", fs.bbox_min});
  t.push_back({"bbox_max", fs.bbox_max});
  save_tensors(path, t);
}

FieldSet load_fieldset(const std::string& path) {
  auto t = load_tensors(path);
  const MatX& c = find_tensor(t, "config");
  FieldConfig cfg;
  cfg.sdf_layers = static_cast<int>(c(0, 0));
  cfg.sdf_width = static_cast<int>(c(1, 0));
  cfg.albedo_layers = static_cast<int>(c(2, 0));
  cfg.albedo_width = static_cast<int>(c(3, 0));
  cfg.reflect_layers = static_cast<int>(c(4, 0));
  cfg.reflect_width = static_cast<int>(c(5, 0));
  cfg.brdf_layers = static_cast<int>(c(6, 0));
  cfg.brdf_width = static_cast<int>(c(7, 0));
  cfg.coord_scale = c(8, 0);
  int num_lights = static_cast<int>(c(9, 0));

  FieldSet fs = FieldSet::create(cfg, num_lights);
  pull_mlp(t, "sdf", fs.sdf_net);
  pull_mlp(t, "albedo", fs.albedo_net);
  pull_mlp(t, "reflect", fs.reflect_net);
  pull_mlp(t, "brdf", fs.brdf_net);
  fs.beta = find_tensor(t, "beta")(0, 0);
  fs.log_phi = find_tensor(t, "log_phi").col(0);
  fs.bbox_min = find_tensor(t, "bbox_min").col(0);
  fs.bbox_max = find_tensor(t, "bbox_max").col(0);
  return fs;
}

}  // namespace nplps
