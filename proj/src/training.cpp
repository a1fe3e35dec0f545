#include "nplps/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace nplps {

void TrainConfig::validate() const {
  if (!use_normals && !use_intensities)
    throw std::invalid_argument("TrainConfig: at least one of normals/intensities must be on");
  if (epochs <= 0 || batch_rays <= 0) throw std::invalid_argument("TrainConfig: bad counts");
  if (samples.coarse <= 0 || samples.fine <= 0 || samples.newton < 0 || samples.shadow <= 0)
    throw std::invalid_argument("TrainConfig: bad sample counts");
}

double rendering_loss(const VecX& rendered, const VecX& gt) {
  if (rendered.size() != gt.size())
    throw std::invalid_argument("rendering_loss: light count mismatch");
  if (rendered.size() == 0) return 0;
  return (rendered - gt).cwiseAbs().mean();
}

double silhouette_loss(double opacity, double label) {
  double o = std::clamp(opacity, 1e-6, 1.0 - 1e-6);
  return -(label * std::log(o) + (1.0 - label) * std::log(1.0 - o));
}

double normal_loss(const Vec3& n_sdf, const Vec3& n_pred, const Vec3& v_to_cam) {
  double ang = std::abs(std::atan2(n_pred.cross(n_sdf).norm(), n_pred.dot(n_sdf)));
  double obliq = std::max(n_sdf.dot(v_to_cam), 0.0);
  return ang * obliq;
}

double eikonal_loss(const VecX& grad_norms) {
  if (grad_norms.size() == 0) return 0;
  return (grad_norms.array() - 1.0).abs().mean();
}

double freespace_loss(const VecX& sdf_values, const std::vector<int>& signs) {
  if (sdf_values.size() != static_cast<Eigen::Index>(signs.size()))
    throw std::invalid_argument("freespace_loss: size mismatch");
  if (signs.empty()) return 0;
  double acc = 0;
  for (Eigen::Index i = 0; i < sdf_values.size(); ++i) {
    double ss = sdf_values(i) / (1.0 + std::abs(sdf_values(i)));
    acc += std::abs(ss - static_cast<double>(signs[i]));
  }
  return acc / static_cast<double>(signs.size());
}

LightScales normalize_light_images(std::vector<DatasetView>& views) {
  LightScales out;
  out.scale.resize(views.size());
  for (size_t v = 0; v < views.size(); ++v) {
    DatasetView& view = views[v];
    out.scale[v].assign(view.light_images.size(), 0.0);
    for (size_t m = 0; m < view.light_images.size(); ++m) {
      if (view.light_excluded(static_cast<int>(m))) continue;
      float peak = 0;
      ImageF& img = view.light_images[m];
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (view.mask.at(x, y) > 0) peak = std::max(peak, img.at(x, y));
      if (peak <= 0) {
        std::cerr << "normalize_light_images: view " << v << " light " << m
                  << " is black in the foreground, excluding it\n";
        continue;
      }
      double s = 1.0 / peak;
      for (auto& px : img.data) px = static_cast<float>(px * s);
      out.scale[v][m] = s;
    }
  }
  return out;
}

VisualHull compute_visual_hull(const std::vector<DatasetView>& views, double depth_prior,
                               int grid_res) {
  if (views.empty()) throw std::invalid_argument("compute_visual_hull: no views");
  // Rough center: mean of the points each camera fixates at the prior depth.
  Vec3 center0 = Vec3::Zero();
  for (const auto& v : views) center0 += v.camera.center() + depth_prior * v.camera.optical_axis_world();
  center0 /= static_cast<double>(views.size());
  const double half = 0.25 * depth_prior;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  long kept = 0;
  for (int iz = 0; iz < grid_res; ++iz)
    for (int iy = 0; iy < grid_res; ++iy)
      for (int ix = 0; ix < grid_res; ++ix) {
        Vec3 p = center0 + half * (2.0 * Vec3((ix + 0.5) / grid_res, (iy + 0.5) / grid_res,
                                              (iz + 0.5) / grid_res) -
                                   Vec3::Ones());
        bool inside = true;
        for (const auto& view : views) {
          Vec3 pc = view.camera.rot * p + view.camera.trans;
          if (pc.z() <= 0) {
            inside = false;
            break;
          }
          Vec2 px = project(view.camera, p);
          int x = static_cast<int>(px.x()), y = static_cast<int>(px.y());
          if (!view.mask.inside(x, y) || view.mask.at(x, y) == 0) {
            inside = false;
            break;
          }
        }
        if (inside) {
          lo = lo.cwiseMin(p);
          hi = hi.cwiseMax(p);
          ++kept;
        }
      }
  if (kept == 0) throw std::runtime_error("compute_visual_hull: empty hull");

  VisualHull hull;
  hull.center = 0.5 * (lo + hi);
  hull.radius = 0.5 * (hi - lo).norm();
  Vec3 margin = 0.1 * (hi - lo).cwiseMax(1.0);
  hull.bbox_min = lo - margin;
  hull.bbox_max = hi + margin;
  return hull;
}

Image<std::int8_t> compute_label_map(const ImageU8& mask) {
  ImageU8 fg = erode(mask, 2);
  ImageU8 inner = dilate(mask, 2);
  ImageU8 outer = dilate(mask, 5);
  Image<std::int8_t> labels(mask.width, mask.height, 1, -1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (fg.at(x, y) > 0)
        labels.at(x, y) = 1;
      else if (outer.at(x, y) > 0 && inner.at(x, y) == 0)
        labels.at(x, y) = 0;
    }
  return labels;
}

namespace {

double ray_scale_factor(const Camera& cam, int x, int y) {
  // Converts camera-frame z to distance along the pixel ray.
  Vec3 d((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
  return d.norm();
}

bool ray_sphere_first_hit(const Ray& ray, const Vec3& center, double radius, double* t_hit) {
  Vec3 oc = ray.origin - center;
  double b = oc.dot(ray.dir);
  double c = oc.squaredNorm() - radius * radius;
  double disc = b * b - c;
  if (disc < 0) return false;
  double t = -b - std::sqrt(disc);
  if (t <= 0) return false;
  *t_hit = t;
  return true;
}

}  // namespace

DepthCache init_depth_cache(const std::vector<DatasetView>& views,
                            const std::vector<Image<std::int8_t>>& labels, const VisualHull& hull,
                            double depth_prior) {
  DepthCache cache;
  cache.t.resize(views.size());
  for (size_t v = 0; v < views.size(); ++v) {
    const DatasetView& view = views[v];
    const int w = view.mask.width, h = view.mask.height;
    ImageF t(w, h, 1, 0.0f);

    // Anchor the integration at the distance to the hull center; the cache
    // only has to land inside the +-50 mm coarse window.
    double anchor = (hull.center - view.camera.center()).norm();
    if (anchor <= 0) anchor = depth_prior;
    ImageF depth_z;
    if (view.has_normals()) {
      depth_z = integrate_normals_to_depth(view.normals_cam, view.mask, view.camera, anchor);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (labels[v].at(x, y) < 0) continue;
        double tv = 0;
        if (depth_z.data.size() && depth_z.at(x, y) > 0) {
          tv = depth_z.at(x, y) * ray_scale_factor(view.camera, x, y);
        } else {
          Ray ray = pixel_to_ray(view.camera, Vec2(x + 0.5, y + 0.5));
          double th;
          if (ray_sphere_first_hit(ray, hull.center, std::max(hull.radius, 1.0), &th)) tv = th;
        }
        t.at(x, y) = static_cast<float>(tv);
      }

    // Fill remaining eligible pixels (band outside the mask) by neighbor
    // diffusion, then by the view median.
    for (int pass = 0; pass < 6; ++pass) {
      ImageF next = t;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (labels[v].at(x, y) < 0 || t.at(x, y) > 0) continue;
          double acc = 0;
          int cnt = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              int xx = x + dx, yy = y + dy;
              if (t.inside(xx, yy) && t.at(xx, yy) > 0) {
                acc += t.at(xx, yy);
                ++cnt;
              }
            }
          if (cnt > 0) next.at(x, y) = static_cast<float>(acc / cnt);
        }
      t = next;
    }
    std::vector<float> defined;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (t.at(x, y) > 0) defined.push_back(t.at(x, y));
    float fallback = static_cast<float>((hull.center - view.camera.center()).norm());
    if (!defined.empty()) {
      std::nth_element(defined.begin(), defined.begin() + defined.size() / 2, defined.end());
      fallback = defined[defined.size() / 2];
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (labels[v].at(x, y) >= 0 && t.at(x, y) <= 0) t.at(x, y) = fallback;
    cache.t[v] = std::move(t);
  }
  return cache;
}

void update_depth_cache(const FieldSet& fs, const std::vector<DatasetView>& views,
                        const std::vector<Image<std::int8_t>>& labels, DepthCache& cache,
                        const SampleCounts& counts, double fine_halfwidth, std::uint64_t seed) {
  for (size_t v = 0; v < views.size(); ++v) {
    const DatasetView& view = views[v];
    ImageF& t = cache.t[v];
    const int h = view.mask.height, w = view.mask.width;
    parallel_for_blocks(h, 4, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < w; ++x) {
          if (labels[v].at(x, y) < 0 || t.at(x, y) <= 0) continue;
          Ray ray = pixel_to_ray(view.camera, Vec2(x + 0.5, y + 0.5));
          RaySampleSet set = sample_ray(fs, ray, t.at(x, y), fine_halfwidth, counts,
                                        mix_seed(seed, v, y, x));
          if (set.opacity > 0.5 && set.has_avg) {
            double wsum = 0, tsum = 0;
            for (const auto& s : set.samples) {
              wsum += s.weight;
              tsum += s.weight * s.t;
            }
            t.at(x, y) = static_cast<float>(tsum / wsum);
          }
        }
    });
  }
}

std::vector<int> select_light_subset(const std::vector<DatasetView>& views, const Vec3& center,
                                     int k) {
  if (views.empty()) throw std::invalid_argument("select_light_subset: no views");
  const auto& lights = views[0].lights;
  const int m = static_cast<int>(lights.size());
  if (k >= m) {
    std::vector<int> all(m);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<Vec3> dirs(m);
  for (int i = 0; i < m; ++i) dirs[i] = (lights[i].position - center).normalized();

  // Greedy farthest-angle: seed with the widest pair, then maximize the
  // minimum angle to the chosen set.
  std::vector<int> chosen;
  double best = 2.0;
  int a = 0, b = 1;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (dirs[i].dot(dirs[j]) < best) {
        best = dirs[i].dot(dirs[j]);
        a = i;
        b = j;
      }
  chosen = {a, b};
  while (static_cast<int>(chosen.size()) < k) {
    int arg = -1;
    double arg_min_dot = 2.0;
    for (int i = 0; i < m; ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double worst = -2.0;
      for (int j : chosen) worst = std::max(worst, dirs[i].dot(dirs[j]));
      if (worst < arg_min_dot) {
        arg_min_dot = worst;
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

// ---------------------------------------------------------------------------
// Batched training engine. Phase 1 renders ray chunks in parallel and caches
// compact per-sample state; phase 2 turns loss adjoints into parameter
// gradients with one batched backprop per chunk. All reductions run in chunk
// order, so results are independent of the worker count.
// ---------------------------------------------------------------------------

namespace {

struct RayTask {
  int view = 0, x = 0, y = 0;
  std::int8_t label = -1;
};

struct ShadePair {
  double f = 0;            // BRDF net output
  Vec3 fgrad = Vec3::Zero();
  Vec3 angles = Vec3::Zero();
  Vec3 l_unit = Vec3::Zero();
  Vec3 half = Vec3::Zero();
  double atten = 0;
  double c2 = 0;           // n . l
  double intensity = 0;    // i_im
};

struct RayWork {
  RayTask task;
  Ray ray;
  int n = 0;
  MatX pos;   // 3 x n
  MatX grad;  // 3 x n
  VecX t, d, delta, alpha, weight;
  double opacity = 0, t_avg = 0;
  bool has_avg = false;
  Vec3 x_avg = Vec3::Zero();
  std::vector<int> fs_sign;  // +1/-1/0 per sample

  std::vector<int> shaded;     // sample indices that were shaded
  VecX rho, refl;              // per shaded sample
  std::vector<ShadePair> pairs;  // shaded.size() x n_active, light-major per sample
  VecX shadows;                // per active light
  double ao = 0;
  VecX rendered, gt_norm, scales;  // per active light
  bool rendering = false;

  Vec3 nsum = Vec3::Zero();
  Vec3 n_pred = Vec3::Zero();
  bool norm_eligible = false;

  double loss_sil = 0, loss_rend = 0, loss_norm = 0, eik_sum = 0, fs_sum = 0;
  int n_tagged = 0;
};

struct BatchTerms {
  double rend = 0, sil = 0, norm = 0, eik = 0, fs = 0;
  long n_rend_rays = 0, n_norm_rays = 0, n_samples = 0, n_tagged = 0, n_rays = 0;
  double total(const LossWeights& w) const {
    return w.rendering * rend + w.silhouette * sil + w.normal * norm + w.eikonal * eik +
           w.freespace * fs;
  }
};

class Trainer {
 public:
  Trainer(FieldSet& fs, std::vector<DatasetView>& views, const TrainConfig& cfg)
      : fs_(fs), views_(views), cfg_(cfg) {}

  TrainResult run(const std::string& out_dir);

 private:
  FieldSet& fs_;
  std::vector<DatasetView>& views_;
  TrainConfig cfg_;

  LightScales scales_;
  std::vector<Image<std::int8_t>> labels_;
  std::vector<std::vector<int>> active_;  // active light indices per view
  DepthCache cache_;
  VisualHull hull_;
  std::vector<RayTask> tasks_;

  int chunk_rays_ = 8;
  std::vector<FieldGradients> chunk_grads_;
  FieldGradients total_grads_;

  void prepare();
  BatchTerms run_batch(const std::vector<RayTask>& batch, int epoch, int step, bool rendering_on,
                       bool normals_on, double fine_halfwidth);
  void phase1_ray(RayWork& w, std::uint64_t seed, bool rendering_on, bool normals_on,
                  double fine_halfwidth);
  void phase2_chunk(const std::vector<RayWork>& rays, int begin, int end,
                    const BatchTerms& terms, FieldGradients& grads);
};

void Trainer::prepare() {
  scales_ = normalize_light_images(views_);
  labels_.clear();
  for (const auto& view : views_) labels_.push_back(compute_label_map(view.mask));

  hull_ = compute_visual_hull(views_, cfg_.depth_prior);
  fs_.bbox_min = hull_.bbox_min;
  fs_.bbox_max = hull_.bbox_max;

  auto init = init_sphere(fs_, hull_.center, hull_.radius, mix_seed(cfg_.seed, 404));
  if (!init.converged)
    std::cerr << "init_sphere: not converged after " << init.steps
              << " steps (mean error " << init.mean_abs_error << " mm), proceeding\n";

  cache_ = init_depth_cache(views_, labels_, hull_, cfg_.depth_prior);

  active_.resize(views_.size());
  for (size_t v = 0; v < views_.size(); ++v) {
    for (size_t m = 0; m < views_[v].lights.size(); ++m) {
      if (!cfg_.light_subset.empty() &&
          std::find(cfg_.light_subset.begin(), cfg_.light_subset.end(), static_cast<int>(m)) ==
              cfg_.light_subset.end())
        continue;
      if (scales_.scale[v][m] <= 0) continue;
      active_[v].push_back(static_cast<int>(m));
    }
  }

  tasks_.clear();
  for (size_t v = 0; v < views_.size(); ++v)
    for (int y = 0; y < labels_[v].height; ++y)
      for (int x = 0; x < labels_[v].width; ++x)
        if (labels_[v].at(x, y) >= 0)
          tasks_.push_back({static_cast<int>(v), x, y, labels_[v].at(x, y)});
  if (tasks_.empty()) throw std::runtime_error("train: no eligible pixels");
}

void Trainer::phase1_ray(RayWork& w, std::uint64_t seed, bool rendering_on, bool normals_on,
                         double fine_halfwidth) {
  const DatasetView& view = views_[w.task.view];
  w.ray = pixel_to_ray(view.camera, Vec2(w.task.x + 0.5, w.task.y + 0.5));
  double t0 = cache_.t[w.task.view].at(w.task.x, w.task.y);

  RaySampleSet set = sample_ray(fs_, w.ray, t0, fine_halfwidth, cfg_.samples, seed);
  const auto& ss = set.samples;
  w.n = static_cast<int>(ss.size());
  w.pos.resize(3, w.n);
  w.grad.resize(3, w.n);
  w.t.resize(w.n);
  w.d.resize(w.n);
  w.delta.resize(w.n);
  w.alpha.resize(w.n);
  w.weight.resize(w.n);
  for (int i = 0; i < w.n; ++i) {
    w.pos.col(i) = ss[i].position;
    w.grad.col(i) = ss[i].gradient;
    w.t(i) = ss[i].t;
    w.d(i) = ss[i].sdf;
    w.delta(i) = ss[i].delta;
    w.alpha(i) = ss[i].alpha;
    w.weight(i) = ss[i].weight;
  }
  w.opacity = set.opacity;
  w.has_avg = set.has_avg;
  w.t_avg = set.t_avg;
  w.x_avg = set.x_avg;

  // Per-sample regularizer terms.
  w.fs_sign.assign(w.n, 0);
  w.eik_sum = 0;
  w.fs_sum = 0;
  w.n_tagged = 0;
  for (int i = 0; i < w.n; ++i) {
    w.eik_sum += std::abs(w.grad.col(i).norm() - 1.0);
    if (w.weight(i) < kFreespaceWeightCut) {
      int sign = (!w.has_avg || w.t(i) < w.t_avg) ? 1 : -1;
      w.fs_sign[i] = sign;
      double softsign = w.d(i) / (1.0 + std::abs(w.d(i)));
      w.fs_sum += std::abs(softsign - sign);
      ++w.n_tagged;
    }
  }
  w.loss_sil = silhouette_loss(w.opacity, w.task.label == 1 ? 1.0 : 0.0);

  // Composited normal against the input normal map.
  w.nsum = Vec3::Zero();
  for (int i = 0; i < w.n; ++i) {
    double gn = w.grad.col(i).norm();
    if (gn > 1e-8) w.nsum += w.weight(i) * (w.grad.col(i) / gn);
  }
  w.norm_eligible = false;
  if (normals_on && w.task.label == 1 && view.has_normals() && w.opacity >= 0.01 &&
      w.nsum.norm() > 1e-12) {
    w.n_pred = view.normal_world_at(w.task.x, w.task.y);
    if (w.n_pred.norm() > 0.5) {
      w.norm_eligible = true;
      w.loss_norm = normal_loss(w.nsum.normalized(), w.n_pred.normalized(), -w.ray.dir);
    }
  }

  // Shading.
  const auto& active = active_[w.task.view];
  w.rendering = rendering_on && w.task.label == 1 && !active.empty();
  if (!w.rendering) return;

  const int n_active = static_cast<int>(active.size());
  w.shadows = VecX::Ones(n_active);
  w.rendered = VecX::Zero(n_active);
  w.gt_norm.resize(n_active);
  w.scales.resize(n_active);
  for (int k = 0; k < n_active; ++k) {
    w.gt_norm(k) = view.light_images[active[k]].at(w.task.x, w.task.y);
    w.scales(k) = scales_.scale[w.task.view][active[k]];
  }

  if (w.has_avg) {
    std::vector<PointLight> lights(n_active);
    for (int k = 0; k < n_active; ++k) {
      lights[k] = view.lights[active[k]];
      lights[k].log_phi = fs_.log_phi(active[k]);
      w.shadows(k) = shadow_factor(fs_, w.x_avg, lights[k], mix_seed(seed, 7000 + active[k]),
                                   cfg_.samples.shadow);
    }
    w.ao = ambient_occlusion(std::span<const double>(w.shadows.data(), w.shadows.size()));

    for (int i = 0; i < w.n; ++i) {
      if (w.weight(i) <= kShadeWeightCut) continue;
      if (w.grad.col(i).norm() <= 1e-8) continue;
      w.shaded.push_back(i);
    }
    const int n_sh = static_cast<int>(w.shaded.size());
    if (n_sh > 0) {
      const double cs = fs_.cfg.coord_scale;
      MatX sh_pos(3, n_sh);
      for (int k = 0; k < n_sh; ++k) sh_pos.col(k) = w.pos.col(w.shaded[k]);
      MlpState st;
      fs_.albedo_net.forward_batch(sh_pos / cs, false, st);
      w.rho = st.a.back().row(0).transpose();
      fs_.reflect_net.forward_batch(sh_pos / cs, false, st);
      w.refl = st.a.back().row(0).transpose();

      // Angle triples for every (shaded sample, light) pair.
      w.pairs.assign(static_cast<size_t>(n_sh) * n_active, ShadePair());
      MatX angles(3, static_cast<Eigen::Index>(n_sh) * n_active);
      Vec3 v_dir = -w.ray.dir;
      for (int k = 0; k < n_sh; ++k) {
        int i = w.shaded[k];
        Vec3 n = w.grad.col(i).normalized();
        for (int m = 0; m < n_active; ++m) {
          ShadePair& pair = w.pairs[k * n_active + m];
          auto lv = light_vector_and_attenuation(w.pos.col(i), lights[m]);
          pair.l_unit = lv.l_unit;
          pair.atten = lv.attenuation;
          pair.c2 = n.dot(lv.l_unit);
          Vec3 h_raw = lv.l_unit + v_dir;
          double hn = h_raw.norm();
          pair.half = (hn > 1e-9) ? Vec3(h_raw / hn) : Vec3::Zero();
          pair.angles = Vec3(n.dot(pair.half), pair.c2, pair.half.dot(lv.l_unit));
          angles.col(k * n_active + m) = pair.angles;
        }
      }
      MlpState bst;
      fs_.brdf_net.forward_batch(angles, true, bst);
      auto fg = gradient_columns(bst, 3);
      for (int k = 0; k < n_sh; ++k) {
        int i = w.shaded[k];
        for (int m = 0; m < n_active; ++m) {
          ShadePair& pair = w.pairs[k * n_active + m];
          pair.f = bst.a.back()(0, k * n_active + m);
          pair.fgrad = fg.col(k * n_active + m);
          double b = (pair.c2 > 0 && pair.half.squaredNorm() > 0.25) ? pair.c2 * pair.f : 0.0;
          pair.intensity = std::max(
              w.shadows(m) * pair.atten * w.rho(k) * b + pair.atten * w.rho(k) * w.ao * w.refl(k),
              0.0);
          w.rendered(m) += w.weight(i) * pair.intensity;
        }
      }
    }
  }
  double acc = 0;
  for (int m = 0; m < n_active; ++m)
    acc += std::abs(w.scales(m) * w.rendered(m) - w.gt_norm(m));
  w.loss_rend = acc / n_active;
}

void Trainer::phase2_chunk(const std::vector<RayWork>& rays, int begin, int end,
                           const BatchTerms& terms, FieldGradients& grads) {
  const LossWeights& lw = cfg_.weights;
  const double cs = fs_.cfg.coord_scale;

  int total_samples = 0, total_shaded = 0, total_pairs = 0;
  for (int r = begin; r < end; ++r) {
    total_samples += rays[r].n;
    total_shaded += static_cast<int>(rays[r].shaded.size());
    total_pairs += static_cast<int>(rays[r].pairs.size());
  }
  if (total_samples == 0) return;

  MatX sdf_pos(3, total_samples);
  MatX sdf_vbar(1, total_samples);
  MatX sdf_gbar(1, 3 * total_samples);
  MatX alb_pos(3, std::max(total_shaded, 1)), alb_vbar(1, std::max(total_shaded, 1));
  MatX ref_vbar(1, std::max(total_shaded, 1));
  MatX brdf_in(3, std::max(total_pairs, 1)), brdf_vbar(1, std::max(total_pairs, 1));
  int si = 0, ai = 0, bi = 0;

  for (int r = begin; r < end; ++r) {
    const RayWork& w = rays[r];
    const auto& active = active_[w.task.view];
    const int n_active = static_cast<int>(active.size());
    VecX wbar = VecX::Zero(w.n);
    MatX nbar = MatX::Zero(3, w.n);  // d loss / d unit-normal per sample
    VecX dbar = VecX::Zero(w.n);
    double obar = 0;

    // Silhouette.
    double label = w.task.label == 1 ? 1.0 : 0.0;
    double oc = std::clamp(w.opacity, 1e-6, 1.0 - 1e-6);
    obar = (lw.silhouette / terms.n_rays) * (-label / oc + (1.0 - label) / (1.0 - oc));

    // Free space regularizer (eikonal joins the gradient bars below).
    for (int i = 0; i < w.n; ++i) {
      if (w.fs_sign[i] != 0 && terms.n_tagged > 0) {
        double ss = w.d(i) / (1.0 + std::abs(w.d(i)));
        double sign = (ss > w.fs_sign[i]) ? 1.0 : -1.0;
        double dss = 1.0 / ((1.0 + std::abs(w.d(i))) * (1.0 + std::abs(w.d(i))));
        dbar(i) += (lw.freespace / terms.n_tagged) * sign * dss;
      }
    }

    // Rendering.
    if (w.rendering && terms.n_rend_rays > 0) {
      for (int m = 0; m < n_active; ++m) {
        double resid = w.scales(m) * w.rendered(m) - w.gt_norm(m);
        double ibar_m = (lw.rendering / (terms.n_rend_rays * n_active)) * w.scales(m) *
                        ((resid > 0) ? 1.0 : -1.0);
        const int n_sh = static_cast<int>(w.shaded.size());
        for (int k = 0; k < n_sh; ++k) {
          int i = w.shaded[k];
          const ShadePair& pair = w.pairs[k * n_active + m];
          double ib = ibar_m * w.weight(i);
          wbar(i) += ibar_m * pair.intensity;
          if (pair.intensity <= 0.0) continue;  // clamped at zero
          double b = (pair.c2 > 0 && pair.half.squaredNorm() > 0.25) ? pair.c2 * pair.f : 0.0;
          // albedo / reflect / phi
          alb_vbar(0, ai + k) += ib * pair.atten * (w.shadows(m) * b + w.ao * w.refl(k));
          ref_vbar(0, ai + k) += ib * pair.atten * w.rho(k) * w.ao;
          grads.log_phi(active[m]) += ib * pair.intensity;
          // BRDF value path and normal chain
          if (pair.c2 > 0 && pair.half.squaredNorm() > 0.25) {
            double bbar = ib * w.shadows(m) * pair.atten * w.rho(k);
            brdf_vbar(0, bi + k * n_active + m) += bbar * pair.c2;
            Vec3 dB_dn = pair.f * pair.l_unit +
                         pair.c2 * (pair.fgrad(0) * pair.half + pair.fgrad(1) * pair.l_unit);
            nbar.col(i) += bbar * dB_dn;
          }
        }
      }
    }

    // Normal loss (angular error of the composited normal).
    if (w.norm_eligible && terms.n_norm_rays > 0) {
      Vec3 nc = w.nsum.normalized();
      Vec3 np = w.n_pred.normalized();
      double cosang = std::clamp(np.dot(nc), -1.0, 1.0);
      double sinang = np.cross(nc).norm();
      double obliq = std::max(nc.dot(Vec3(-w.ray.dir)), 0.0);  // detached weight
      double coeff = (lw.normal / terms.n_norm_rays) * obliq;
      Vec3 dang_dnc = -(np - cosang * nc) / std::max(sinang, 1e-8);
      Vec3 mbar = (Mat3::Identity() - nc * nc.transpose()) / w.nsum.norm() * (coeff * dang_dnc);
      for (int i = 0; i < w.n; ++i) {
        double gn = w.grad.col(i).norm();
        if (gn <= 1e-8) continue;
        Vec3 ni = w.grad.col(i) / gn;
        nbar.col(i) += w.weight(i) * mbar;
        wbar(i) += ni.dot(mbar);
      }
    }

    // Density backward: alpha adjoints from weight adjoints and opacity.
    VecX trans(w.n + 1);
    trans(0) = 1.0;
    for (int i = 0; i < w.n; ++i) trans(i + 1) = trans(i) * (1.0 - w.alpha(i));
    double suffix = 0;
    double beta = fs_.beta;
    for (int i = w.n - 1; i >= 0; --i) {
      double om_alpha = std::max(1.0 - w.alpha(i), 1e-280);
      double abar = wbar(i) * trans(i) - suffix / om_alpha + obar * trans(w.n) / om_alpha;
      suffix += wbar(i) * w.weight(i);
      double sigma_bar = abar * w.delta(i) * (1.0 - w.alpha(i));
      dbar(i) += sigma_bar * laplace_density_dd(w.d(i), beta);
      grads.beta += sigma_bar * laplace_density_dbeta(w.d(i), beta);
    }

    // Assemble SDF bars: value path in net units, gradient path mixed with
    // the eikonal term and the unit-normal chain.
    for (int i = 0; i < w.n; ++i) {
      sdf_pos.col(si + i) = w.pos.col(i) / cs;
      sdf_vbar(0, si + i) = dbar(i) * cs;
      Vec3 g = w.grad.col(i);
      double gn = g.norm();
      Vec3 gbar = Vec3::Zero();
      if (gn > 1e-12) {
        gbar += (lw.eikonal / terms.n_samples) * (gn > 1.0 ? 1.0 : -1.0) * (g / gn);
        if (nbar.col(i).squaredNorm() > 0) {
          Vec3 ni = g / gn;
          gbar += (nbar.col(i) - ni * ni.dot(nbar.col(i))) / gn;
        }
      }
      sdf_gbar.middleCols((si + i) * 3, 3) = gbar.transpose();
    }

    const int n_sh = static_cast<int>(w.shaded.size());
    for (int k = 0; k < n_sh; ++k) alb_pos.col(ai + k) = w.pos.col(w.shaded[k]) / cs;
    for (size_t p = 0; p < w.pairs.size(); ++p) brdf_in.col(bi + p) = w.pairs[p].angles;

    si += w.n;
    ai += n_sh;
    bi += static_cast<int>(w.pairs.size());
  }

  MlpState st;
  fs_.sdf_net.forward_batch(sdf_pos, true, st);
  fs_.sdf_net.backprop(st, sdf_vbar, &sdf_gbar, grads.sdf);

  if (ai > 0) {
    MatX pos = alb_pos.leftCols(ai);
    MatX vb = alb_vbar.leftCols(ai);
    fs_.albedo_net.forward_batch(pos, false, st);
    fs_.albedo_net.backprop(st, vb, nullptr, grads.albedo);
    vb = ref_vbar.leftCols(ai);
    fs_.reflect_net.forward_batch(pos, false, st);
    fs_.reflect_net.backprop(st, vb, nullptr, grads.reflect);
  }
  if (bi > 0) {
    MatX in = brdf_in.leftCols(bi);
    MatX vb = brdf_vbar.leftCols(bi);
    fs_.brdf_net.forward_batch(in, false, st);
    fs_.brdf_net.backprop(st, vb, nullptr, grads.brdf);
  }
}

BatchTerms Trainer::run_batch(const std::vector<RayTask>& batch, int epoch, int step,
                              bool rendering_on, bool normals_on, double fine_halfwidth) {
  const int n = static_cast<int>(batch.size());
  std::vector<RayWork> rays(n);
  for (int i = 0; i < n; ++i) rays[i].task = batch[i];

  const int n_chunks = (n + chunk_rays_ - 1) / chunk_rays_;
  parallel_for_chunks(n_chunks, [&](int c) {
    for (int i = c * chunk_rays_; i < std::min(n, (c + 1) * chunk_rays_); ++i)
      phase1_ray(rays[i], mix_seed(cfg_.seed, epoch, step, i), rendering_on, normals_on,
                 fine_halfwidth);
  });

  BatchTerms terms;
  terms.n_rays = n;
  for (const auto& w : rays) {
    terms.sil += w.loss_sil;
    terms.eik += w.eik_sum;
    terms.fs += w.fs_sum;
    terms.n_samples += w.n;
    terms.n_tagged += w.n_tagged;
    if (w.rendering) {
      terms.rend += w.loss_rend;
      ++terms.n_rend_rays;
    }
    if (w.norm_eligible) {
      terms.norm += w.loss_norm;
      ++terms.n_norm_rays;
    }
  }
  terms.sil /= terms.n_rays;
  terms.eik = terms.n_samples ? terms.eik / terms.n_samples : 0.0;
  terms.fs = terms.n_tagged ? terms.fs / terms.n_tagged : 0.0;
  terms.rend = terms.n_rend_rays ? terms.rend / terms.n_rend_rays : 0.0;
  terms.norm = terms.n_norm_rays ? terms.norm / terms.n_norm_rays : 0.0;

  if (static_cast<int>(chunk_grads_.size()) < n_chunks)
    chunk_grads_.resize(n_chunks, make_field_gradients(fs_));
  parallel_for_chunks(n_chunks, [&](int c) {
    chunk_grads_[c].set_zero();
    phase2_chunk(rays, c * chunk_rays_, std::min(n, (c + 1) * chunk_rays_), terms,
                 chunk_grads_[c]);
  });
  total_grads_.set_zero();
  for (int c = 0; c < n_chunks; ++c) total_grads_.accumulate(chunk_grads_[c]);
  return terms;
}

TrainResult Trainer::run(const std::string& out_dir) {
  cfg_.validate();
  prepare();

  total_grads_ = make_field_gradients(fs_);
  FieldOptimizer optimizer(fs_, total_grads_, cfg_.rates);

  TrainResult result;
  std::mt19937_64 shuffle_rng(mix_seed(cfg_.seed, 99));
  char line[512];

  auto save_all = [&](const std::string& name) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    save_fieldset(fs_, out_dir + "/" + name);
  };

  const int steps_per_epoch = static_cast<int>(tasks_.size()) / cfg_.batch_rays;
  if (steps_per_epoch == 0)
    throw std::runtime_error("train: batch larger than the eligible pixel count");

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    bool warmup = epoch < cfg_.warmup_epochs;
    bool rendering_on = !warmup && cfg_.use_intensities;
    bool normals_on = warmup || cfg_.use_normals;
    double progress = cfg_.epochs > 1 ? static_cast<double>(epoch) / (cfg_.epochs - 1) : 1.0;
    double fhw = cfg_.fine_halfwidth_start +
                 (cfg_.fine_halfwidth_end - cfg_.fine_halfwidth_start) * progress;

    std::shuffle(tasks_.begin(), tasks_.end(), shuffle_rng);
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<RayTask> batch(tasks_.begin() + static_cast<long>(step) * cfg_.batch_rays,
                                 tasks_.begin() + static_cast<long>(step + 1) * cfg_.batch_rays);
      BatchTerms terms;
      try {
        terms = run_batch(batch, epoch, step, rendering_on, normals_on, fhw);
        double total = terms.total(cfg_.weights);
        if (!std::isfinite(total)) throw std::runtime_error("non-finite loss");
        result.final_loss = total;
        optimizer.step();
      } catch (const std::exception& e) {
        std::snprintf(line, sizeof(line), "abort at epoch %d step %d: %s", epoch + 1, step + 1,
                      e.what());
        result.log_lines.emplace_back(line);
        result.aborted = true;
        save_all("checkpoint_abort.ckpt");
        break;
      }
      double mean_phi = fs_.log_phi.size() ? fs_.log_phi.array().exp().mean() : 0.0;
      std::snprintf(line, sizeof(line),
                    "%d, %d, %.10g, %.10g, %.10g, %.10g, %.10g, %.10g, %.10g, %.10g", epoch + 1,
                    step + 1, result.final_loss, cfg_.weights.rendering * terms.rend,
                    cfg_.weights.silhouette * terms.sil, cfg_.weights.normal * terms.norm,
                    cfg_.weights.eikonal * terms.eik, cfg_.weights.freespace * terms.fs, fs_.beta,
                    mean_phi);
      result.log_lines.emplace_back(line);
    }
    if (result.aborted) break;

    bool last = epoch + 1 == cfg_.epochs;
    if (!last && epoch + 1 >= cfg_.warmup_epochs && cfg_.depth_refresh_period > 0 &&
        (epoch + 1) % cfg_.depth_refresh_period == 0)
      update_depth_cache(fs_, views_, labels_, cache_, cfg_.samples, fhw,
                         mix_seed(cfg_.seed, 31, epoch));
    if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0 && !last)
      save_all("checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt");
  }

  if (!result.aborted) save_all("checkpoint.ckpt");
  if (!out_dir.empty()) {
    std::ofstream log(out_dir + "/train_log.txt");
    for (const auto& l : result.log_lines) log << l << "\n";
  }
  return result;
}

}  // namespace

TrainResult train(FieldSet& fs, std::vector<DatasetView>& views, const TrainConfig& cfg,
                  const std::string& out_dir) {
  Trainer trainer(fs, views, cfg);
  return trainer.run(out_dir);
}

}  // namespace nplps
