#include "nplps/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nplps {

double laplace_density(double d, double beta) {
  if (d >= 0) return std::exp(-d / beta) / (2 * beta);
  return (1.0 - 0.5 * std::exp(d / beta)) / beta;
}

double laplace_density_dd(double d, double beta) {
  return -std::exp(-std::abs(d) / beta) / (2 * beta * beta);
}

double laplace_density_dbeta(double d, double beta) {
  if (d >= 0) return std::exp(-d / beta) * (d / beta - 1.0) / (2 * beta * beta);
  return -1.0 / (beta * beta) + std::exp(d / beta) * (d / beta + 1.0) / (2 * beta * beta);
}

void composite_weights(RaySampleSet& set, const Ray& ray, double beta) {
  auto& ss = set.samples;
  const size_t n = ss.size();
  double trans = 1.0;
  double wt_sum = 0, t_sum = 0;
  for (size_t i = 0; i < n; ++i) {
    double t_next = (i + 1 < n) ? ss[i + 1].t : set.t_end;
    ss[i].delta = std::max(t_next - ss[i].t, 0.0);
    double sigma = laplace_density(ss[i].sdf, beta);
    ss[i].alpha = 1.0 - std::exp(-sigma * ss[i].delta);
    ss[i].weight = ss[i].alpha * trans;
    trans *= 1.0 - ss[i].alpha;
    wt_sum += ss[i].weight;
    t_sum += ss[i].weight * ss[i].t;
  }
  set.opacity = 1.0 - trans;
  set.has_avg = wt_sum > 1e-8;
  if (set.has_avg) {
    set.t_avg = t_sum / wt_sum;
    set.x_avg = ray.origin + set.t_avg * ray.dir;
  } else {
    set.t_avg = 0;
    set.x_avg = Vec3::Zero();
  }
}

double composite(std::span<const double> values, std::span<const double> weights) {
  double acc = 0;
  for (size_t i = 0; i < values.size(); ++i) acc += weights[i] * values[i];
  return acc;
}

Vec3 composite(std::span<const Vec3> values, std::span<const double> weights) {
  Vec3 acc = Vec3::Zero();
  for (size_t i = 0; i < values.size(); ++i) acc += weights[i] * values[i];
  return acc;
}

namespace {

void stratified_ts(std::mt19937_64& rng, double lo, double hi, int n,
                   std::vector<double>& out) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double step = (hi - lo) / n;
  for (int i = 0; i < n; ++i) out.push_back(lo + (i + u(rng)) * step);
}

}  // namespace

RaySampleSet sample_ray(const FieldSet& fs, const Ray& ray, double depth_estimate,
                        double fine_halfwidth, const SampleCounts& counts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double lo = std::max(depth_estimate - kCoarseHalfwidth, 1.0);
  const double hi = depth_estimate + kCoarseHalfwidth;

  std::vector<double> coarse_ts;
  coarse_ts.reserve(counts.coarse);
  stratified_ts(rng, lo, hi, counts.coarse, coarse_ts);

  auto eval_block = [&](const std::vector<double>& ts, SampleRole role,
                        std::vector<RaySample>& out, SdfBatch& batch) {
    if (ts.empty()) return;
    MatX pos(3, ts.size());
    for (size_t i = 0; i < ts.size(); ++i) pos.col(i) = ray.origin + ts[i] * ray.dir;
    sdf_eval_batch(fs, pos, true, batch);
    for (size_t i = 0; i < ts.size(); ++i) {
      RaySample s;
      s.t = ts[i];
      s.position = pos.col(i);
      s.sdf = batch.values(i);
      s.gradient = batch.gradients.col(i);
      s.role = role;
      if (!std::isfinite(s.sdf)) continue;  // dropped
      out.push_back(s);
    }
  };

  SdfBatch batch;
  std::vector<RaySample> coarse;
  eval_block(coarse_ts, SampleRole::Coarse, coarse, batch);

  // Provisional composite over the coarse set alone locates the fine window.
  RaySampleSet prov;
  prov.samples = coarse;
  prov.t_end = hi;
  composite_weights(prov, ray, fs.beta);
  double t_center = prov.has_avg ? prov.t_avg : depth_estimate;

  double flo = std::max(t_center - fine_halfwidth, lo);
  double fhi = std::min(t_center + fine_halfwidth, hi);
  std::vector<double> fine_ts;
  fine_ts.reserve(counts.fine);
  stratified_ts(rng, flo, fhi, counts.fine, fine_ts);

  std::vector<RaySample> fine;
  eval_block(fine_ts, SampleRole::Fine, fine, batch);

  // One Newton step along the ray from each fine sample, clamped to the fine
  // window: t' = t - F / (grad . dir).
  std::vector<double> newton_ts;
  newton_ts.reserve(counts.newton);
  for (int i = 0; i < counts.newton && i < static_cast<int>(fine.size()); ++i) {
    const RaySample& s = fine[i];
    double dd = s.gradient.dot(ray.dir);
    double t = (std::abs(dd) > 1e-6) ? s.t - s.sdf / dd : s.t;
    newton_ts.push_back(std::clamp(t, flo, fhi));
  }
  std::vector<RaySample> newton;
  eval_block(newton_ts, SampleRole::Newton, newton, batch);

  RaySampleSet set;
  set.samples.reserve(coarse.size() + fine.size() + newton.size());
  set.samples.insert(set.samples.end(), coarse.begin(), coarse.end());
  set.samples.insert(set.samples.end(), fine.begin(), fine.end());
  set.samples.insert(set.samples.end(), newton.begin(), newton.end());
  std::sort(set.samples.begin(), set.samples.end(),
            [](const RaySample& a, const RaySample& b) { return a.t < b.t; });
  set.t_end = hi;
  composite_weights(set, ray, fs.beta);
  return set;
}

double shadow_factor(const FieldSet& fs, const Vec3& x, const PointLight& light,
                     std::uint64_t seed, int n_samples) {
  auto lv = light_vector_and_attenuation(x, light);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(kShadowNear, kShadowFar);
  const double delta = (kShadowFar - kShadowNear) / n_samples;

  MatX pos(3, n_samples);
  for (int i = 0; i < n_samples; ++i) pos.col(i) = x + u(rng) * lv.l_unit;
  SdfBatch batch;
  sdf_eval_batch(fs, pos, false, batch);

  double s = 1.0;
  for (int i = 0; i < n_samples; ++i) {
    double sigma = laplace_density(batch.values(i), fs.beta);
    s *= std::exp(-sigma * delta);
  }
  return s;
}

double ambient_occlusion(std::span<const double> shadows) {
  if (shadows.empty()) throw std::invalid_argument("ambient_occlusion: empty light list");
  double acc = 0;
  for (double s : shadows) acc += 1.0 - s;
  return acc / static_cast<double>(shadows.size());
}

double shade(const FieldSet& fs, const ShadeInputs& in, const PointLight& light) {
  auto lv = light_vector_and_attenuation(in.x, light);
  double b = brdf_eval(fs, in.n, lv.l_unit, in.v);
  double direct = in.shadow * lv.attenuation * in.albedo * b;
  double indirect = lv.attenuation * in.albedo * in.ao * in.reflect;
  return std::max(direct + indirect, 0.0);
}

RayRenderResult render_pixel(const FieldSet& fs, const Camera& cam,
                             const std::vector<PointLight>& lights, const Vec2& px,
                             double depth_estimate, double fine_halfwidth,
                             const SampleCounts& counts, std::uint64_t seed,
                             bool with_shading) {
  Ray ray = pixel_to_ray(cam, px);
  RayRenderResult res;
  res.samples = sample_ray(fs, ray, depth_estimate, fine_halfwidth, counts, seed);
  res.opacity = res.samples.opacity;
  res.hit = res.samples.has_avg;
  res.x_avg = res.samples.x_avg;

  const auto& ss = res.samples.samples;
  const size_t n = ss.size();

  // Composited depth and normal (weight-normalized when a hit exists).
  double wsum = 0;
  Vec3 nsum = Vec3::Zero();
  double tsum = 0;
  for (const auto& s : ss) {
    wsum += s.weight;
    tsum += s.weight * s.t;
    double gn = s.gradient.norm();
    if (gn > 1e-8) nsum += s.weight * (s.gradient / gn);
  }
  if (wsum > 1e-8) {
    res.depth = tsum / wsum;
    if (nsum.norm() > 1e-12) res.normal = nsum.normalized();
  }

  // Free-space bookkeeping: low-weight samples get the sign of the side of
  // the average intersection they fall on (+1 in front, -1 behind).
  res.freespace_sign.assign(n, 0);
  for (size_t i = 0; i < n; ++i) {
    if (ss[i].weight < kFreespaceWeightCut)
      res.freespace_sign[i] = (!res.hit || ss[i].t < res.samples.t_avg) ? 1 : -1;
  }

  res.intensities = VecX::Zero(static_cast<Eigen::Index>(lights.size()));
  res.shadows = VecX::Ones(static_cast<Eigen::Index>(lights.size()));
  if (!with_shading || lights.empty()) return res;

  if (res.hit) {
    for (size_t m = 0; m < lights.size(); ++m)
      res.shadows(static_cast<Eigen::Index>(m)) =
          shadow_factor(fs, res.x_avg, lights[m], mix_seed(seed, 1000 + m), counts.shadow);
    res.ao = ambient_occlusion(
        std::span<const double>(res.shadows.data(), static_cast<size_t>(res.shadows.size())));
    Vec3 v = -ray.dir;
    for (size_t i = 0; i < n; ++i) {
      if (ss[i].weight <= kShadeWeightCut) continue;
      double gn = ss[i].gradient.norm();
      if (gn <= 1e-8) continue;
      ShadeInputs si;
      si.x = ss[i].position;
      si.n = ss[i].gradient / gn;
      si.v = v;
      si.albedo = albedo_eval(fs, ss[i].position);
      si.reflect = reflect_eval(fs, ss[i].position);
      si.ao = res.ao;
      for (size_t m = 0; m < lights.size(); ++m) {
        si.shadow = res.shadows(static_cast<Eigen::Index>(m));
        res.intensities(static_cast<Eigen::Index>(m)) += ss[i].weight * shade(fs, si, lights[m]);
      }
    }
  }
  return res;
}

bool trace_field(const FieldSet& fs, const Ray& ray, double t_min, double t_max, double* t_hit) {
  double t = t_min;
  for (int step = 0; step < 256 && t < t_max; ++step) {
    double d = sdf_value(fs, ray.origin + t * ray.dir);
    if (d < 1e-3) {
      *t_hit = t;
      return true;
    }
    t += d;
  }
  return false;
}

}  // namespace nplps
