#pragma once

#include "nplps/fields.hpp"
#include "nplps/geometry.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace nplps {

// Laplace-CDF density transform: sigma(d) = Psi_beta(-d) / beta.
double laplace_density(double d, double beta);
double laplace_density_dd(double d, double beta);
double laplace_density_dbeta(double d, double beta);

struct SampleCounts {
  int coarse = 64;
  int fine = 64;
  int newton = 64;
  int shadow = 16;
};

// Shadow rays sample this fixed range along the light direction.
constexpr double kShadowNear = 2.0;   // mm
constexpr double kShadowFar = 50.0;   // mm
constexpr double kCoarseHalfwidth = 50.0;  // mm around the depth estimate
// Samples with weight below this are treated as free space (regularized,
// not shaded).
constexpr double kFreespaceWeightCut = 0.01;
constexpr double kShadeWeightCut = 1e-5;

enum class SampleRole : std::uint8_t { Coarse, Fine, Newton };

struct RaySample {
  double t = 0;       // distance along the ray, mm
  Vec3 position = Vec3::Zero();
  double sdf = 0;
  Vec3 gradient = Vec3::Zero();  // SDF gradient (mm units)
  double alpha = 0;
  double weight = 0;
  double delta = 0;   // segment length to the next sample
  SampleRole role = SampleRole::Coarse;
};

struct RaySampleSet {
  std::vector<RaySample> samples;  // sorted by t
  double opacity = 0;              // 1 - prod(1 - alpha)
  double t_end = 0;                // end of the sampled interval
  bool has_avg = false;
  double t_avg = 0;                // weight-averaged intersection distance
  Vec3 x_avg = Vec3::Zero();
};

// Given sdf values filled in for sorted samples, computes delta/alpha/weight,
// total opacity and the average intersection. Pure array math, shared by the
// per-pixel renderer and the batched trainer.
void composite_weights(RaySampleSet& set, const Ray& ray, double beta);

// Plain weighted sums ("composite: Sum w_i * value_i").
double composite(std::span<const double> values, std::span<const double> weights);
Vec3 composite(std::span<const Vec3> values, std::span<const double> weights);

// Stratified coarse/fine/Newton sampling around the depth estimate, followed
// by one compositing pass. fine_halfwidth shrinks with training progress.
RaySampleSet sample_ray(const FieldSet& fs, const Ray& ray, double depth_estimate,
                        double fine_halfwidth, const SampleCounts& counts, std::uint64_t seed);

// Transmittance toward the light from 16 random samples in [2, 50] mm.
double shadow_factor(const FieldSet& fs, const Vec3& x, const PointLight& light,
                     std::uint64_t seed, int n_samples = 16);

// Mean of one minus shadows; throws std::invalid_argument on an empty list.
double ambient_occlusion(std::span<const double> shadows);

struct ShadeInputs {
  Vec3 x = Vec3::Zero();
  Vec3 n = Vec3::UnitZ();
  Vec3 v = Vec3::UnitZ();    // surface -> camera, unit
  double albedo = 1;
  double shadow = 1;         // s_m for the light being shaded
  double ao = 0;             // s~ (mean concavity)
  double reflect = 1;        // R(x)
};

// i_m = s_m a_m rho B(N, L_m, V) + a_m rho s~ R(x), clamped at zero.
double shade(const FieldSet& fs, const ShadeInputs& in, const PointLight& light);

struct RayRenderResult {
  VecX intensities;            // per light
  Vec3 normal = Vec3::Zero();  // composited SDF normal, renormalized
  double depth = 0;            // weight-averaged t (0 when no hit)
  double opacity = 0;
  Vec3 x_avg = Vec3::Zero();
  bool hit = false;
  VecX shadows;                // per light, evaluated once at x_avg
  double ao = 0;
  std::vector<int> freespace_sign;  // per sample: +1 / -1, 0 when not tagged
  RaySampleSet samples;
};

RayRenderResult render_pixel(const FieldSet& fs, const Camera& cam,
                             const std::vector<PointLight>& lights, const Vec2& px,
                             double depth_estimate, double fine_halfwidth,
                             const SampleCounts& counts, std::uint64_t seed,
                             bool with_shading = true);

// Sphere-traces the learned SDF itself; used to seed depth estimates when no
// cache is available (e.g. re-rendering from a checkpoint).
bool trace_field(const FieldSet& fs, const Ray& ray, double t_min, double t_max, double* t_hit);

}  // namespace nplps
