#pragma once

#include "nplps/geometry.hpp"
#include "nplps/neural.hpp"

#include <optional>
#include <string>

namespace nplps {

struct FieldConfig {
  int sdf_layers = 5, sdf_width = 512;
  int albedo_layers = 3, albedo_width = 256;
  int reflect_layers = 3, reflect_width = 256;
  int brdf_layers = 3, brdf_width = 32;
  // World coordinates are divided by this before entering any network; the
  // SDF output is multiplied back, which keeps the eikonal property of the
  // raw network equal to the eikonal property in mm.
  double coord_scale = 100.0;
  double beta_init = 5.0;  // mm
  std::uint64_t seed = 1;
};

constexpr double kBetaMin = 0.1;  // mm

// The learnable scene: SDF, albedo, indirect-reflectance and BRDF networks
// plus density sharpness beta and per-light log brightness.
struct FieldSet {
  FieldConfig cfg;
  SinusoidalMlp sdf_net;      // 3 -> 1, linear head
  SinusoidalMlp albedo_net;   // 3 -> 1, exp head
  SinusoidalMlp reflect_net;  // 3 -> 1, exp head
  SinusoidalMlp brdf_net;     // 3 angles -> 1, exp head
  double beta = 5.0;
  VecX log_phi;  // one entry per light

  // Mesh-extraction region recorded at training time.
  Vec3 bbox_min = Vec3::Constant(-100.0);
  Vec3 bbox_max = Vec3::Constant(100.0);

  static FieldSet create(const FieldConfig& cfg, int num_lights);
};

double sdf_value(const FieldSet& fs, const Vec3& x);
// Unnormalized SDF gradient in mm units.
Vec3 sdf_gradient(const FieldSet& fs, const Vec3& x);
// Unit normal; empty when the gradient vanishes (sample should be skipped).
std::optional<Vec3> sdf_normal(const FieldSet& fs, const Vec3& x);

double albedo_eval(const FieldSet& fs, const Vec3& x);
double reflect_eval(const FieldSet& fs, const Vec3& x);

// B = max(N.L, 0) * exp(SIREN(N.H, N.L, H.L)), H the half vector of L and V.
// Returns 0 for back-facing lights and for the degenerate L = -V case.
double brdf_eval(const FieldSet& fs, const Vec3& n, const Vec3& l_unit, const Vec3& v);

// Batched SDF evaluation: values (mm) and, optionally, gradients (mm units,
// 3 x B). Positions are world mm, 3 x B.
struct SdfBatch {
  MlpState state;
  VecX values;
  MatX gradients;  // 3 x B when requested
};
void sdf_eval_batch(const FieldSet& fs, const MatX& positions_mm, bool with_gradient,
                    SdfBatch& out);

struct SphereInitResult {
  int steps = 0;
  double mean_abs_error = 0;  // mm, on a fresh validation batch
  bool converged = false;
};

// Regresses the SDF network toward the analytic signed distance of the given
// sphere (L1, Adam) over a box 3r wide until the validation error drops below
// 0.5 mm or the step cap is hit. Non-convergence is reported, not fatal.
SphereInitResult init_sphere(FieldSet& fs, const Vec3& center, double radius,
                             std::uint64_t seed = 7, int max_steps = 20000, double lr = 1e-3);

// Gradient container covering every learnable parameter of the field set.
struct FieldGradients {
  MlpGradients sdf, albedo, reflect, brdf;
  double beta = 0;
  VecX log_phi;

  void set_zero();
  void accumulate(const FieldGradients& other);
};
FieldGradients make_field_gradients(const FieldSet& fs);

struct FieldLearningRates {
  double sdf = 1e-4;
  double albedo = 1e-4;    // shared by albedo and reflectance nets
  double brdf = 1e-3;      // shared by BRDF net and log_phi
  double beta = 1e-2;
};

// Adam over the four parameter groups; clamps beta >= kBetaMin after a step.
class FieldOptimizer {
 public:
  FieldOptimizer(FieldSet& fs, FieldGradients& grads, const FieldLearningRates& rates);
  void step();

 private:
  FieldSet& fs_;
  FieldGradients& grads_;
  Adam sdf_, albedo_, reflect_, brdf_, beta_;
};

void save_fieldset(const FieldSet& fs, const std::string& path);
FieldSet load_fieldset(const std::string& path);

}  // namespace nplps
