#pragma once

#include "nplps/dataio.hpp"
#include "nplps/fields.hpp"
#include "nplps/renderer.hpp"

#include <string>
#include <vector>

namespace nplps {

struct LossWeights {
  double rendering = 1e3;
  double silhouette = 1e1;
  double normal = 1.0;
  double eikonal = 1e1;
  double freespace = 1e-1;
};

struct TrainConfig {
  int epochs = 100;
  int warmup_epochs = 3;
  int batch_rays = 512;
  SampleCounts samples{64, 64, 64, 16};
  bool use_normals = true;
  bool use_intensities = true;
  int depth_refresh_period = 10;  // epochs
  std::vector<int> light_subset;  // empty = all lights
  LossWeights weights;
  FieldLearningRates rates;
  FieldConfig fields;
  std::uint64_t seed = 0;
  double depth_prior = 1500.0;  // mm
  double fine_halfwidth_start = 50.0, fine_halfwidth_end = 5.0;
  int checkpoint_every = 0;  // epochs; 0 = final only

  void validate() const;  // throws std::invalid_argument
};

// ---- Loss closed forms (per ray / per sample set) ----

// Mean absolute intensity difference over lights (pre-weight).
double rendering_loss(const VecX& rendered, const VecX& gt);
// Binary cross entropy of clamp(opacity, 1e-6, 1 - 1e-6) against the label.
double silhouette_loss(double opacity, double label);
// Angular error |atan2(|NxN'|, N.N')| weighted by the obliqueness max(N_sdf.V, 0),
// V pointing from the surface toward the camera.
double normal_loss(const Vec3& n_sdf, const Vec3& n_pred, const Vec3& v_to_cam);
// Mean | ||grad|| - 1 |.
double eikonal_loss(const VecX& grad_norms);
// Mean |softsign(d) - s_t| over tagged samples (signs entries +1/-1).
double freespace_loss(const VecX& sdf_values, const std::vector<int>& signs);

// ---- Light image normalization ----

struct LightScales {
  // scale[view][light]; 0 marks a light excluded from training (all-black
  // image or listed in the view's exclusion set).
  std::vector<std::vector<double>> scale;
};

// Scales every (view, light) image so the foreground maximum becomes exactly
// 1 and returns the factors, which the trainer applies to rendered
// intensities at loss time. All-black images are excluded with a warning.
LightScales normalize_light_images(std::vector<DatasetView>& views);

// ---- Geometry seeds ----

struct VisualHull {
  Vec3 center = Vec3::Zero();
  double radius = 0;
  Vec3 bbox_min = Vec3::Zero(), bbox_max = Vec3::Zero();
};

// Carves a voxel grid against every mask; seeds the initial sphere and the
// mesh-extraction box.
VisualHull compute_visual_hull(const std::vector<DatasetView>& views, double depth_prior,
                               int grid_res = 64);

// Per-pixel training role: 1 = foreground (mask eroded 2 px), 0 = background
// band (2..5 px outside the mask), -1 = unused.
Image<std::int8_t> compute_label_map(const ImageU8& mask);

// ---- Depth cache ----

struct DepthCache {
  // Ray distance t (mm) per pixel; <= 0 means undefined.
  std::vector<ImageF> t;
};

// Initializes from integrated normal maps when present, otherwise from the
// initial sphere; band pixels take smoothed neighbor values.
DepthCache init_depth_cache(const std::vector<DatasetView>& views,
                            const std::vector<Image<std::int8_t>>& labels, const VisualHull& hull,
                            double depth_prior);

// Writes the composited render depth where opacity > 0.5 (defined pixels only).
void update_depth_cache(const FieldSet& fs, const std::vector<DatasetView>& views,
                        const std::vector<Image<std::int8_t>>& labels, DepthCache& cache,
                        const SampleCounts& counts, double fine_halfwidth, std::uint64_t seed);

// Greedy max-angular-spread subset of the first view's light directions.
std::vector<int> select_light_subset(const std::vector<DatasetView>& views, const Vec3& center,
                                     int k);

// ---- Training ----

struct TrainResult {
  std::vector<std::string> log_lines;
  double final_loss = 0;
  bool aborted = false;  // non-finite loss; last checkpoint was saved
};

// Full optimization per the five-loss schedule: sphere init from the visual
// hull, 3 warmup epochs without rendering, then the enabled losses. Writes
// checkpoint.ckpt and train_log.txt into out_dir when non-empty.
TrainResult train(FieldSet& fs, std::vector<DatasetView>& views, const TrainConfig& cfg,
                  const std::string& out_dir);

}  // namespace nplps
