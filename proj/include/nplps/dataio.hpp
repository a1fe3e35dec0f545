#pragma once

#include "nplps/geometry.hpp"
#include "nplps/image.hpp"
#include "nplps/oracle.hpp"

#include <string>
#include <vector>

namespace nplps {

// One calibrated view of the dataset. Images are grayscale floats in [0, 1];
// lights and cameras are world-frame after loading. Normal maps keep the
// on-disk camera-frame convention (use normal_world_at).
struct DatasetView {
  Camera camera;
  std::vector<ImageF> light_images;
  ImageU8 mask;
  std::vector<PointLight> lights;
  ImageF normals_cam;  // 3 channels; empty when absent
  ImageF depth_z;      // camera-frame z in mm; empty when absent
  std::vector<int> excluded_lights;

  bool has_normals() const { return normals_cam.channels == 3 && !normals_cam.data.empty(); }
  bool has_depth() const { return !depth_z.data.empty(); }
  bool light_excluded(int m) const;
  Vec3 normal_world_at(int x, int y) const;
};

struct ManifestView {
  std::string dir;
  Camera camera;
  std::vector<Vec3> light_positions;
  std::vector<int> exclude_lights;
};

struct DatasetManifest {
  int width = 0, height = 0, bit_depth = 16;
  std::string light_frame = "camera";  // "world" | "camera"
  VecX phi;                            // intrinsic brightness per light index
  std::vector<ManifestView> views;
};

struct LoadOptions {
  bool fix_intrinsics = false;  // substitute the known-good intrinsics everywhere
  bool close_mask_holes = false;
  int close_iterations = 2;
  std::string light_frame_override;  // "", "world" or "camera"
  std::string exclude_file;          // extra "view light" index pairs
};

// Intrinsics used by the --fix-intrinsics repair (shared fx/cx/cy anomaly fix).
constexpr double kRepairFx = 3759.1, kRepairFy = 3759.0;
constexpr double kRepairCx = 305.5, kRepairCy = 255.5;

DatasetManifest read_manifest(const std::string& root);
void write_manifest(const std::string& root, const DatasetManifest& manifest);

// Loads a dataset directory (manifest.json + view_XX/...). Rotations are
// orthonormalized, lights converted to world, masks optionally hole-closed.
// Throws std::runtime_error naming the offending file on any problem.
std::vector<DatasetView> load_dataset(const std::string& root, const LoadOptions& opts = {});

// Emits the loader's layout from oracle renders: 16-bit PNGs, masks, float
// normal/depth maps and manifest.json.
void write_dataset(const OracleScene& scene, const std::vector<OracleView>& views,
                   const std::string& root);

// Least-squares integration of the normal-induced log-depth gradient field
// over the mask (screened Poisson, Neumann boundary), anchored so the median
// depth equals depth_prior. Input normals are camera-frame; output is
// camera-frame z (mm), 0 outside the mask. Throws std::invalid_argument when
// the field is degenerate everywhere.
ImageF integrate_normals_to_depth(const ImageF& normals_cam, const ImageU8& mask,
                                  const Camera& cam, double depth_prior);

}  // namespace nplps
