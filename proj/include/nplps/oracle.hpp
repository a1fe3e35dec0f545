#pragma once

#include "nplps/geometry.hpp"
#include "nplps/image.hpp"

#include <string>
#include <vector>

namespace nplps {

// Exact signed-distance primitives for the analytic forward renderer.
struct ScenePrimitive {
  enum class Type { Sphere, Box, Torus };
  Type type = Type::Sphere;
  Vec3 center = Vec3::Zero();
  double radius = 1;       // sphere
  Vec3 half_size = Vec3::Ones();  // box
  double major = 1, minor = 0.25; // torus, in the xy plane around center
};

struct AlbedoPattern {
  enum class Kind { Constant, Checker };
  Kind kind = Kind::Constant;
  double value = 1.0;
  double value2 = 0.5;     // checker second tone
  double period = 10.0;    // checker cell size, mm
};

struct OracleBrdf {
  enum class Kind { Lambertian, BlinnPhong };
  Kind kind = Kind::Lambertian;
  double spec_strength = 0.5;
  double shininess = 32.0;
};

struct OracleScene {
  std::vector<ScenePrimitive> primitives;
  AlbedoPattern albedo;
  OracleBrdf brdf;
  double indirect_r0 = 0;  // constant R substituted into the indirect term
  int width = 96, height = 96;
  std::vector<Camera> cameras;
  std::vector<std::vector<PointLight>> lights;  // per view, world frame
};

double scene_sdf(const OracleScene& scene, const Vec3& x);
Vec3 scene_sdf_gradient(const OracleScene& scene, const Vec3& x);  // analytic, unit a.e.
double scene_albedo(const OracleScene& scene, const Vec3& x);
double oracle_brdf(const OracleScene& scene, const Vec3& n, const Vec3& l, const Vec3& v);

// First hit by sphere tracing (tolerance 1e-3 mm, at most 256 steps).
bool scene_trace(const OracleScene& scene, const Ray& ray, double t_min, double t_max,
                 double* t_hit);

// Hard cast shadow: 0 when the segment from x toward the light is blocked.
double scene_hard_shadow(const OracleScene& scene, const Vec3& x, const Vec3& light_pos);

struct OracleView {
  std::vector<ImageF> light_images;  // physical intensities, clipped to [0, 1]
  std::vector<ImageF> shadow_maps;   // per light, 1 = lit
  ImageU8 mask;
  ImageF normals_cam;  // 3 channels, camera frame
  ImageF depth_z;      // camera-frame z, mm; 0 outside mask
  ImageF ao;           // mean of (1 - s) over lights
};

OracleView oracle_render_view(const OracleScene& scene, int view_index);

// Structured scene description (JSON). Supports explicit camera/light lists
// and a ring generator; see docs/FORMATS.md.
OracleScene load_scene(const std::string& path);

}  // namespace nplps
