#include "nplps/oracle.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace nplps {

namespace {

double primitive_sdf(const ScenePrimitive& p, const Vec3& x) {
  Vec3 q = x - p.center;
  switch (p.type) {
    case ScenePrimitive::Type::Sphere:
      return q.norm() - p.radius;
    case ScenePrimitive::Type::Box: {
      Vec3 d = q.cwiseAbs() - p.half_size;
      Vec3 outside = d.cwiseMax(0.0);
      double inside = std::min(d.maxCoeff(), 0.0);
      return outside.norm() + inside;
    }
    case ScenePrimitive::Type::Torus: {
      double ring = std::hypot(q.x(), q.y()) - p.major;
      return std::hypot(ring, q.z()) - p.minor;
    }
  }
  return std::numeric_limits<double>::infinity();
}

Vec3 primitive_gradient(const ScenePrimitive& p, const Vec3& x) {
  Vec3 q = x - p.center;
  switch (p.type) {
    case ScenePrimitive::Type::Sphere: {
      double n = q.norm();
      return n > 1e-12 ? Vec3(q / n) : Vec3::UnitZ();
    }
    case ScenePrimitive::Type::Box: {
      Vec3 d = q.cwiseAbs() - p.half_size;
      Vec3 sign(q.x() < 0 ? -1.0 : 1.0, q.y() < 0 ? -1.0 : 1.0, q.z() < 0 ? -1.0 : 1.0);
      if ((d.array() > 0.0).any()) {
        Vec3 outside = d.cwiseMax(0.0);
        double n = outside.norm();
        return (outside / n).cwiseProduct(sign);
      }
      // Inside: gradient along the axis of smallest penetration.
      int axis;
      d.maxCoeff(&axis);
      Vec3 g = Vec3::Zero();
      g(axis) = sign(axis);
      return g;
    }
    case ScenePrimitive::Type::Torus: {
      double rho = std::hypot(q.x(), q.y());
      double ring = rho - p.major;
      double n = std::hypot(ring, q.z());
      if (n < 1e-12 || rho < 1e-12) return Vec3::UnitZ();
      Vec3 g(ring * q.x() / rho, ring * q.y() / rho, q.z());
      return g / n;
    }
  }
  return Vec3::UnitZ();
}

}  // namespace

double scene_sdf(const OracleScene& scene, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : scene.primitives) best = std::min(best, primitive_sdf(p, x));
  return best;
}

Vec3 scene_sdf_gradient(const OracleScene& scene, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  const ScenePrimitive* arg = nullptr;
  for (const auto& p : scene.primitives) {
    double d = primitive_sdf(p, x);
    if (d < best) {
      best = d;
      arg = &p;
    }
  }
  if (!arg) throw std::runtime_error("scene_sdf_gradient: empty scene");
  return primitive_gradient(*arg, x);
}

double scene_albedo(const OracleScene& scene, const Vec3& x) {
  if (scene.albedo.kind == AlbedoPattern::Kind::Constant) return scene.albedo.value;
  double p = scene.albedo.period;
  int parity = (static_cast<int>(std::floor(x.x() / p)) + static_cast<int>(std::floor(x.y() / p)) +
                static_cast<int>(std::floor(x.z() / p))) &
               1;
  return parity ? scene.albedo.value2 : scene.albedo.value;
}

double oracle_brdf(const OracleScene& scene, const Vec3& n, const Vec3& l, const Vec3& v) {
  double ndotl = n.dot(l);
  if (ndotl <= 0) return 0;
  if (scene.brdf.kind == OracleBrdf::Kind::Lambertian) return ndotl;
  Vec3 h_raw = l + v;
  double hn = h_raw.norm();
  if (hn < 1e-9) return 0;
  double ndoth = std::max(n.dot(h_raw / hn), 0.0);
  return ndotl * (1.0 + scene.brdf.spec_strength * std::pow(ndoth, scene.brdf.shininess));
}

bool scene_trace(const OracleScene& scene, const Ray& ray, double t_min, double t_max,
                 double* t_hit) {
  double t = t_min;
  for (int step = 0; step < 256 && t < t_max; ++step) {
    double d = scene_sdf(scene, ray.origin + t * ray.dir);
    if (d < 1e-3) {
      *t_hit = t;
      return true;
    }
    t += d;
  }
  return false;
}

double scene_hard_shadow(const OracleScene& scene, const Vec3& x, const Vec3& light_pos) {
  Vec3 to_light = light_pos - x;
  double dist = to_light.norm();
  Ray ray{x, to_light / dist};
  double t_hit;
  if (scene_trace(scene, ray, 0.05, dist - 0.05, &t_hit)) return 0.0;
  return 1.0;
}

OracleView oracle_render_view(const OracleScene& scene, int view_index) {
  const Camera& cam = scene.cameras.at(view_index);
  const auto& lights = scene.lights.at(view_index);
  const int w = scene.width, h = scene.height;
  const size_t n_lights = lights.size();

  OracleView view;
  view.mask = ImageU8(w, h, 1, 0);
  view.normals_cam = ImageF(w, h, 3, 0.0f);
  view.depth_z = ImageF(w, h, 1, 0.0f);
  view.ao = ImageF(w, h, 1, 0.0f);
  view.light_images.assign(n_lights, ImageF(w, h, 1, 0.0f));
  view.shadow_maps.assign(n_lights, ImageF(w, h, 1, 1.0f));

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Ray ray = pixel_to_ray(cam, Vec2(x + 0.5, y + 0.5));
      double t_hit;
      if (!scene_trace(scene, ray, 1.0, 1e5, &t_hit)) continue;  // background
      Vec3 hit = ray.origin + t_hit * ray.dir;
      Vec3 n = scene_sdf_gradient(scene, hit).normalized();
      Vec3 v = -ray.dir;
      double rho = scene_albedo(scene, hit);

      view.mask.at(x, y) = 255;
      Vec3 n_cam = cam.rot * n;
      for (int c = 0; c < 3; ++c) view.normals_cam.at(x, y, c) = static_cast<float>(n_cam(c));
      view.depth_z.at(x, y) = static_cast<float>((cam.rot * hit + cam.trans).z());

      std::vector<double> shadows(n_lights);
      for (size_t m = 0; m < n_lights; ++m) {
        shadows[m] = scene_hard_shadow(scene, hit + 0.01 * n, lights[m].position);
        view.shadow_maps[m].at(x, y) = static_cast<float>(shadows[m]);
      }
      double ao = 0;
      for (double s : shadows) ao += 1.0 - s;
      ao /= static_cast<double>(n_lights);
      view.ao.at(x, y) = static_cast<float>(ao);

      for (size_t m = 0; m < n_lights; ++m) {
        auto lv = light_vector_and_attenuation(hit, lights[m]);
        double b = oracle_brdf(scene, n, lv.l_unit, v);
        double i = shadows[m] * lv.attenuation * rho * b +
                   lv.attenuation * rho * ao * scene.indirect_r0;
        view.light_images[m].at(x, y) = static_cast<float>(std::clamp(i, 0.0, 1.0));
      }
    }
  }
  return view;
}

namespace {

using nlohmann::json;

Vec3 to_vec3(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

}  // namespace

OracleScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scene: cannot open " + path);
  json j;
  in >> j;

  OracleScene scene;
  for (const auto& pj : j.at("primitives")) {
    ScenePrimitive p;
    std::string type = pj.at("type");
    p.center = to_vec3(pj.at("center"));
    if (type == "sphere") {
      p.type = ScenePrimitive::Type::Sphere;
      p.radius = pj.at("radius");
    } else if (type == "box") {
      p.type = ScenePrimitive::Type::Box;
      p.half_size = to_vec3(pj.at("half_size"));
    } else if (type == "torus") {
      p.type = ScenePrimitive::Type::Torus;
      p.major = pj.at("major");
      p.minor = pj.at("minor");
    } else {
      throw std::runtime_error("load_scene: unknown primitive type " + type);
    }
    scene.primitives.push_back(p);
  }
  if (scene.primitives.empty()) throw std::runtime_error("load_scene: no primitives");

  if (j.contains("albedo")) {
    const auto& aj = j["albedo"];
    std::string pattern = aj.value("pattern", "constant");
    scene.albedo.kind =
        pattern == "checker" ? AlbedoPattern::Kind::Checker : AlbedoPattern::Kind::Constant;
    scene.albedo.value = aj.value("value", 1.0);
    scene.albedo.value2 = aj.value("value2", 0.5);
    scene.albedo.period = aj.value("period_mm", 10.0);
  }
  if (j.contains("brdf")) {
    const auto& bj = j["brdf"];
    std::string model = bj.value("model", "lambertian");
    scene.brdf.kind =
        model == "blinn_phong" ? OracleBrdf::Kind::BlinnPhong : OracleBrdf::Kind::Lambertian;
    scene.brdf.spec_strength = bj.value("spec_strength", 0.5);
    scene.brdf.shininess = bj.value("shininess", 32.0);
  }
  scene.indirect_r0 = j.value("indirect_r0", 0.0);

  const auto& ij = j.at("image");
  scene.width = ij.at("width");
  scene.height = ij.at("height");

  const auto& cj = j.at("cameras");
  if (cj.contains("ring")) {
    const auto& rj = cj["ring"];
    int count = rj.at("count");
    double dist = rj.at("distance_mm");
    double elev = rj.value("elevation_deg", 10.0) * M_PI / 180.0;
    double focal = rj.at("focal_px");
    Vec3 target = to_vec3(rj.at("target"));
    for (int i = 0; i < count; ++i) {
      double az = 2.0 * M_PI * i / count;
      Vec3 pos = target + dist * Vec3(std::cos(az) * std::cos(elev),
                                      std::sin(az) * std::cos(elev), std::sin(elev));
      scene.cameras.push_back(make_lookat_camera(pos, target, focal, scene.width, scene.height));
    }
  } else {
    for (const auto& one : cj.at("list")) {
      Camera cam;
      cam.fx = one.at("fx");
      cam.fy = one.at("fy");
      cam.cx = one.at("cx");
      cam.cy = one.at("cy");
      const auto& r = one.at("rot");
      for (int k = 0; k < 9; ++k) cam.rot(k / 3, k % 3) = r.at(k);
      cam.trans = to_vec3(one.at("trans"));
      cam.width = scene.width;
      cam.height = scene.height;
      scene.cameras.push_back(cam);
    }
  }

  const auto& lj = j.at("lights");
  double phi = lj.value("phi", 1e6);
  if (lj.contains("camera_ring")) {
    // Lights riding with each camera: a ring in the camera's image plane.
    const auto& rj = lj["camera_ring"];
    int per_view = rj.at("per_view");
    double radius = rj.at("radius_mm");
    double forward = rj.value("forward_mm", 0.0);
    for (const auto& cam : scene.cameras) {
      std::vector<PointLight> ring;
      Vec3 c = cam.center();
      Vec3 xw = cam.rot.row(0).transpose();
      Vec3 yw = cam.rot.row(1).transpose();
      Vec3 zw = cam.rot.row(2).transpose();
      for (int m = 0; m < per_view; ++m) {
        double ang = 2.0 * M_PI * m / per_view;
        PointLight light;
        light.position = c + radius * (std::cos(ang) * xw + std::sin(ang) * yw) + forward * zw;
        light.log_phi = std::log(phi);
        ring.push_back(light);
      }
      scene.lights.push_back(ring);
    }
  } else {
    for (const auto& per_view : lj.at("list")) {
      std::vector<PointLight> ls;
      for (const auto& pos : per_view) ls.push_back({to_vec3(pos), std::log(phi)});
      scene.lights.push_back(ls);
    }
    if (scene.lights.size() != scene.cameras.size())
      throw std::runtime_error("load_scene: lights list must have one entry per view");
  }
  return scene;
}

}  // namespace nplps
