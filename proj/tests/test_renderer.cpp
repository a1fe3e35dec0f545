#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nplps/oracle.hpp"
#include "nplps/renderer.hpp"

#include <cmath>
#include <cstdio>
#include <random>

using namespace nplps;

namespace {

FieldConfig small_config() {
  FieldConfig cfg;
  cfg.sdf_layers = 3;
  cfg.sdf_width = 128;
  cfg.albedo_layers = 3;
  cfg.albedo_width = 64;
  cfg.reflect_layers = 3;
  cfg.reflect_width = 64;
  cfg.brdf_layers = 3;
  cfg.brdf_width = 32;
  return cfg;
}

// Sphere field (r = 50 at origin) with Lambertian shading nets and a sharp
// density; shared across the geometry tests here.
const FieldSet& sphere_field() {
  static FieldSet fs = [] {
    FieldSet f = FieldSet::create(small_config(), 1);
    init_sphere(f, Vec3::Zero(), 50.0);
    f.albedo_net.set_zero_weights();
    f.reflect_net.set_zero_weights();
    f.brdf_net.set_zero_weights();
    f.beta = 1.0;
    return f;
  }();
  return fs;
}

// Field that is hugely positive everywhere (empty space).
FieldSet empty_field() {
  FieldSet fs = FieldSet::create(small_config(), 1);
  fs.sdf_net.set_zero_weights();
  fs.sdf_net.layers().back().b(0) = 1e4;  // F = coord_scale * 1e4 = 1e6 mm
  fs.albedo_net.set_zero_weights();
  fs.reflect_net.set_zero_weights();
  fs.brdf_net.set_zero_weights();
  fs.beta = 1.0;
  return fs;
}

OracleScene single_sphere_scene() {
  OracleScene scene;
  ScenePrimitive p;
  p.type = ScenePrimitive::Type::Sphere;
  p.center = Vec3::Zero();
  p.radius = 50.0;
  scene.primitives.push_back(p);
  scene.width = 64;
  scene.height = 64;
  scene.cameras.push_back(
      make_lookat_camera(Vec3(1500, 0, 0), Vec3::Zero(), 900, scene.width, scene.height));
  scene.lights.push_back({PointLight{Vec3(1500, 0, 0), std::log(1e6)}});
  return scene;
}

}  // namespace

TEST_CASE("laplace density closed forms") {
  for (double beta : {0.5, 1.0, 5.0}) {
    CHECK(laplace_density(0.0, beta) == doctest::Approx(1.0 / (2 * beta)).epsilon(1e-12));
    CHECK(laplace_density(beta, beta) ==
          doctest::Approx(std::exp(-1.0) / (2 * beta)).epsilon(1e-12));
    CHECK(laplace_density(-1e4 * beta, beta) == doctest::Approx(1.0 / beta).epsilon(1e-9));
    CHECK(laplace_density(1e4 * beta, beta) == doctest::Approx(0.0));
  }
}

TEST_CASE("laplace density derivatives match finite differences") {
  const double h = 1e-6;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(-20, 20), ub(0.3, 6.0);
  for (int i = 0; i < 500; ++i) {
    double d = ud(rng), beta = ub(rng);
    double fd_d = (laplace_density(d + h, beta) - laplace_density(d - h, beta)) / (2 * h);
    double fd_b = (laplace_density(d, beta + h) - laplace_density(d, beta - h)) / (2 * h);
    CHECK(laplace_density_dd(d, beta) == doctest::Approx(fd_d).epsilon(1e-5));
    CHECK(laplace_density_dbeta(d, beta) == doctest::Approx(fd_b).epsilon(1e-5));
  }
}

TEST_CASE("composite is a plain weighted sum") {
  std::vector<double> vals = {3.0};
  std::vector<double> w1 = {1.0};
  CHECK(composite(vals, w1) == doctest::Approx(3.0));

  std::vector<double> depths = {10.0, 20.0};
  std::vector<double> w = {0.5, 0.5};
  CHECK(composite(depths, w) == doctest::Approx(15.0));

  std::vector<double> zero_w = {0.0, 0.0};
  CHECK(composite(depths, zero_w) == doctest::Approx(0.0));
}

TEST_CASE("empty field rays carry no opacity") {
  FieldSet fs = empty_field();
  Ray ray{Vec3(-1500, 0, 0), Vec3(1, 0, 0)};
  RaySampleSet set = sample_ray(fs, ray, 1500, 20, {32, 32, 32, 16}, 99);
  CHECK(set.opacity < 1e-9);
  for (const auto& s : set.samples) CHECK(s.weight < 1e-9);
}

TEST_CASE("compositing weights are a partition bounded by one") {
  const FieldSet& fs = sphere_field();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 30; ++trial) {
    Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
    Ray ray{-1500 * dir + Vec3(0, 5 * g(rng), 5 * g(rng)), dir};
    RaySampleSet set = sample_ray(fs, ray, 1450 + 20 * g(rng), 25, {32, 32, 32, 16},
                                  static_cast<std::uint64_t>(trial));
    double sum = 0;
    double prev = -1e30;
    for (const auto& s : set.samples) {
      CHECK(s.weight >= 0.0);
      CHECK(s.t >= prev);
      prev = s.t;
      sum += s.weight;
    }
    CHECK(sum <= 1.0 + 1e-6);
    CHECK(sum == doctest::Approx(set.opacity).epsilon(1e-9));
  }
}

TEST_CASE("sphere ray composited depth matches the analytic first hit") {
  const FieldSet& fs = sphere_field();
  Ray ray{Vec3(-1500, 0, 0), Vec3(1, 0, 0)};
  // Analytic first hit at 1450.
  RaySampleSet set = sample_ray(fs, ray, 1460, 25, {64, 64, 64, 16}, 7);
  REQUIRE(set.has_avg);
  double wsum = 0, tsum = 0;
  for (const auto& s : set.samples) {
    wsum += s.weight;
    tsum += s.weight * s.t;
  }
  CHECK(std::abs(tsum / wsum - 1450.0) < 2.0);
  CHECK(set.opacity > 0.99);
}

TEST_CASE("composited intensity converges with sample count") {
  const FieldSet& fs = sphere_field();
  Camera cam = make_lookat_camera(Vec3(1500, 0, 0), Vec3::Zero(), 900, 64, 64);
  std::vector<PointLight> lights = {PointLight{Vec3(1480, 120, 100), std::log(2e6)}};

  auto intensity = [&](int n, std::uint64_t seed) {
    auto res = render_pixel(fs, cam, lights, Vec2(32.5, 30.5), 1452, 25, {n, n, n, 16}, seed);
    return res.intensities(0);
  };
  double dense = intensity(1366, 1);  // ~4096 samples total
  double i64 = intensity(64, 2);
  double i128 = intensity(128, 3);
  CHECK(std::abs(i64 - dense) / dense < 0.01);
  CHECK(std::abs(i128 - dense) / dense < 0.01);
}

TEST_CASE("shadow factor: free path and blocked path") {
  FieldSet empty = empty_field();
  PointLight light{Vec3(0, 0, 1000), 0.0};
  CHECK(shadow_factor(empty, Vec3(0, 0, 0), light, 3) > 0.99);

  // Point behind the sphere w.r.t. the light: the segment crosses the body.
  const FieldSet& fs = sphere_field();
  PointLight sun{Vec3(0, 0, 2000), 0.0};
  CHECK(shadow_factor(fs, Vec3(0, 0, -52), sun, 4) < 0.05);
}

TEST_CASE("binarized shadow factor agrees with sphere-traced hard shadows") {
  const FieldSet& fs = sphere_field();
  OracleScene scene = single_sphere_scene();

  std::mt19937_64 rng(31);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> ur(52.0, 75.0), ud(150.0, 2000.0);
  int agree = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    Vec3 x = ur(rng) * Vec3(g(rng), g(rng), g(rng)).normalized();
    Vec3 ldir = Vec3(g(rng), g(rng), g(rng)).normalized();
    PointLight light{x + ud(rng) * ldir, 0.0};

    double s = shadow_factor(fs, x, light, mix_seed(777, i));
    // Hard oracle: does the segment [2, 50] mm toward the light cross the
    // analytic sphere?
    auto lv = light_vector_and_attenuation(x, light);
    Ray ray{x, lv.l_unit};
    double t_hit;
    bool blocked = scene_trace(scene, ray, kShadowNear, kShadowFar, &t_hit);
    bool soft_blocked = s < 0.5;
    agree += (blocked == soft_blocked) ? 1 : 0;
  }
  CHECK(agree >= static_cast<int>(0.95 * n));
}

TEST_CASE("shadow transmittance is monotone in occlusion") {
  // Product-of-transparency form: lowering any sample's SDF can only darken.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(-5.0, 30.0);
  const double beta = 1.0, delta = 3.0;
  for (int trial = 0; trial < 200; ++trial) {
    double s_plain = 1.0, s_occluded = 1.0;
    for (int j = 0; j < 16; ++j) {
      double d = ud(rng);
      double d_occ = std::min(d, ud(rng));  // an inserted occluder only lowers d
      s_plain *= std::exp(-laplace_density(d, beta) * delta);
      s_occluded *= std::exp(-laplace_density(d_occ, beta) * delta);
    }
    CHECK(s_occluded <= s_plain + 1e-12);
  }
}

TEST_CASE("ambient occlusion closed forms") {
  std::vector<double> all_lit = {1, 1, 1};
  CHECK(ambient_occlusion(all_lit) == doctest::Approx(0.0));
  std::vector<double> all_dark = {0, 0};
  CHECK(ambient_occlusion(all_dark) == doctest::Approx(1.0));
  std::vector<double> mixed = {1, 0, 1, 0};
  CHECK(ambient_occlusion(mixed) == doctest::Approx(0.5));
  CHECK_THROWS_AS(ambient_occlusion(std::span<const double>{}), std::invalid_argument);
}

TEST_CASE("shade reduces to attenuated Lambertian and respects full shadow") {
  const FieldSet& fs = sphere_field();  // zero-weight shading nets
  PointLight light{Vec3(300, 0, 1000), std::log(3e6)};
  ShadeInputs in;
  in.x = Vec3(0, 0, 50);
  in.n = Vec3(0, 0, 1);
  in.v = Vec3(0, 0, 1);
  in.albedo = 1.0;
  in.shadow = 1.0;
  in.ao = 0.0;
  in.reflect = 1.0;

  auto lv = light_vector_and_attenuation(in.x, light);
  CHECK(shade(fs, in, light) ==
        doctest::Approx(lv.attenuation * in.n.dot(lv.l_unit)).epsilon(1e-12));

  in.shadow = 0.0;
  CHECK(shade(fs, in, light) == doctest::Approx(0.0));
}

TEST_CASE("shade is linear in albedo and in brightness") {
  const FieldSet& fs = sphere_field();
  PointLight light{Vec3(200, 300, 900), std::log(2e6)};
  ShadeInputs in;
  in.x = Vec3(5, -3, 48);
  in.n = Vec3(0.2, 0.1, 1).normalized();
  in.v = Vec3(0.1, 0, 1).normalized();
  in.albedo = 0.7;
  in.shadow = 0.8;
  in.ao = 0.3;
  in.reflect = 1.2;

  double base = shade(fs, in, light);
  ShadeInputs in2 = in;
  in2.albedo *= 3.0;
  CHECK(shade(fs, in2, light) == doctest::Approx(3.0 * base).epsilon(1e-12));

  PointLight bright = light;
  bright.log_phi = light.log_phi + std::log(5.0);
  CHECK(shade(fs, in, bright) == doctest::Approx(5.0 * base).epsilon(1e-12));
}

TEST_CASE("render_pixel: background ray, silhouette normal, freespace tags") {
  const FieldSet& fs = sphere_field();
  Camera cam = make_lookat_camera(Vec3(1500, 0, 0), Vec3::Zero(), 900, 64, 64);
  std::vector<PointLight> lights = {PointLight{Vec3(1500, 100, 100), std::log(2e6)}};

  // Corner pixel looks past the sphere.
  auto bg = render_pixel(fs, cam, lights, Vec2(2.5, 2.5), 1500, 25, {32, 32, 32, 16}, 5);
  CHECK(bg.opacity < 1e-6);
  for (int sign : bg.freespace_sign) CHECK(sign == 1);

  // Center pixel hits it.
  auto fg = render_pixel(fs, cam, lights, Vec2(32.5, 32.5), 1452, 25, {32, 32, 32, 16}, 6);
  CHECK(fg.opacity > 0.99);
  CHECK(fg.hit);
  CHECK(std::abs(fg.normal.norm() - 1.0) < 1e-9);
  CHECK((fg.normal - Vec3(1, 0, 0)).norm() < 0.05);
  CHECK(std::abs(fg.depth - 1450.0) < 2.0);
  bool saw_pos = false, saw_neg = false;
  for (size_t i = 0; i < fg.freespace_sign.size(); ++i) {
    if (fg.freespace_sign[i] == 1) saw_pos = true;
    if (fg.freespace_sign[i] == -1) saw_neg = true;
    if (fg.freespace_sign[i] != 0) CHECK(fg.samples.samples[i].weight < kFreespaceWeightCut);
  }
  CHECK(saw_pos);
  CHECK(saw_neg);
}

TEST_CASE("oracle: axial light reproduces the closed-form sphere shading") {
  OracleScene scene = single_sphere_scene();
  OracleView view = oracle_render_view(scene, 0);

  const Camera& cam = scene.cameras[0];
  const PointLight& light = scene.lights[0][0];
  int checked = 0;
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      if (view.mask.at(x, y) == 0) continue;
      Ray ray = pixel_to_ray(cam, Vec2(x + 0.5, y + 0.5));
      // Closed-form ray/sphere intersection and Lambertian shading.
      double b = ray.origin.dot(ray.dir);
      double c = ray.origin.squaredNorm() - 50.0 * 50.0;
      double disc = b * b - c;
      REQUIRE(disc >= 0);
      double t = -b - std::sqrt(disc);
      Vec3 hit = ray.origin + t * ray.dir;
      Vec3 n = hit.normalized();
      auto lv = light_vector_and_attenuation(hit, light);
      double expect = std::clamp(lv.attenuation * std::max(n.dot(lv.l_unit), 0.0), 0.0, 1.0);
      CHECK(view.light_images[0].at(x, y) == doctest::Approx(expect).epsilon(2e-3));
      ++checked;
    }
  CHECK(checked > 500);
}

TEST_CASE("oracle: occluded points get zero shadow value") {
  OracleScene scene = single_sphere_scene();
  // A small occluder between the surface point and the light.
  ScenePrimitive occ;
  occ.type = ScenePrimitive::Type::Sphere;
  occ.center = Vec3(100, 0, 0);
  occ.radius = 20.0;
  scene.primitives.push_back(occ);
  // Light far along +x; the first sphere's +x pole is shadowed by the occluder.
  CHECK(scene_hard_shadow(scene, Vec3(50.5, 0, 0), Vec3(2000, 0, 0)) == 0.0);
  CHECK(scene_hard_shadow(scene, Vec3(0, 50.5, 0), Vec3(0, 2000, 0)) == 1.0);
}

TEST_CASE("oracle: doubling brightness doubles every unsaturated pixel") {
  OracleScene scene = single_sphere_scene();
  scene.lights[0][0].log_phi = std::log(4e5);
  OracleView v1 = oracle_render_view(scene, 0);
  scene.lights[0][0].log_phi = std::log(8e5);
  OracleView v2 = oracle_render_view(scene, 0);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      float a = v1.light_images[0].at(x, y);
      float b = v2.light_images[0].at(x, y);
      if (b < 0.999f) CHECK(static_cast<double>(b) == doctest::Approx(2.0 * a).epsilon(1e-9));
    }
}

TEST_CASE("oracle renders are invariant under a joint rigid transform") {
  OracleScene scene = single_sphere_scene();
  scene.brdf.kind = OracleBrdf::Kind::BlinnPhong;
  scene.indirect_r0 = 0.1;
  OracleView base = oracle_render_view(scene, 0);

  Mat3 rot = orthonormalize_rotation(Mat3::Identity() + 0.4 * Mat3::Ones());
  Vec3 shift(37.0, -80.0, 122.0);
  OracleScene moved = scene;
  for (auto& p : moved.primitives) p.center = rot * p.center + shift;
  for (auto& ls : moved.lights)
    for (auto& l : ls) l.position = rot * l.position + shift;
  for (auto& cam : moved.cameras) {
    // World' = rot * World + shift, so R' = R rot^T, t' = t - R' shift.
    cam.rot = cam.rot * rot.transpose();
    cam.trans = cam.trans - cam.rot * shift;
  }
  OracleView after = oracle_render_view(moved, 0);

  double max_diff = 0;
  for (size_t i = 0; i < base.light_images[0].data.size(); ++i)
    max_diff = std::max(max_diff, std::abs(static_cast<double>(base.light_images[0].data[i]) -
                                           after.light_images[0].data[i]));
  CHECK(max_diff < 1e-6);  // float storage; geometry agrees to ~1e-9
  for (size_t i = 0; i < base.mask.data.size(); ++i)
    CHECK(base.mask.data[i] == after.mask.data[i]);
}

TEST_CASE("trace_field finds the learned sphere surface") {
  const FieldSet& fs = sphere_field();
  Ray ray{Vec3(-1500, 0, 0), Vec3(1, 0, 0)};
  double t_hit;
  REQUIRE(trace_field(fs, ray, 1300, 1700, &t_hit));
  CHECK(std::abs(t_hit - 1450.0) < 2.0);
}
