#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nplps/fields.hpp"

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

// Shared sphere-initialized field (center 0, r = 50 mm).
const FieldSet& sphere_field() {
  static FieldSet fs = [] {
    FieldSet f = FieldSet::create(small_config(), 1);
    auto res = init_sphere(f, Vec3::Zero(), 50.0);
    std::printf("init_sphere: steps=%d val_err=%.3f mm converged=%d\n", res.steps,
                res.mean_abs_error, res.converged);
    return f;
  }();
  return fs;
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Mat3 noise;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) noise(r, c) = u(rng);
  return orthonormalize_rotation(Mat3::Identity() + noise);
}

}  // namespace

TEST_CASE("init_sphere regresses to the analytic sphere SDF") {
  const FieldSet& fs = sphere_field();
  std::mt19937_64 rng(555);
  std::uniform_real_distribution<double> box(-75.0, 75.0);

  double err = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Vec3 p(box(rng), box(rng), box(rng));
    err += std::abs(sdf_value(fs, p) - (p.norm() - 50.0));
  }
  CHECK(err / n < 1.0);

  CHECK(sdf_value(fs, Vec3(100, 0, 0)) == doctest::Approx(50.0).epsilon(0.03));
  CHECK(sdf_value(fs, Vec3::Zero()) == doctest::Approx(-50.0).epsilon(0.03));
}

TEST_CASE("sphere-initialized normals point radially") {
  const FieldSet& fs = sphere_field();
  auto n1 = sdf_normal(fs, Vec3(100, 0, 0));
  REQUIRE(n1.has_value());
  CHECK(std::acos(std::clamp(n1->dot(Vec3(1, 0, 0)), -1.0, 1.0)) < 2.0 * M_PI / 180);
  auto n2 = sdf_normal(fs, Vec3(-100, 0, 0));
  REQUIRE(n2.has_value());
  CHECK(std::acos(std::clamp(n2->dot(Vec3(-1, 0, 0)), -1.0, 1.0)) < 2.0 * M_PI / 180);
  CHECK(std::abs(n1->norm() - 1.0) < 1e-12);

  // Mean angular error on the shell.
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  double ang = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
    auto nn = sdf_normal(fs, 50.0 * dir);
    REQUIRE(nn.has_value());
    ang += std::acos(std::clamp(nn->dot(dir), -1.0, 1.0));
  }
  CHECK(ang / n < 5.0 * M_PI / 180);
}

TEST_CASE("sphere init leaves a small eikonal residual in the box") {
  const FieldSet& fs = sphere_field();
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> box(-75.0, 75.0);
  double resid = 0;
  const int n = 3000;
  for (int i = 0; i < n; ++i) {
    Vec3 p(box(rng), box(rng), box(rng));
    resid += std::abs(sdf_gradient(fs, p).norm() - 1.0);
  }
  CHECK(resid / n < 0.1);
}

TEST_CASE("field is close to 1-Lipschitz after init") {
  const FieldSet& fs = sphere_field();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> box(-70.0, 70.0), step(-2.0, 2.0);
  for (int i = 0; i < 300; ++i) {
    Vec3 p(box(rng), box(rng), box(rng));
    Vec3 d(step(rng), step(rng), step(rng));
    CHECK(std::abs(sdf_value(fs, p) - sdf_value(fs, p + d)) <= 1.5 * d.norm() + 1e-9);
  }
}

TEST_CASE("sdf_eval_batch matches single-point evaluation") {
  const FieldSet& fs = sphere_field();
  MatX pos(3, 5);
  pos << 10, -20, 0, 55, 5,
         0, 12, -70, 1, 2,
         3, 4, 5, -9, 60;
  SdfBatch batch;
  sdf_eval_batch(fs, pos, true, batch);
  for (int i = 0; i < 5; ++i) {
    CHECK(batch.values(i) == doctest::Approx(sdf_value(fs, pos.col(i))).epsilon(1e-12));
    CHECK((batch.gradients.col(i) - sdf_gradient(fs, pos.col(i))).norm() < 1e-12);
  }
}

TEST_CASE("brdf with zero weights is pure Lambertian") {
  FieldSet fs = FieldSet::create(small_config(), 1);
  fs.brdf_net.set_zero_weights();
  Vec3 n(0, 0, 1);
  Vec3 v = Vec3(0.3, -0.2, 1).normalized();
  Vec3 l = Vec3(0.5, 0.5, 1).normalized();
  CHECK(brdf_eval(fs, n, l, v) == doctest::Approx(n.dot(l)).epsilon(1e-12));

  Vec3 l_back = Vec3(0.2, 0.2, -1).normalized();
  CHECK(brdf_eval(fs, n, l_back, v) == 0.0);
  CHECK(brdf_eval(fs, n, -v, v) == 0.0);  // degenerate half vector
}

TEST_CASE("brdf is positive for front-facing lights with any weights") {
  FieldSet fs = FieldSet::create(small_config(), 1);
  std::mt19937_64 rng(123);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    Vec3 n = Vec3(g(rng), g(rng), g(rng)).normalized();
    Vec3 l = Vec3(g(rng), g(rng), g(rng)).normalized();
    Vec3 v = Vec3(g(rng), g(rng), g(rng)).normalized();
    double b = brdf_eval(fs, n, l, v);
    if (n.dot(l) > 0 && (l + v).norm() > 1e-9)
      CHECK(b > 0.0);
    else
      CHECK(b == 0.0);
  }
}

TEST_CASE("brdf depends only on the angle triplet (rotation invariance)") {
  FieldSet fs = FieldSet::create(small_config(), 1);
  std::mt19937_64 rng(321);
  std::normal_distribution<double> g;
  for (int i = 0; i < 100; ++i) {
    Vec3 n = Vec3(g(rng), g(rng), g(rng)).normalized();
    Vec3 l = Vec3(g(rng), g(rng), g(rng)).normalized();
    Vec3 v = Vec3(g(rng), g(rng), g(rng)).normalized();
    Mat3 rot = random_rotation(rng);
    double b0 = brdf_eval(fs, n, l, v);
    double b1 = brdf_eval(fs, rot * n, rot * l, rot * v);
    CHECK(std::abs(b0 - b1) < 1e-12 * std::max(1.0, std::abs(b0)));
  }
}

TEST_CASE("albedo and reflectance are positive scalar fields of position only") {
  FieldSet fs = FieldSet::create(small_config(), 1);
  fs.albedo_net.set_zero_weights();
  fs.reflect_net.set_zero_weights();
  CHECK(albedo_eval(fs, Vec3(1, 2, 3)) == doctest::Approx(1.0));
  CHECK(reflect_eval(fs, Vec3(-5, 0, 9)) == doctest::Approx(1.0));

  FieldSet fs2 = FieldSet::create(small_config(), 1);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> box(-100, 100);
  for (int i = 0; i < 200; ++i) {
    Vec3 p(box(rng), box(rng), box(rng));
    CHECK(albedo_eval(fs2, p) > 0.0);
    CHECK(reflect_eval(fs2, p) > 0.0);
  }
}

TEST_CASE("albedo field gradient matches finite differences") {
  FieldSet fs = FieldSet::create(small_config(), 2);
  const double h = 1e-4 * fs.cfg.coord_scale;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> box(-60, 60);
  for (int i = 0; i < 20; ++i) {
    Vec3 p(box(rng), box(rng), box(rng));
    // d albedo / d x = net jacobian / coord_scale
    Vec3 analytic =
        fs.albedo_net.input_gradient(p / fs.cfg.coord_scale).row(0).transpose() /
        fs.cfg.coord_scale;
    Vec3 fd;
    for (int j = 0; j < 3; ++j) {
      Vec3 pp = p, pm = p;
      pp(j) += h;
      pm(j) -= h;
      fd(j) = (albedo_eval(fs, pp) - albedo_eval(fs, pm)) / (2 * h);
    }
    CHECK((analytic - fd).norm() / (fd.norm() + 1e-12) < 1e-4);
  }
}

TEST_CASE("fieldset checkpoints round-trip") {
  FieldSet fs = FieldSet::create(small_config(), 3);
  fs.beta = 2.25;
  fs.log_phi << 0.5, -0.25, 1.0;
  fs.bbox_min = Vec3(-10, -20, -30);
  fs.bbox_max = Vec3(40, 50, 60);
  std::string path = "/tmp/nplps_fieldset.ckpt";
  save_fieldset(fs, path);
  FieldSet back = load_fieldset(path);
  CHECK(back.beta == fs.beta);
  CHECK((back.log_phi - fs.log_phi).norm() == 0.0);
  CHECK((back.bbox_min - fs.bbox_min).norm() == 0.0);
  CHECK((back.bbox_max - fs.bbox_max).norm() == 0.0);
  Vec3 p(7, -3, 12);
  CHECK(sdf_value(back, p) == sdf_value(fs, p));
  CHECK(albedo_eval(back, p) == albedo_eval(fs, p));
  std::remove(path.c_str());
}

TEST_CASE("beta clamp holds through optimizer steps") {
  FieldSet fs = FieldSet::create(small_config(), 1);
  fs.beta = 0.15;
  FieldGradients grads = make_field_gradients(fs);
  FieldOptimizer opt(fs, grads, FieldLearningRates{1e-4, 1e-4, 1e-3, 0.2});
  grads.beta = 1.0;  // pushes beta down hard
  for (int i = 0; i < 5; ++i) opt.step();
  CHECK(fs.beta >= kBetaMin);
}
