#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nplps/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace nplps;

namespace {

OracleScene tiny_scene() {
  OracleScene scene;
  ScenePrimitive p;
  p.type = ScenePrimitive::Type::Sphere;
  p.center = Vec3(0, 0, 40);
  p.radius = 40.0;
  scene.primitives.push_back(p);
  scene.albedo.value = 0.8;
  scene.width = 48;
  scene.height = 48;
  for (int i = 0; i < 3; ++i) {
    double az = 2.0 * M_PI * i / 3;
    Vec3 pos = Vec3(0, 0, 40) + 1500.0 * Vec3(std::cos(az), std::sin(az), 0.12);
    scene.cameras.push_back(make_lookat_camera(pos, Vec3(0, 0, 40), 700, 48, 48));
    std::vector<PointLight> lights;
    for (int m = 0; m < 2; ++m) {
      Vec3 off = scene.cameras.back().rot.row(0).transpose() * (m ? 250.0 : -250.0);
      lights.push_back({pos + off, std::log(1.8e6)});
    }
    scene.lights.push_back(lights);
  }
  return scene;
}

}  // namespace

TEST_CASE("16-bit png round-trips bit-exactly") {
  ImageF img(9, 7, 1);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(0, 65535);
  for (auto& px : img.data) px = static_cast<float>(u(rng) / 65535.0);
  std::string path = "/tmp/nplps_test16.png";
  write_png_gray16(path, img);
  ImageF back = read_png_gray(path);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(back.data[i] == img.data[i]);  // 16-bit grid values survive exactly
  std::remove(path.c_str());
}

TEST_CASE("rgb png collapses to the fixed luminance gray") {
  ImageU8 rgb(4, 2, 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) {
      rgb.at(x, y, 0) = static_cast<std::uint8_t>(10 + 20 * x);
      rgb.at(x, y, 1) = static_cast<std::uint8_t>(100 - 10 * y);
      rgb.at(x, y, 2) = 200;
    }
  std::string path = "/tmp/nplps_rgb.png";
  write_png8(path, rgb);
  ImageF gray = read_png_gray(path);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) {
      double expect =
          (kLumaR * rgb.at(x, y, 0) + kLumaG * rgb.at(x, y, 1) + kLumaB * rgb.at(x, y, 2)) / 255.0;
      CHECK(gray.at(x, y) == doctest::Approx(expect).epsilon(1e-6));
    }
  std::remove(path.c_str());
}

TEST_CASE("f32 maps round-trip with frame tag") {
  ImageF m(5, 4, 3);
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<float>(0.1 * i - 2.0);
  std::string path = "/tmp/nplps_map.f32";
  write_f32map(path, m, "camera");
  std::string frame;
  ImageF back = read_f32map(path, &frame);
  CHECK(frame == "camera");
  REQUIRE(back.channels == 3);
  for (size_t i = 0; i < m.data.size(); ++i) CHECK(back.data[i] == m.data[i]);
  std::remove(path.c_str());
}

TEST_CASE("morphological closing fills holes and keeps foreground") {
  ImageU8 mask(21, 21, 1, 0);
  for (int y = 4; y < 17; ++y)
    for (int x = 4; x < 17; ++x) mask.at(x, y) = 255;
  mask.at(10, 10) = 0;  // pinhole
  mask.at(11, 10) = 0;
  ImageU8 closed = close_holes(mask, 2);
  CHECK(closed.at(10, 10) == 255);
  CHECK(closed.at(11, 10) == 255);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 21; ++x)
      if (mask.at(x, y) > 0) CHECK(closed.at(x, y) == 255);
}

TEST_CASE("dataset write/load round-trips pixels bit-exactly") {
  OracleScene scene = tiny_scene();
  std::vector<OracleView> views;
  for (int v = 0; v < 3; ++v) views.push_back(oracle_render_view(scene, v));

  std::string root = "/tmp/nplps_ds";
  std::filesystem::remove_all(root);
  write_dataset(scene, views, root);

  auto loaded = load_dataset(root);
  REQUIRE(loaded.size() == 3);
  for (int v = 0; v < 3; ++v) {
    REQUIRE(loaded[v].light_images.size() == 2);
    REQUIRE(loaded[v].has_normals());
    REQUIRE(loaded[v].has_depth());
    // 16-bit quantization happened at write time; loading must be exact.
    for (size_t m = 0; m < 2; ++m)
      for (size_t i = 0; i < views[v].light_images[m].data.size(); ++i) {
        double vv = std::clamp(static_cast<double>(views[v].light_images[m].data[i]), 0.0, 1.0);
        float q = static_cast<float>(std::lround(vv * 65535.0) / 65535.0);
        CHECK(loaded[v].light_images[m].data[i] == q);
      }
    for (size_t i = 0; i < views[v].mask.data.size(); ++i)
      CHECK(loaded[v].mask.data[i] == views[v].mask.data[i]);
    // World-frame lights round-trip through the manifest.
    for (int m = 0; m < 2; ++m) {
      CHECK((loaded[v].lights[m].position - scene.lights[v][m].position).norm() < 1e-9);
      CHECK(loaded[v].lights[m].phi() == doctest::Approx(scene.lights[v][m].phi()).epsilon(1e-12));
    }
    // Camera round-trip (orthonormalization is a no-op for valid rotations).
    CHECK((loaded[v].camera.rot - scene.cameras[v].rot).norm() < 1e-9);
    CHECK((loaded[v].camera.trans - scene.cameras[v].trans).norm() < 1e-12);
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("manifest round-trips through the parser") {
  OracleScene scene = tiny_scene();
  std::vector<OracleView> views;
  for (int v = 0; v < 3; ++v) views.push_back(oracle_render_view(scene, v));
  std::string root = "/tmp/nplps_ds2";
  std::filesystem::remove_all(root);
  write_dataset(scene, views, root);

  DatasetManifest m1 = read_manifest(root);
  write_manifest(root, m1);
  DatasetManifest m2 = read_manifest(root);
  CHECK(m1.width == m2.width);
  CHECK(m1.light_frame == m2.light_frame);
  CHECK((m1.phi - m2.phi).norm() == 0.0);
  REQUIRE(m1.views.size() == m2.views.size());
  for (size_t v = 0; v < m1.views.size(); ++v) {
    CHECK(m1.views[v].dir == m2.views[v].dir);
    CHECK((m1.views[v].camera.rot - m2.views[v].camera.rot).norm() == 0.0);
    for (size_t m = 0; m < m1.views[v].light_positions.size(); ++m)
      CHECK((m1.views[v].light_positions[m] - m2.views[v].light_positions[m]).norm() == 0.0);
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("camera-frame lights are converted to world on load") {
  OracleScene scene = tiny_scene();
  std::vector<OracleView> views;
  for (int v = 0; v < 3; ++v) views.push_back(oracle_render_view(scene, v));
  std::string root = "/tmp/nplps_ds3";
  std::filesystem::remove_all(root);
  write_dataset(scene, views, root);

  // Rewrite the manifest with camera-frame light positions.
  DatasetManifest m = read_manifest(root);
  m.light_frame = "camera";
  for (size_t v = 0; v < m.views.size(); ++v)
    for (auto& p : m.views[v].light_positions)
      p = m.views[v].camera.rot * p + m.views[v].camera.trans;
  write_manifest(root, m);

  auto loaded = load_dataset(root);
  for (int v = 0; v < 3; ++v)
    for (int l = 0; l < 2; ++l)
      CHECK((loaded[v].lights[l].position - scene.lights[v][l].position).norm() < 1e-9);
  std::filesystem::remove_all(root);
}

TEST_CASE("fix-intrinsics substitutes the repair matrix everywhere") {
  OracleScene scene = tiny_scene();
  std::vector<OracleView> views;
  for (int v = 0; v < 3; ++v) views.push_back(oracle_render_view(scene, v));
  std::string root = "/tmp/nplps_ds4";
  std::filesystem::remove_all(root);
  write_dataset(scene, views, root);

  LoadOptions opts;
  opts.fix_intrinsics = true;
  auto loaded = load_dataset(root, opts);
  for (const auto& v : loaded) {
    CHECK(v.camera.fx == kRepairFx);
    CHECK(v.camera.fy == kRepairFy);
    CHECK(v.camera.cx == kRepairCx);
    CHECK(v.camera.cy == kRepairCy);
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("loader reports missing files by name") {
  OracleScene scene = tiny_scene();
  std::vector<OracleView> views;
  for (int v = 0; v < 3; ++v) views.push_back(oracle_render_view(scene, v));
  std::string root = "/tmp/nplps_ds5";
  std::filesystem::remove_all(root);
  write_dataset(scene, views, root);
  std::filesystem::remove(root + "/view_01/light_001.png");
  try {
    load_dataset(root);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("view_01/light_001.png") != std::string::npos);
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("integration: fronto-parallel plane gives constant prior depth") {
  Camera cam = make_lookat_camera(Vec3(0, 0, -1000), Vec3(0, 0, 0), 800, 32, 32);
  ImageU8 mask(32, 32, 1, 0);
  ImageF normals(32, 32, 3, 0.0f);
  for (int y = 4; y < 28; ++y)
    for (int x = 4; x < 28; ++x) {
      mask.at(x, y) = 255;
      normals.at(x, y, 2) = 1.0f;  // constant camera-frame normal
    }
  ImageF depth = integrate_normals_to_depth(normals, mask, cam, 1000.0);
  for (int y = 4; y < 28; ++y)
    for (int x = 4; x < 28; ++x)
      CHECK(depth.at(x, y) == doctest::Approx(1000.0).epsilon(1e-9));
}

TEST_CASE("integration: sphere normal map recovers depth within 3% of radius") {
  OracleScene scene = tiny_scene();
  OracleView view = oracle_render_view(scene, 0);
  const Camera& cam = scene.cameras[0];

  // Use the true median depth as the anchor, then compare against GT z.
  std::vector<float> zs;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x)
      if (view.mask.at(x, y) > 0) zs.push_back(view.depth_z.at(x, y));
  std::nth_element(zs.begin(), zs.begin() + zs.size() / 2, zs.end());
  double prior = zs[zs.size() / 2];

  ImageF depth = integrate_normals_to_depth(view.normals_cam, view.mask, cam, prior);
  double se = 0;
  int n = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      if (view.mask.at(x, y) == 0 || depth.at(x, y) <= 0) continue;
      double diff = depth.at(x, y) - view.depth_z.at(x, y);
      se += diff * diff;
      ++n;
    }
  REQUIRE(n > 100);
  CHECK(std::sqrt(se / n) < 0.03 * 40.0);
}

TEST_CASE("integration: differentiating the result reproduces the gradient field") {
  OracleScene scene = tiny_scene();
  OracleView view = oracle_render_view(scene, 0);
  const Camera& cam = scene.cameras[0];
  ImageF depth = integrate_normals_to_depth(view.normals_cam, view.mask, cam, 1500.0);

  double num = 0, den = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x + 1 < 48; ++x) {
      if (view.mask.at(x, y) == 0 || view.mask.at(x + 1, y) == 0) continue;
      if (depth.at(x, y) <= 0 || depth.at(x + 1, y) <= 0) continue;
      auto g_of = [&](int xx) {
        Vec3 n(view.normals_cam.at(xx, y, 0), view.normals_cam.at(xx, y, 1),
               view.normals_cam.at(xx, y, 2));
        Vec3 d((xx + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
        double nd = n.dot(d);
        return std::abs(nd) < 1e-6 ? 0.0 : -(n.x() / cam.fx) / nd;
      };
      double g = 0.5 * (g_of(x) + g_of(x + 1));
      double got = std::log(depth.at(x + 1, y)) - std::log(depth.at(x, y));
      num += (got - g) * (got - g);
      den += g * g;
    }
  REQUIRE(den > 0);
  CHECK(std::sqrt(num / den) < 0.05);
}

TEST_CASE("integration rejects a degenerate normal field") {
  Camera cam = make_lookat_camera(Vec3(0, 0, -500), Vec3::Zero(), 400, 16, 16);
  ImageU8 mask(16, 16, 1, 255);
  ImageF normals(16, 16, 3, 0.0f);  // all zero -> no valid equation anywhere
  CHECK_THROWS_AS(integrate_normals_to_depth(normals, mask, cam, 500.0),
                  std::invalid_argument);
}
