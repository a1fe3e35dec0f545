#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nplps/meshing.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <random>

using namespace nplps;

namespace {

// Subdivided icosahedron projected onto a sphere; independent mesh source
// for the Chamfer calibration.
TriangleMesh icosphere(const Vec3& center, double radius, int subdiv) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
      {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
      {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (auto& v : verts) v.normalize();

  for (int s = 0; s < subdiv; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[a] + verts[b]).normalized();
      verts.push_back(m);
      int idx = static_cast<int>(verts.size()) - 1;
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriangleMesh mesh;
  for (const auto& v : verts) mesh.vertices.push_back(center + radius * v);
  mesh.triangles = faces;
  return mesh;
}

TriangleMesh square_at_z(double z, double half) {
  TriangleMesh m;
  m.vertices = {Vec3(-half, -half, z), Vec3(half, -half, z), Vec3(half, half, z),
                Vec3(-half, half, z)};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

}  // namespace

TEST_CASE("marching cubes on a sphere SDF lands on the shell") {
  GridSpec grid;
  grid.bbox_min = Vec3::Constant(-80);
  grid.bbox_max = Vec3::Constant(80);
  grid.resolution = 128;
  TriangleMesh mesh =
      marching_cubes([](const Vec3& p) { return p.norm() - 50.0; }, grid);
  REQUIRE(!mesh.empty());
  double mean_r = 0, max_dev = 0;
  for (const auto& v : mesh.vertices) {
    mean_r += v.norm();
    max_dev = std::max(max_dev, std::abs(v.norm() - 50.0));
  }
  mean_r /= static_cast<double>(mesh.vertices.size());
  CHECK(std::abs(mean_r - 50.0) < 1.25);  // one voxel
  CHECK(max_dev < 1.25 * std::sqrt(3.0));  // voxel diagonal

  for (const auto& t : mesh.triangles) {
    CHECK(t[0] != t[1]);
    CHECK(t[1] != t[2]);
    CHECK(t[0] != t[2]);
    CHECK(mesh.triangle_area(static_cast<int>(&t - mesh.triangles.data())) > 0.0);
  }
}

TEST_CASE("marching cubes on a plane SDF is planar") {
  GridSpec grid;
  grid.bbox_min = Vec3::Constant(-10);
  grid.bbox_max = Vec3::Constant(10);
  grid.resolution = 32;
  TriangleMesh mesh = marching_cubes([](const Vec3& p) { return p.z() - 1.7; }, grid);
  REQUIRE(!mesh.empty());
  double voxel = 20.0 / 32;
  for (const auto& v : mesh.vertices) CHECK(std::abs(v.z() - 1.7) < voxel);
}

TEST_CASE("marching cubes of a positive field is empty") {
  GridSpec grid;
  grid.resolution = 8;
  TriangleMesh mesh = marching_cubes([](const Vec3&) { return 1.0; }, grid);
  CHECK(mesh.empty());
  CHECK_THROWS_AS(marching_cubes([](const Vec3&) { return 1.0; },
                                 GridSpec{Vec3::Zero(), Vec3::Ones(), 1}),
                  std::invalid_argument);
}

TEST_CASE("marching cubes error vs analytic SDFs stays under a voxel diagonal") {
  GridSpec grid;
  grid.bbox_min = Vec3::Constant(-60);
  grid.bbox_max = Vec3::Constant(60);
  grid.resolution = 64;
  double voxel_diag = (120.0 / 64) * std::sqrt(3.0);

  auto box_sdf = [](const Vec3& p) {
    Vec3 d = p.cwiseAbs() - Vec3(30, 20, 25);
    Vec3 o = d.cwiseMax(0.0);
    return o.norm() + std::min(d.maxCoeff(), 0.0);
  };
  auto torus_sdf = [](const Vec3& p) {
    double ring = std::hypot(p.x(), p.y()) - 35.0;
    return std::hypot(ring, p.z()) - 12.0;
  };
  for (auto field : {std::function<double(const Vec3&)>(box_sdf),
                     std::function<double(const Vec3&)>(torus_sdf)}) {
    TriangleMesh mesh = marching_cubes(field, grid);
    REQUIRE(!mesh.empty());
    for (const auto& v : mesh.vertices) CHECK(std::abs(field(v)) < voxel_diag);
  }
}

TEST_CASE("crop_bottom filters exactly the low triangles") {
  TriangleMesh above = square_at_z(10.0, 5.0);
  CHECK(crop_bottom(above, 6.0).triangles.size() == above.triangles.size());

  TriangleMesh below = square_at_z(2.0, 5.0);
  CHECK(crop_bottom(below, 6.0).empty());

  // Axis-aligned unit cube scaled to 10mm: survivors all in z >= 6.
  GridSpec grid;
  grid.bbox_min = Vec3::Constant(-2);
  grid.bbox_max = Vec3::Constant(12);
  grid.resolution = 56;
  auto cube = [](const Vec3& p) {
    Vec3 d = (p - Vec3(5, 5, 5)).cwiseAbs() - Vec3(5, 5, 5);
    Vec3 o = d.cwiseMax(0.0);
    return o.norm() + std::min(d.maxCoeff(), 0.0);
  };
  TriangleMesh mesh = marching_cubes(cube, grid);
  TriangleMesh cropped = crop_bottom(mesh, 6.0);
  REQUIRE(!cropped.empty());
  for (const auto& t : cropped.triangles)
    for (int k : t) CHECK(cropped.vertices[k].z() >= 6.0);
  // And every dropped triangle had a vertex below 6.
  size_t expect_dropped = 0;
  for (const auto& t : mesh.triangles) {
    bool low = false;
    for (int k : t) low = low || mesh.vertices[k].z() < 6.0;
    if (low) ++expect_dropped;
  }
  CHECK(mesh.triangles.size() - cropped.triangles.size() == expect_dropped);
}

TEST_CASE("chamfer self-distance vanishes") {
  TriangleMesh s = icosphere(Vec3::Zero(), 50.0, 3);
  CHECK(chamfer_distance(s, s, 20000) < 1e-6);
}

TEST_CASE("chamfer of parallel unit squares equals their offset") {
  for (double delta : {0.05, 0.5}) {
    TriangleMesh a = square_at_z(0.0, 0.5);
    TriangleMesh b = square_at_z(delta, 0.5);
    CHECK(chamfer_distance(a, b, 50000) == doctest::Approx(delta).epsilon(0.01));
  }
}

TEST_CASE("chamfer calibration on concentric spheres") {
  TriangleMesh base = icosphere(Vec3(3, -2, 7), 50.0, 5);
  for (double delta : {0.1, 0.5, 2.0}) {
    TriangleMesh outer = icosphere(Vec3(3, -2, 7), 50.0 + delta, 5);
    double d = chamfer_distance(base, outer, 200000);
    CHECK(d == doctest::Approx(delta).epsilon(0.02));
  }
}

TEST_CASE("chamfer is symmetric and rigid-equivariant") {
  TriangleMesh a = icosphere(Vec3::Zero(), 30.0, 3);
  TriangleMesh b = icosphere(Vec3(1.0, 0.5, -0.2), 31.0, 3);
  double dab = chamfer_distance(a, b, 50000, 7);
  double dba = chamfer_distance(b, a, 50000, 7);
  CHECK(dab == doctest::Approx(dba).epsilon(1e-12));  // symmetric by construction

  Mat3 rot = orthonormalize_rotation(Mat3::Identity() + 0.3 * Mat3::Ones());
  Vec3 shift(12, -7, 3);
  TriangleMesh ta = a, tb = b;
  for (auto& v : ta.vertices) v = rot * v + shift;
  for (auto& v : tb.vertices) v = rot * v + shift;
  double dt = chamfer_distance(ta, tb, 50000, 7);
  CHECK(std::abs(dt - dab) < 1e-9 + 1e-6 * dab);
  CHECK_THROWS_AS(chamfer_distance(TriangleMesh{}, a, 100), std::invalid_argument);
}

TEST_CASE("point-triangle distance covers faces, edges and corners") {
  Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  CHECK(point_triangle_distance(Vec3(0.2, 0.2, 0.7), a, b, c) == doctest::Approx(0.7));
  CHECK(point_triangle_distance(Vec3(-1, -1, 0), a, b, c) == doctest::Approx(std::sqrt(2.0)));
  CHECK(point_triangle_distance(Vec3(0.5, -0.5, 0), a, b, c) == doctest::Approx(0.5));
  CHECK(point_triangle_distance(Vec3(2, 0, 0), a, b, c) == doctest::Approx(1.0));
}

TEST_CASE("ply round-trips vertices, faces and albedo") {
  TriangleMesh mesh = icosphere(Vec3(1, 2, 3), 10.0, 1);
  mesh.vertex_albedo.resize(mesh.vertices.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    mesh.vertex_albedo[i] = 0.25 + 0.5 * (i % 3);
  std::string path = "/tmp/nplps_mesh.ply";
  save_ply(path, mesh);
  TriangleMesh back = load_ply(path);
  REQUIRE(back.vertices.size() == mesh.vertices.size());
  REQUIRE(back.triangles.size() == mesh.triangles.size());
  REQUIRE(back.vertex_albedo.size() == mesh.vertex_albedo.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    CHECK((back.vertices[i] - mesh.vertices[i]).norm() < 1e-5);
    CHECK(back.vertex_albedo[i] == doctest::Approx(mesh.vertex_albedo[i]).epsilon(1e-6));
  }
  CHECK(back.triangles == mesh.triangles);

  TriangleMesh flipped = load_ply(path, true);
  CHECK(flipped.triangles[0][1] == mesh.triangles[0][2]);
  CHECK(flipped.triangles[0][2] == mesh.triangles[0][1]);
  std::remove(path.c_str());
}

TEST_CASE("obj round-trips vertices and faces") {
  TriangleMesh mesh = icosphere(Vec3::Zero(), 5.0, 0);
  std::string path = "/tmp/nplps_mesh.obj";
  save_obj(path, mesh);
  TriangleMesh back = load_obj(path);
  REQUIRE(back.vertices.size() == mesh.vertices.size());
  CHECK(back.triangles == mesh.triangles);
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    CHECK((back.vertices[i] - mesh.vertices[i]).norm() < 1e-6);
  std::remove(path.c_str());
}
