#pragma once

#include "nplps/fields.hpp"

#include <functional>
#include <string>
#include <vector>

namespace nplps {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<double> vertex_albedo;  // empty or one value per vertex

  bool empty() const { return triangles.empty(); }
  double triangle_area(int t) const;
  double surface_area() const;
};

struct GridSpec {
  Vec3 bbox_min = Vec3::Constant(-1);
  Vec3 bbox_max = Vec3::Constant(1);
  int resolution = 256;  // cells per axis
};

// Zero isosurface of an arbitrary scalar field on a regular grid, vertices by
// linear interpolation along cell edges. Degenerate (zero-area) triangles are
// dropped. Grid evaluation is parallel, triangle emission is sequential, so
// output order is deterministic.
TriangleMesh marching_cubes(const std::function<double(const Vec3&)>& field,
                            const GridSpec& grid);
TriangleMesh marching_cubes(const FieldSet& fs, const GridSpec& grid);

// Queries the albedo network at every vertex.
void bake_vertex_albedo(const FieldSet& fs, TriangleMesh& mesh);

// Removes every triangle with any vertex below z = height (mesh assumed
// aligned so the object touches the XY plane).
TriangleMesh crop_bottom(const TriangleMesh& mesh, double height = 6.0);

// Symmetric mean point-to-surface distance: area-weighted samples on each
// mesh, nearest-triangle distance to the other via a BVH.
// Throws std::invalid_argument on empty meshes.
double chamfer_distance(const TriangleMesh& a, const TriangleMesh& b, int samples = 1000000,
                        std::uint64_t seed = 12345);

// One-sided mean point-to-surface distance (A toward B); exposed for tests.
double mean_surface_distance(const TriangleMesh& from, const TriangleMesh& to, int samples,
                             std::uint64_t seed);

// Nearest-triangle search structure over an immutable mesh.
class MeshBvh {
 public:
  explicit MeshBvh(const TriangleMesh& mesh);
  double distance(const Vec3& point) const;
  Vec3 closest_point(const Vec3& point) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;   // children, -1 for leaf
    int begin = 0, end = 0;      // triangle range for leaves
  };
  const TriangleMesh& mesh_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
  int build(std::vector<int>& tris, int begin, int end, std::vector<Vec3>& centroids);
  void search(int node, const Vec3& p, double& best, Vec3& best_point) const;
};

// Uniform area-weighted surface sampling with a deterministic seed.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int count, std::uint64_t seed);

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* closest = nullptr);

// OBJ: positions and faces. PLY: binary little-endian, positions, faces and
// an optional per-vertex float "albedo" property. flip_winding reverses the
// triangle orientation convention on read.
void save_obj(const std::string& path, const TriangleMesh& mesh);
void save_ply(const std::string& path, const TriangleMesh& mesh);
TriangleMesh load_obj(const std::string& path, bool flip_winding = false);
TriangleMesh load_ply(const std::string& path, bool flip_winding = false);
TriangleMesh load_mesh(const std::string& path, bool flip_winding = false);

}  // namespace nplps
