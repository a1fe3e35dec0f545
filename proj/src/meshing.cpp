#include "nplps/meshing.hpp"

#include "nplps/core.hpp"
#include "nplps/marching_tables.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace nplps {

double TriangleMesh::triangle_area(int t) const {
  const auto& tri = triangles[t];
  Vec3 e1 = vertices[tri[1]] - vertices[tri[0]];
  Vec3 e2 = vertices[tri[2]] - vertices[tri[0]];
  return 0.5 * e1.cross(e2).norm();
}

double TriangleMesh::surface_area() const {
  double a = 0;
  for (size_t t = 0; t < triangles.size(); ++t) a += triangle_area(static_cast<int>(t));
  return a;
}

namespace {

// Corner offsets and the edge -> (corner, corner) map of the standard tables.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

// Canonical key of a cell edge: grid coordinates of the low corner plus axis.
std::uint64_t edge_key(int x, int y, int z, int axis) {
  return (static_cast<std::uint64_t>(x) << 42) | (static_cast<std::uint64_t>(y) << 22) |
         (static_cast<std::uint64_t>(z) << 2) | static_cast<std::uint64_t>(axis);
}

using BatchEval = std::function<void(const MatX&, VecX&)>;

TriangleMesh marching_cubes_impl(const BatchEval& eval, const GridSpec& grid) {
  const int res = grid.resolution;
  if (res < 2) throw std::invalid_argument("marching_cubes: resolution must be >= 2");
  const int np = res + 1;
  const Vec3 span = grid.bbox_max - grid.bbox_min;
  const Vec3 step = span / res;

  auto grid_point = [&](int x, int y, int z) {
    return Vec3(grid.bbox_min.x() + x * step.x(), grid.bbox_min.y() + y * step.y(),
                grid.bbox_min.z() + z * step.z());
  };

  // Two z-slices at a time; each slice evaluated in parallel row blocks.
  auto eval_slice = [&](int z, VecX& out) {
    out.resize(static_cast<Eigen::Index>(np) * np);
    parallel_for_blocks(np, 8, [&](int y0, int y1) {
      MatX pos(3, (y1 - y0) * np);
      int k = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < np; ++x) pos.col(k++) = grid_point(x, y, z);
      VecX vals;
      eval(pos, vals);
      for (int i = 0; i < k; ++i) out(static_cast<Eigen::Index>(y0) * np + i) = vals(i);
    });
  };

  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;

  auto interp_vertex = [&](int cx, int cy, int cz, int edge, const double* corner_vals) {
    int c0 = kEdgeCorners[edge][0], c1 = kEdgeCorners[edge][1];
    int g0[3] = {cx + kCorner[c0][0], cy + kCorner[c0][1], cz + kCorner[c0][2]};
    int g1[3] = {cx + kCorner[c1][0], cy + kCorner[c1][1], cz + kCorner[c1][2]};
    int axis = (g0[0] != g1[0]) ? 0 : (g0[1] != g1[1]) ? 1 : 2;
    const int* lo = (g0[axis] <= g1[axis]) ? g0 : g1;
    std::uint64_t key = edge_key(lo[0], lo[1], lo[2], axis);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;

    double v0 = corner_vals[c0], v1 = corner_vals[c1];
    Vec3 p0 = grid_point(g0[0], g0[1], g0[2]);
    Vec3 p1 = grid_point(g1[0], g1[1], g1[2]);
    double denom = v1 - v0;
    double tt = (std::abs(denom) > 1e-30) ? std::clamp(-v0 / denom, 0.0, 1.0) : 0.5;
    int idx = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(p0 + tt * (p1 - p0));
    edge_vertex.emplace(key, idx);
    return idx;
  };

  VecX slice0, slice1;
  eval_slice(0, slice0);
  for (int z = 0; z < res; ++z) {
    eval_slice(z + 1, slice1);
    auto value_at = [&](int x, int y, int dz) -> double {
      const VecX& s = dz == 0 ? slice0 : slice1;
      return s(static_cast<Eigen::Index>(y) * np + x);
    };
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        double corner_vals[8];
        int cube_index = 0;
        for (int c = 0; c < 8; ++c) {
          corner_vals[c] = value_at(x + kCorner[c][0], y + kCorner[c][1], kCorner[c][2]);
          if (corner_vals[c] < 0.0) cube_index |= 1 << c;
        }
        if (kMcEdgeTable[cube_index] == 0) continue;
        int edge_idx[12];
        for (int e = 0; e < 12; ++e)
          if (kMcEdgeTable[cube_index] & (1 << e))
            edge_idx[e] = interp_vertex(x, y, z, e, corner_vals);
        for (int t = 0; kMcTriTable[cube_index][t] != -1; t += 3) {
          std::array<int, 3> tri = {edge_idx[kMcTriTable[cube_index][t]],
                                    edge_idx[kMcTriTable[cube_index][t + 1]],
                                    edge_idx[kMcTriTable[cube_index][t + 2]]};
          if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
          Vec3 e1 = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
          Vec3 e2 = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
          if (e1.cross(e2).squaredNorm() < 1e-24) continue;
          mesh.triangles.push_back(tri);
        }
      }
    }
    std::swap(slice0, slice1);
  }
  return mesh;
}

}  // namespace

TriangleMesh marching_cubes(const std::function<double(const Vec3&)>& field,
                            const GridSpec& grid) {
  BatchEval eval = [&field](const MatX& pos, VecX& out) {
    out.resize(pos.cols());
    for (Eigen::Index i = 0; i < pos.cols(); ++i) out(i) = field(pos.col(i));
  };
  return marching_cubes_impl(eval, grid);
}

TriangleMesh marching_cubes(const FieldSet& fs, const GridSpec& grid) {
  BatchEval eval = [&fs](const MatX& pos, VecX& out) {
    SdfBatch batch;
    sdf_eval_batch(fs, pos, false, batch);
    out = batch.values;
  };
  return marching_cubes_impl(eval, grid);
}

void bake_vertex_albedo(const FieldSet& fs, TriangleMesh& mesh) {
  if (mesh.vertices.empty()) throw std::invalid_argument("bake_vertex_albedo: empty mesh");
  mesh.vertex_albedo.resize(mesh.vertices.size());
  for (size_t i = 0; i < mesh.vertices.size(); ++i)
    mesh.vertex_albedo[i] = albedo_eval(fs, mesh.vertices[i]);
}

TriangleMesh crop_bottom(const TriangleMesh& mesh, double height) {
  TriangleMesh out;
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (const auto& tri : mesh.triangles) {
    bool keep = true;
    for (int k : tri)
      if (mesh.vertices[k].z() < height) keep = false;
    if (!keep) continue;
    std::array<int, 3> nt;
    for (int i = 0; i < 3; ++i) {
      int v = tri[i];
      if (remap[v] < 0) {
        remap[v] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[v]);
        if (!mesh.vertex_albedo.empty()) out.vertex_albedo.push_back(mesh.vertex_albedo[v]);
      }
      nt[i] = remap[v];
    }
    out.triangles.push_back(nt);
  }
  return out;
}

void save_obj(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_obj: cannot open " + path);
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
}

TriangleMesh load_obj(const std::string& path, bool flip_winding) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_obj: cannot open " + path);
  TriangleMesh mesh;
  std::string line;
  auto face_index = [](const std::string& tok) {
    return std::stoi(tok.substr(0, tok.find('/'))) - 1;
  };
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(face_index(tok));
      for (size_t k = 2; k < idx.size(); ++k) {  // fan-triangulate polygons
        std::array<int, 3> tri = {idx[0], idx[k - 1], idx[k]};
        if (flip_winding) std::swap(tri[1], tri[2]);
        mesh.triangles.push_back(tri);
      }
    }
  }
  return mesh;
}

void save_ply(const std::string& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_ply: cannot open " + path);
  bool has_albedo = !mesh.vertex_albedo.empty();
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (has_albedo) out << "property float albedo\n";
  out << "element face " << mesh.triangles.size() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    float v[4] = {static_cast<float>(mesh.vertices[i].x()),
                  static_cast<float>(mesh.vertices[i].y()),
                  static_cast<float>(mesh.vertices[i].z()),
                  has_albedo ? static_cast<float>(mesh.vertex_albedo[i]) : 0.0f};
    out.write(reinterpret_cast<const char*>(v), has_albedo ? 16 : 12);
  }
  for (const auto& t : mesh.triangles) {
    std::uint8_t n = 3;
    std::int32_t idx[3] = {t[0], t[1], t[2]};
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(idx), 12);
  }
  if (!out) throw std::runtime_error("save_ply: write failed for " + path);
}

TriangleMesh load_ply(const std::string& path, bool flip_winding) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_ply: cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::runtime_error("load_ply: not a PLY file: " + path);

  size_t n_vert = 0, n_face = 0;
  bool has_albedo = false;
  bool in_vertex = false;
  int vertex_props = 0;
  int albedo_slot = -1;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian")
        throw std::runtime_error("load_ply: only binary_little_endian is supported: " + path);
    } else if (tag == "element") {
      std::string what;
      size_t count;
      ls >> what >> count;
      in_vertex = (what == "vertex");
      if (in_vertex)
        n_vert = count;
      else if (what == "face")
        n_face = count;
    } else if (tag == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type != "float")
        throw std::runtime_error("load_ply: unsupported vertex property type " + type);
      if (name == "albedo") {
        has_albedo = true;
        albedo_slot = vertex_props;
      }
      ++vertex_props;
    } else if (tag == "end_header") {
      break;
    }
  }
  if (vertex_props < 3) throw std::runtime_error("load_ply: missing xyz properties in " + path);

  TriangleMesh mesh;
  mesh.vertices.resize(n_vert);
  if (has_albedo) mesh.vertex_albedo.resize(n_vert);
  std::vector<float> props(vertex_props);
  for (size_t i = 0; i < n_vert; ++i) {
    in.read(reinterpret_cast<char*>(props.data()),
            static_cast<std::streamsize>(vertex_props * sizeof(float)));
    mesh.vertices[i] = Vec3(props[0], props[1], props[2]);
    if (has_albedo) mesh.vertex_albedo[i] = props[albedo_slot];
  }
  for (size_t f = 0; f < n_face; ++f) {
    std::uint8_t n;
    in.read(reinterpret_cast<char*>(&n), 1);
    std::vector<std::int32_t> idx(n);
    in.read(reinterpret_cast<char*>(idx.data()), static_cast<std::streamsize>(n * 4));
    for (size_t k = 2; k < idx.size(); ++k) {
      std::array<int, 3> tri = {idx[0], static_cast<int>(idx[k - 1]), static_cast<int>(idx[k])};
      if (flip_winding) std::swap(tri[1], tri[2]);
      mesh.triangles.push_back(tri);
    }
  }
  if (!in) throw std::runtime_error("load_ply: truncated data in " + path);
  return mesh;
}

TriangleMesh load_mesh(const std::string& path, bool flip_winding) {
  auto dot = path.find_last_of('.');
  std::string ext = (dot == std::string::npos) ? "" : path.substr(dot + 1);
  if (ext == "obj") return load_obj(path, flip_winding);
  if (ext == "ply") return load_ply(path, flip_winding);
  throw std::runtime_error("load_mesh: unsupported extension on " + path);
}

}  // namespace nplps
