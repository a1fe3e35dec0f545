#include "nplps/core.hpp"
#include "nplps/meshing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace nplps {

// Closest point on a triangle (Ericson, Real-Time Collision Detection).
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                               Vec3* closest) {
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  Vec3 q;
  if (d1 <= 0 && d2 <= 0) {
    q = a;
  } else {
    Vec3 bp = p - b;
    double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) {
      q = b;
    } else {
      double vc = d1 * d4 - d3 * d2;
      if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        q = a + (d1 / (d1 - d3)) * ab;
      } else {
        Vec3 cp = p - c;
        double d5 = ab.dot(cp), d6 = ac.dot(cp);
        if (d6 >= 0 && d5 <= d6) {
          q = c;
        } else {
          double vb = d5 * d2 - d1 * d6;
          if (vb <= 0 && d2 >= 0 && d6 <= 0) {
            q = a + (d2 / (d2 - d6)) * ac;
          } else {
            double va = d3 * d6 - d5 * d4;
            if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
              q = b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
            } else {
              double denom = 1.0 / (va + vb + vc);
              q = a + ab * (vb * denom) + ac * (vc * denom);
            }
          }
        }
      }
    }
  }
  if (closest) *closest = q;
  return (p - q).norm();
}

MeshBvh::MeshBvh(const TriangleMesh& mesh) : mesh_(mesh) {
  if (mesh.empty()) throw std::invalid_argument("MeshBvh: empty mesh");
  const int n = static_cast<int>(mesh.triangles.size());
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0);
  std::vector<Vec3> centroids(n);
  for (int t = 0; t < n; ++t) {
    const auto& tri = mesh.triangles[t];
    centroids[t] =
        (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
  }
  nodes_.reserve(2 * n);
  build(order_, 0, n, centroids);
}

int MeshBvh::build(std::vector<int>& tris, int begin, int end, std::vector<Vec3>& centroids) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (int i = begin; i < end; ++i) {
    const auto& tri = mesh_.triangles[tris[i]];
    for (int k = 0; k < 3; ++k) {
      node.lo = node.lo.cwiseMin(mesh_.vertices[tri[k]]);
      node.hi = node.hi.cwiseMax(mesh_.vertices[tri[k]]);
    }
  }
  int idx = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 8) {
    nodes_[idx].begin = begin;
    nodes_[idx].end = end;
    return idx;
  }
  Vec3 extent = node.hi - node.lo;
  int axis;
  extent.maxCoeff(&axis);
  int mid = (begin + end) / 2;
  std::nth_element(tris.begin() + begin, tris.begin() + mid, tris.begin() + end,
                   [&](int a, int b) { return centroids[a](axis) < centroids[b](axis); });
  int left = build(tris, begin, mid, centroids);
  int right = build(tris, mid, end, centroids);
  nodes_[idx].left = left;
  nodes_[idx].right = right;
  return idx;
}

namespace {

double box_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
  return d.norm();
}

}  // namespace

void MeshBvh::search(int node_idx, const Vec3& p, double& best, Vec3& best_point) const {
  const Node& node = nodes_[node_idx];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const auto& tri = mesh_.triangles[order_[i]];
      Vec3 q;
      double d = point_triangle_distance(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]],
                                         mesh_.vertices[tri[2]], &q);
      if (d < best) {
        best = d;
        best_point = q;
      }
    }
    return;
  }
  double dl = box_distance(p, nodes_[node.left].lo, nodes_[node.left].hi);
  double dr = box_distance(p, nodes_[node.right].lo, nodes_[node.right].hi);
  int first = node.left, second = node.right;
  if (dr < dl) {
    std::swap(first, second);
    std::swap(dl, dr);
  }
  if (dl < best) search(first, p, best, best_point);
  if (dr < best) search(second, p, best, best_point);
}

double MeshBvh::distance(const Vec3& point) const {
  double best = std::numeric_limits<double>::infinity();
  Vec3 bp;
  search(0, point, best, bp);
  return best;
}

Vec3 MeshBvh::closest_point(const Vec3& point) const {
  double best = std::numeric_limits<double>::infinity();
  Vec3 bp = Vec3::Zero();
  search(0, point, best, bp);
  return bp;
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int count, std::uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("sample_surface: empty mesh");
  const int n = static_cast<int>(mesh.triangles.size());
  std::vector<double> cumulative(n);
  double acc = 0;
  for (int t = 0; t < n; ++t) {
    acc += mesh.triangle_area(t);
    cumulative[t] = acc;
  }
  if (acc <= 0) throw std::invalid_argument("sample_surface: zero-area mesh");

  std::vector<Vec3> points(count);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    double target = u(rng) * acc;
    int t = static_cast<int>(std::lower_bound(cumulative.begin(), cumulative.end(), target) -
                             cumulative.begin());
    t = std::min(t, n - 1);
    // Uniform barycentric via the sqrt trick.
    double r1 = std::sqrt(u(rng)), r2 = u(rng);
    const auto& tri = mesh.triangles[t];
    points[i] = (1 - r1) * mesh.vertices[tri[0]] + r1 * (1 - r2) * mesh.vertices[tri[1]] +
                r1 * r2 * mesh.vertices[tri[2]];
  }
  return points;
}

double mean_surface_distance(const TriangleMesh& from, const TriangleMesh& to, int samples,
                             std::uint64_t seed) {
  if (from.empty() || to.empty())
    throw std::invalid_argument("mean_surface_distance: empty mesh");
  std::vector<Vec3> points = sample_surface(from, samples, seed);
  MeshBvh bvh(to);

  const int block = 4096;
  const int n_blocks = (samples + block - 1) / block;
  std::vector<double> partial(n_blocks, 0.0);
  parallel_for_chunks(n_blocks, [&](int b) {
    double acc = 0;
    int lo = b * block, hi = std::min(samples, lo + block);
    for (int i = lo; i < hi; ++i) acc += bvh.distance(points[i]);
    partial[b] = acc;
  });
  double total = 0;
  for (double p : partial) total += p;
  return total / samples;
}

double chamfer_distance(const TriangleMesh& a, const TriangleMesh& b, int samples,
                        std::uint64_t seed) {
  // Same seed on both sides keeps the result exactly symmetric in (a, b).
  double dab = mean_surface_distance(a, b, samples, seed);
  double dba = mean_surface_distance(b, a, samples, seed);
  return 0.5 * (dab + dba);
}

}  // namespace nplps
