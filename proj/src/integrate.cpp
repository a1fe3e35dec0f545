#include "nplps/dataio.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace nplps {

// Perspective normal integration in log depth. With d(u,v) the unnormalized
// back-projected direction, t = log z satisfies
//   dt/du = -(n_x / fx) / (n . d),  dt/dv = -(n_y / fy) / (n . d),
// which is integrated in least squares over in-mask pixel pairs.
ImageF integrate_normals_to_depth(const ImageF& normals_cam, const ImageU8& mask,
                                  const Camera& cam, double depth_prior) {
  const int w = mask.width, h = mask.height;
  if (normals_cam.channels != 3 || normals_cam.width != w || normals_cam.height != h)
    throw std::invalid_argument("integrate_normals_to_depth: normal map / mask shape mismatch");

  std::vector<int> index(static_cast<size_t>(w) * h, -1);
  std::vector<double> gu(static_cast<size_t>(w) * h, 0.0);
  std::vector<double> gv(static_cast<size_t>(w) * h, 0.0);
  int n_unknowns = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask.at(x, y) == 0) continue;
      Vec3 n(normals_cam.at(x, y, 0), normals_cam.at(x, y, 1), normals_cam.at(x, y, 2));
      Vec3 d((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
      double nd = n.dot(d);
      if (std::abs(nd) < 1e-6) continue;  // grazing pixel, no reliable equation
      size_t p = static_cast<size_t>(y) * w + x;
      index[p] = n_unknowns++;
      gu[p] = -(n.x() / cam.fx) / nd;
      gv[p] = -(n.y() / cam.fy) / nd;
    }
  }
  if (n_unknowns == 0)
    throw std::invalid_argument("integrate_normals_to_depth: degenerate normal field");

  // Normal equations of the pairwise finite-difference system plus a tiny
  // screening term that fixes the gauge before the median anchor.
  std::vector<Eigen::Triplet<double>> trip;
  VecX rhs = VecX::Zero(n_unknowns);
  auto add_pair = [&](size_t p, size_t q, double g) {
    int ip = index[p], iq = index[q];
    trip.emplace_back(ip, ip, 1.0);
    trip.emplace_back(iq, iq, 1.0);
    trip.emplace_back(ip, iq, -1.0);
    trip.emplace_back(iq, ip, -1.0);
    rhs(ip) -= g;
    rhs(iq) += g;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t p = static_cast<size_t>(y) * w + x;
      if (index[p] < 0) continue;
      if (x + 1 < w && index[p + 1] >= 0) add_pair(p, p + 1, 0.5 * (gu[p] + gu[p + 1]));
      if (y + 1 < h && index[p + w] >= 0) add_pair(p, p + w, 0.5 * (gv[p] + gv[p + w]));
    }
  for (int i = 0; i < n_unknowns; ++i) trip.emplace_back(i, i, 1e-8);

  Eigen::SparseMatrix<double> lhs(n_unknowns, n_unknowns);
  lhs.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(lhs);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("integrate_normals_to_depth: factorization failed");
  VecX t = solver.solve(rhs);

  // Anchor: median depth equals the prior.
  VecX sorted = t;
  std::nth_element(sorted.data(), sorted.data() + sorted.size() / 2,
                   sorted.data() + sorted.size());
  double median = sorted(sorted.size() / 2);
  t.array() += std::log(depth_prior) - median;

  ImageF depth(w, h, 1, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int idx = index[static_cast<size_t>(y) * w + x];
      if (idx >= 0) depth.at(x, y) = static_cast<float>(std::exp(t(idx)));
    }
  return depth;
}

}  // namespace nplps
