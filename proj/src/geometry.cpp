#include "nplps/geometry.hpp"

#include <Eigen/SVD>

#include <cassert>
#include <stdexcept>

namespace nplps {

Ray pixel_to_ray(const Camera& cam, const Vec2& px) {
  assert(px.x() >= 0.0 && px.x() <= cam.width && px.y() >= 0.0 && px.y() <= cam.height);
  Vec3 dir_cam((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy, 1.0);
  Ray ray;
  ray.origin = cam.center();
  ray.dir = (cam.rot.transpose() * dir_cam).normalized();
  return ray;
}

Vec2 project(const Camera& cam, const Vec3& x) {
  Vec3 xc = cam.rot * x + cam.trans;
  assert(xc.z() > 0.0);
  return Vec2(cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy);
}

Mat3 orthonormalize_rotation(const Mat3& r_raw) {
  Eigen::JacobiSVD<Mat3> svd(r_raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues().minCoeff() < 1e-12)
    throw std::invalid_argument("orthonormalize_rotation: singular matrix");
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 r = u * v.transpose();
  if (r.determinant() < 0) {
    u.col(2) *= -1.0;
    r = u * v.transpose();
  }
  return r;
}

LightSample light_vector_and_attenuation(const Vec3& x, const PointLight& light) {
  Vec3 d = light.position - x;
  double dist2 = d.squaredNorm();
  if (dist2 < 1e-12)
    throw std::invalid_argument("light_vector_and_attenuation: point coincides with light");
  double dist = std::sqrt(dist2);
  return {d / dist, light.phi() / dist2};
}

Camera make_lookat_camera(const Vec3& position, const Vec3& target, double focal_px, int width,
                          int height) {
  Vec3 z = (target - position).normalized();
  Vec3 up(0, 0, 1);
  if (std::abs(z.dot(up)) > 0.999) up = Vec3(0, 1, 0);
  Vec3 x = up.cross(z).normalized();
  Vec3 y = z.cross(x);
  Camera cam;
  cam.rot.row(0) = x.transpose();
  cam.rot.row(1) = y.transpose();
  cam.rot.row(2) = z.transpose();
  cam.trans = -cam.rot * position;
  cam.fx = cam.fy = focal_px;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace nplps
