#pragma once

#include "nplps/core.hpp"

namespace nplps {

// Pinhole camera with a rigid world->camera pose. Units are millimetres,
// camera frame is x right, y down, z forward. Pixel (i, j) samples the
// continuous coordinate (i + 0.5, j + 0.5).
struct Camera {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  Mat3 rot = Mat3::Identity();   // world -> camera
  Vec3 trans = Vec3::Zero();     // X_cam = rot * X_world + trans
  int width = 0, height = 0;

  Vec3 center() const { return -rot.transpose() * trans; }
  Vec3 optical_axis_world() const { return rot.transpose() * Vec3(0, 0, 1); }
};

struct PointLight {
  Vec3 position = Vec3::Zero();  // world, mm
  double log_phi = 0;            // log of intrinsic brightness

  double phi() const { return std::exp(log_phi); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit
};

// Back-projects a continuous pixel coordinate to a world-space ray through
// the camera center. px must be within image bounds (caller bug otherwise).
Ray pixel_to_ray(const Camera& cam, const Vec2& px);

// Projects a world point to continuous pixel coordinates. Asserts the point
// is in front of the camera.
Vec2 project(const Camera& cam, const Vec3& x);

// Nearest rotation with det = +1 (polar factor by SVD, sign corrected).
// Throws std::invalid_argument on (numerically) singular input.
Mat3 orthonormalize_rotation(const Mat3& r_raw);

// Unit direction from x toward the light plus the inverse-square attenuation
// a = phi / |P - x|^2. Throws std::invalid_argument when x coincides with the
// light position.
struct LightSample {
  Vec3 l_unit;
  double attenuation;
};
LightSample light_vector_and_attenuation(const Vec3& x, const PointLight& light);

// Rotates a camera-frame unit normal into the world frame.
inline Vec3 camera_normal_to_world(const Camera& cam, const Vec3& n_cam) {
  return cam.rot.transpose() * n_cam;
}

// Camera placed at `position` looking at `target`, world +z used as up.
Camera make_lookat_camera(const Vec3& position, const Vec3& target, double focal_px, int width,
                          int height);

}  // namespace nplps
