#include "nplps/dataio.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace nplps {

namespace fs = std::filesystem;
using nlohmann::json;

bool DatasetView::light_excluded(int m) const {
  return std::find(excluded_lights.begin(), excluded_lights.end(), m) != excluded_lights.end();
}

Vec3 DatasetView::normal_world_at(int x, int y) const {
  Vec3 n_cam(normals_cam.at(x, y, 0), normals_cam.at(x, y, 1), normals_cam.at(x, y, 2));
  return camera_normal_to_world(camera, n_cam);
}

namespace {

std::string view_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d", index);
  return buf;
}

std::string light_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "light_%03d.png", index);
  return buf;
}

json camera_to_json(const Camera& cam) {
  json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  std::vector<double> rot(9);
  for (int k = 0; k < 9; ++k) rot[k] = cam.rot(k / 3, k % 3);
  j["rot"] = rot;
  j["trans"] = {cam.trans.x(), cam.trans.y(), cam.trans.z()};
  return j;
}

Camera camera_from_json(const json& j, int width, int height) {
  Camera cam;
  cam.fx = j.at("fx");
  cam.fy = j.at("fy");
  cam.cx = j.at("cx");
  cam.cy = j.at("cy");
  const auto& rot = j.at("rot");
  for (int k = 0; k < 9; ++k) cam.rot(k / 3, k % 3) = rot.at(k);
  const auto& t = j.at("trans");
  cam.trans = Vec3(t.at(0), t.at(1), t.at(2));
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace

DatasetManifest read_manifest(const std::string& root) {
  std::string path = root + "/manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("read_manifest: parse error in " + path + ": " + e.what());
  }

  DatasetManifest m;
  m.width = j.at("width");
  m.height = j.at("height");
  m.bit_depth = j.value("bit_depth", 16);
  m.light_frame = j.value("light_frame", "camera");
  const auto& phij = j.at("phi");
  m.phi.resize(static_cast<Eigen::Index>(phij.size()));
  for (size_t i = 0; i < phij.size(); ++i) m.phi(static_cast<Eigen::Index>(i)) = phij.at(i);

  for (const auto& vj : j.at("views")) {
    ManifestView view;
    view.dir = vj.at("dir");
    view.camera = camera_from_json(vj.at("camera"), m.width, m.height);
    for (const auto& lp : vj.at("lights"))
      view.light_positions.emplace_back(lp.at(0), lp.at(1), lp.at(2));
    if (vj.contains("exclude_lights"))
      for (int idx : vj["exclude_lights"]) view.exclude_lights.push_back(idx);
    m.views.push_back(std::move(view));
  }
  return m;
}

void write_manifest(const std::string& root, const DatasetManifest& manifest) {
  json j;
  j["width"] = manifest.width;
  j["height"] = manifest.height;
  j["bit_depth"] = manifest.bit_depth;
  j["light_frame"] = manifest.light_frame;
  std::vector<double> phi(manifest.phi.data(), manifest.phi.data() + manifest.phi.size());
  j["phi"] = phi;
  j["views"] = json::array();
  for (const auto& view : manifest.views) {
    json vj;
    vj["dir"] = view.dir;
    vj["camera"] = camera_to_json(view.camera);
    vj["lights"] = json::array();
    for (const auto& p : view.light_positions) vj["lights"].push_back({p.x(), p.y(), p.z()});
    if (!view.exclude_lights.empty()) vj["exclude_lights"] = view.exclude_lights;
    j["views"].push_back(vj);
  }
  std::string path = root + "/manifest.json";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  out << j.dump(1) << "\n";
}

std::vector<DatasetView> load_dataset(const std::string& root, const LoadOptions& opts) {
  DatasetManifest manifest = read_manifest(root);
  std::string light_frame =
      opts.light_frame_override.empty() ? manifest.light_frame : opts.light_frame_override;
  if (light_frame != "world" && light_frame != "camera")
    throw std::runtime_error("load_dataset: unknown light frame '" + light_frame + "'");

  // Extra exclusions: text lines "view_index light_index".
  std::vector<std::pair<int, int>> extra_excluded;
  if (!opts.exclude_file.empty()) {
    std::ifstream ex(opts.exclude_file);
    if (!ex) throw std::runtime_error("load_dataset: cannot open " + opts.exclude_file);
    int v, l;
    while (ex >> v >> l) extra_excluded.emplace_back(v, l);
  }

  const size_t n_lights = static_cast<size_t>(manifest.phi.size());
  std::vector<DatasetView> views(manifest.views.size());
  for (size_t vi = 0; vi < manifest.views.size(); ++vi) {
    const ManifestView& mv = manifest.views[vi];
    DatasetView& view = views[vi];
    std::string dir = root + "/" + mv.dir;

    view.camera = mv.camera;
    view.camera.rot = orthonormalize_rotation(view.camera.rot);
    if (opts.fix_intrinsics) {
      view.camera.fx = kRepairFx;
      view.camera.fy = kRepairFy;
      view.camera.cx = kRepairCx;
      view.camera.cy = kRepairCy;
    }

    if (mv.light_positions.size() != n_lights)
      throw std::runtime_error("load_dataset: light count mismatch in " + mv.dir);
    for (size_t m = 0; m < n_lights; ++m) {
      PointLight light;
      Vec3 p = mv.light_positions[m];
      light.position = (light_frame == "camera")
                           ? Vec3(view.camera.rot.transpose() * (p - view.camera.trans))
                           : p;
      light.log_phi = std::log(manifest.phi(static_cast<Eigen::Index>(m)));
      view.lights.push_back(light);
    }

    std::string mask_path = dir + "/mask.png";
    if (!fs::exists(mask_path)) throw std::runtime_error("load_dataset: missing " + mask_path);
    ImageU8 mask_raw = read_png8(mask_path);
    view.mask = ImageU8(mask_raw.width, mask_raw.height, 1);
    for (int y = 0; y < mask_raw.height; ++y)
      for (int x = 0; x < mask_raw.width; ++x)
        view.mask.at(x, y) = mask_raw.at(x, y, 0) > 127 ? 255 : 0;
    if (opts.close_mask_holes) view.mask = close_holes(view.mask, opts.close_iterations);
    if (view.mask.width != manifest.width || view.mask.height != manifest.height)
      throw std::runtime_error("load_dataset: resolution mismatch in " + mask_path);

    view.light_images.resize(n_lights);
    for (size_t m = 0; m < n_lights; ++m) {
      std::string img_path = dir + "/" + light_file_name(static_cast<int>(m));
      if (!fs::exists(img_path)) throw std::runtime_error("load_dataset: missing " + img_path);
      view.light_images[m] = read_png_gray(img_path);
      if (view.light_images[m].width != manifest.width ||
          view.light_images[m].height != manifest.height)
        throw std::runtime_error("load_dataset: resolution mismatch in " + img_path);
    }

    std::string normals_path = dir + "/normals.f32";
    if (fs::exists(normals_path)) {
      std::string frame;
      view.normals_cam = read_f32map(normals_path, &frame);
      if (frame != "camera")
        throw std::runtime_error("load_dataset: expected camera-frame normals in " +
                                 normals_path);
      if (view.normals_cam.channels != 3)
        throw std::runtime_error("load_dataset: normals must have 3 channels in " + normals_path);
    }
    std::string depth_path = dir + "/depth.f32";
    if (fs::exists(depth_path)) view.depth_z = read_f32map(depth_path);

    view.excluded_lights = mv.exclude_lights;
    for (auto [v, l] : extra_excluded)
      if (v == static_cast<int>(vi)) view.excluded_lights.push_back(l);
  }
  return views;
}

void write_dataset(const OracleScene& scene, const std::vector<OracleView>& views,
                   const std::string& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("write_dataset: cannot create " + root);

  DatasetManifest manifest;
  manifest.width = scene.width;
  manifest.height = scene.height;
  manifest.bit_depth = 16;
  manifest.light_frame = "world";
  const size_t n_lights = scene.lights.empty() ? 0 : scene.lights[0].size();
  manifest.phi.resize(static_cast<Eigen::Index>(n_lights));
  for (size_t m = 0; m < n_lights; ++m)
    manifest.phi(static_cast<Eigen::Index>(m)) = scene.lights[0][m].phi();

  for (size_t vi = 0; vi < views.size(); ++vi) {
    ManifestView mv;
    mv.dir = view_dir_name(static_cast<int>(vi));
    mv.camera = scene.cameras.at(vi);
    for (const auto& light : scene.lights.at(vi)) mv.light_positions.push_back(light.position);
    manifest.views.push_back(mv);

    std::string dir = root + "/" + mv.dir;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("write_dataset: cannot create " + dir);

    const OracleView& ov = views[vi];
    for (size_t m = 0; m < ov.light_images.size(); ++m)
      write_png_gray16(dir + "/" + light_file_name(static_cast<int>(m)), ov.light_images[m]);
    write_png8(dir + "/mask.png", ov.mask);
    write_f32map(dir + "/normals.f32", ov.normals_cam, "camera");
    write_f32map(dir + "/depth.f32", ov.depth_z, "none");
    write_f32map(dir + "/ao.f32", ov.ao, "none");
  }
  write_manifest(root, manifest);
}

}  // namespace nplps
