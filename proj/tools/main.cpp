#include "CLI11.hpp"
#include "json.hpp"

#include "nplps/dataio.hpp"
#include "nplps/meshing.hpp"
#include "nplps/oracle.hpp"
#include "nplps/renderer.hpp"
#include "nplps/training.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace nplps;

namespace {

TrainConfig config_from_json(const std::string& path) {
  TrainConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  in >> j;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.warmup_epochs = j.value("warmup_epochs", cfg.warmup_epochs);
  cfg.batch_rays = j.value("batch_rays", cfg.batch_rays);
  cfg.samples.coarse = j.value("coarse_samples", cfg.samples.coarse);
  cfg.samples.fine = j.value("fine_samples", cfg.samples.fine);
  cfg.samples.newton = j.value("newton_samples", cfg.samples.newton);
  cfg.samples.shadow = j.value("shadow_samples", cfg.samples.shadow);
  cfg.use_normals = j.value("use_normals", cfg.use_normals);
  cfg.use_intensities = j.value("use_intensities", cfg.use_intensities);
  cfg.depth_refresh_period = j.value("depth_refresh_period", cfg.depth_refresh_period);
  cfg.depth_prior = j.value("depth_prior", cfg.depth_prior);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.fine_halfwidth_start = j.value("fine_halfwidth_start", cfg.fine_halfwidth_start);
  cfg.fine_halfwidth_end = j.value("fine_halfwidth_end", cfg.fine_halfwidth_end);
  if (j.contains("light_subset")) cfg.light_subset = j["light_subset"].get<std::vector<int>>();
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    cfg.weights.rendering = w.value("rendering", cfg.weights.rendering);
    cfg.weights.silhouette = w.value("silhouette", cfg.weights.silhouette);
    cfg.weights.normal = w.value("normal", cfg.weights.normal);
    cfg.weights.eikonal = w.value("eikonal", cfg.weights.eikonal);
    cfg.weights.freespace = w.value("freespace", cfg.weights.freespace);
  }
  if (j.contains("rates")) {
    const auto& r = j["rates"];
    cfg.rates.sdf = r.value("sdf", cfg.rates.sdf);
    cfg.rates.albedo = r.value("albedo", cfg.rates.albedo);
    cfg.rates.brdf = r.value("brdf", cfg.rates.brdf);
    cfg.rates.beta = r.value("beta", cfg.rates.beta);
  }
  if (j.contains("fields")) {
    const auto& f = j["fields"];
    cfg.fields.sdf_layers = f.value("sdf_layers", cfg.fields.sdf_layers);
    cfg.fields.sdf_width = f.value("sdf_width", cfg.fields.sdf_width);
    cfg.fields.albedo_layers = f.value("albedo_layers", cfg.fields.albedo_layers);
    cfg.fields.albedo_width = f.value("albedo_width", cfg.fields.albedo_width);
    cfg.fields.reflect_layers = f.value("reflect_layers", cfg.fields.reflect_layers);
    cfg.fields.reflect_width = f.value("reflect_width", cfg.fields.reflect_width);
    cfg.fields.brdf_layers = f.value("brdf_layers", cfg.fields.brdf_layers);
    cfg.fields.brdf_width = f.value("brdf_width", cfg.fields.brdf_width);
    cfg.fields.beta_init = f.value("beta_init", cfg.fields.beta_init);
    cfg.fields.coord_scale = f.value("coord_scale", cfg.fields.coord_scale);
  }
  return cfg;
}

int cmd_synth(const std::string& scene_path, const std::string& out_dir) {
  OracleScene scene = load_scene(scene_path);
  std::vector<OracleView> views;
  for (size_t v = 0; v < scene.cameras.size(); ++v) {
    views.push_back(oracle_render_view(scene, static_cast<int>(v)));
    std::cout << "rendered view " << v + 1 << "/" << scene.cameras.size() << "\n";
  }
  write_dataset(scene, views, out_dir);
  std::cout << "wrote dataset to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, const std::string& mode, long seed,
              const std::string& lights_csv, bool fix_intrinsics,
              const std::string& exclude_file) {
  TrainConfig cfg = config_from_json(config_path);
  if (mode == "normals") {
    cfg.use_normals = true;
    cfg.use_intensities = false;
  } else if (mode == "intensities") {
    cfg.use_normals = false;
    cfg.use_intensities = true;
  } else if (mode == "both") {
    cfg.use_normals = cfg.use_intensities = true;
  } else if (!mode.empty()) {
    throw std::runtime_error("unknown --mode " + mode);
  }
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (!lights_csv.empty()) {
    cfg.light_subset.clear();
    std::istringstream ls(lights_csv);
    std::string tok;
    while (std::getline(ls, tok, ',')) cfg.light_subset.push_back(std::stoi(tok));
  }
  cfg.validate();

  LoadOptions opts;
  opts.fix_intrinsics = fix_intrinsics;
  opts.exclude_file = exclude_file;
  auto views = load_dataset(data_dir, opts);
  FieldSet fs = FieldSet::create(cfg.fields, static_cast<int>(views[0].lights.size()));
  TrainResult result = train(fs, views, cfg, out_dir);
  std::cout << (result.aborted ? "training aborted (see log)\n" : "training complete\n");
  std::cout << "checkpoint + log in " << out_dir << "\n";
  return result.aborted ? 1 : 0;
}

int cmd_extract(const std::string& ckpt, const std::string& out_mesh, int grid,
                bool bake_albedo) {
  FieldSet fs = load_fieldset(ckpt);
  GridSpec spec;
  spec.bbox_min = fs.bbox_min;
  spec.bbox_max = fs.bbox_max;
  spec.resolution = grid;
  TriangleMesh mesh = marching_cubes(fs, spec);
  if (mesh.empty()) {
    std::cerr << "extract-mesh: field has no zero crossing in the recorded box\n";
    return 1;
  }
  if (bake_albedo) bake_vertex_albedo(fs, mesh);
  if (out_mesh.size() > 4 && out_mesh.substr(out_mesh.size() - 4) == ".obj")
    save_obj(out_mesh, mesh);
  else
    save_ply(out_mesh, mesh);
  std::cout << "wrote " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
            << " triangles to " << out_mesh << "\n";
  return 0;
}

int cmd_render(const std::string& ckpt, const std::string& data_dir, int view_index,
               const std::string& out_dir) {
  FieldSet fs = load_fieldset(ckpt);
  auto views = load_dataset(data_dir);
  if (view_index < 0 || view_index >= static_cast<int>(views.size()))
    throw std::runtime_error("render: view index out of range");
  const DatasetView& view = views[view_index];
  std::filesystem::create_directories(out_dir);

  const int w = view.mask.width, h = view.mask.height;
  std::vector<PointLight> lights = view.lights;
  for (size_t m = 0; m < lights.size(); ++m) lights[m].log_phi = fs.log_phi(m);
  SampleCounts counts{32, 32, 32, 16};
  double far = (0.5 * (fs.bbox_min + fs.bbox_max) - view.camera.center()).norm();

  std::vector<ImageF> rendered(lights.size(), ImageF(w, h, 1, 0.0f));
  ImageF depth(w, h, 1, 0.0f), opacity(w, h, 1, 0.0f);
  parallel_for_blocks(h, 4, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        Ray ray = pixel_to_ray(view.camera, Vec2(x + 0.5, y + 0.5));
        double t0;
        if (!trace_field(fs, ray, std::max(far - 200.0, 1.0), far + 200.0, &t0)) continue;
        auto res = render_pixel(fs, view.camera, lights, Vec2(x + 0.5, y + 0.5), t0, 5.0, counts,
                                mix_seed(1234, y, x));
        for (size_t m = 0; m < lights.size(); ++m)
          rendered[m].at(x, y) = static_cast<float>(res.intensities(m));
        depth.at(x, y) = static_cast<float>(res.depth);
        opacity.at(x, y) = static_cast<float>(res.opacity);
      }
  });

  // Per-light normalization mirrors training: both sides scaled so the GT
  // foreground peak is 1; the error map saturates red at 0.1.
  for (size_t m = 0; m < lights.size(); ++m) {
    float peak = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (view.mask.at(x, y) > 0) peak = std::max(peak, view.light_images[m].at(x, y));
    double scale = peak > 0 ? 1.0 / peak : 1.0;

    ImageF out(w, h, 1, 0.0f);
    ImageU8 err(w, h, 3, 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double r = rendered[m].at(x, y) * scale;
        out.at(x, y) = static_cast<float>(r);
        if (view.mask.at(x, y) > 0) {
          double e = std::abs(r - view.light_images[m].at(x, y) * scale);
          err.at(x, y, 0) = static_cast<std::uint8_t>(std::clamp(e / 0.1, 0.0, 1.0) * 255);
        }
      }
    char name[64];
    std::snprintf(name, sizeof(name), "/render_%03zu.png", m);
    write_png_gray16(out_dir + name, out);
    std::snprintf(name, sizeof(name), "/error_%03zu.png", m);
    write_png8(out_dir + name, err);
  }
  write_f32map(out_dir + "/depth.f32", depth, "none");
  write_f32map(out_dir + "/opacity.f32", opacity, "none");
  std::cout << "wrote renders + error maps to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& mesh_path, const std::string& gt_path, double crop_mm,
             int samples, long seed) {
  TriangleMesh a = load_mesh(mesh_path);
  TriangleMesh b = load_mesh(gt_path);
  if (crop_mm > 0) {
    a = crop_bottom(a, crop_mm);
    b = crop_bottom(b, crop_mm);
  }
  if (a.empty() || b.empty()) {
    std::cerr << "eval: empty mesh after cropping\n";
    return 1;
  }
  double d = chamfer_distance(a, b, samples, seed < 0 ? 12345 : static_cast<std::uint64_t>(seed));
  std::printf("%.3f mm\n", d);
  return 0;
}

int cmd_integrate(const std::string& data_dir, int view_index, const std::string& out_path,
                  double prior) {
  auto views = load_dataset(data_dir);
  if (view_index < 0 || view_index >= static_cast<int>(views.size()))
    throw std::runtime_error("integrate: view index out of range");
  const DatasetView& view = views[view_index];
  if (!view.has_normals()) throw std::runtime_error("integrate: view has no normal map");
  ImageF depth = integrate_normals_to_depth(view.normals_cam, view.mask, view.camera, prior);
  write_f32map(out_path, depth, "none");
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-light multi-view photometric stereo via a neural SDF"};
  app.require_subcommand(1);

  std::string scene, out_dir, data_dir, config_path, ckpt, mesh_path, gt_path, mode, lights_csv,
      exclude_file, out_path;
  int view_index = 0, grid = 256, samples = 1000000;
  long seed = -1;
  double crop_mm = 6.0, prior = 1500.0;
  bool fix_intrinsics = false, bake_albedo = false;

  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset from a scene file");
  synth->add_option("scene", scene, "scene JSON")->required();
  synth->add_option("out", out_dir, "output dataset directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Optimize the fields against a dataset");
  train_cmd->add_option("data", data_dir, "dataset root")->required();
  train_cmd->add_option("config", config_path, "training config JSON")->required();
  train_cmd->add_option("out", out_dir, "output directory")->required();
  train_cmd->add_option("--mode", mode, "normals|intensities|both");
  train_cmd->add_option("--seed", seed, "RNG seed");
  train_cmd->add_option("--lights", lights_csv, "comma-separated light subset, e.g. 0,3,7");
  train_cmd->add_flag("--fix-intrinsics", fix_intrinsics, "apply the repair intrinsics");
  train_cmd->add_option("--exclude-images", exclude_file, "file of 'view light' pairs to drop");

  auto* extract = app.add_subcommand("extract-mesh", "Marching cubes over a checkpoint");
  extract->add_option("ckpt", ckpt, "checkpoint file")->required();
  extract->add_option("out", out_path, "output mesh (.ply or .obj)")->required();
  extract->add_option("--grid", grid, "grid resolution per axis");
  extract->add_flag("--bake-albedo", bake_albedo, "store per-vertex albedo");

  auto* render = app.add_subcommand("render", "Re-render a view and write error maps");
  render->add_option("ckpt", ckpt, "checkpoint file")->required();
  render->add_option("data", data_dir, "dataset root")->required();
  render->add_option("view", view_index, "view index")->required();
  render->add_option("out", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "Chamfer distance between two meshes");
  eval->add_option("mesh", mesh_path, "reconstruction mesh")->required();
  eval->add_option("gt", gt_path, "ground-truth mesh")->required();
  eval->add_option("--crop-mm", crop_mm, "bottom crop height (0 disables)");
  eval->add_option("--samples", samples, "surface samples per side");
  eval->add_option("--seed", seed, "sampling seed (-1 = fixed default)");

  auto* integrate = app.add_subcommand("integrate", "Integrate a view's normal map to depth");
  integrate->add_option("data", data_dir, "dataset root")->required();
  integrate->add_option("view", view_index, "view index")->required();
  integrate->add_option("out", out_path, "output depth .f32")->required();
  integrate->add_option("--prior", prior, "median depth anchor, mm");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(scene, out_dir);
    if (train_cmd->parsed())
      return cmd_train(data_dir, config_path, out_dir, mode, seed, lights_csv, fix_intrinsics,
                       exclude_file);
    if (extract->parsed()) return cmd_extract(ckpt, out_path, grid, bake_albedo);
    if (render->parsed()) return cmd_render(ckpt, data_dir, view_index, out_dir);
    if (eval->parsed()) return cmd_eval(mesh_path, gt_path, crop_mm, samples, seed);
    if (integrate->parsed()) return cmd_integrate(data_dir, view_index, out_path, prior);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
