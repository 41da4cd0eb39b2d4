// Command-line driver for the dual-layer splatting pipeline:
// gen-scene -> prep-pcd -> fit-sdf -> train -> render / eval.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "dualsplat/comp/composite.hpp"
#include "dualsplat/core/errors.hpp"
#include "dualsplat/core/parallel.hpp"
#include "dualsplat/core/rng.hpp"
#include "dualsplat/io/camera_io.hpp"
#include "dualsplat/io/image_io.hpp"
#include "dualsplat/io/ply.hpp"
#include "dualsplat/pcd/prep.hpp"
#include "dualsplat/raster/raster.hpp"
#include "dualsplat/scene/synth.hpp"
#include "dualsplat/sdf/prior.hpp"
#include "dualsplat/train/metrics.hpp"
#include "dualsplat/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace dualsplat;
using nlohmann::json;

namespace {

std::vector<std::string> list_files(const std::string& dir,
                                    const std::vector<std::string>& exts) {
  if (!fs::is_directory(dir)) throw BadInput(dir, "not a directory");
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (std::find(exts.begin(), exts.end(), ext) != exts.end())
      out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// "--camera cams.json[i]" selects one camera from a camera file.
std::pair<std::string, int> split_camera_index(const std::string& arg) {
  const auto open = arg.rfind('[');
  if (open == std::string::npos || arg.back() != ']') return {arg, 0};
  const std::string idx = arg.substr(open + 1, arg.size() - open - 2);
  return {arg.substr(0, open), std::stoi(idx)};
}

Camera load_one_camera(const std::string& arg) {
  const auto [path, index] = split_camera_index(arg);
  const auto cams = read_cameras_json(path);
  if (index < 0 || static_cast<size_t>(index) >= cams.size())
    throw BadInput(path, "camera index " + std::to_string(index) + " out of range");
  return cams[index];
}

int run_gen_scene(const std::string& preset, const std::string& out,
                  const SynthOptions& opt) {
  const SyntheticScene scene = generate_scene(preset, opt);
  fs::create_directories(out);
  fs::create_directories(out + "/images");
  fs::create_directories(out + "/masks");
  fs::create_directories(out + "/heldout_images");
  write_pointcloud_ply(out + "/points.ply", scene.cloud);
  write_cameras_json(out + "/cameras.json", scene.cameras);
  write_cameras_json(out + "/heldout_cameras.json", scene.heldout_cameras);
  char name[64];
  for (size_t i = 0; i < scene.images.size(); ++i) {
    std::snprintf(name, sizeof name, "/images/view_%03zu.ppm", i);
    write_ppm(out + name, scene.images[i]);
    std::snprintf(name, sizeof name, "/masks/mask_%03zu.pgm", i);
    write_pgm_mask(out + name, scene.masks[i]);
  }
  for (size_t i = 0; i < scene.heldout_images.size(); ++i) {
    std::snprintf(name, sizeof name, "/heldout_images/view_%03zu.ppm", i);
    write_ppm(out + name, scene.heldout_images[i]);
  }
  std::cout << "wrote " << scene.cloud.size() << " points, "
            << scene.cameras.size() << " views to " << out << "\n";
  return 0;
}

int run_prep_pcd(const std::string& points_path, const std::string& cams_path,
                 const std::string& images_dir, const std::string& masks_dir,
                 size_t sky, size_t down, uint64_t seed, const std::string& out) {
  SemanticPointCloud cloud = read_pointcloud_ply(points_path);
  const auto cams = read_cameras_json(cams_path);
  const auto image_files = list_files(images_dir, {".ppm"});
  const auto mask_files = list_files(masks_dir, {".pgm", ".png"});
  if (image_files.size() != cams.size() || mask_files.size() != cams.size())
    throw BadInput(images_dir, "expected one image and one mask per camera");
  std::vector<ImageD> images;
  std::vector<SemanticMask> masks;
  for (size_t i = 0; i < cams.size(); ++i) {
    images.push_back(read_ppm(image_files[i]));
    masks.push_back(read_mask(mask_files[i]));
  }
  if (down > 0) cloud = downsample(cloud, down, seed);
  cloud = label_points(cloud, cams, images, masks);
  if (sky > 0) cloud = add_sky_sphere(cloud, sky, SkyColorMode::Constant, seed + 1);
  const SplitCloud parts = split(cloud);
  fs::create_directories(out);
  write_pointcloud_ply(out + "/road.ply", parts.road);
  write_pointcloud_ply(out + "/env.ply", parts.environment);
  std::cout << "road points: " << parts.road.size()
            << "  environment points: " << parts.environment.size() << "\n";
  return 0;
}

int run_fit_sdf(const std::string& road_path, const SdfFitConfig& cfg, int k,
                int per_point, double radius, const std::string& out) {
  const SemanticPointCloud road = read_pointcloud_ply(road_path);
  if (road.size() == 0) throw BadInput(road_path, "empty road cloud");
  const auto normals = estimate_normals(road.positions, k);
  auto samples = sample_offsurface(road.positions, per_point, radius, cfg.seed,
                                   &normals);

  // deterministic 90/10 train/held-out split
  std::vector<SdfSample> train_set, heldout;
  Rng rng(cfg.seed ^ 0x9e37ULL);
  for (auto& s : samples)
    (rng.uniform() < 0.9 ? train_set : heldout).push_back(std::move(s));
  if (heldout.empty()) heldout = train_set;

  const SdfModel model = fit_sdf(train_set, cfg);
  const SdfEval eval = evaluate_sdf(model, heldout);
  if (!out.empty()) {
    if (const auto dir = fs::path(out).parent_path(); !dir.empty())
      fs::create_directories(dir);
    save_sdf(out, model);
  }
  std::printf("heldout_value_mae=%.6f eikonal_residual=%.6f\n", eval.value_mae,
              eval.eikonal_residual);
  return 0;
}

int run_render(const std::string& road_path, const std::string& env_path,
               const std::string& camera_arg, const std::string& mode,
               double s_sigma, const std::string& out, bool dump_aux,
               const Vec3& background) {
  const Camera cam = load_one_camera(camera_arg);
  SurfelCloud road;
  if (!road_path.empty()) road = read_surfels_ply(road_path);
  GaussianCloud env;
  if (!env_path.empty()) env = read_gaussians_ply(env_path);

  const LayerRender rr = render_layer(road, cam);
  const LayerRender er = render_layer(env, cam);
  const CompositeMode cmode =
      mode == "hard" ? CompositeMode::Hard : CompositeMode::Smooth;
  const CompositeResult comp = composite(rr, er, cmode, s_sigma);

  ImageD final = comp.color;
  for (int y = 0; y < final.height; ++y)
    for (int x = 0; x < final.width; ++x) {
      const double open = rr.transmittance.at(x, y) * er.transmittance.at(x, y);
      for (int c = 0; c < 3; ++c) final.at(x, y, c) += open * background[c];
    }
  if (const auto dir = fs::path(out).parent_path(); !dir.empty())
    fs::create_directories(dir);
  write_ppm(out, final);
  if (dump_aux) {
    const std::string stem =
        (fs::path(out).parent_path() / fs::path(out).stem()).string();
    write_pfm(stem + "_depth_road.pfm", rr.depth);
    write_pfm(stem + "_depth_env.pfm", er.depth);
    write_pfm(stem + "_trans_road.pfm", rr.transmittance);
    write_pfm(stem + "_trans_env.pfm", er.transmittance);
    write_pfm(stem + "_lambda_r.pfm", comp.lambda_r);
    write_pfm(stem + "_lambda_e.pfm", comp.lambda_e);
    write_pfm(stem + "_delta.pfm", comp.delta);
    write_pfm(stem + "_depth_composite.pfm", comp.depth);
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

TrainConfig parse_train_config(const json& j, const std::string& path) {
  TrainConfig cfg;
  try {
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.sh_degree = j.value("sh_degree", cfg.sh_degree);
    cfg.s_sigma = j.value("s_sigma", cfg.s_sigma);
    cfg.band_width = j.value("band_width", cfg.band_width);
    cfg.snapshot_interval = j.value("snapshot_interval", cfg.snapshot_interval);
    cfg.env_offset_bound = j.value("env_offset_bound", cfg.env_offset_bound);
    cfg.prune_opacity = j.value("prune_opacity", cfg.prune_opacity);
    cfg.prune_threshold = j.value("prune_threshold", cfg.prune_threshold);
    cfg.prune_interval = j.value("prune_interval", cfg.prune_interval);
    cfg.cons_smooth_tau = j.value("cons_smooth_tau", cfg.cons_smooth_tau);
    if (j.contains("composite_mode"))
      cfg.composite_mode = j.at("composite_mode").get<std::string>() == "hard"
                               ? CompositeMode::Hard
                               : CompositeMode::Smooth;
    if (j.contains("cons_mode"))
      cfg.cons_mode = j.at("cons_mode").get<std::string>() == "mean"
                          ? ConsMode::Mean
                          : ConsMode::MaxMin;
    if (j.contains("lr")) {
      const auto& lr = j.at("lr");
      cfg.lr_position = lr.value("position", cfg.lr_position);
      cfg.lr_rotation = lr.value("rotation", cfg.lr_rotation);
      cfg.lr_scale = lr.value("scale", cfg.lr_scale);
      cfg.lr_opacity = lr.value("opacity", cfg.lr_opacity);
      cfg.lr_color = lr.value("color", cfg.lr_color);
    }
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      cfg.weights.lambda_mix = w.value("mix", cfg.weights.lambda_mix);
      cfg.weights.lambda_tran = w.value("tran", cfg.weights.lambda_tran);
      cfg.weights.lambda_sdf = w.value("sdf", cfg.weights.lambda_sdf);
      cfg.weights.lambda_cons = w.value("cons", cfg.weights.lambda_cons);
      cfg.weights.lambda_tv = w.value("tv", cfg.weights.lambda_tv);
      cfg.weights.lambda_d = w.value("d", cfg.weights.lambda_d);
      cfg.weights.lambda_n = w.value("n", cfg.weights.lambda_n);
    }
  } catch (const json::exception& e) {
    throw BadInput(path, std::string("bad train config: ") + e.what());
  }
  return cfg;
}

int run_train(const std::string& config_path, const std::string& out) {
  std::ifstream in(config_path);
  if (!in) throw BadInput(config_path, "cannot open for reading");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw BadInput(config_path, std::string("json parse error: ") + e.what());
  }
  TrainConfig cfg = parse_train_config(j, config_path);
  cfg.out_dir = out;

  // input paths resolve against the config file's directory
  const fs::path base = fs::path(config_path).parent_path();
  auto resolve = [&](const std::string& key) {
    if (!j.contains(key)) throw BadInput(config_path, "config missing '" + key + "'");
    fs::path p = j.at(key).get<std::string>();
    return (p.is_absolute() ? p : base / p).string();
  };

  const SemanticPointCloud road = read_pointcloud_ply(resolve("road_ply"));
  const SemanticPointCloud env = read_pointcloud_ply(resolve("env_ply"));
  cfg.sdf_path = resolve("sdf");
  const SdfModel sdf = load_sdf(cfg.sdf_path);
  const auto cams = read_cameras_json(resolve("cameras"));
  const auto image_files = list_files(resolve("images_dir"), {".ppm"});
  const auto mask_files = list_files(resolve("masks_dir"), {".pgm", ".png"});
  if (image_files.size() != cams.size() || mask_files.size() != cams.size())
    throw BadInput(config_path, "expected one image and one mask per camera");

  std::vector<TrainView> views;
  for (size_t i = 0; i < cams.size(); ++i) {
    TrainView v;
    v.camera = cams[i];
    v.image = read_ppm(image_files[i]);
    v.mask = read_mask(mask_files[i]);
    views.push_back(std::move(v));
  }

  const TrainResult result = train(road, env, sdf, views, cfg);

  std::vector<ImageD> gts;
  std::vector<Camera> eval_cams;
  for (const auto& v : views) {
    gts.push_back(v.image);
    eval_cams.push_back(v.camera);
  }
  const MetricsTable table = evaluate(result.road, result.environment, eval_cams,
                                      gts, cfg.composite_mode, cfg.s_sigma);
  std::ofstream metrics(out + "/metrics.tsv");
  metrics << "view\tpsnr\tssim\n";
  char buf[128];
  for (size_t i = 0; i < table.per_view.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.4f\t%.6f\n", i, table.per_view[i].psnr,
                  table.per_view[i].ssim);
    metrics << buf;
  }
  std::snprintf(buf, sizeof buf, "mean\t%.4f\t%.6f\n", table.mean.psnr,
                table.mean.ssim);
  metrics << buf;
  std::printf("final gs loss %.6f, train-view psnr %.3f ssim %.4f\n",
              result.loss_log.back().gs, table.mean.psnr, table.mean.ssim);
  return 0;
}

int run_eval(const std::string& models_dir, const std::string& views_path,
             const std::string& gt_dir) {
  const SurfelCloud road = read_surfels_ply(models_dir + "/final_road.ply");
  const GaussianCloud env = read_gaussians_ply(models_dir + "/final_env.ply");
  const auto cams = read_cameras_json(views_path);
  const auto gt_files = list_files(gt_dir, {".ppm"});
  if (gt_files.size() != cams.size())
    throw BadInput(gt_dir, "expected one ground-truth image per camera");
  std::vector<ImageD> gts;
  for (const auto& f : gt_files) gts.push_back(read_ppm(f));

  const MetricsTable table = evaluate(road, env, cams, gts);
  std::ofstream file(models_dir + "/eval.tsv");
  auto emit = [&](const std::string& line) {
    std::cout << line;
    file << line;
  };
  emit("view\tpsnr\tssim\n");
  char buf[128];
  for (size_t i = 0; i < table.per_view.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.4f\t%.6f\n", i, table.per_view[i].psnr,
                  table.per_view[i].ssim);
    emit(buf);
  }
  std::snprintf(buf, sizeof buf, "mean\t%.4f\t%.6f\n", table.mean.psnr,
                table.mean.ssim);
  emit(buf);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-layer gaussian splatting pipeline"};
  app.require_subcommand(1);

  int threads = 0;
  if (const char* env_threads = std::getenv("DUALSPLAT_THREADS"))
    threads = std::atoi(env_threads);
  app.add_option("--threads", threads, "worker thread cap (0 = hardware)");

  // gen-scene
  auto* gen = app.add_subcommand("gen-scene", "emit a synthetic fixture");
  std::string preset = "plane", out_dir = "out";
  SynthOptions synth;
  gen->add_option("--preset", preset, "plane | boxes | road-corridor");
  gen->add_option("--out", out_dir)->required();
  gen->add_option("--seed", synth.seed);
  gen->add_option("--width", synth.width);
  gen->add_option("--height", synth.height);
  gen->add_option("--views", synth.n_views);
  gen->add_option("--road-noise", synth.road_noise_sigma);
  gen->add_option("--road-points", synth.road_points);
  gen->add_option("--env-points", synth.env_points);

  // prep-pcd
  auto* prep = app.add_subcommand("prep-pcd", "label, sky-sphere and split a cloud");
  std::string points_path, cams_path, images_dir, masks_dir;
  size_t sky = 0, down = 0;
  uint64_t prep_seed = 0;
  prep->add_option("--points", points_path)->required();
  prep->add_option("--cameras", cams_path)->required();
  prep->add_option("--images", images_dir)->required();
  prep->add_option("--masks", masks_dir)->required();
  prep->add_option("--sky", sky, "sky-sphere point count");
  prep->add_option("--downsample", down, "target point count (0 = keep all)");
  prep->add_option("--seed", prep_seed);
  prep->add_option("--out", out_dir)->required();

  // fit-sdf
  auto* fit = app.add_subcommand("fit-sdf", "fit the road SDF prior");
  std::string road_path, sdf_out;
  SdfFitConfig fit_cfg;
  int knn = 50, per_point = 4;
  double radius = 0.5;
  fit->add_option("--road", road_path)->required();
  fit->add_option("--iters", fit_cfg.iterations);
  fit->add_option("--k", knn, "normal-estimation neighbors");
  fit->add_option("--radius", radius, "off-surface sampling radius, meters");
  fit->add_option("--per-point", per_point);
  fit->add_option("--hidden", fit_cfg.hidden);
  fit->add_option("--batch", fit_cfg.batch);
  fit->add_option("--surface-batch", fit_cfg.surface_batch);
  fit->add_option("--lr", fit_cfg.lr);
  fit->add_option("--lambda-n", fit_cfg.lambda_n);
  fit->add_option("--lambda-eik", fit_cfg.lambda_eik);
  fit->add_option("--seed", fit_cfg.seed);
  fit->add_option("--out", sdf_out)->required();

  // render
  auto* render = app.add_subcommand("render", "render and composite both layers");
  std::string render_road, render_env, camera_arg, mode = "smooth",
              render_out = "img.ppm";
  double s_sigma = 10.0;
  bool dump_aux = false;
  std::vector<double> bg{0, 0, 0};
  render->add_option("--road", render_road, "surfel ply (optional)");
  render->add_option("--env", render_env, "gaussian ply (optional)");
  render->add_option("--camera", camera_arg, "cams.json[i]")->required();
  render->add_option("--mode", mode, "hard | smooth");
  render->add_option("--s-sigma", s_sigma);
  render->add_option("--out", render_out);
  render->add_flag("--dump-aux", dump_aux, "write depth/transmittance/weight pfms");
  render->add_option("--background", bg, "solid background r g b")->expected(3);

  // train
  auto* tr = app.add_subcommand("train", "joint two-layer optimization");
  std::string config_path;
  tr->add_option("--config", config_path)->required();
  tr->add_option("--out", out_dir)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "psnr/ssim table for trained models");
  std::string models_dir, views_path, gt_dir;
  ev->add_option("--models", models_dir)->required();
  ev->add_option("--views", views_path)->required();
  ev->add_option("--gt", gt_dir)->required();

  CLI11_PARSE(app, argc, argv);
  set_thread_count(threads);

  try {
    if (gen->parsed()) return run_gen_scene(preset, out_dir, synth);
    if (prep->parsed())
      return run_prep_pcd(points_path, cams_path, images_dir, masks_dir, sky, down,
                          prep_seed, out_dir);
    if (fit->parsed())
      return run_fit_sdf(road_path, fit_cfg, knn, per_point, radius, sdf_out);
    if (render->parsed())
      return run_render(render_road, render_env, camera_arg, mode, s_sigma,
                        render_out, dump_aux, Vec3(bg[0], bg[1], bg[2]));
    if (tr->parsed()) return run_train(config_path, out_dir);
    if (ev->parsed()) return run_eval(models_dir, views_path, gt_dir);
  } catch (const BadInput& e) {
    std::cerr << "error code=2 path=\"" << e.path() << "\" reason=\"" << e.what()
              << "\"\n";
    return 2;
  } catch (const Divergence& e) {
    std::cerr << "error code=3 path=\"\" reason=\"" << e.what() << "\"\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error code=2 path=\"\" reason=\"" << e.what() << "\"\n";
    return 2;
  }
  return 0;
}
