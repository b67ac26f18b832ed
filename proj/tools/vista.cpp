// Command-line surface for the cross-view attention pipeline: voxelize a
// cloud, run a forward pass with heatmap export, train the smoke model,
// gradient-check everything, and benchmark the stages.

#include <CLI11.hpp>

#include "vista/config.hpp"
#include "vista/gradcheck_suite.hpp"
#include "vista/io.hpp"
#include "vista/train.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <unordered_set>

namespace {

using vista::Index;
using vista::RunConfig;
using vista::Tensor;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

struct CommonFlags {
  std::string config_path;
  std::string mode;
  int decouple = -1;  // -1 keep config
  std::string var_target;
  std::int64_t seed = -1;
  std::int64_t steps = -1;
  std::string out_dir;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "run configuration file");
  cmd->add_option("--mode", f.mode, "fusion mode: conv|linear|gap");
  cmd->add_option("--decouple", f.decouple, "decouple sem/geo branches: 0|1");
  cmd->add_option("--var-target", f.var_target, "variance constraint target: sem|geo|both");
  cmd->add_option("--seed", f.seed, "seed override");
  cmd->add_option("--steps", f.steps, "training steps override");
  cmd->add_option("--out", f.out_dir, "output directory");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg = f.config_path.empty() ? RunConfig{} : RunConfig::load(f.config_path);
  if (!f.mode.empty()) cfg.mode = f.mode;
  if (f.decouple >= 0) cfg.decouple = f.decouple != 0;
  if (!f.var_target.empty()) cfg.var_target = f.var_target;
  if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
  if (f.steps >= 0) cfg.steps = f.steps;
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  cfg.validate();
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  if (cfg.out_dir.empty()) return name;
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

std::vector<vista::SceneSample> gather_scenes(const RunConfig& cfg) {
  std::vector<vista::SceneSample> scenes;
  if (!cfg.scenes_dir.empty()) {
    for (const auto& stem : vista::list_scene_stems(cfg.scenes_dir)) {
      scenes.push_back(vista::load_scene(stem));
    }
    if (scenes.empty()) {
      throw std::invalid_argument("no scenes found under '" + cfg.scenes_dir + "'");
    }
    return scenes;
  }
  std::mt19937_64 rng(cfg.seed ^ 0x5ceed5u);
  std::uniform_int_distribution<Index> objs(cfg.objects_min, cfg.objects_max);
  for (Index i = 0; i < cfg.num_scenes; ++i) {
    scenes.push_back(vista::generate_scene(cfg.seed + 1000 + static_cast<std::uint64_t>(i),
                                           static_cast<int>(objs(rng)), cfg.voxel));
  }
  return scenes;
}

// Mean attention over query rows, reshaped onto the pooled source map.
std::vector<double> mean_attention_heatmap(const Tensor& attention) {
  const Index n = attention.dim(0), m = attention.dim(1);
  std::vector<double> heat(static_cast<std::size_t>(m), 0.0);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) heat[static_cast<std::size_t>(j)] += attention[i * m + j];
  }
  for (double& v : heat) v /= static_cast<double>(n);
  return heat;
}

int cmd_voxelize(const CommonFlags& flags, const std::string& cloud_path) {
  RunConfig cfg = resolve_config(flags);
  vista::PointCloud cloud = vista::load_point_cloud(cloud_path);
  const Index nx = cfg.voxel.nx(), ny = cfg.voxel.ny(), nz = cfg.voxel.nz();
  std::printf("grid %lldx%lldx%lld\n", static_cast<long long>(nx), static_cast<long long>(ny),
              static_cast<long long>(nz));
  const Index in_range = vista::count_in_range(cloud, cfg.voxel);
  std::printf("%lld in-range points\n", static_cast<long long>(in_range));

  // occupancy without allocating the dense grid, so full-scale configs work
  std::unordered_set<Index> occupied;
  for (const auto& p : cloud.points) {
    if (auto idx = vista::voxel_index(cfg.voxel, p.x, p.y, p.z)) {
      occupied.insert(((*idx)[0] * ny + (*idx)[1]) * nz + (*idx)[2]);
    }
  }
  std::printf("%zu occupied voxels\n", occupied.size());

  if (!cfg.out_dir.empty()) {
    std::vector<Index> sorted(occupied.begin(), occupied.end());
    std::sort(sorted.begin(), sorted.end());
    std::ofstream out(out_path(cfg, "occupied_voxels.csv"));
    out << "ix,iy,iz\n";
    for (Index v : sorted) {
      out << v / (ny * nz) << ',' << (v / nz) % ny << ',' << v % nz << '\n';
    }
  }
  return kExitOk;
}

int cmd_forward(const CommonFlags& flags, const std::string& scene_stem,
                const std::string& weights_path) {
  RunConfig cfg = resolve_config(flags);
  vista::SceneSample scene;
  if (!scene_stem.empty()) {
    scene = vista::load_scene(scene_stem);
  } else {
    scene = vista::generate_scene(cfg.seed, static_cast<int>(cfg.objects_max), cfg.voxel);
  }
  vista::Model model = vista::Model::init(cfg.model_config(), cfg.seed);
  if (!weights_path.empty()) vista::load_model_weights(weights_path, model);
  vista::ForwardResult r = model.forward(scene);
  r.fusion.bundle.validate();

  const Index n = r.fusion.bundle.n(), m = r.fusion.bundle.m();
  std::printf("attention %lldx%lld, loss total %.6f\n", static_cast<long long>(n),
              static_cast<long long>(m), r.loss.report.total);

  vista::write_attention_csv(out_path(cfg, "attention_sem.csv"), r.fusion.bundle.a_sem);
  vista::write_attention_csv(out_path(cfg, "attention_geo.csv"), r.fusion.bundle.a_geo);
  const Index ph = vista::pooled_extent(cfg.voxel.nx(), cfg.pool_rv_h);
  const Index pw = vista::pooled_extent(cfg.voxel.nz(), cfg.pool_rv_w);
  vista::write_pgm(out_path(cfg, "attention_sem.pgm"),
                   mean_attention_heatmap(r.fusion.bundle.a_sem), ph, pw);
  vista::write_pgm(out_path(cfg, "attention_geo.pgm"),
                   mean_attention_heatmap(r.fusion.bundle.a_geo), ph, pw);
  vista::write_tensor(out_path(cfg, "fused_sem.txt"), "fused_sem", r.fusion.fused_sem.features);
  vista::write_tensor(out_path(cfg, "fused_geo.txt"), "fused_geo", r.fusion.fused_geo.features);

  auto pooled = vista::pillar_centers_pooled(cfg.voxel, cfg.pool_bev_h, cfg.pool_bev_w);
  auto intervals = vista::rv_pooled_x_intervals(cfg.voxel, cfg.pool_rv_h, cfg.pool_rv_w);
  auto conc = vista::attention_concentration(r.fusion.bundle, scene.boxes, pooled, intervals);
  vista::write_concentration_csv(out_path(cfg, "concentration.csv"), conc.sem, conc.geo);
  return kExitOk;
}

int cmd_train(const CommonFlags& flags) {
  RunConfig cfg = resolve_config(flags);
  auto scenes = gather_scenes(cfg);
  std::printf("training on %zu scenes, %lld steps, mode=%s decouple=%d var_target=%s\n",
              scenes.size(), static_cast<long long>(cfg.steps), cfg.mode.c_str(),
              cfg.decouple ? 1 : 0, cfg.var_target.c_str());
  vista::TrainTrace trace = vista::train_smoke(cfg.train_config(), scenes, cfg.model_config());
  vista::write_loss_trace_csv(out_path(cfg, "loss_trace.csv"), trace.steps);
  vista::save_model_weights(out_path(cfg, "weights.txt"), trace.model);

  auto pooled = vista::pillar_centers_pooled(cfg.voxel, cfg.pool_bev_h, cfg.pool_bev_w);
  auto intervals = vista::rv_pooled_x_intervals(cfg.voxel, cfg.pool_rv_h, cfg.pool_rv_w);
  vista::ConcentrationReport sem, geo;
  const std::size_t eval_scenes = std::min<std::size_t>(scenes.size(), 20);
  for (std::size_t i = 0; i < eval_scenes; ++i) {
    auto r = trace.model.forward(scenes[i]);
    auto conc = vista::attention_concentration(r.fusion.bundle, scenes[i].boxes, pooled, intervals);
    sem.in_box_mass += conc.sem.in_box_mass;
    sem.mean_row_max += conc.sem.mean_row_max;
    sem.rows += conc.sem.rows;
    geo.in_box_mass += conc.geo.in_box_mass;
    geo.mean_row_max += conc.geo.mean_row_max;
    geo.rows += conc.geo.rows;
  }
  sem.in_box_mass /= static_cast<double>(eval_scenes);
  sem.mean_row_max /= static_cast<double>(eval_scenes);
  geo.in_box_mass /= static_cast<double>(eval_scenes);
  geo.mean_row_max /= static_cast<double>(eval_scenes);
  vista::write_concentration_csv(out_path(cfg, "concentration.csv"), sem, geo);

  std::ofstream eff(out_path(cfg, "config.effective.cfg"));
  cfg.dump(eff);

  std::printf("initial total %.6f, final total %.6f\n", trace.steps.front().total,
              trace.steps.back().total);
  std::printf("sem in_box_mass %.4f mean_row_max %.4f | geo in_box_mass %.4f mean_row_max %.4f\n",
              sem.in_box_mass, sem.mean_row_max, geo.in_box_mass, geo.mean_row_max);
  return kExitOk;
}

int cmd_gradcheck(const CommonFlags& flags, double eps, double threshold,
                  double pipeline_threshold) {
  RunConfig cfg = resolve_config(flags);
  if (!(eps > 0.0) || eps >= 0.5) throw std::invalid_argument("gradcheck: eps must lie in (0, 0.5)");
  auto entries = vista::run_op_gradcheck_suite(eps, cfg.seed + 7);
  const std::size_t op_count = entries.size();

  // a reduced pipeline keeps the command quick; the acceptance suite runs the
  // full desk configuration
  vista::ModelConfig mc = cfg.model_config();
  mc.voxel.x_min = -4;
  mc.voxel.x_max = 4;
  mc.voxel.y_min = -4;
  mc.voxel.y_max = 4;
  mc.voxel.z_min = -1;
  mc.voxel.z_max = 1;
  mc.voxel.res_x = mc.voxel.res_y = mc.voxel.res_z = 0.5;
  mc.enc_channels = 4;
  mc.d_f = mc.d_q = mc.d_v = 8;
  mc.pool_bev_kh = mc.pool_bev_kw = 2;
  mc.pool_rv_kh = mc.pool_rv_kw = 2;
  auto scene = vista::generate_scene(cfg.seed + 3, 2, mc.voxel);
  auto pipeline = vista::run_pipeline_gradcheck(mc, scene, eps, 6, cfg.seed + 11);
  entries.insert(entries.end(), pipeline.begin(), pipeline.end());

  bool ok = true;
  std::printf("%-32s %-12s %s\n", "op", "max_rel_err", "status");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const double limit = i < op_count ? threshold : pipeline_threshold;
    const bool pass = e.report.max_rel_error < limit;
    ok = ok && pass;
    std::printf("%-32s %-12.3e %s\n", e.name.c_str(), e.report.max_rel_error,
                pass ? "pass" : "FAIL");
  }
  std::printf("gradcheck %s (eps=%g, op threshold=%g, pipeline threshold=%g)\n",
              ok ? "passed" : "FAILED", eps, threshold, pipeline_threshold);
  if (!ok) throw std::runtime_error("gradient check failed");
  return kExitOk;
}

int cmd_bench(const CommonFlags& flags, int repeats) {
  RunConfig cfg = resolve_config(flags);
  if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
  vista::ModelConfig mc = cfg.model_config();
  vista::Model model = vista::Model::init(mc, cfg.seed);
  auto scene = vista::generate_scene(cfg.seed, static_cast<int>(cfg.objects_max), cfg.voxel);

  using Clock = std::chrono::steady_clock;
  auto median_ms = [&](const std::function<void()>& fn) {
    std::vector<double> samples;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      fn();
      const auto t1 = Clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
  };

  vista::VoxelGrid grid;
  Tensor f3d;
  vista::ViewMap bev, rv;
  vista::VistaOutput fusion;
  vista::ForwardResult full;

  std::printf("stage,median_ms,repeats\n");
  std::printf("voxelize,%.3f,%d\n", median_ms([&] { grid = vista::voxelize(scene.cloud, mc.voxel); }),
              repeats);
  std::printf("encode,%.3f,%d\n", median_ms([&] { f3d = vista::encode_features(grid, model.encoder); }),
              repeats);
  std::printf("collapse_neck,%.3f,%d\n", median_ms([&] {
                bev = vista::collapse(f3d, vista::View::bev);
                rv = vista::collapse(f3d, vista::View::rv);
                bev.features = vista::conv2d(bev.features, model.neck_bev_w, model.neck_bev_b);
                rv.features = vista::conv2d(rv.features, model.neck_rv_w, model.neck_rv_b);
              }),
              repeats);
  std::printf("attention,%.3f,%d\n",
              median_ms([&] { fusion = vista::vista_forward(bev, rv, model.vista, mc.vista_options()); }),
              repeats);
  std::printf("forward_total,%.3f,%d\n", median_ms([&] { full = model.forward(scene); }), repeats);
  std::printf("backward,%.3f,%d\n", median_ms([&] {
                vista::ForwardResult r = model.forward(scene);
                model.zero_grad();
                r.loss.total.backward();
              }),
              repeats);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-view attention fusion pipeline"};
  app.require_subcommand(1);

  CommonFlags voxelize_flags, forward_flags, train_flags, gradcheck_flags, bench_flags;
  std::string cloud_path, scene_stem, weights_path;
  double eps = 1e-5, threshold = 1e-5, pipeline_threshold = 1e-4;
  int repeats = 5;

  auto* voxelize = app.add_subcommand("voxelize", "bin a point cloud and print the grid summary");
  add_common_flags(voxelize, voxelize_flags);
  voxelize->add_option("--cloud", cloud_path, "point cloud file (x,y,z,intensity per line)")
      ->required();

  auto* forward = app.add_subcommand("forward", "run one forward pass and export attention maps");
  add_common_flags(forward, forward_flags);
  forward->add_option("--scene", scene_stem, "scene stem (expects <stem>.cloud.csv and <stem>.boxes.csv)");
  forward->add_option("--weights", weights_path, "weights file from a prior train run");

  auto* train = app.add_subcommand("train", "run the smoke training loop");
  add_common_flags(train, train_flags);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
  add_common_flags(gradcheck, gradcheck_flags);
  gradcheck->add_option("--eps", eps, "finite-difference step");
  gradcheck->add_option("--threshold", threshold, "max relative error accepted for ops");
  gradcheck->add_option("--pipeline-threshold", pipeline_threshold,
                        "max relative error accepted end-to-end");

  auto* bench = app.add_subcommand("bench", "per-stage latency table");
  add_common_flags(bench, bench_flags);
  bench->add_option("--repeats", repeats, "samples per stage (median reported)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (voxelize->parsed()) return cmd_voxelize(voxelize_flags, cloud_path);
    if (forward->parsed()) return cmd_forward(forward_flags, scene_stem, weights_path);
    if (train->parsed()) return cmd_train(train_flags);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_flags, eps, threshold, pipeline_threshold);
    if (bench->parsed()) return cmd_bench(bench_flags, repeats);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  }
  return kExitValidation;
}
