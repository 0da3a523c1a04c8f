// Command-line front door: run, synth, eval, dump-viewgraph.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "gsfm/gsfm.hpp"

namespace {

struct Paths {
  std::string scene;
  std::string descriptors;
  std::string gt;
  std::string out;
};

void add_pipeline_options(CLI::App& app, gsfm::PipelineConfig& c, std::string& ba_intrinsics) {
  auto& v = c.verification;
  app.add_option("--lookahead", c.lookahead, "sequential retrieval horizon")->capture_default_str();
  app.add_option("--retrieval-k", c.retrieval_k, "similarity partners per image (0: 5, or 15 from 500 images)")
      ->capture_default_str();
  app.add_option("--retrieval-min-score", c.retrieval_min_score)->capture_default_str();
  app.add_option("--similarity-block", c.similarity_block)->capture_default_str();
  app.add_option("--ransac-threshold-px", v.ransac_threshold_px)->capture_default_str();
  app.add_option("--max-ransac-iters", v.max_ransac_iters)->capture_default_str();
  app.add_option("--ransac-confidence", v.ransac_confidence)->capture_default_str();
  app.add_option("--min-inlier-ratio", v.min_inlier_ratio)->capture_default_str();
  app.add_option("--min-inliers", v.min_inliers)->capture_default_str();
  app.add_option("--two-view-ba", v.use_two_view_ba)->capture_default_str();
  app.add_option("--two-view-ba-prune-px", v.two_view_ba_reproj_prune_px)->capture_default_str();
  app.add_option("--two-view-ba-max-iters", v.two_view_ba_max_iters)->capture_default_str();
  app.add_option("--nms-merge", v.nms_merge)->capture_default_str();
  app.add_option("--nms-radius-px", v.nms_radius_px)->capture_default_str();
  app.add_option("--cycle-epsilon-deg", c.cycle_epsilon_deg)->capture_default_str();
  app.add_option("--shonan-sigma", c.rotation.sigma)->capture_default_str();
  app.add_option("--shonan-p-max", c.rotation.p_max)->capture_default_str();
  app.add_option("--mfas-projections", c.translation.n_projections)->capture_default_str();
  app.add_option("--mfas-threshold", c.translation.mfas_threshold)->capture_default_str();
  app.add_option("--translation-huber", c.translation.use_huber)->capture_default_str();
  app.add_option("--huber-delta", c.translation.huber_delta)->capture_default_str();
  app.add_option("--landmark-directions", c.use_landmark_directions)->capture_default_str();
  app.add_option("--landmark-tracks-per-camera", c.landmark_tracks_per_camera)->capture_default_str();
  app.add_option("--min-track-length", c.min_track_length)->capture_default_str();
  app.add_option("--triangulation-threshold-px", c.triangulation.reproj_threshold_px)->capture_default_str();
  app.add_option("--ba-huber-gamma-px", c.ba.huber_gamma_px)->capture_default_str();
  app.add_option("--ba-max-iters", c.ba.max_iterations)->capture_default_str();
  app.add_option("--ba-thresholds-px", c.ba.round_thresholds_px)->capture_default_str();
  app.add_option("--ba-intrinsics", ba_intrinsics)
      ->check(CLI::IsMember({"fixed", "per_camera", "shared"}))
      ->capture_default_str();
  app.add_option("--workers", c.n_workers, "worker threads")->envname("GSFM_NUM_WORKERS")->capture_default_str();
  app.add_option("--seed", c.seed)->capture_default_str();
}

gsfm::IntrinsicsMode intrinsics_mode(const std::string& s) {
  if (s == "per_camera") return gsfm::IntrinsicsMode::kPerCamera;
  if (s == "shared") return gsfm::IntrinsicsMode::kShared;
  return gsfm::IntrinsicsMode::kFixed;
}

gsfm::PipelineInputs load_inputs(const Paths& p) {
  gsfm::PipelineInputs in;
  in.scene = gsfm::read_scene(p.scene);
  if (!p.descriptors.empty()) in.descriptors = gsfm::read_descriptors(p.descriptors);
  if (!p.gt.empty()) in.ground_truth = gsfm::read_poses(p.gt);
  return in;
}

int cmd_run(const Paths& p, const gsfm::PipelineConfig& cfg) {
  // Inputs are fully read before anything is written.
  const auto in = load_inputs(p);
  gsfm::Executor ex(cfg.n_workers);
  const auto res = gsfm::run_pipeline(in, cfg, ex);
  gsfm::write_outputs(p.out, res, in, ex);
  std::printf("registered %zu/%zu cameras, %zu landmarks, %zu skipped tasks\n", res.poses.size(),
              in.scene.keypoints.size(), res.landmarks.size(), res.failures.size());
  if (res.metrics) {
    for (const auto& [t, v] : res.metrics->pose_auc) std::printf("pose AUC @%g deg: %.3f\n", t, v);
  }
  return 0;
}

int cmd_dump_viewgraph(const Paths& p, const gsfm::PipelineConfig& cfg) {
  const auto in = load_inputs(p);
  gsfm::Executor ex(cfg.n_workers);
  std::vector<gsfm::TaskFailure> failures;
  std::vector<gsfm::StageTiming> timing;
  const auto vg = gsfm::build_view_graph(in, cfg, ex, failures, timing);
  gsfm::write_cycle_csv(p.out, vg.cycle.records);
  std::printf("%zu verified pairs, %zu edges in the largest component\n", vg.verified.size(), vg.graph.edges.size());
  return 0;
}

struct SynthOptions {
  gsfm::OrbitSceneConfig scene;
  double outlier_fraction = 0.0;
  std::string outlier_mode = "doppelganger";
  std::string out = "synth";
};

int cmd_synth(const SynthOptions& o) {
  const auto data = gsfm::generate_orbit_scene(o.scene);
  gsfm::SceneInputs s;
  s.intrinsics.assign(data.keypoints.size(), data.scene.intrinsics);
  s.keypoints = data.keypoints;
  s.matches = data.matches;
  if (o.outlier_fraction > 0) {
    const auto mode = o.outlier_mode == "random" ? gsfm::OutlierMode::kRandom : gsfm::OutlierMode::kDoppelganger;
    auto inj = gsfm::inject_outlier_edges(data, o.outlier_fraction, mode, gsfm::task_seed(o.scene.seed, 0x6f75746cULL));
    s.keypoints = std::move(inj.keypoints);
    s.matches = std::move(inj.matches);
    std::string labels = "i,j,corrupted\n";
    for (std::size_t k = 0; k < s.matches.size(); ++k) {
      labels += std::to_string(s.matches[k].i) + "," + std::to_string(s.matches[k].j) + "," +
                (inj.corrupted[k] ? "1" : "0") + "\n";
    }
    std::filesystem::create_directories(o.out);
    gsfm::write_text_file((std::filesystem::path(o.out) / "outlier_labels.csv").string(), labels);
  }
  std::filesystem::create_directories(o.out);
  const std::filesystem::path d(o.out);
  gsfm::write_scene((d / "scene.json").string(), s);
  gsfm::write_descriptors((d / "descriptors.bin").string(), data.descriptors);
  gsfm::PoseById gt;
  for (std::size_t c = 0; c < data.scene.gt_poses.size(); ++c) gt[static_cast<int>(c)] = data.scene.gt_poses[c];
  gsfm::write_poses((d / "gt_poses.txt").string(), gt);
  // Noise-free scenes get the lower rotation uncertainty.
  const double sigma = o.scene.noise_px == 0.0 ? 0.1 : 1.0;
  gsfm::write_text_file((d / "suggested.ini").string(), "shonan-sigma=" + gsfm::format_double(sigma) + "\n");
  std::printf("wrote %zu images, %zu match sets to %s\n", s.keypoints.size(), s.matches.size(), o.out.c_str());
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, const std::string& out) {
  const auto est = gsfm::read_poses(est_path);
  const auto gt = gsfm::read_poses(gt_path);
  const auto report = gsfm::compute_metrics(est, gt, {});
  const std::string text = gsfm::metrics_to_json(report).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    gsfm::write_text_file(out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"global structure-from-motion back-end"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "key=value file; command-line flags override it");
  app.allow_config_extras(false);

  gsfm::PipelineConfig cfg;
  std::string ba_intrinsics = "fixed";
  add_pipeline_options(app, cfg, ba_intrinsics);

  Paths run_paths;
  auto* run = app.add_subcommand("run", "reconstruct from a scene container");
  run->add_option("--scene", run_paths.scene, "scene.json")->required()->check(CLI::ExistingFile);
  run->add_option("--descriptors", run_paths.descriptors, "descriptors.bin")->check(CLI::ExistingFile);
  run->add_option("--gt", run_paths.gt, "ground-truth poses for metrics")->check(CLI::ExistingFile);
  run->add_option("--out", run_paths.out, "output directory")->required();

  Paths vg_paths;
  auto* vg = app.add_subcommand("dump-viewgraph", "write per-edge cycle errors");
  vg->add_option("--scene", vg_paths.scene)->required()->check(CLI::ExistingFile);
  vg->add_option("--descriptors", vg_paths.descriptors)->check(CLI::ExistingFile);
  vg->add_option("--out", vg_paths.out, "CSV path")->required();

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "generate an orbit scene with ground truth");
  synth->add_option("--cameras", so.scene.n_cameras)->capture_default_str();
  synth->add_option("--points", so.scene.n_points)->capture_default_str();
  synth->add_option("--rings", so.scene.n_rings)->capture_default_str();
  synth->add_option("--noise-px", so.scene.noise_px)->capture_default_str();
  synth->add_option("--dropout", so.scene.dropout)->capture_default_str();
  synth->add_option("--outlier-match-fraction", so.scene.outlier_match_fraction)->capture_default_str();
  synth->add_option("--outlier-fraction", so.outlier_fraction, "fraction of corrupted pairs")->capture_default_str();
  synth->add_option("--outlier-mode", so.outlier_mode)
      ->check(CLI::IsMember({"doppelganger", "random"}))
      ->capture_default_str();
  synth->add_option("--scene-seed", so.scene.seed)->capture_default_str();
  synth->add_option("--out", so.out, "output directory")->capture_default_str();

  std::string est_path, gt_path, eval_out;
  auto* eval = app.add_subcommand("eval", "metrics from estimated and ground-truth poses");
  eval->add_option("--est", est_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "report JSON path (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);
  cfg.ba.intrinsics = intrinsics_mode(ba_intrinsics);
  try {
    if (*run) return cmd_run(run_paths, cfg);
    if (*vg) return cmd_dump_viewgraph(vg_paths, cfg);
    if (*synth) return cmd_synth(so);
    if (*eval) return cmd_eval(est_path, gt_path, eval_out);
  } catch (const gsfm::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == gsfm::ErrorCode::kIo || e.code() == gsfm::ErrorCode::kParse ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
