#pragma once

// End-to-end back-end: retrieval, front-end keypoint merging, two-view
// verification, cycle filtering, rotation and translation averaging, data
// association and bundle adjustment. Each stage fans its tasks out through
// one Executor and finishes before the next starts.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gsfm/bundle_adjust.hpp"
#include "gsfm/core_geom.hpp"
#include "gsfm/data_assoc.hpp"
#include "gsfm/error.hpp"
#include "gsfm/executor.hpp"
#include "gsfm/io.hpp"
#include "gsfm/metrics.hpp"
#include "gsfm/retrieval.hpp"
#include "gsfm/rot_avg.hpp"
#include "gsfm/trans_avg.hpp"
#include "gsfm/two_view.hpp"
#include "gsfm/types.hpp"
#include "gsfm/view_graph.hpp"

namespace gsfm {

struct PipelineConfig {
  int lookahead = 10;
  int retrieval_k = 0;  // 0 selects 5 below 500 images and 15 otherwise
  double retrieval_min_score = 0.3;
  int similarity_block = 50;
  VerificationConfig verification;
  double cycle_epsilon_deg = 7.0;
  RotationAveragingConfig rotation;
  TranslationAveragingConfig translation;
  bool use_landmark_directions = true;
  int landmark_tracks_per_camera = 3;
  std::size_t min_track_length = 3;  // shared by triangulation and BA filtering
  TriangulationConfig triangulation;
  BaConfig ba;
  int n_workers = 1;
  std::uint64_t seed = 0;

  void validate() const {
    verification.validate();
    if (lookahead < 1 || retrieval_k < 0 || similarity_block < 1 || !(cycle_epsilon_deg > 0) ||
        !(rotation.sigma > 0) || rotation.p_max < rotation.p_min || rotation.p_min < 3 ||
        translation.n_projections < 1 || !(translation.mfas_threshold > 0) || !(translation.huber_delta > 0) ||
        landmark_tracks_per_camera < 0 || min_track_length < 2 || !(triangulation.reproj_threshold_px > 0) ||
        ba.round_thresholds_px.empty() || n_workers < 1) {
      throw Error(ErrorCode::kInvalidArgument, "invalid pipeline configuration");
    }
    for (double t : ba.round_thresholds_px) {
      if (!(t > 0)) throw Error(ErrorCode::kInvalidArgument, "BA filter thresholds must be > 0");
    }
  }
};

struct PipelineInputs {
  SceneInputs scene;
  std::optional<std::vector<GlobalDescriptor>> descriptors;
  std::optional<PoseById> ground_truth;
};

/// A per-task failure that the pipeline skipped past.
struct TaskFailure {
  std::string stage;
  std::string key;  // "pair i-j" or "track k"
  ErrorCode code = ErrorCode::kInvalidArgument;
  std::string message;
};

struct StageTiming {
  std::string stage;
  double wall_seconds = 0.0;
  std::size_t task_count = 0;
  int worker_count = 1;
};

struct ViewGraphStage {
  PairCandidateList pairs;
  std::vector<KeypointList> keypoints;  // after optional NMS merging
  std::vector<TwoViewMeasurement> verified;
  CycleFilterResult cycle;
  ViewGraph graph;  // largest connected component after filtering
};

struct SfmResult {
  ViewGraphStage view_graph;
  std::vector<int> registered_ids;  // averaging index -> image id
  RotationSolution rotation;
  std::vector<DirectionMeasurement> mfas_measurements;  // before filtering
  MfasResult mfas;
  std::vector<DirectionMeasurement> directions;  // handed to the solver
  TranslationSolution translation;
  std::vector<Track2D> tracks;
  std::vector<BaRoundReport> ba_reports;
  PoseById poses;
  std::vector<Landmark> landmarks;
  std::vector<TaskFailure> failures;
  std::optional<MetricsReport> metrics;
  std::vector<StageTiming> timing;
};

namespace pipeline_detail {

class StageClock {
 public:
  StageClock(std::vector<StageTiming>& out, const Executor& ex, std::string name)
      : out_(out), ex_(ex), name_(std::move(name)), n_records_(ex.records().size()),
        t0_(std::chrono::steady_clock::now()) {}
  ~StageClock() {
    StageTiming t;
    t.stage = name_;
    t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    for (std::size_t k = n_records_; k < ex_.records().size(); ++k) t.task_count += ex_.records()[k].task_count;
    t.worker_count = ex_.n_workers();
    out_.push_back(t);
  }

 private:
  std::vector<StageTiming>& out_;
  const Executor& ex_;
  std::string name_;
  std::size_t n_records_;
  std::chrono::steady_clock::time_point t0_;
};

inline std::string pair_key(int i, int j) { return "pair " + std::to_string(i) + "-" + std::to_string(j); }

}  // namespace pipeline_detail

/// Retrieval through the largest cycle-consistent component.
inline ViewGraphStage build_view_graph(const PipelineInputs& in, const PipelineConfig& cfg, Executor& ex,
                                       std::vector<TaskFailure>& failures, std::vector<StageTiming>& timing) {
  using pipeline_detail::StageClock;
  cfg.validate();
  const SceneInputs& sc = in.scene;
  const int n = static_cast<int>(sc.keypoints.size());
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 images");
  if (sc.intrinsics.size() != sc.keypoints.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "intrinsics and keypoints cover different image counts");
  }
  ViewGraphStage out;
  {
    StageClock clock(timing, ex, "retrieval");
    out.pairs = sequential_pairs(n, cfg.lookahead);
    if (in.descriptors) {
      if (static_cast<int>(in.descriptors->size()) != n) {
        throw Error(ErrorCode::kDimensionMismatch, "descriptor count differs from image count");
      }
      const auto sim = blocked_similarity(*in.descriptors, cfg.similarity_block, &ex);
      const int k = cfg.retrieval_k > 0 ? cfg.retrieval_k : retrieval_k(n);
      out.pairs = merge_pair_lists(out.pairs, select_similarity_pairs(sim, k, cfg.retrieval_min_score));
    }
  }

  std::vector<MatchSet> matches = sc.matches;
  {
    StageClock clock(timing, ex, "front_end");
    out.keypoints = sc.keypoints;
    if (cfg.verification.nms_merge) {
      auto merged = ex.map("front_end.nms", 1, [&](std::size_t) {
        return merge_keypoints_nms(sc.keypoints, sc.matches, cfg.verification.nms_radius_px);
      });
      out.keypoints = std::move(merged[0].keypoints);
      matches = std::move(merged[0].matches);
    }
  }

  {
    StageClock clock(timing, ex, "two_view");
    std::map<EdgeKey, std::size_t> by_pair;
    for (std::size_t k = 0; k < matches.size(); ++k) by_pair.try_emplace(edge_key(matches[k].i, matches[k].j), k);
    std::vector<std::size_t> todo;
    for (const auto& p : out.pairs.pairs) {
      auto it = by_pair.find({p.i, p.j});
      if (it == by_pair.end()) continue;
      todo.push_back(it->second);
    }
    struct Outcome {
      std::optional<TwoViewMeasurement> m;
      std::optional<TaskFailure> failure;
    };
    auto results = ex.map("two_view.verify", todo.size(), [&](std::size_t t) {
      const MatchSet& ms = matches[todo[t]];
      Outcome o;
      const auto key = pipeline_detail::pair_key(ms.i, ms.j);
      try {
        const std::uint64_t s = task_seed(cfg.seed, 0x74776f76ULL,
                                          (static_cast<std::uint64_t>(ms.i) << 32) | static_cast<std::uint32_t>(ms.j));
        auto m = verify_pair(ms, out.keypoints.at(ms.i), out.keypoints.at(ms.j), sc.intrinsics.at(ms.i),
                             sc.intrinsics.at(ms.j), cfg.verification, s);
        if (accept_pair(m, cfg.verification)) {
          o.m = std::move(m);
        } else {
          o.failure = TaskFailure{"two_view", key, ErrorCode::kTooFewMatches, "inlier ratio or count below threshold"};
        }
      } catch (const Error& e) {
        o.failure = TaskFailure{"two_view", key, e.code(), e.what()};
      }
      return o;
    });
    for (auto& o : results) {
      if (o.m) out.verified.push_back(std::move(*o.m));
      if (o.failure) failures.push_back(std::move(*o.failure));
    }
  }

  {
    StageClock clock(timing, ex, "view_graph");
    ViewGraph g;
    for (const auto& m : out.verified) g.add(m);
    out.cycle = two_stage_cycle_filter(g, cfg.cycle_epsilon_deg, &ex);
    out.graph = largest_connected_component(out.cycle.graph);
    if (out.graph.vertices.size() < 2) throw Error(ErrorCode::kDisconnected, "view graph is empty after filtering");
  }
  return out;
}

namespace pipeline_detail {

/// Up to `per_camera` longest tracks per camera (ties to the lower track
/// index), observations restricted to registered cameras.
inline std::vector<Track2D> landmark_direction_tracks(const std::vector<Track2D>& tracks,
                                                      const std::map<int, int>& index_of, int per_camera,
                                                      std::size_t min_length) {
  std::vector<Track2D> restricted;
  for (const auto& t : tracks) {
    Track2D r;
    for (const auto& o : t.observations) {
      if (index_of.count(o.image_id)) r.observations.push_back(o);
    }
    restricted.push_back(std::move(r));
  }
  std::map<int, std::vector<std::size_t>> per_cam;
  for (std::size_t k = 0; k < restricted.size(); ++k) {
    if (restricted[k].size() < min_length) continue;
    for (const auto& o : restricted[k].observations) per_cam[o.image_id].push_back(k);
  }
  std::set<std::size_t> chosen;
  for (auto& [cam, ks] : per_cam) {
    std::stable_sort(ks.begin(), ks.end(),
                     [&](std::size_t a, std::size_t b) { return restricted[a].size() > restricted[b].size(); });
    for (int r = 0; r < per_camera && r < static_cast<int>(ks.size()); ++r) chosen.insert(ks[r]);
  }
  std::vector<Track2D> out;
  for (std::size_t k : chosen) out.push_back(restricted[k]);
  return out;
}

}  // namespace pipeline_detail

/// Runs every stage. Per-pair and per-track failures are recorded in
/// result.failures and skipped; averaging or BA failures throw.
inline SfmResult run_pipeline(const PipelineInputs& in, PipelineConfig cfg, Executor& ex) {
  using pipeline_detail::StageClock;
  cfg.validate();
  cfg.triangulation.min_track_length = cfg.min_track_length;
  cfg.ba.min_track_length = cfg.min_track_length;
  if (cfg.translation.seed == 0) cfg.translation.seed = task_seed(cfg.seed, 0x7472616eULL);

  SfmResult res;
  res.view_graph = build_view_graph(in, cfg, ex, res.failures, res.timing);
  const ViewGraph& g = res.view_graph.graph;
  const auto& sc = in.scene;
  std::map<int, int> index_of;
  for (int v : g.vertices) {
    index_of[v] = static_cast<int>(res.registered_ids.size());
    res.registered_ids.push_back(v);
  }
  const int n_reg = static_cast<int>(res.registered_ids.size());

  {
    StageClock clock(res.timing, ex, "rot_avg");
    RotationAveragingProblem rp;
    rp.n_cameras = n_reg;
    const double kappa = kappa_from_sigma(cfg.rotation.sigma);
    for (const auto& [k, m] : g.edges) rp.edges.push_back({index_of.at(m.i), index_of.at(m.j), m.rotation, kappa});
    res.rotation = solve_rotations(rp, cfg.rotation);
  }

  {
    StageClock clock(res.timing, ex, "data_assoc.tracks");
    std::vector<TwoViewMeasurement> edges;
    for (const auto& [k, m] : g.edges) edges.push_back(m);
    res.tracks = build_tracks(edges, res.view_graph.keypoints);
  }

  {
    StageClock clock(res.timing, ex, "trans_avg");
    std::vector<DirectionMeasurement> ms;
    for (const auto& [k, m] : g.edges) {
      const int i = index_of.at(m.i);
      const int j = index_of.at(m.j);
      ms.push_back(direction_from_relative(i, j, m.direction.vector(), res.rotation.rotations[j]));
    }
    if (cfg.use_landmark_directions && cfg.landmark_tracks_per_camera > 0) {
      const auto lt = pipeline_detail::landmark_direction_tracks(res.tracks, index_of, cfg.landmark_tracks_per_camera,
                                                                 cfg.min_track_length);
      for (std::size_t b = 0; b < lt.size(); ++b) {
        for (const auto& o : lt[b].observations) {
          const int a = index_of.at(o.image_id);
          const Vec3 ray = res.rotation.rotations[a] * pixel_to_bearing(o.px, sc.intrinsics.at(o.image_id));
          ms.push_back({DirectionKind::kCameraLandmark, a, static_cast<int>(b), UnitVector3::normalized(ray)});
        }
      }
    }
    res.mfas = mfas_filter(ms, n_reg, cfg.translation, &ex);
    res.mfas_measurements = ms;
    // A landmark needs two surviving rays; ids are compacted afterwards.
    std::map<int, int> rays;
    for (std::size_t q = 0; q < ms.size(); ++q) {
      if (res.mfas.inliers[q] && ms[q].kind == DirectionKind::kCameraLandmark) ++rays[ms[q].b];
    }
    std::map<int, int> new_id;
    for (const auto& [b, c] : rays) {
      if (c >= 2) new_id.emplace(b, static_cast<int>(new_id.size()));
    }
    for (std::size_t q = 0; q < ms.size(); ++q) {
      if (!res.mfas.inliers[q]) continue;
      DirectionMeasurement m = ms[q];
      if (m.kind == DirectionKind::kCameraLandmark) {
        auto it = new_id.find(m.b);
        if (it == new_id.end()) continue;
        m.b = it->second;
      }
      res.directions.push_back(m);
    }
    res.translation = solve_translations(res.directions, n_reg, cfg.translation);
  }

  PoseMap poses;
  IntrinsicsMap intrinsics;
  for (int k = 0; k < n_reg; ++k) {
    const int id = res.registered_ids[k];
    poses[id] = {res.rotation.rotations[k], res.translation.camera_positions[k]};
    intrinsics[id] = sc.intrinsics.at(id);
  }

  std::vector<Landmark> landmarks;
  {
    StageClock clock(res.timing, ex, "data_assoc");
    auto outcomes = triangulate_tracks(res.tracks, poses, intrinsics, cfg.triangulation,
                                       task_seed(cfg.seed, 0x74726961ULL), &ex);
    for (std::size_t t = 0; t < outcomes.size(); ++t) {
      if (outcomes[t].landmark) {
        landmarks.push_back(std::move(*outcomes[t].landmark));
      } else {
        res.failures.push_back({"data_assoc", "track " + std::to_string(t), *outcomes[t].failure,
                                to_string(*outcomes[t].failure)});
      }
    }
    if (landmarks.empty()) throw Error(ErrorCode::kAllTracksFiltered, "no track could be triangulated");
  }

  {
    StageClock clock(res.timing, ex, "ba");
    BaProblem p;
    for (int k = 0; k < n_reg; ++k) {
      const int id = res.registered_ids[k];
      p.cameras.push_back({id, poses.at(id), intrinsics.at(id), id});
    }
    p.landmarks = std::move(landmarks);
    auto ba = three_round_ba(p, cfg.ba, &ex);
    res.ba_reports = ba.reports;
    for (const auto& c : ba.problem.cameras) res.poses[c.image_id] = c.pose;
    res.landmarks = std::move(ba.problem.landmarks);
  }

  if (in.ground_truth) res.metrics = compute_metrics(res.poses, *in.ground_truth, res.landmarks);
  return res;
}

// ---------------------------------------------------------------------------
// Outputs

inline Json report_to_json(const SfmResult& r) {
  Json j;
  j["n_pairs_retrieved"] = r.view_graph.pairs.size();
  j["n_pairs_verified"] = r.view_graph.verified.size();
  std::size_t kept = 0;
  for (const auto& rec : r.view_graph.cycle.records) kept += rec.kept_stage2 ? 1 : 0;
  j["n_edges_after_cycle_filter"] = kept;
  j["n_edges_largest_component"] = r.view_graph.graph.edges.size();
  j["n_cameras_registered"] = r.poses.size();
  j["rotation_averaging"] = {{"cost", r.rotation.cost},
                             {"certified", r.rotation.certified},
                             {"p_final", r.rotation.p_final},
                             {"min_certificate_eigenvalue", r.rotation.min_certificate_eigenvalue}};
  std::size_t n_in = 0;
  for (bool b : r.mfas.inliers) n_in += b ? 1 : 0;
  j["translation_averaging"] = {{"n_measurements", r.mfas.inliers.size()},
                                {"n_mfas_inliers", n_in},
                                {"n_used", r.directions.size()},
                                {"cost", r.translation.cost}};
  j["n_tracks"] = r.tracks.size();
  Json ba = Json::array();
  for (const auto& b : r.ba_reports) {
    ba.push_back({{"filter_threshold_px", b.filter_threshold_px},
                  {"initial_cost", b.initial_cost},
                  {"final_cost", b.final_cost},
                  {"iterations", b.iterations},
                  {"converged", b.converged},
                  {"n_tracks_kept", b.n_tracks_kept}});
  }
  j["bundle_adjustment"] = std::move(ba);
  j["n_landmarks"] = r.landmarks.size();
  Json fails = Json::array();
  for (const auto& f : r.failures) {
    fails.push_back({{"stage", f.stage}, {"key", f.key}, {"error", to_string(f.code)}, {"message", f.message}});
  }
  j["failures"] = std::move(fails);
  j["metrics"] = r.metrics ? metrics_to_json(*r.metrics) : Json(nullptr);
  return j;
}

inline Json timing_to_json(const SfmResult& r, const Executor& ex) {
  Json stages = Json::array();
  for (const auto& t : r.timing) {
    stages.push_back({{"stage", t.stage},
                      {"wall_seconds", t.wall_seconds},
                      {"task_count", t.task_count},
                      {"worker_count", t.worker_count}});
  }
  return {{"stages", std::move(stages)}, {"executor_records", stage_records_to_json(ex.records())}};
}

/// One row per direction measurement handed to the MFAS filter.
inline void write_mfas_csv(const std::string& path, const std::vector<DirectionMeasurement>& ms, const MfasResult& m) {
  std::string out = "index,kind,a,b,violation,inlier\n";
  for (std::size_t q = 0; q < m.violation.size(); ++q) {
    out += std::to_string(q) + (ms[q].kind == DirectionKind::kCameraCamera ? ",camera,"  : ",landmark,") +
           std::to_string(ms[q].a) + "," + std::to_string(ms[q].b) + "," + format_double(m.violation[q]) + "," +
           (m.inliers[q] ? "1" : "0") + "\n";
  }
  write_text_file(path, out);
}

/// Writes poses.txt, points.ply, report.json, timing.json, cycle_errors.csv
/// and mfas_violations.csv into `dir` (created if missing).
inline void write_outputs(const std::string& dir, const SfmResult& r, const PipelineInputs& in, const Executor& ex) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_poses((d / "poses.txt").string(), r.poses);
  std::vector<Vec3> pts;
  for (const auto& lm : r.landmarks) pts.push_back(lm.point);
  std::map<int, FrustumSpec> fr;
  for (const auto& [id, p] : r.poses) {
    const auto& k = in.scene.intrinsics.at(id);
    fr[id] = {k, static_cast<int>(std::lround(2 * k.u0)), static_cast<int>(std::lround(2 * k.v0))};
  }
  double depth = 0.1;
  if (r.poses.size() >= 2) {
    double sum = 0.0;
    int cnt = 0;
    for (auto a = r.poses.begin(); a != r.poses.end(); ++a) {
      for (auto b = std::next(a); b != r.poses.end(); ++b) {
        sum += (a->second.translation - b->second.translation).norm();
        ++cnt;
      }
    }
    depth = 0.1 * sum / cnt;
  }
  write_ply((d / "points.ply").string(), pts, r.poses, fr, depth);
  write_text_file((d / "report.json").string(), report_to_json(r).dump(2) + "\n");
  write_text_file((d / "timing.json").string(), timing_to_json(r, ex).dump(2) + "\n");
  write_cycle_csv((d / "cycle_errors.csv").string(), r.view_graph.cycle.records);
  write_mfas_csv((d / "mfas_violations.csv").string(), r.mfas_measurements, r.mfas);
}

}  // namespace gsfm
