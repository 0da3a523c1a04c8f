#pragma once

// File formats.
//
// scene.json: {"format": "gsfm-scene", "version": 1,
//              "images": [{"id": k, "intrinsics": {"f","k1","k2","u0","v0"},
//                          "keypoints": [[x, y], ...]}, ...],
//              "matches": [{"i": a, "j": b, "pairs": [[idx_a, idx_b], ...]}, ...]}
//   Image ids must be 0..n-1 in order. Keypoint index = position in the list.
//
// descriptors.bin, little-endian: char[4] "GSFD", uint32 version (1),
//   uint32 n_images, uint32 dim, then n_images * dim float32, row-major.
//
// poses.txt: one camera per line, "id qw qx qy qz tx ty tz". The quaternion
//   is the world_from_camera rotation with qw >= 0, (tx, ty, tz) the camera
//   center. Lines starting with '#' are comments.
//
// points.ply: ASCII PLY. Element "vertex" holds one entry per landmark;
//   element "frustum" holds five points per camera (center then the four
//   image-corner rays at a fixed depth).

#include <Eigen/Geometry>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsfm/core_geom.hpp"
#include "gsfm/error.hpp"
#include "gsfm/executor.hpp"
#include "gsfm/metrics.hpp"
#include "gsfm/retrieval.hpp"
#include "gsfm/types.hpp"

namespace gsfm {

using Json = nlohmann::ordered_json;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path);
  f << text;
  if (!f) throw Error(ErrorCode::kIo, "failed writing " + path);
}

// ---------------------------------------------------------------------------
// Scene container

struct SceneInputs {
  std::vector<CameraIntrinsics> intrinsics;  // per image
  std::vector<KeypointList> keypoints;       // per image
  std::vector<MatchSet> matches;
};

inline Json scene_to_json(const SceneInputs& s) {
  Json j;
  j["format"] = "gsfm-scene";
  j["version"] = 1;
  Json images = Json::array();
  for (std::size_t k = 0; k < s.keypoints.size(); ++k) {
    const CameraIntrinsics& c = s.intrinsics.at(k);
    Json kp = Json::array();
    for (const auto& p : s.keypoints[k]) kp.push_back({p.position.x(), p.position.y()});
    images.push_back({{"id", k},
                      {"intrinsics", {{"f", c.f}, {"k1", c.k1}, {"k2", c.k2}, {"u0", c.u0}, {"v0", c.v0}}},
                      {"keypoints", std::move(kp)}});
  }
  j["images"] = std::move(images);
  Json matches = Json::array();
  for (const auto& m : s.matches) {
    Json pairs = Json::array();
    for (const auto& c : m.matches) pairs.push_back({c.idx_i, c.idx_j});
    matches.push_back({{"i", m.i}, {"j", m.j}, {"pairs", std::move(pairs)}});
  }
  j["matches"] = std::move(matches);
  return j;
}

inline SceneInputs scene_from_json(const Json& j) {
  SceneInputs s;
  try {
    if (j.at("format").get<std::string>() != "gsfm-scene" || j.at("version").get<int>() != 1) {
      throw Error(ErrorCode::kParse, "unsupported scene format or version");
    }
    int expect = 0;
    for (const auto& im : j.at("images")) {
      if (im.at("id").get<int>() != expect) throw Error(ErrorCode::kParse, "image ids must be 0..n-1 in order");
      const auto& c = im.at("intrinsics");
      CameraIntrinsics k{c.at("f").get<double>(), c.at("k1").get<double>(), c.at("k2").get<double>(),
                         c.at("u0").get<double>(), c.at("v0").get<double>()};
      k.validate();
      s.intrinsics.push_back(k);
      KeypointList kps;
      for (const auto& p : im.at("keypoints")) kps.push_back({expect, Vec2(p.at(0).get<double>(), p.at(1).get<double>()), std::nullopt});
      s.keypoints.push_back(std::move(kps));
      ++expect;
    }
    for (const auto& m : j.at("matches")) {
      MatchSet ms{m.at("i").get<int>(), m.at("j").get<int>(), {}};
      if (ms.i < 0 || ms.j < 0 || ms.i >= expect || ms.j >= expect || ms.i == ms.j) {
        throw Error(ErrorCode::kParse, "match set references an unknown image");
      }
      for (const auto& p : m.at("pairs")) ms.matches.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
      s.matches.push_back(std::move(ms));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("scene json: ") + e.what());
  }
  return s;
}

inline SceneInputs read_scene(const std::string& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  return scene_from_json(j);
}

inline void write_scene(const std::string& path, const SceneInputs& s) { write_text_file(path, scene_to_json(s).dump() + "\n"); }

// ---------------------------------------------------------------------------
// Descriptors

namespace io_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& at) {
  if (at + 4 > in.size()) throw Error(ErrorCode::kParse, "descriptor file truncated");
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  at += 4;
  return v;
}

}  // namespace io_detail

inline void write_descriptors(const std::string& path, const std::vector<GlobalDescriptor>& descs) {
  std::string out = "GSFD";
  const std::uint32_t dim = descs.empty() ? 0 : static_cast<std::uint32_t>(descs.front().vector.size());
  io_detail::put_u32(out, 1);
  io_detail::put_u32(out, static_cast<std::uint32_t>(descs.size()));
  io_detail::put_u32(out, dim);
  for (const auto& d : descs) {
    if (d.vector.size() != dim) throw Error(ErrorCode::kDimensionMismatch, "descriptor lengths differ");
    for (float x : d.vector) io_detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  write_text_file(path, out);
}

inline std::vector<GlobalDescriptor> read_descriptors(const std::string& path) {
  const std::string in = read_text_file(path);
  if (in.size() < 16 || in.compare(0, 4, "GSFD") != 0) throw Error(ErrorCode::kParse, path + ": bad descriptor magic");
  std::size_t at = 4;
  if (io_detail::get_u32(in, at) != 1) throw Error(ErrorCode::kParse, path + ": unsupported descriptor version");
  const std::uint32_t n = io_detail::get_u32(in, at);
  const std::uint32_t dim = io_detail::get_u32(in, at);
  if (in.size() != 16 + 4ull * n * dim) throw Error(ErrorCode::kParse, path + ": descriptor size mismatch");
  std::vector<GlobalDescriptor> out;
  for (std::uint32_t k = 0; k < n; ++k) {
    std::vector<float> v(dim);
    for (auto& x : v) x = std::bit_cast<float>(io_detail::get_u32(in, at));
    out.push_back(GlobalDescriptor::make(static_cast<int>(k), std::move(v)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Poses

inline std::string poses_to_text(const PoseById& poses) {
  std::string out = "# id qw qx qy qz tx ty tz\n";
  for (const auto& [id, p] : poses) {
    Eigen::Quaterniond q(p.rotation.matrix());
    q.normalize();
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    out += std::to_string(id);
    for (double v : {q.w(), q.x(), q.y(), q.z(), p.translation.x(), p.translation.y(), p.translation.z()}) {
      out += ' ' + format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline PoseById poses_from_text(const std::string& text) {
  PoseById out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    int id;
    double qw, qx, qy, qz, tx, ty, tz;
    if (!(ls >> id >> qw >> qx >> qy >> qz >> tx >> ty >> tz)) {
      throw Error(ErrorCode::kParse, "poses line " + std::to_string(lineno) + " is malformed");
    }
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (!(q.norm() > 1e-12)) throw Error(ErrorCode::kParse, "zero quaternion on line " + std::to_string(lineno));
    q.normalize();
    if (!out.emplace(id, Pose3{Rotation3::nearest(q.toRotationMatrix()), Vec3(tx, ty, tz)}).second) {
      throw Error(ErrorCode::kParse, "duplicate camera id " + std::to_string(id));
    }
  }
  return out;
}

inline PoseById read_poses(const std::string& path) { return poses_from_text(read_text_file(path)); }
inline void write_poses(const std::string& path, const PoseById& poses) { write_text_file(path, poses_to_text(poses)); }

// ---------------------------------------------------------------------------
// PLY

struct FrustumSpec {
  CameraIntrinsics intrinsics;
  int image_width = 0;
  int image_height = 0;
};

/// Landmarks as white-ish "vertex" entries, camera frusta as red "frustum"
/// entries. `frustum_depth` is in scene units.
inline std::string ply_to_text(const std::vector<Vec3>& points, const PoseById& poses,
                               const std::map<int, FrustumSpec>& frusta, double frustum_depth) {
  std::vector<Vec3> fr;
  for (const auto& [id, pose] : poses) {
    auto it = frusta.find(id);
    if (it == frusta.end()) continue;
    const FrustumSpec& s = it->second;
    fr.push_back(pose.translation);
    const double w = s.image_width;
    const double h = s.image_height;
    for (const Vec2& px : {Vec2(0, 0), Vec2(w, 0), Vec2(w, h), Vec2(0, h)}) {
      const Vec3 ray = pixel_to_bearing(px, s.intrinsics);
      fr.push_back(pose.transform_from(ray / ray.z() * frustum_depth));
    }
  }
  std::string out = "ply\nformat ascii 1.0\n";
  out += "element vertex " + std::to_string(points.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "element frustum " + std::to_string(fr.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  auto row = [&](const Vec3& p, const char* rgb) {
    out += format_double(p.x()) + ' ' + format_double(p.y()) + ' ' + format_double(p.z()) + ' ' + rgb + '\n';
  };
  for (const auto& p : points) row(p, "200 200 200");
  for (const auto& p : fr) row(p, "255 0 0");
  return out;
}

inline void write_ply(const std::string& path, const std::vector<Vec3>& points, const PoseById& poses,
                      const std::map<int, FrustumSpec>& frusta = {}, double frustum_depth = 0.1) {
  write_text_file(path, ply_to_text(points, poses, frusta, frustum_depth));
}

// ---------------------------------------------------------------------------
// JSON reports

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json distribution_to_json(const DistributionStats& d) {
  Json samples = Json::array();
  for (double x : d.samples) samples.push_back(number_or_null(x));
  return {{"count", d.count}, {"min", d.min}, {"max", d.max}, {"mean", d.mean}, {"median", d.median},
          {"samples", std::move(samples)}};
}

inline std::string threshold_key(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", t);
  return buf;
}

inline Json metrics_to_json(const MetricsReport& r) {
  Json auc = Json::object();
  for (const auto& [t, v] : r.pose_auc) auc[threshold_key(t)] = v;
  Json j;
  j["n_cameras_total"] = r.n_cameras_total;
  j["n_registered_cameras"] = r.n_registered_cameras;
  j["relative_rotation_error_deg"] = distribution_to_json(r.relative_rotation_error_deg);
  j["relative_translation_error_deg"] = distribution_to_json(r.relative_translation_error_deg);
  j["relative_pose_error_deg"] = distribution_to_json(r.relative_pose_error_deg);
  j["global_rotation_error_deg"] = distribution_to_json(r.global_rotation_error_deg);
  j["global_translation_error_deg"] = distribution_to_json(r.global_translation_error_deg);
  j["n_tracks_filtered"] = r.n_tracks_filtered;
  j["track_length"] = distribution_to_json(r.track_length);
  j["track_mean_reprojection_error_px"] =
      r.track_mean_reprojection_error_px ? Json(*r.track_mean_reprojection_error_px) : Json(nullptr);
  j["pose_auc_percent_by_threshold_deg"] = std::move(auc);
  return j;
}

inline Json stage_records_to_json(const std::vector<StageRecord>& records) {
  Json a = Json::array();
  for (const auto& r : records) {
    a.push_back({{"stage", r.name},
                 {"wall_seconds", r.wall_seconds},
                 {"task_count", r.task_count},
                 {"worker_count", r.worker_count},
                 {"first_task_start_seconds", r.first_task_start},
                 {"last_task_end_seconds", r.last_task_end}});
  }
  return a;
}

}  // namespace gsfm
