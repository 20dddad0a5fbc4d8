#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "diffcal/lie.hpp"
#include "diffcal/random.hpp"

namespace diffcal {

/// Thrown by the text-record readers on malformed input.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CameraIntrinsics {
  double fx = 718.0;
  double fy = 718.0;
  double cx = 607.0;
  double cy = 185.0;
  int width = 1241;
  int height = 376;
};

inline bool intrinsics_valid(const CameraIntrinsics& k) {
  return k.fx > 0.0 && k.fy > 0.0 && k.width > 0 && k.height > 0 &&
         k.cx > 0.0 && k.cx < k.width && k.cy > 0.0 && k.cy < k.height;
}

struct Observation {
  int point_index = 0;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

struct SceneConfig {
  int point_count = 500;
  double depth_min = 3.0;
  double depth_max = 60.0;
  double pixel_noise_sigma = 1.0;
  double outlier_fraction = 0.05;
  CameraIntrinsics intrinsics;
  // Ground-truth mount = nominal LiDAR-to-camera rotation plus a small
  // per-scene jitter, so scenes do not share one extrinsic.
  double mount_rot_jitter_deg = 2.0;
  double mount_trans_jitter = 0.05;
};

/// Synthetic calibration scenario: LiDAR-frame points, the ground-truth
/// LiDAR-to-camera extrinsic, and noisy pixel observations of each point.
/// Immutable after generation. scene_id is a content hash assigned by
/// generate_scene / parse_sample; contexts prepared from a scene carry it.
struct Scene {
  std::uint64_t scene_id = 0;
  std::vector<Eigen::Vector3d> points;
  RigidTransform gt_extrinsic;
  CameraIntrinsics intrinsics;
  std::vector<Observation> observations;
  double pixel_noise_sigma = 0.0;
  double outlier_fraction = 0.0;
};

struct PerturbationSpec {
  double rot_range_deg = 15.0;
  double trans_range = 0.15;
};

/// A dataset entry: the scene plus the initial-extrinsic perturbation twist.
/// The perturbed starting extrinsic is exp_map(perturbation) * gt_extrinsic.
struct SceneSample {
  Scene scene;
  Twist perturbation;
};

/// Points closer than this to the camera plane are treated as invisible.
inline constexpr double kNearPlane = 0.1;

/// Pinhole projection of a LiDAR-frame point under extrinsic T. Absent when
/// the camera-frame depth is at/behind the near plane or the pixel falls
/// outside [0, width) x [0, height).
inline std::optional<Eigen::Vector2d> project_point(const Eigen::Vector3d& p,
                                                    const RigidTransform& t,
                                                    const CameraIntrinsics& k) {
  const Eigen::Vector3d q = t.apply(p);
  if (q.z() <= kNearPlane) return std::nullopt;
  const double u = k.fx * q.x() / q.z() + k.cx;
  const double v = k.fy * q.y() / q.z() + k.cy;
  if (u < 0.0 || u >= k.width || v < 0.0 || v >= k.height) return std::nullopt;
  return Eigen::Vector2d(u, v);
}

namespace detail {
// Nominal axis permutation from a forward/left/up LiDAR frame to a
// right/down/forward camera frame.
inline Eigen::Matrix3d nominal_mount_rotation() {
  Eigen::Matrix3d r;
  // clang-format off
  r <<  0.0, -1.0,  0.0,
        0.0,  0.0, -1.0,
        1.0,  0.0,  0.0;
  // clang-format on
  return r;
}
}  // namespace detail

inline void validate_scene_config(const SceneConfig& cfg) {
  if (cfg.point_count < 1) {
    throw std::invalid_argument("scene config: point_count must be >= 1");
  }
  if (!(cfg.depth_min > kNearPlane) || !(cfg.depth_max > cfg.depth_min)) {
    throw std::invalid_argument("scene config: empty frustum depth range");
  }
  if (!intrinsics_valid(cfg.intrinsics)) {
    throw std::invalid_argument("scene config: invalid intrinsics");
  }
  if (cfg.pixel_noise_sigma < 0.0) {
    throw std::invalid_argument("scene config: negative pixel noise");
  }
  if (cfg.outlier_fraction < 0.0 || cfg.outlier_fraction >= 0.5) {
    throw std::invalid_argument("scene config: outlier_fraction outside [0, 0.5)");
  }
  if (cfg.mount_rot_jitter_deg < 0.0 || cfg.mount_trans_jitter < 0.0) {
    throw std::invalid_argument("scene config: negative mount jitter");
  }
}

std::uint64_t scene_content_hash(const Scene& scene);

/// Samples a scene: points uniform over image area x depth range inside the
/// camera frustum (then moved to the LiDAR frame via the inverse extrinsic),
/// observations = true projections plus gaussian pixel noise, with an
/// outlier_fraction subset replaced by uniform in-image pixels. Every true
/// projection is in-image by construction.
inline Scene generate_scene(const SceneConfig& cfg, RngStream& rng) {
  validate_scene_config(cfg);
  Scene scene;
  scene.intrinsics = cfg.intrinsics;
  scene.pixel_noise_sigma = cfg.pixel_noise_sigma;
  scene.outlier_fraction = cfg.outlier_fraction;

  EulerAngles jitter;
  jitter.rx = rng.uniform(-cfg.mount_rot_jitter_deg, cfg.mount_rot_jitter_deg);
  jitter.ry = rng.uniform(-cfg.mount_rot_jitter_deg, cfg.mount_rot_jitter_deg);
  jitter.rz = rng.uniform(-cfg.mount_rot_jitter_deg, cfg.mount_rot_jitter_deg);
  Eigen::Vector3d t_offset;
  for (int i = 0; i < 3; ++i) {
    t_offset[i] = rng.uniform(-cfg.mount_trans_jitter, cfg.mount_trans_jitter);
  }
  scene.gt_extrinsic.rotation =
      euler_to_rotation(jitter) * detail::nominal_mount_rotation();
  scene.gt_extrinsic.translation = Eigen::Vector3d(0.05, -0.07, -0.12) + t_offset;

  const RigidTransform cam_to_lidar = inverse(scene.gt_extrinsic);
  const CameraIntrinsics& k = cfg.intrinsics;
  scene.points.reserve(static_cast<std::size_t>(cfg.point_count));
  scene.observations.reserve(static_cast<std::size_t>(cfg.point_count));

  for (int i = 0; i < cfg.point_count; ++i) {
    const double u = rng.uniform(0.0, static_cast<double>(k.width));
    const double v = rng.uniform(0.0, static_cast<double>(k.height));
    const double depth = rng.uniform(cfg.depth_min, cfg.depth_max);
    const Eigen::Vector3d q((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth,
                            depth);
    scene.points.push_back(cam_to_lidar.apply(q));

    Observation obs;
    obs.point_index = i;
    const bool outlier = rng.uniform01() < cfg.outlier_fraction;
    if (outlier) {
      obs.pixel.x() = rng.uniform(0.0, static_cast<double>(k.width));
      obs.pixel.y() = rng.uniform(0.0, static_cast<double>(k.height));
    } else {
      obs.pixel.x() = u + cfg.pixel_noise_sigma * rng.normal();
      obs.pixel.y() = v + cfg.pixel_noise_sigma * rng.normal();
    }
    scene.observations.push_back(obs);
  }
  scene.scene_id = scene_content_hash(scene);
  return scene;
}

/// Uniform per-axis Euler rotation in +/-rot_range_deg and per-axis
/// translation in +/-trans_range, returned as the log of the assembled
/// transform. The perturbed initial extrinsic is exp(result) * T_gt.
inline Twist sample_perturbation(const PerturbationSpec& spec, RngStream& rng) {
  if (spec.rot_range_deg < 0.0 || spec.trans_range < 0.0) {
    throw std::invalid_argument("sample_perturbation: negative range");
  }
  EulerAngles e;
  e.rx = rng.uniform(-spec.rot_range_deg, spec.rot_range_deg);
  e.ry = rng.uniform(-spec.rot_range_deg, spec.rot_range_deg);
  e.rz = rng.uniform(-spec.rot_range_deg, spec.rot_range_deg);
  Eigen::Vector3d trans;
  for (int i = 0; i < 3; ++i) {
    trans[i] = rng.uniform(-spec.trans_range, spec.trans_range);
  }
  return log_map(RigidTransform(euler_to_rotation(e), trans));
}

/// Row-major depth image; negative entries mean "no point projects here".
struct DepthGrid {
  int width = 0;
  int height = 0;
  std::vector<double> depth;

  static constexpr double kAbsent = -1.0;

  double at(int x, int y) const {
    return depth[static_cast<std::size_t>(y) * width + x];
  }
  bool occupied(int x, int y) const { return at(x, y) >= 0.0; }

  int occupied_count() const {
    int n = 0;
    for (double d : depth) n += d >= 0.0 ? 1 : 0;
    return n;
  }
};

/// Projects every scene point under extrinsic T into a nearest-depth-wins
/// grid (pixel binning by floor).
inline DepthGrid render_projection_map(const Scene& scene,
                                       const RigidTransform& t) {
  DepthGrid grid;
  grid.width = scene.intrinsics.width;
  grid.height = scene.intrinsics.height;
  grid.depth.assign(static_cast<std::size_t>(grid.width) * grid.height,
                    DepthGrid::kAbsent);
  for (const Eigen::Vector3d& p : scene.points) {
    const auto pix = project_point(p, t, scene.intrinsics);
    if (!pix) continue;
    const int x = static_cast<int>(std::floor(pix->x()));
    const int y = static_cast<int>(std::floor(pix->y()));
    const double z = t.apply(p).z();
    double& cell = grid.depth[static_cast<std::size_t>(y) * grid.width + x];
    if (cell < 0.0 || z < cell) cell = z;
  }
  return grid;
}

/// Plain-text grid dump: "width height" header, then one row per line with
/// depth values ("-" for absent cells).
inline std::string depth_grid_to_text(const DepthGrid& grid) {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%d %d\n", grid.width, grid.height);
  out += buf;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      if (x > 0) out += ' ';
      if (grid.occupied(x, y)) {
        std::snprintf(buf, sizeof(buf), "%.6g", grid.at(x, y));
        out += buf;
      } else {
        out += '-';
      }
    }
    out += '\n';
  }
  return out;
}

/// ASCII PGM (P2) dump. Depth is mapped linearly onto 1..65535 between the
/// occupied min/max; absent cells are 0.
inline std::string depth_grid_to_pgm(const DepthGrid& grid) {
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (double d : grid.depth) {
    if (d < 0.0) continue;
    if (!any) {
      lo = hi = d;
      any = true;
    } else {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "P2\n%d %d\n65535\n", grid.width, grid.height);
  out += buf;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      int value = 0;
      if (grid.occupied(x, y)) {
        value = 1 + static_cast<int>((grid.at(x, y) - lo) / span * 65534.0);
      }
      std::snprintf(buf, sizeof(buf), x + 1 == grid.width ? "%d" : "%d ", value);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace detail {

inline void append_num(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

/// Scene body in canonical record form; also the scene_id hash input.
inline std::string scene_body(const Scene& scene) {
  std::string out = "diffcal_scene 1\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "intrinsics %.17g %.17g %.17g %.17g %d %d\n",
                scene.intrinsics.fx, scene.intrinsics.fy, scene.intrinsics.cx,
                scene.intrinsics.cy, scene.intrinsics.width,
                scene.intrinsics.height);
  out += buf;
  out += "extrinsic";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      out += ' ';
      append_num(out, scene.gt_extrinsic.rotation(r, c));
    }
    out += ' ';
    append_num(out, scene.gt_extrinsic.translation[r]);
  }
  out += '\n';
  std::snprintf(buf, sizeof(buf), "noise %.17g %.17g\n", scene.pixel_noise_sigma,
                scene.outlier_fraction);
  out += buf;
  std::snprintf(buf, sizeof(buf), "points %zu\n", scene.points.size());
  out += buf;
  for (const Eigen::Vector3d& p : scene.points) {
    out += "point";
    for (int i = 0; i < 3; ++i) {
      out += ' ';
      append_num(out, p[i]);
    }
    out += '\n';
  }
  std::snprintf(buf, sizeof(buf), "observations %zu\n",
                scene.observations.size());
  out += buf;
  for (const Observation& o : scene.observations) {
    std::snprintf(buf, sizeof(buf), "obs %d ", o.point_index);
    out += buf;
    append_num(out, o.pixel.x());
    out += ' ';
    append_num(out, o.pixel.y());
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline std::uint64_t scene_content_hash(const Scene& scene) {
  return fnv1a64(detail::scene_body(scene));
}

inline std::string serialize_sample(const SceneSample& sample) {
  std::string out = detail::scene_body(sample.scene);
  out += "perturbation";
  const Vector6d v = sample.perturbation.to_vector();
  for (int i = 0; i < 6; ++i) {
    out += ' ';
    detail::append_num(out, v[i]);
  }
  out += '\n';
  return out;
}

inline SceneSample parse_sample(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw ParseError(std::string("scene file truncated before ") + what);
    }
    return std::istringstream(line);
  };
  auto expect_tag = [](std::istringstream& ls, const char* tag) {
    std::string got;
    ls >> got;
    if (got != tag) {
      throw ParseError(std::string("scene file: expected '") + tag +
                       "', got '" + got + "'");
    }
  };

  {
    auto ls = next_line("header");
    expect_tag(ls, "diffcal_scene");
    int version = 0;
    ls >> version;
    if (version != 1) throw ParseError("scene file: unsupported version");
  }

  SceneSample sample;
  Scene& scene = sample.scene;
  {
    auto ls = next_line("intrinsics");
    expect_tag(ls, "intrinsics");
    ls >> scene.intrinsics.fx >> scene.intrinsics.fy >> scene.intrinsics.cx >>
        scene.intrinsics.cy >> scene.intrinsics.width >> scene.intrinsics.height;
    if (!ls) throw ParseError("scene file: bad intrinsics record");
  }
  {
    auto ls = next_line("extrinsic");
    expect_tag(ls, "extrinsic");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) ls >> scene.gt_extrinsic.rotation(r, c);
      ls >> scene.gt_extrinsic.translation[r];
    }
    if (!ls) throw ParseError("scene file: bad extrinsic record");
  }
  {
    auto ls = next_line("noise");
    expect_tag(ls, "noise");
    ls >> scene.pixel_noise_sigma >> scene.outlier_fraction;
    if (!ls) throw ParseError("scene file: bad noise record");
  }
  std::size_t n_points = 0;
  {
    auto ls = next_line("points");
    expect_tag(ls, "points");
    ls >> n_points;
    if (!ls) throw ParseError("scene file: bad points record");
  }
  scene.points.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    auto ls = next_line("point");
    expect_tag(ls, "point");
    ls >> scene.points[i].x() >> scene.points[i].y() >> scene.points[i].z();
    if (!ls) throw ParseError("scene file: bad point record");
  }
  std::size_t n_obs = 0;
  {
    auto ls = next_line("observations");
    expect_tag(ls, "observations");
    ls >> n_obs;
    if (!ls) throw ParseError("scene file: bad observations record");
  }
  scene.observations.resize(n_obs);
  for (std::size_t i = 0; i < n_obs; ++i) {
    auto ls = next_line("obs");
    expect_tag(ls, "obs");
    ls >> scene.observations[i].point_index >> scene.observations[i].pixel.x() >>
        scene.observations[i].pixel.y();
    if (!ls) throw ParseError("scene file: bad obs record");
  }
  {
    auto ls = next_line("perturbation");
    expect_tag(ls, "perturbation");
    Vector6d v;
    for (int i = 0; i < 6; ++i) ls >> v[i];
    if (!ls) throw ParseError("scene file: bad perturbation record");
    sample.perturbation = Twist::from_vector(v);
  }
  scene.scene_id = scene_content_hash(scene);
  return sample;
}

}  // namespace diffcal
