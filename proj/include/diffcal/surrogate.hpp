#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "diffcal/lie.hpp"
#include "diffcal/random.hpp"
#include "diffcal/sampler.hpp"
#include "diffcal/scene.hpp"

namespace diffcal {

enum class SurrogateKind { Oracle, Contraction, RangeDependent, Reprojection };

inline const char* surrogate_kind_label(SurrogateKind kind) {
  switch (kind) {
    case SurrogateKind::Oracle: return "oracle";
    case SurrogateKind::Contraction: return "contraction";
    case SurrogateKind::RangeDependent: return "range_dependent";
    case SurrogateKind::Reprojection: return "reprojection";
  }
  return "unknown";
}

inline std::optional<SurrogateKind> surrogate_kind_from_label(std::string_view s) {
  if (s == "oracle") return SurrogateKind::Oracle;
  if (s == "contraction") return SurrogateKind::Contraction;
  if (s == "range_dependent") return SurrogateKind::RangeDependent;
  if (s == "reprojection") return SurrogateKind::Reprojection;
  return std::nullopt;
}

/// Which base calibrator stands in for a trained network, plus its knobs.
///
/// Field use by kind:
///   Oracle          - none.
///   Contraction     - gain (in [0, 2]), noise_sigma (>= 0): output is
///                     gain * true_correction + noise_sigma * eta.
///   RangeDependent  - gain, range_decay (>= 0), noise_sigma: effective gain
///                     gain * exp(-range_decay * |error|) and noise scale
///                     noise_sigma * (1 + |error|); accuracy degrades as the
///                     current extrinsic drifts from the truth.
///   Reprojection    - max_gn_iters (>= 1), huber_delta_px (> 0):
///                     Gauss-Newton on pixel reprojection residuals.
struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::Oracle;
  double gain = 0.5;
  double noise_sigma = 0.0;
  double range_decay = 2.0;
  int max_gn_iters = 3;
  double huber_delta_px = 2.0;
  std::uint64_t seed = 0;
};

inline void validate_surrogate_spec(const SurrogateSpec& spec) {
  if (spec.gain < 0.0 || spec.gain > 2.0) {
    throw std::invalid_argument("surrogate spec: gain outside [0, 2]");
  }
  if (spec.noise_sigma < 0.0) {
    throw std::invalid_argument("surrogate spec: negative noise_sigma");
  }
  if (spec.range_decay < 0.0) {
    throw std::invalid_argument("surrogate spec: negative range_decay");
  }
  if (spec.max_gn_iters < 1) {
    throw std::invalid_argument("surrogate spec: max_gn_iters must be >= 1");
  }
  if (!(spec.huber_delta_px > 0.0)) {
    throw std::invalid_argument("surrogate spec: huber_delta_px must be > 0");
  }
}

struct Correspondence {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double weight = 1.0;  // de-clustering prior, extrinsic-independent
};

/// Everything a surrogate needs that does not depend on the extrinsic being
/// evaluated. Immutable after prepare(); valid only for the scene whose
/// scene_id it carries.
struct SurrogateContext {
  std::uint64_t scene_id = 0;
  SurrogateSpec spec;
  RigidTransform gt_extrinsic;
  CameraIntrinsics intrinsics;
  std::vector<Correspondence> correspondences;  // Reprojection only
};

namespace detail {

inline std::atomic<std::uint64_t>& prepare_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

// Pixel-space bucket side for the observation density estimate.
inline constexpr double kDensityCell = 16.0;

inline std::int64_t density_key(int cx, int cy) {
  return static_cast<std::int64_t>(cy) * (1 << 20) + cx;
}

}  // namespace detail

inline std::uint64_t prepare_invocations() {
  return detail::prepare_counter().load();
}

inline void reset_prepare_invocations() { detail::prepare_counter().store(0); }

/// Builds the per-scene cache: for Reprojection, the correspondence table
/// (one record per observation) with de-clustering weights from local
/// observation density. Increments the observable invocation counter.
inline SurrogateContext prepare(const Scene& scene, const SurrogateSpec& spec) {
  validate_surrogate_spec(spec);
  detail::prepare_counter().fetch_add(1, std::memory_order_relaxed);

  SurrogateContext ctx;
  ctx.scene_id = scene.scene_id;
  ctx.spec = spec;
  ctx.gt_extrinsic = scene.gt_extrinsic;
  ctx.intrinsics = scene.intrinsics;

  if (spec.kind == SurrogateKind::Reprojection) {
    std::unordered_map<std::int64_t, int> bucket_counts;
    bucket_counts.reserve(scene.observations.size());
    for (const Observation& obs : scene.observations) {
      const int cx = static_cast<int>(std::floor(obs.pixel.x() / detail::kDensityCell));
      const int cy = static_cast<int>(std::floor(obs.pixel.y() / detail::kDensityCell));
      ++bucket_counts[detail::density_key(cx, cy)];
    }
    ctx.correspondences.reserve(scene.observations.size());
    for (const Observation& obs : scene.observations) {
      Correspondence corr;
      corr.point = scene.points[static_cast<std::size_t>(obs.point_index)];
      corr.pixel = obs.pixel;
      const int cx = static_cast<int>(std::floor(obs.pixel.x() / detail::kDensityCell));
      const int cy = static_cast<int>(std::floor(obs.pixel.y() / detail::kDensityCell));
      int neighborhood = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          auto it = bucket_counts.find(detail::density_key(cx + dx, cy + dy));
          if (it != bucket_counts.end()) neighborhood += it->second;
        }
      }
      corr.weight = 1.0 / static_cast<double>(std::max(neighborhood, 1));
      ctx.correspondences.push_back(corr);
    }
  }
  return ctx;
}

/// Throws ContractError when a context is used with a scene other than the
/// one it was prepared from.
inline void check_context(const SurrogateContext& ctx, const Scene& scene) {
  if (ctx.scene_id != scene.scene_id) {
    throw ContractError("surrogate context was prepared for a different scene");
  }
}

struct DenoiseResult {
  Twist delta;
  // True when the Gauss-Newton normal equations stayed singular even after
  // damping; delta is zero (no update) in that case.
  bool degenerate = false;
};

namespace detail {

using Matrix6d = Eigen::Matrix<double, 6, 6>;

inline Twist true_correction(const SurrogateContext& ctx,
                             const RigidTransform& current) {
  return log_map(compose(ctx.gt_extrinsic, inverse(current)));
}

inline Twist gaussian_twist(RngStream& rng) {
  Vector6d v;
  for (int i = 0; i < 6; ++i) v[i] = rng.normal();
  return Twist::from_vector(v);
}

/// One damped Gauss-Newton solve. Returns false when the normal equations
/// are singular even after the diagonal boost.
inline bool solve_normal_equations(const Matrix6d& h, const Vector6d& b,
                                   Vector6d& delta) {
  Eigen::SelfAdjointEigenSolver<Matrix6d> eig(h);
  const double ev_max = eig.eigenvalues().maxCoeff();
  const double ev_min = eig.eigenvalues().minCoeff();
  if (ev_max > 0.0 && ev_min > 1e-12 * ev_max) {
    delta = Eigen::LDLT<Matrix6d>(h).solve(b);
    return true;
  }
  // Levenberg-style rescue: boost the diagonal by a factor of 10 once.
  Matrix6d damped = h;
  damped.diagonal() += 10.0 * h.diagonal();
  Eigen::SelfAdjointEigenSolver<Matrix6d> eig2(damped);
  const double ev2_max = eig2.eigenvalues().maxCoeff();
  const double ev2_min = eig2.eigenvalues().minCoeff();
  if (!(ev2_max > 0.0) || ev2_min <= 1e-12 * ev2_max) {
    return false;
  }
  delta = Eigen::LDLT<Matrix6d>(damped).solve(b);
  return true;
}

inline DenoiseResult reprojection_denoise(const SurrogateContext& ctx,
                                          const RigidTransform& current) {
  const CameraIntrinsics& k = ctx.intrinsics;
  RigidTransform t = current;
  for (int iter = 0; iter < ctx.spec.max_gn_iters; ++iter) {
    Matrix6d h = Matrix6d::Zero();
    Vector6d b = Vector6d::Zero();
    for (const Correspondence& corr : ctx.correspondences) {
      const Eigen::Vector3d q = t.apply(corr.point);
      if (q.z() <= kNearPlane) continue;
      const double iz = 1.0 / q.z();
      const Eigen::Vector2d residual(
          k.fx * q.x() * iz + k.cx - corr.pixel.x(),
          k.fy * q.y() * iz + k.cy - corr.pixel.y());
      // d(pixel)/d(camera point), then chain through the left-multiplicative
      // twist: d(q)/d(rho) = I, d(q)/d(phi) = -hat(q).
      Eigen::Matrix<double, 2, 3> dpix_dq;
      // clang-format off
      dpix_dq << k.fx * iz, 0.0,       -k.fx * q.x() * iz * iz,
                 0.0,       k.fy * iz, -k.fy * q.y() * iz * iz;
      // clang-format on
      Eigen::Matrix<double, 2, 6> jac;
      jac.leftCols<3>() = dpix_dq;
      jac.rightCols<3>() = -dpix_dq * hat(q);

      const double rnorm = residual.norm();
      const double huber =
          rnorm <= ctx.spec.huber_delta_px ? 1.0 : ctx.spec.huber_delta_px / rnorm;
      const double w = huber * corr.weight;
      h.noalias() += w * jac.transpose() * jac;
      b.noalias() -= w * jac.transpose() * residual;
    }
    Vector6d step;
    if (!solve_normal_equations(h, b, step) || !step.allFinite()) {
      return {Twist::zero(), true};
    }
    t = compose(exp_map(Twist::from_vector(step)), t);
  }
  return {log_map(compose(t, inverse(current))), false};
}

}  // namespace detail

/// The base calibrator D: predicts the left-multiplicative correction twist
/// log(T_gt * current^-1) from the context's observations. Deliberately has
/// no timestep parameter; surrogates never see diffusion time.
inline DenoiseResult denoise(const SurrogateContext& ctx,
                             const RigidTransform& current, RngStream& rng) {
  switch (ctx.spec.kind) {
    case SurrogateKind::Oracle:
      return {detail::true_correction(ctx, current), false};
    case SurrogateKind::Contraction: {
      const Twist truth = detail::true_correction(ctx, current);
      const Twist eta = detail::gaussian_twist(rng);
      return {ctx.spec.gain * truth + ctx.spec.noise_sigma * eta, false};
    }
    case SurrogateKind::RangeDependent: {
      const Twist truth = detail::true_correction(ctx, current);
      const double error_norm = truth.norm();
      const double gain =
          ctx.spec.gain * std::exp(-ctx.spec.range_decay * error_norm);
      const double noise = ctx.spec.noise_sigma * (1.0 + error_norm);
      const Twist eta = detail::gaussian_twist(rng);
      return {gain * truth + noise * eta, false};
    }
    case SurrogateKind::Reprojection:
      return detail::reprojection_denoise(ctx, current);
  }
  throw std::invalid_argument("denoise: unknown surrogate kind");
}

struct SurrogateX0 {
  Twist x0_hat;
  bool degenerate = false;
};

/// Clean-state prediction from the noisy diffusion state x_t:
///   x0_hat = log( exp(D(exp(x_t) * T0)) * exp(x_t) ).
/// The denoiser sees the full noisy extrinsic exp(x_t) * T0; T0 itself
/// cancels out of the returned twist. Log-map singularities propagate.
inline SurrogateX0 surrogate_x0(const SurrogateContext& ctx, const Twist& x_t,
                                const RigidTransform& t0, RngStream& rng) {
  const RigidTransform noisy = compose(exp_map(x_t), t0);
  const DenoiseResult d = denoise(ctx, noisy, rng);
  const RigidTransform combined = compose(exp_map(d.delta), exp_map(x_t));
  return {log_map(combined), d.degenerate};
}

struct TrainingTargets {
  int t = 0;
  Twist x_t;
  Twist x0;
};

/// One supervised training pair: t uniform in {1..T}, x0 the true correction
/// for T0, and x_t its deterministic forward shrink (the noise term is the
/// zero twist by construction).
inline TrainingTargets training_targets(const Scene& scene,
                                        const RigidTransform& t0,
                                        const NoiseSchedule& sched,
                                        RngStream& rng) {
  TrainingTargets out;
  out.t = static_cast<int>(rng.uniform_int(1, sched.total_steps));
  out.x0 = log_map(compose(scene.gt_extrinsic, inverse(t0)));
  out.x_t = forward_sample(out.x0, Twist::zero(), out.t, sched);
  return out;
}

/// L1 twist loss: sum of absolute componentwise differences.
inline double l1_loss(const Twist& predicted, const Twist& target) {
  return (predicted.to_vector() - target.to_vector()).cwiseAbs().sum();
}

/// Hands out the surrogate context for one (sample, method run) pair.
///
/// Buffered: prepares once on first use and reuses the cache, the intended
/// production mode. Unbuffered: re-prepares on every access, for the
/// buffering-transparency tests; outputs must match the buffered run
/// bitwise since prepare is deterministic.
class ContextProvider {
 public:
  ContextProvider(const Scene& scene, const SurrogateSpec& spec, bool buffered)
      : scene_(&scene), spec_(spec), buffered_(buffered) {}

  ContextProvider(const Scene& scene, SurrogateContext preexisting,
                  bool buffered)
      : scene_(&scene), spec_(preexisting.spec), buffered_(buffered) {
    check_context(preexisting, scene);
    cache_ = std::move(preexisting);
  }

  const SurrogateContext& context() {
    if (!buffered_) {
      cache_ = prepare(*scene_, spec_);
      ++prepares_;
    } else if (!cache_) {
      cache_ = prepare(*scene_, spec_);
      ++prepares_;
    }
    return *cache_;
  }

  bool buffered() const { return buffered_; }
  const SurrogateSpec& spec() const { return spec_; }

  /// prepare() calls made by this instance. Unlike the process-wide
  /// invocation counter, concurrent providers cannot bleed into each
  /// other's numbers here.
  int prepares() const { return prepares_; }

 private:
  const Scene* scene_;
  SurrogateSpec spec_;
  bool buffered_;
  int prepares_ = 0;
  std::optional<SurrogateContext> cache_;
};

}  // namespace diffcal
