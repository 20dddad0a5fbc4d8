#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffcal/lie.hpp"
#include "diffcal/sampler.hpp"
#include "diffcal/schedule.hpp"
#include "diffcal/surrogate.hpp"

namespace diffcal {

enum class MethodKind { Single, NaIter, Lsd, Nlsd };

inline const char* method_kind_label(MethodKind kind) {
  switch (kind) {
    case MethodKind::Single: return "single";
    case MethodKind::NaIter: return "naiter";
    case MethodKind::Lsd: return "lsd";
    case MethodKind::Nlsd: return "nlsd";
  }
  return "unknown";
}

inline std::optional<MethodKind> method_kind_from_label(std::string_view s) {
  if (s == "single") return MethodKind::Single;
  if (s == "naiter") return MethodKind::NaIter;
  if (s == "lsd") return MethodKind::Lsd;
  if (s == "nlsd") return MethodKind::Nlsd;
  return std::nullopt;
}

struct MethodSpec {
  MethodKind kind = MethodKind::Lsd;
  int nfe = 10;  // Single always runs with 1 regardless
  ReverseStepMode mode = ReverseStepMode::PosteriorMean;
  // Scale on the reverse-process noise of the SE(3)-state method; 0 makes it
  // deterministic. Kept below 1 by default so the injected rotation noise
  // stays well clear of the log-map singularity.
  double nlsd_perturb_sigma = 0.5;
};

inline void validate_method_spec(const MethodSpec& spec) {
  if (spec.nfe < 1) {
    throw std::invalid_argument("method spec: nfe must be >= 1");
  }
  if (spec.nlsd_perturb_sigma < 0.0) {
    throw std::invalid_argument("method spec: negative nlsd_perturb_sigma");
  }
}

/// Per-run output. estimates holds the reported trajectory, one entry per
/// function evaluation: the running extrinsic for Single/NaIter/Nlsd, the
/// projected clean estimate exp(x0_hat) * T0 for Lsd. states holds the raw
/// diffusion state as an extrinsic after each step (identical to estimates
/// except for Lsd, where it is exp(x_t) * T0). flagged marks degenerate
/// denoiser solves and singularity aborts; aborted runs are padded with the
/// last valid state so the trajectory keeps one entry per evaluation.
struct Trajectory {
  std::vector<RigidTransform> estimates;
  std::vector<RigidTransform> states;
  RigidTransform final;
  bool flagged = false;
};

/// One-shot calibration: T = exp(D(T0)) * T0.
inline Trajectory run_single(ContextProvider& provider, const RigidTransform& t0,
                             RngStream& rng) {
  Trajectory traj;
  const DenoiseResult d = denoise(provider.context(), t0, rng);
  const RigidTransform estimate = compose(exp_map(d.delta), t0);
  traj.estimates.push_back(estimate);
  traj.states.push_back(estimate);
  traj.final = estimate;
  traj.flagged = d.degenerate;
  return traj;
}

/// Naive iteration: feed the estimate back into the calibrator nfe times.
inline Trajectory run_naiter(ContextProvider& provider, const RigidTransform& t0,
                             int nfe, RngStream& rng) {
  if (nfe < 1) throw std::invalid_argument("run_naiter: nfe must be >= 1");
  Trajectory traj;
  traj.estimates.reserve(static_cast<std::size_t>(nfe));
  RigidTransform current = t0;
  for (int i = 0; i < nfe; ++i) {
    const DenoiseResult d = denoise(provider.context(), current, rng);
    traj.flagged = traj.flagged || d.degenerate;
    current = compose(exp_map(d.delta), current);
    traj.estimates.push_back(current);
    traj.states.push_back(current);
  }
  traj.final = current;
  return traj;
}

namespace detail {
inline void check_plan(const std::vector<int>& plan, const NoiseSchedule& sched) {
  if (plan.empty()) throw std::invalid_argument("method run: empty timestep plan");
  if (plan.back() != 1) throw std::invalid_argument("method run: plan must end at 1");
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (plan[i] < 1 || plan[i] > sched.total_steps) {
      throw std::invalid_argument("method run: plan step out of range");
    }
    if (i > 0 && plan[i] >= plan[i - 1]) {
      throw std::invalid_argument("method run: plan must be strictly descending");
    }
  }
}
}  // namespace detail

/// Twist-state reverse diffusion. The state starts at the zero twist; each
/// evaluation predicts the clean twist via the surrogate, records the
/// projected clean extrinsic, and moves the state to the next plan timestep
/// (0 after the last entry, which collapses the state onto the prediction).
inline Trajectory run_lsd(ContextProvider& provider, const RigidTransform& t0,
                          const std::vector<int>& plan, ReverseStepMode mode,
                          const NoiseSchedule& sched, RngStream& rng) {
  detail::check_plan(plan, sched);
  Trajectory traj;
  traj.estimates.reserve(plan.size());
  Twist x = Twist::zero();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const int t_from = plan[i];
    const int t_to = i + 1 < plan.size() ? plan[i + 1] : 0;
    const SurrogateX0 pred = surrogate_x0(provider.context(), x, t0, rng);
    traj.flagged = traj.flagged || pred.degenerate;
    traj.estimates.push_back(compose(exp_map(pred.x0_hat), t0));
    x = reverse_step(x, pred.x0_hat, t_from, t_to, mode, sched, rng);
    traj.states.push_back(compose(exp_map(x), t0));
  }
  traj.final = traj.estimates.back();
  return traj;
}

/// SE(3)-state reverse diffusion. The state is a full extrinsic H; each step
/// pulls it back to a twist relative to T0, applies the twist-space
/// posterior, and re-projects. sigma scales the injected posterior noise;
/// sigma = 0 is fully deterministic. A log-map singularity aborts the run:
/// the trajectory is padded with the last state and flagged.
inline Trajectory run_nlsd(ContextProvider& provider, const RigidTransform& t0,
                           const std::vector<int>& plan, double sigma,
                           const NoiseSchedule& sched, RngStream& rng) {
  detail::check_plan(plan, sched);
  if (sigma < 0.0) throw std::invalid_argument("run_nlsd: negative sigma");
  Trajectory traj;
  traj.estimates.reserve(plan.size());
  RigidTransform h = t0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const int t_from = plan[i];
    const int t_to = i + 1 < plan.size() ? plan[i + 1] : 0;
    try {
      const Twist xi_t = log_map(compose(h, inverse(t0)));
      const SurrogateX0 pred = surrogate_x0(provider.context(), xi_t, t0, rng);
      traj.flagged = traj.flagged || pred.degenerate;
      Twist next = posterior_mean_between(xi_t, pred.x0_hat, t_from, t_to, sched);
      if (sigma != 0.0) {
        const double scale =
            sigma * std::sqrt(posterior_variance_between(t_from, t_to, sched));
        Vector6d eta;
        for (int c = 0; c < 6; ++c) eta[c] = rng.normal();
        next = next + scale * Twist::from_vector(eta);
      }
      h = compose(exp_map(next), t0);
    } catch (const SingularityError&) {
      traj.flagged = true;
      while (traj.estimates.size() < plan.size()) {
        traj.estimates.push_back(h);
        traj.states.push_back(h);
      }
      break;
    }
    traj.estimates.push_back(h);
    traj.states.push_back(h);
  }
  traj.final = h;
  return traj;
}

/// Reference forward draw for the SE(3)-state process (tests only):
///   H_t = exp(sqrt(1 - ab_t) * sigma * eta) * exp(sqrt(ab_t) * log(H0 T0^-1)) * T0,
/// the nonlinear perturbation-plus-interpolation counterpart of the linear
/// forward_sample.
inline RigidTransform nlsd_forward_sample(const RigidTransform& h0,
                                          const RigidTransform& t0, int t,
                                          const NoiseSchedule& sched,
                                          double sigma, RngStream& rng) {
  const double ab = sched.alpha_bar_at(t);
  const Twist xi0 = log_map(compose(h0, inverse(t0)));
  Twist noise = Twist::zero();
  if (sigma != 0.0) {
    Vector6d eta;
    for (int c = 0; c < 6; ++c) eta[c] = rng.normal();
    noise = (std::sqrt(1.0 - ab) * sigma) * Twist::from_vector(eta);
  }
  const RigidTransform shrunk = compose(exp_map(std::sqrt(ab) * xi0), t0);
  return compose(exp_map(noise), shrunk);
}

/// Dispatch on the method spec. The timestep plan for the diffusion methods
/// is derived from (schedule, nfe) internally.
inline Trajectory run_method(ContextProvider& provider, const RigidTransform& t0,
                             const MethodSpec& spec, const NoiseSchedule& sched,
                             RngStream& rng) {
  validate_method_spec(spec);
  switch (spec.kind) {
    case MethodKind::Single:
      return run_single(provider, t0, rng);
    case MethodKind::NaIter:
      return run_naiter(provider, t0, spec.nfe, rng);
    case MethodKind::Lsd:
      return run_lsd(provider, t0, logsnr_timesteps(sched, spec.nfe), spec.mode,
                     sched, rng);
    case MethodKind::Nlsd:
      return run_nlsd(provider, t0, logsnr_timesteps(sched, spec.nfe),
                      spec.nlsd_perturb_sigma, sched, rng);
  }
  throw std::invalid_argument("run_method: unknown method kind");
}

}  // namespace diffcal
