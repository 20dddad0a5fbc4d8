#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffcal/lie.hpp"

namespace diffcal {

inline constexpr int kDefaultTotalSteps = 1000;
inline constexpr double kDefaultScheduleOffset = 0.008;
inline constexpr double kBetaCap = 0.999;

/// Discrete variance schedule over timesteps 1..total_steps.
///
/// alpha_bar is indexed 0..total_steps with alpha_bar[0] == 1 exactly.
/// alpha and beta are indexed 1..total_steps; slot 0 is an unused
/// placeholder so that alpha[t] always refers to step t.
///
/// alpha[t] is stored as the exact ratio alpha_bar[t] / alpha_bar[t-1], so
/// the product of alphas telescopes back to alpha_bar without drift. beta[t]
/// is 1 - alpha[t] clamped to kBetaCap; under the default parameters the
/// clamp binds only at the final step, where 1 - alpha[t] rounds to 1.
struct NoiseSchedule {
  int total_steps = 0;
  double offset = 0.0;
  std::vector<double> alpha_bar;
  std::vector<double> alpha;
  std::vector<double> beta;

  double alpha_bar_at(int t) const {
    if (t < 0 || t > total_steps) {
      throw std::invalid_argument("alpha_bar_at: timestep out of range");
    }
    return alpha_bar[static_cast<std::size_t>(t)];
  }

  double alpha_at(int t) const {
    if (t < 1 || t > total_steps) {
      throw std::invalid_argument("alpha_at: timestep out of range");
    }
    return alpha[static_cast<std::size_t>(t)];
  }

  double beta_at(int t) const {
    if (t < 1 || t > total_steps) {
      throw std::invalid_argument("beta_at: timestep out of range");
    }
    return beta[static_cast<std::size_t>(t)];
  }
};

/// Squared-cosine decay: alpha_bar(t) = f(t) / f(0) with
/// f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2).
inline NoiseSchedule build_cosine_schedule(int total_steps = kDefaultTotalSteps,
                                           double offset = kDefaultScheduleOffset) {
  if (total_steps < 1) {
    throw std::invalid_argument("build_cosine_schedule: total_steps must be >= 1");
  }
  if (!(offset > 0.0) || !std::isfinite(offset)) {
    throw std::invalid_argument("build_cosine_schedule: offset must be positive");
  }

  NoiseSchedule sched;
  sched.total_steps = total_steps;
  sched.offset = offset;
  sched.alpha_bar.resize(static_cast<std::size_t>(total_steps) + 1);
  sched.alpha.assign(static_cast<std::size_t>(total_steps) + 1, 0.0);
  sched.beta.assign(static_cast<std::size_t>(total_steps) + 1, 0.0);

  const auto f = [&](int t) {
    const double u = (static_cast<double>(t) / total_steps + offset) / (1.0 + offset);
    const double c = std::cos(u * (kPi / 2.0));
    return c * c;
  };

  const double f0 = f(0);
  sched.alpha_bar[0] = 1.0;
  for (int t = 1; t <= total_steps; ++t) {
    sched.alpha_bar[static_cast<std::size_t>(t)] = std::max(f(t) / f0, 0.0);
  }

  for (int t = 1; t <= total_steps; ++t) {
    const double prev = sched.alpha_bar[static_cast<std::size_t>(t) - 1];
    const double cur = sched.alpha_bar[static_cast<std::size_t>(t)];
    if (!(cur < prev)) {
      throw std::invalid_argument(
          "build_cosine_schedule: alpha_bar not strictly decreasing");
    }
    const double a = cur / prev;
    sched.alpha[static_cast<std::size_t>(t)] = a;
    sched.beta[static_cast<std::size_t>(t)] = std::min(1.0 - a, kBetaCap);
  }
  return sched;
}

/// alpha_bar clamp bounds used when evaluating log-SNR, so the endpoints
/// stay finite even where alpha_bar underflows.
inline constexpr double kLogSnrClampLo = 1e-5;
inline constexpr double kLogSnrClampHi = 1.0 - 1e-5;

/// log SNR of a timestep: ln(ab / (1 - ab)) with ab clamped away from {0, 1}.
inline double log_snr(const NoiseSchedule& sched, int t) {
  const double ab = std::clamp(sched.alpha_bar_at(t), kLogSnrClampLo, kLogSnrClampHi);
  return std::log(ab / (1.0 - ab));
}

/// Evaluation timesteps for a budget of nfe model calls, descending from
/// total_steps and always ending at 1.
///
/// Targets are spaced uniformly in log-SNR between the endpoints t = T and
/// t = 1; each target picks the closest timestep (ties resolve to the larger
/// t), duplicates collapse, and the final entry is forced to 1 so the plan
/// always terminates in the t = 1 -> 0 collapse step. The result can hold
/// fewer than nfe steps when targets land on the same timestep, never more.
inline std::vector<int> logsnr_timesteps(const NoiseSchedule& sched, int nfe) {
  const int total = sched.total_steps;
  if (nfe < 1 || nfe > total) {
    throw std::invalid_argument("logsnr_timesteps: nfe must be in [1, total_steps]");
  }
  if (nfe == total) {
    std::vector<int> all(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) all[static_cast<std::size_t>(i)] = total - i;
    return all;
  }

  std::vector<double> lam(static_cast<std::size_t>(total) + 1, 0.0);
  for (int t = 1; t <= total; ++t) {
    lam[static_cast<std::size_t>(t)] = log_snr(sched, t);
  }
  const double lam_start = lam[static_cast<std::size_t>(total)];
  const double lam_end = lam[1];

  std::vector<int> steps;
  steps.reserve(static_cast<std::size_t>(nfe));
  for (int i = 0; i < nfe; ++i) {
    const double target =
        nfe == 1 ? lam_start
                 : lam_start + (lam_end - lam_start) * (static_cast<double>(i) /
                                                        (nfe - 1));
    // Scan ascending; <= keeps the largest timestep among equidistant ones.
    int best_t = 1;
    double best_dist = std::abs(lam[1] - target);
    for (int t = 2; t <= total; ++t) {
      const double d = std::abs(lam[static_cast<std::size_t>(t)] - target);
      if (d <= best_dist) {
        best_dist = d;
        best_t = t;
      }
    }
    if (steps.empty() || steps.back() != best_t) {
      steps.push_back(best_t);
    }
  }
  // Force, not append: the budget is a hard cap on surrogate calls.
  if (steps.back() != 1) {
    steps.back() = 1;
  }
  return steps;
}

}  // namespace diffcal
