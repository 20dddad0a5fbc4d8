#pragma once

#include <cmath>
#include <stdexcept>

#include "diffcal/lie.hpp"
#include "diffcal/random.hpp"
#include "diffcal/schedule.hpp"

namespace diffcal {

/// How reverse_step turns the posterior into the next iterate.
enum class ReverseStepMode {
  PosteriorMean,        // deterministic: next = posterior mean
  PosteriorStochastic,  // ancestral: next = mean + sqrt(var) * eta
  OdeFirstOrder,        // probability-flow style first-order update
};

namespace detail {
inline void check_step_pair(const NoiseSchedule& sched, int t_from, int t_to) {
  if (t_from < 1 || t_from > sched.total_steps) {
    throw std::invalid_argument("sampler: t_from out of range");
  }
  if (t_to < 0 || t_to >= t_from) {
    throw std::invalid_argument("sampler: need 0 <= t_to < t_from");
  }
}
}  // namespace detail

/// Forward diffusion draw: x_t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps,
/// componentwise on the twist coordinates.
inline Twist forward_sample(const Twist& x0, const Twist& eps, int t,
                            const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar_at(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

/// Mean of q(x_{t_to} | x_{t_from}, x0). With a_eff = ab_from / ab_to this is
///   [sqrt(a_eff) (1 - ab_to) x_t + sqrt(ab_to) (1 - a_eff) x0] / (1 - ab_from),
/// the usual single-step posterior generalized to skipped steps. For
/// t_from = 1, t_to = 0 the coefficients reduce to exactly (0, 1), so the
/// mean returns x0_hat unchanged.
inline Twist posterior_mean_between(const Twist& x_t, const Twist& x0_hat,
                                    int t_from, int t_to,
                                    const NoiseSchedule& sched) {
  detail::check_step_pair(sched, t_from, t_to);
  const double ab_from = sched.alpha_bar_at(t_from);
  const double ab_to = sched.alpha_bar_at(t_to);
  const double a_eff = ab_from / ab_to;
  const double denom = 1.0 - ab_from;
  const double coeff_t = std::sqrt(a_eff) * (1.0 - ab_to) / denom;
  const double coeff_0 = std::sqrt(ab_to) * (1.0 - a_eff) / denom;
  return coeff_t * x_t + coeff_0 * x0_hat;
}

/// Variance of q(x_{t_to} | x_{t_from}, x0):
///   (1 - a_eff) (1 - ab_to) / (1 - ab_from).
inline double posterior_variance_between(int t_from, int t_to,
                                         const NoiseSchedule& sched) {
  detail::check_step_pair(sched, t_from, t_to);
  const double ab_from = sched.alpha_bar_at(t_from);
  const double ab_to = sched.alpha_bar_at(t_to);
  const double a_eff = ab_from / ab_to;
  return (1.0 - a_eff) * (1.0 - ab_to) / (1.0 - ab_from);
}

/// Adjacent-step posterior mean q(x_{t-1} | x_t, x0).
inline Twist posterior_mean(const Twist& x_t, const Twist& x0_hat, int t,
                            const NoiseSchedule& sched) {
  return posterior_mean_between(x_t, x0_hat, t, t - 1, sched);
}

/// Adjacent-step posterior variance (1-a_t)(1-ab_{t-1})/(1-ab_t). Despite
/// the conventional sigma name this is the variance; take the square root
/// where noise is actually injected.
inline double posterior_sigma(int t, const NoiseSchedule& sched) {
  return posterior_variance_between(t, t - 1, sched);
}

/// One reverse update x_{t_from} -> x_{t_to} given the predicted clean state.
///
/// PosteriorMean and PosteriorStochastic use the posterior moments above;
/// the stochastic mode consumes exactly six normal draws (one per twist
/// component), and none are drawn in the other modes. OdeFirstOrder
/// re-estimates the noise eps_hat = (x_t - sqrt(ab_from) x0) / sqrt(1-ab_from)
/// and moves it to the target noise level deterministically.
inline Twist reverse_step(const Twist& x_t, const Twist& x0_hat, int t_from,
                          int t_to, ReverseStepMode mode,
                          const NoiseSchedule& sched, RngStream& rng) {
  detail::check_step_pair(sched, t_from, t_to);
  switch (mode) {
    case ReverseStepMode::PosteriorMean:
      return posterior_mean_between(x_t, x0_hat, t_from, t_to, sched);
    case ReverseStepMode::PosteriorStochastic: {
      const Twist mean = posterior_mean_between(x_t, x0_hat, t_from, t_to, sched);
      const double sigma =
          std::sqrt(posterior_variance_between(t_from, t_to, sched));
      Vector6d eta;
      for (int i = 0; i < 6; ++i) eta[i] = rng.normal();
      return mean + sigma * Twist::from_vector(eta);
    }
    case ReverseStepMode::OdeFirstOrder: {
      const double ab_from = sched.alpha_bar_at(t_from);
      const double ab_to = sched.alpha_bar_at(t_to);
      const Twist eps_hat =
          (1.0 / std::sqrt(1.0 - ab_from)) *
          (x_t - std::sqrt(ab_from) * x0_hat);
      return std::sqrt(ab_to) * x0_hat + std::sqrt(1.0 - ab_to) * eps_hat;
    }
  }
  throw std::invalid_argument("reverse_step: unknown mode");
}

}  // namespace diffcal
