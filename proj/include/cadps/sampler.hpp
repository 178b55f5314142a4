#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cadps/gmm.hpp"
#include "cadps/guidance.hpp"
#include "cadps/linalg.hpp"
#include "cadps/measurement.hpp"
#include "cadps/random.hpp"
#include "cadps/schedule.hpp"

namespace cadps {

/// Coefficient applied to the likelihood score before it is added to the
/// ancestral update.
enum class GuidanceStep {
  kScoreConsistent,  // beta_t / sqrt(alpha_t) for PiGDM and CA-DPS, 1 for DPS
  kLiteral,          // 1 for every method
};

/// What the final transition x_1 -> x_0 returns.
enum class FinalStep {
  kPosteriorDraw,  // a draw from the method's Gaussian model of p(x0 | x1, y)
  kMean,           // its mean (sigma_tilde_1 = 0)
};

struct SamplerOptions {
  GuidanceStep step_mode = GuidanceStep::kScoreConsistent;
  double guidance_scale = 1.0;
  FinalStep final_step = FinalStep::kPosteriorDraw;
  // Below this alpha_bar the guidance term is O(sqrt(alpha_bar)) and is skipped;
  // Tweedie's division by sqrt(alpha_bar) is unreliable there.
  double negligible_alpha_bar = 1e-20;
};

struct ChainConfig {
  std::shared_ptr<const NoiseSchedule> schedule;
  GuidanceMethod method;
  std::uint64_t seed = 0;
  bool record_trajectory = false;
  SamplerOptions options;
};

struct TrajectoryPoint {
  int step;
  Vector x;
};

struct ChainResult {
  Vector x0;
  bool finite = true;
  int cg_failures = 0;
  std::string diagnostic;
  std::vector<TrajectoryPoint> trajectory;
};

/// Ancestral update x'_{t-1} = c1 x_t + c2 x0_hat + sigma_tilde_t z with the
/// DDPM posterior-mean coefficients. c2 * x0_hat is evaluated as
/// beta_t / (sqrt(alpha_t) (1 - ab_t)) * (x_t + (1 - ab_t) score), which needs
/// no division by sqrt(ab_t).
inline Vector reverse_step_unconditional(const Vector& x_t, const Vector& score, const NoiseSchedule& schedule,
                                         int t, const Vector& z) {
  const double beta = schedule.beta(t);
  const double omab = schedule.one_minus_alpha_bar(t);
  const double omab_prev = schedule.one_minus_alpha_bar(t - 1);
  const double root_alpha = std::sqrt(schedule.alpha(t));
  const double c1 = root_alpha * omab_prev / omab;
  const double c2_scaled = beta / (root_alpha * omab);
  Vector out = c1 * x_t + c2_scaled * (x_t + omab * score);
  if (t > 1) out.noalias() += schedule.sigma_tilde(t) * z;
  return out;
}

inline Vector reverse_step_unconditional(const Vector& x_t, const Vector& score, const NoiseSchedule& schedule,
                                         int t, Rng& rng) {
  return reverse_step_unconditional(x_t, score, schedule, t, standard_normal_vector(x_t.size(), rng));
}

namespace detail {

inline double guidance_coefficient(const NoiseSchedule& schedule, int t, Method method, const SamplerOptions& opt) {
  double coef = 1.0;
  if (opt.step_mode == GuidanceStep::kScoreConsistent && method != Method::kDps)
    coef = schedule.beta(t) / std::sqrt(schedule.alpha(t));
  return coef * opt.guidance_scale;
}

// Zero-mean perturbation that turns the Gaussian-model posterior mean into a
// draw: z - D A^T (sigma^2 I + A D A^T)^-1 (A z + sigma w), z ~ N(0, D).
inline Vector posterior_perturbation(const MeasurementModel& meas, const Vector& cov_diag, const GuidanceMethod& method,
                                     Rng& rng, CgReport& report) {
  const Vector z = cov_diag.cwiseSqrt().cwiseProduct(standard_normal_vector(cov_diag.size(), rng));
  const Vector w = meas.sigma * standard_normal_vector(meas.m(), rng);
  const CgResult solve =
      solve_likelihood_system(meas, cov_diag, meas.a * z + w, method.cg_tol, method.max_iter_for(meas.m()));
  report = solve.report;
  return z - cov_diag.cwiseProduct(meas.a.transpose() * solve.solution);
}

}  // namespace detail

/// Guided reverse diffusion from x_N ~ N(0, I) to x_0. One score evaluation
/// per step feeds Tweedie's estimate, the finite-difference Hessian and the
/// likelihood correction. The correction is added in the direction that
/// increases log p_t(y | x_t).
inline ChainResult run_guided_chain(const GaussianMixture& prior, const MeasurementModel& meas,
                                    const ChainConfig& config) {
  if (!config.schedule) throw std::invalid_argument("chain: schedule is required");
  if (prior.dim() != meas.d()) throw std::invalid_argument("chain: prior and measurement dimensions differ");
  config.method.validate();
  const NoiseSchedule& schedule = *config.schedule;
  const auto& opt = config.options;
  const auto d = prior.dim();

  Rng rng = make_rng(config.seed);
  ChainResult out;
  Vector x = standard_normal_vector(d, rng);
  if (config.record_trajectory) out.trajectory.push_back({schedule.n_steps(), x});
  GuidanceState state;

  for (int t = schedule.n_steps(); t >= 1; --t) {
    const double ab = schedule.alpha_bar(t);
    const ScoreEvaluation ev = evaluate_score(prior, x, ab);
    const Vector z = standard_normal_vector(d, rng);
    Vector next = reverse_step_unconditional(x, ev.score, schedule, t, z);

    const bool guided = ab >= opt.negligible_alpha_bar;
    const double coef = detail::guidance_coefficient(schedule, t, config.method.tag, opt);
    Vector final_cov;  // covariance model used by the final posterior draw
    switch (config.method.tag) {
      case Method::kCadps: {
        if (!guided) {
          observe_score(state, ev.score, t);
          break;
        }
        const CadpsGuidance g = guidance_gradient_cadps(x, ev.score, schedule, t, meas, state, config.method);
        if (!g.cg.converged) ++out.cg_failures;
        next.noalias() += coef * g.gradient;
        final_cov = state.sigma_tilde_diag;
        break;
      }
      case Method::kPigdm: {
        if (!guided) break;
        const JacobianProduct jac = make_tweedie_jacobian(prior, ev, config.method.jacobian);
        const PigdmGuidance g = guidance_gradient_pigdm(x, ev.score, schedule, t, meas, jac, config.method);
        if (!g.cg.converged) ++out.cg_failures;
        next.noalias() += coef * g.gradient;
        final_cov = Vector::Constant(d, pigdm_r_sq(schedule, t));
        break;
      }
      case Method::kDps: {
        if (!guided) break;
        const JacobianProduct jac = make_tweedie_jacobian(prior, ev, config.method.jacobian);
        next.noalias() += coef * guidance_gradient_dps(x, ev.score, schedule, t, meas, config.method.zeta, jac);
        break;
      }
    }

    if (t == 1 && opt.final_step == FinalStep::kPosteriorDraw && final_cov.size() == d) {
      CgReport report;
      next.noalias() += detail::posterior_perturbation(meas, final_cov, config.method, rng, report);
      if (!report.converged) ++out.cg_failures;
    }

    if (!all_finite(next)) {
      out.finite = false;
      out.diagnostic = "non-finite state at step " + std::to_string(t - 1);
      out.x0 = std::move(next);
      return out;
    }
    x = std::move(next);
    if (config.record_trajectory) out.trajectory.push_back({t - 1, x});
  }
  out.x0 = std::move(x);
  return out;
}

/// Unguided reverse diffusion with the same random stream layout as
/// run_guided_chain.
inline ChainResult run_unconditional_chain(const GaussianMixture& prior, const NoiseSchedule& schedule,
                                           std::uint64_t seed, bool record_trajectory = false) {
  Rng rng = make_rng(seed);
  ChainResult out;
  Vector x = standard_normal_vector(prior.dim(), rng);
  if (record_trajectory) out.trajectory.push_back({schedule.n_steps(), x});
  for (int t = schedule.n_steps(); t >= 1; --t) {
    const Vector score = smoothed_score(prior, x, schedule.alpha_bar(t));
    const Vector z = standard_normal_vector(prior.dim(), rng);
    x = reverse_step_unconditional(x, score, schedule, t, z);
    if (!all_finite(x)) {
      out.finite = false;
      out.diagnostic = "non-finite state at step " + std::to_string(t - 1);
      break;
    }
    if (record_trajectory) out.trajectory.push_back({t - 1, x});
  }
  out.x0 = std::move(x);
  return out;
}

/// One JSON object per line: {"step": t, "x": [...]}.
inline void write_trajectory_jsonl(std::ostream& os, const std::vector<TrajectoryPoint>& trajectory) {
  const auto old_precision = os.precision(17);
  for (const auto& p : trajectory) {
    os << "{\"step\":" << p.step << ",\"x\":[";
    for (Eigen::Index i = 0; i < p.x.size(); ++i) os << (i ? "," : "") << p.x[i];
    os << "]}\n";
  }
  os.precision(old_precision);
}

}  // namespace cadps
