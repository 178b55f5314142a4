#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "cadps/gmm.hpp"
#include "cadps/linalg.hpp"
#include "cadps/measurement.hpp"
#include "cadps/schedule.hpp"

namespace cadps {

enum class Method { kCadps, kDps, kPigdm };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kCadps: return "CADPS";
    case Method::kDps: return "DPS";
    case Method::kPigdm: return "PiGDM";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  std::string s;
  for (char ch : name)
    if (ch != '-' && ch != '_') s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (s == "cadps") return Method::kCadps;
  if (s == "dps") return Method::kDps;
  if (s == "pigdm") return Method::kPigdm;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

/// How d x0_hat / d x_t is formed for the DPS and PiGDM baselines.
enum class JacobianMode {
  kExact,           // analytic Hessian of the diffused prior
  kScaledIdentity,  // (1 / sqrt(alpha_bar)) I
};

/// Denominator of the score finite difference.
enum class FdTimeUnit {
  kStep,        // one discrete step, dt = 1
  kContinuous,  // dt = 1 / N
};

struct GuidanceMethod {
  Method tag = Method::kCadps;
  double zeta = 1.0;
  double hessian_floor = 0.0;
  JacobianMode jacobian = JacobianMode::kExact;
  FdTimeUnit dt_unit = FdTimeUnit::kStep;
  double cg_tol = 1e-4;
  int cg_max_iter = 0;  // 0 selects 10 * m

  void validate() const {
    if (tag == Method::kDps && !(zeta > 0.0)) throw std::invalid_argument("DPS requires zeta > 0");
    if (!(cg_tol > 0.0)) throw std::invalid_argument("cg_tol must be positive");
    if (cg_max_iter < 0) throw std::invalid_argument("cg_max_iter must be non-negative");
  }
  int max_iter_for(Eigen::Index m) const {
    return cg_max_iter > 0 ? cg_max_iter : static_cast<int>(10 * m);
  }
  double dt(const NoiseSchedule& schedule) const {
    return dt_unit == FdTimeUnit::kStep ? 1.0 : 1.0 / schedule.n_steps();
  }
};

/// Per-chain state for the covariance-aware method.
struct GuidanceState {
  std::optional<Vector> prev_score;  // score at the preceding, noisier iterate
  std::optional<int> prev_step;
  Vector sigma_tilde_diag;
};

using JacobianProduct = std::function<Vector(const Vector&)>;

inline Vector tweedie_mean(const Vector& x_t, const Vector& score, double alpha_bar, double one_minus_alpha_bar) {
  if (!(alpha_bar > 0.0)) throw std::invalid_argument("tweedie_mean: alpha_bar must be positive");
  return (x_t + one_minus_alpha_bar * score) / std::sqrt(alpha_bar);
}

/// x0_hat = (x_t + (1 - ab) * score) / sqrt(ab)
inline Vector tweedie_mean(const Vector& x_t, const Vector& score, double alpha_bar) {
  return tweedie_mean(x_t, score, alpha_bar, 1.0 - alpha_bar);
}

/// Diagonal Hessian estimate from consecutive score evaluations:
/// (prev_score - current_score) / dt, zero when no previous score exists.
inline Vector finite_difference_hessian_diag(const GuidanceState& state, const Vector& current_score,
                                             int current_step, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("fd hessian: dt must be positive");
  if (!state.prev_score) return Vector::Zero(current_score.size());
  if (!state.prev_step || *state.prev_step != current_step + 1)
    throw std::invalid_argument("fd hessian: previous score is not from the adjacent step");
  if (state.prev_score->size() != current_score.size())
    throw std::invalid_argument("fd hessian: dimension mismatch");
  return (*state.prev_score - current_score) / dt;
}

/// max(floor, ((1 - ab) / ab) (1 + (1 - ab) h)) elementwise.
inline Vector cadps_covariance_diag(const Vector& h_diag, double alpha_bar, double floor,
                                    double one_minus_alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0))
    throw std::invalid_argument("covariance diag: alpha_bar must lie in (0, 1)");
  const double scale = one_minus_alpha_bar / alpha_bar;
  return (scale * (1.0 + one_minus_alpha_bar * h_diag.array())).max(floor).matrix();
}

inline Vector cadps_covariance_diag(const Vector& h_diag, double alpha_bar, double floor = 0.0) {
  return cadps_covariance_diag(h_diag, alpha_bar, floor, 1.0 - alpha_bar);
}

/// Records the score of step t so the next (less noisy) step can difference it.
inline void observe_score(GuidanceState& state, const Vector& score, int t) {
  state.prev_score = score;
  state.prev_step = t;
}

namespace detail {
// Solves (sigma^2 I + A diag(cov) A^T) lambda = rhs.
inline CgResult solve_likelihood_system(const MeasurementModel& meas, const Vector& cov_diag, const Vector& rhs,
                                        double tol, int max_iter) {
  const double s2 = meas.sigma * meas.sigma;
  auto op = [&](const Vector& v) -> Vector {
    Vector out = s2 * v;
    out.noalias() += meas.a * cov_diag.cwiseProduct(meas.a.transpose() * v);
    return out;
  };
  return conjugate_gradient_solve(op, rhs, tol, max_iter);
}
}  // namespace detail

struct CadpsGuidance {
  Vector gradient;
  Vector jacobian_diag;  // d x0_hat / d x_t = sqrt(ab) / (1 - ab) * Sigma_t
  Vector x0_hat;
  CgReport cg;
};

/// Covariance-aware likelihood score:
/// sqrt(ab)/(1-ab) Sigma_t A^T (sigma^2 I + A Sigma_t A^T)^-1 (y - A x0_hat),
/// with Sigma_t built from the finite-difference Hessian. Updates `state`.
inline CadpsGuidance guidance_gradient_cadps(const Vector& x_t, const Vector& score, const NoiseSchedule& schedule,
                                             int t, const MeasurementModel& meas, GuidanceState& state,
                                             const GuidanceMethod& method = {}) {
  const double ab = schedule.alpha_bar(t);
  const double omab = schedule.one_minus_alpha_bar(t);
  const Vector h = finite_difference_hessian_diag(state, score, t, method.dt(schedule));
  state.sigma_tilde_diag = cadps_covariance_diag(h, ab, method.hessian_floor, omab);

  CadpsGuidance out;
  out.x0_hat = tweedie_mean(x_t, score, ab, omab);
  const Vector r = residual(meas, out.x0_hat);
  const CgResult solve = detail::solve_likelihood_system(meas, state.sigma_tilde_diag, r, method.cg_tol,
                                                         method.max_iter_for(meas.m()));
  out.cg = solve.report;
  out.jacobian_diag = (std::sqrt(ab) / omab) * state.sigma_tilde_diag;
  out.gradient = out.jacobian_diag.cwiseProduct(meas.a.transpose() * solve.solution);
  observe_score(state, score, t);
  return out;
}

/// Jacobian product for the baselines: exact through the mixture Hessian, or
/// the scaled identity.
inline JacobianProduct make_tweedie_jacobian(const GaussianMixture& prior, const ScoreEvaluation& ev,
                                             JacobianMode mode) {
  if (mode == JacobianMode::kScaledIdentity) {
    const double inv_root = 1.0 / std::sqrt(ev.alpha_bar);
    return [inv_root](const Vector& v) -> Vector { return inv_root * v; };
  }
  return [&prior, &ev](const Vector& v) { return tweedie_jacobian_product(prior, ev, v); };
}

/// -zeta_t grad ||y - A x0_hat||^2 with zeta_t = zeta / ||y - A x0_hat||.
inline Vector guidance_gradient_dps(const Vector& x_t, const Vector& score, const NoiseSchedule& schedule, int t,
                                    const MeasurementModel& meas, double zeta, const JacobianProduct& jacobian) {
  if (!(zeta > 0.0)) throw std::invalid_argument("DPS: zeta must be positive");
  const Vector x0 = tweedie_mean(x_t, score, schedule.alpha_bar(t), schedule.one_minus_alpha_bar(t));
  const Vector r = residual(meas, x0);
  const double norm = r.norm();
  if (norm == 0.0) return Vector::Zero(x_t.size());
  return (2.0 * zeta / norm) * jacobian(meas.a.transpose() * r);
}

struct PigdmGuidance {
  Vector gradient;
  CgReport cg;
};

/// J^T A^T (sigma^2 I + r_t^2 A A^T)^-1 (y - A x0_hat), r_t^2 = 1 - ab.
inline PigdmGuidance guidance_gradient_pigdm(const Vector& x_t, const Vector& score, const NoiseSchedule& schedule,
                                             int t, const MeasurementModel& meas, const JacobianProduct& jacobian,
                                             const GuidanceMethod& method = {}) {
  const Vector x0 = tweedie_mean(x_t, score, schedule.alpha_bar(t), schedule.one_minus_alpha_bar(t));
  const Vector r = residual(meas, x0);
  const Vector cov = Vector::Constant(x_t.size(), pigdm_r_sq(schedule, t));
  const CgResult solve =
      detail::solve_likelihood_system(meas, cov, r, method.cg_tol, method.max_iter_for(meas.m()));
  return {jacobian(meas.a.transpose() * solve.solution), solve.report};
}

}  // namespace cadps
