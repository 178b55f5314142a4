#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadps {

/// Discrete variance-preserving noise schedule with steps indexed 1..n_steps.
/// Index 0 denotes clean data (alpha_bar(0) == 1). Immutable once built.
class NoiseSchedule {
 public:
  static constexpr double kBetaCap = 0.999;

  NoiseSchedule() = default;

  /// beta_i = min((beta_min + (i / N)(beta_max - beta_min)) / N, 0.999).
  static NoiseSchedule linear_vp(int n_steps, double beta_min, double beta_max) {
    if (n_steps < 2) throw std::invalid_argument("schedule: n_steps must be >= 2");
    // Equal bounds give a constant schedule.
    if (!(beta_min > 0.0) || !(beta_max >= beta_min) || !std::isfinite(beta_max))
      throw std::invalid_argument("schedule: need 0 < beta_min <= beta_max");
    std::vector<double> beta(static_cast<std::size_t>(n_steps));
    const double n = static_cast<double>(n_steps);
    for (int i = 1; i <= n_steps; ++i) {
      const double continuous = beta_min + (static_cast<double>(i) / n) * (beta_max - beta_min);
      beta[static_cast<std::size_t>(i - 1)] = std::min(continuous / n, kBetaCap);
    }
    return from_betas(std::move(beta));
  }

  /// Arbitrary betas in (0, 1). Only linear_vp guarantees a non-decreasing sequence.
  static NoiseSchedule from_betas(std::vector<double> beta) {
    if (beta.size() < 2) throw std::invalid_argument("schedule: need at least two steps");
    NoiseSchedule s;
    const auto n = beta.size();
    s.beta_ = std::move(beta);
    s.log_alpha_bar_.assign(n + 1, 0.0);
    s.alpha_bar_.assign(n + 1, 1.0);
    s.one_minus_alpha_bar_.assign(n + 1, 0.0);
    s.sigma_tilde_.assign(n + 1, 0.0);
    for (std::size_t i = 1; i <= n; ++i) {
      const double b = s.beta_[i - 1];
      if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("schedule: beta must lie in (0, 1)");
      s.log_alpha_bar_[i] = s.log_alpha_bar_[i - 1] + std::log1p(-b);
      s.alpha_bar_[i] = std::exp(s.log_alpha_bar_[i]);
      s.one_minus_alpha_bar_[i] = -std::expm1(s.log_alpha_bar_[i]);
      if (i > 1) {
        s.sigma_tilde_[i] = std::sqrt(b * s.one_minus_alpha_bar_[i - 1] / s.one_minus_alpha_bar_[i]);
      }
    }
    return s;
  }

  int n_steps() const noexcept { return static_cast<int>(beta_.size()); }

  double beta(int t) const { return beta_[step_index(t)]; }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_[bar_index(t)]; }
  double log_alpha_bar(int t) const { return log_alpha_bar_[bar_index(t)]; }
  /// 1 - alpha_bar(t) without cancellation near t = 0.
  double one_minus_alpha_bar(int t) const { return one_minus_alpha_bar_[bar_index(t)]; }
  /// Ancestral noise scale; zero at t = 1.
  double sigma_tilde(int t) const { return sigma_tilde_[bar_index(t)]; }

  const std::vector<double>& betas() const noexcept { return beta_; }

  bool operator==(const NoiseSchedule&) const = default;

 private:
  std::size_t step_index(int t) const {
    if (t < 1 || t > n_steps())
      throw std::out_of_range("schedule: step " + std::to_string(t) + " out of range");
    return static_cast<std::size_t>(t - 1);
  }
  std::size_t bar_index(int t) const {
    if (t < 0 || t > n_steps())
      throw std::out_of_range("schedule: step " + std::to_string(t) + " out of range");
    return static_cast<std::size_t>(t);
  }

  std::vector<double> beta_;
  std::vector<double> log_alpha_bar_;
  std::vector<double> alpha_bar_;
  std::vector<double> one_minus_alpha_bar_;
  std::vector<double> sigma_tilde_;
};

inline NoiseSchedule build_linear_vp_schedule(int n_steps, double beta_min, double beta_max) {
  return NoiseSchedule::linear_vp(n_steps, beta_min, beta_max);
}

/// sigma_t^2 = (1 - alpha_bar_t) / alpha_bar_t, the signal-to-noise variance
/// consumed by the pseudoinverse-guidance heuristic r_t^2 = sigma_t^2 / (1 + sigma_t^2).
inline double snr_sigma_sq(const NoiseSchedule& schedule, int t) {
  if (t < 1 || t > schedule.n_steps()) throw std::out_of_range("snr_sigma_sq: step out of range");
  return schedule.one_minus_alpha_bar(t) / schedule.alpha_bar(t);
}

/// r_t^2 expressed without forming sigma_t^2, which overflows when alpha_bar underflows.
inline double pigdm_r_sq(const NoiseSchedule& schedule, int t) {
  if (t < 1 || t > schedule.n_steps()) throw std::out_of_range("pigdm_r_sq: step out of range");
  return schedule.one_minus_alpha_bar(t);
}

}  // namespace cadps
