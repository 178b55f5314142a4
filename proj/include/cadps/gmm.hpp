#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cadps/linalg.hpp"
#include "cadps/random.hpp"

namespace cadps {

/// Weighted Gaussian mixture whose components share one covariance: either
/// `variance * I` (priors) or a full SPD matrix (exact posteriors).
/// Log-weights are normalized on construction.
class GaussianMixture {
 public:
  GaussianMixture(Matrix means, Vector log_weights, double isotropic_variance)
      : means_(std::move(means)), log_weights_(std::move(log_weights)),
        variance_(isotropic_variance) {
    if (!(variance_ > 0.0) || !std::isfinite(variance_))
      throw std::invalid_argument("mixture: component variance must be positive");
    validate_and_normalize();
  }

  GaussianMixture(Matrix means, Vector log_weights, Matrix shared_covariance)
      : means_(std::move(means)), log_weights_(std::move(log_weights)) {
    validate_and_normalize();
    if (shared_covariance.rows() != dim() || shared_covariance.cols() != dim())
      throw std::invalid_argument("mixture: covariance dimension mismatch");
    auto llt = std::make_shared<Eigen::LLT<Matrix>>(shared_covariance);
    if (llt->info() != Eigen::Success)
      throw NumericalError("mixture: covariance is not positive definite");
    covariance_ = std::move(shared_covariance);
    cholesky_ = std::move(llt);
  }

  Eigen::Index dim() const noexcept { return means_.cols(); }
  Eigen::Index size() const noexcept { return means_.rows(); }
  const Matrix& means() const noexcept { return means_; }
  Vector mean(Eigen::Index k) const { return means_.row(k).transpose(); }
  const Vector& log_weights() const noexcept { return log_weights_; }
  Vector weights() const { return log_weights_.array().exp().matrix(); }

  bool is_isotropic() const noexcept { return !covariance_.has_value(); }
  double isotropic_variance() const {
    if (!is_isotropic()) throw std::logic_error("mixture: covariance is not isotropic");
    return variance_;
  }
  Matrix covariance() const {
    if (covariance_) return *covariance_;
    return variance_ * Matrix::Identity(dim(), dim());
  }

  /// log of the mixture density at x.
  double log_pdf(const Vector& x) const {
    if (x.size() != dim()) throw std::invalid_argument("mixture: dimension mismatch");
    Vector terms(size());
    if (is_isotropic()) {
      const double norm = -0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi * variance_);
      for (Eigen::Index k = 0; k < size(); ++k)
        terms[k] = log_weights_[k] + norm - 0.5 * (x - mean(k)).squaredNorm() / variance_;
    } else {
      const Matrix& l = cholesky_->matrixLLT();
      double log_det = 0.0;
      for (Eigen::Index i = 0; i < dim(); ++i) log_det += 2.0 * std::log(l(i, i));
      const double norm = -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) + log_det);
      for (Eigen::Index k = 0; k < size(); ++k) {
        const Vector w = cholesky_->matrixL().solve(x - mean(k));
        terms[k] = log_weights_[k] + norm - 0.5 * w.squaredNorm();
      }
    }
    return logsumexp(terms);
  }

  /// Draws n i.i.d. samples as rows; deterministic given the generator state.
  Matrix sample(Eigen::Index n, Rng& rng) const {
    if (n < 1) throw std::invalid_argument("mixture: sample count must be >= 1");
    const Vector w = weights();
    std::discrete_distribution<Eigen::Index> pick(w.data(), w.data() + w.size());
    Matrix out(n, dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index k = pick(rng);
      const Vector z = standard_normal_vector(dim(), rng);
      if (is_isotropic())
        out.row(i) = (mean(k) + std::sqrt(variance_) * z).transpose();
      else
        out.row(i) = (mean(k) + cholesky_->matrixL() * z).transpose();
    }
    return out;
  }

 private:
  void validate_and_normalize() {
    if (means_.rows() < 1 || means_.cols() < 1)
      throw std::invalid_argument("mixture: need at least one component of positive dimension");
    if (log_weights_.size() != means_.rows())
      throw std::invalid_argument("mixture: one log-weight per component required");
    if (!all_finite(means_)) throw std::invalid_argument("mixture: non-finite mean");
    const double lse = logsumexp(log_weights_);
    if (!std::isfinite(lse)) throw std::invalid_argument("mixture: weights do not normalize");
    log_weights_.array() -= lse;
  }

  Matrix means_;
  Vector log_weights_;
  double variance_ = 1.0;
  std::optional<Matrix> covariance_;
  std::shared_ptr<const Eigen::LLT<Matrix>> cholesky_;
};

/// 25-component lattice prior: means repeat (8i, 8j) across the d coordinates
/// for i, j in {-2..2}, equal weights, unit variance. Component index is
/// 5 * (i + 2) + (j + 2).
inline GaussianMixture build_toy_prior(int d) {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("toy prior: d must be even and >= 2");
  Matrix means(25, d);
  for (int i = -2; i <= 2; ++i) {
    for (int j = -2; j <= 2; ++j) {
      const auto k = 5 * (i + 2) + (j + 2);
      for (int c = 0; c < d; c += 2) {
        means(k, c) = 8.0 * i;
        means(k, c + 1) = 8.0 * j;
      }
    }
  }
  return GaussianMixture(std::move(means), Vector::Zero(25), 1.0);
}

inline Eigen::Index toy_component_index(int i, int j) { return 5 * (i + 2) + (j + 2); }

/// One evaluation of the diffused prior's score, with the intermediate
/// responsibilities kept so Jacobian products need no further evaluation.
struct ScoreEvaluation {
  Vector score;
  Vector responsibilities;  // posterior component probabilities given x_t
  Vector weighted_mean;     // sum_k r_k U_k
  double alpha_bar = 1.0;
};

namespace detail {
inline void require_isotropic(const GaussianMixture& prior) {
  if (!prior.is_isotropic())
    throw std::invalid_argument("diffused mixture requires isotropic component covariance");
}
// Variance of each diffused component: alpha_bar * c + (1 - alpha_bar).
inline double diffused_variance(double c, double alpha_bar) {
  return alpha_bar * c + (1.0 - alpha_bar);
}
}  // namespace detail

/// Score of p_t = sum_k w_k N(sqrt(ab) U_k, (ab c + 1 - ab) I) at x_t.
inline ScoreEvaluation evaluate_score(const GaussianMixture& prior, const Vector& x_t, double alpha_bar) {
  detail::require_isotropic(prior);
  if (x_t.size() != prior.dim()) throw std::invalid_argument("score: dimension mismatch");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw std::invalid_argument("score: alpha_bar outside [0, 1]");
  const double v = detail::diffused_variance(prior.isotropic_variance(), alpha_bar);
  const double root = std::sqrt(alpha_bar);
  const Matrix& u = prior.means();
  const auto k_count = prior.size();

  ScoreEvaluation ev;
  ev.alpha_bar = alpha_bar;
  ev.responsibilities.resize(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const double dist2 = (x_t.transpose() - root * u.row(k)).squaredNorm();
    ev.responsibilities[k] = prior.log_weights()[k] - 0.5 * dist2 / v;
  }
  const double lse = logsumexp(ev.responsibilities);
  ev.responsibilities = (ev.responsibilities.array() - lse).exp().matrix();
  ev.weighted_mean = u.transpose() * ev.responsibilities;
  ev.score = (root * ev.weighted_mean - x_t) / v;
  return ev;
}

inline Vector smoothed_score(const GaussianMixture& prior, const Vector& x_t, double alpha_bar) {
  return evaluate_score(prior, x_t, alpha_bar).score;
}

/// log p_t(x_t) for the diffused isotropic mixture.
inline double smoothed_log_density(const GaussianMixture& prior, const Vector& x_t, double alpha_bar) {
  detail::require_isotropic(prior);
  const double v = detail::diffused_variance(prior.isotropic_variance(), alpha_bar);
  GaussianMixture diffused(std::sqrt(alpha_bar) * prior.means(), prior.log_weights(), v);
  return diffused.log_pdf(x_t);
}

/// Product of the exact Tweedie Jacobian d x0_hat / d x_t with v. The matrix
/// is symmetric, so this is also the transpose product. Written in terms of the
/// responsibility-weighted covariance of the component means, which stays
/// accurate when alpha_bar is tiny.
inline Vector tweedie_jacobian_product(const GaussianMixture& prior, const ScoreEvaluation& ev, const Vector& v) {
  detail::require_isotropic(prior);
  const double c = prior.isotropic_variance();
  const double ab = ev.alpha_bar;
  const double var = detail::diffused_variance(c, ab);
  const Matrix& u = prior.means();
  // Cov_r(U) v = sum_k r_k (U_k - Ubar) ((U_k - Ubar) . v)
  const Vector proj = u * v - Vector::Constant(u.rows(), ev.weighted_mean.dot(v));
  const Vector weighted = ev.responsibilities.cwiseProduct(proj);
  const Vector cov_v = u.transpose() * weighted - ev.weighted_mean * weighted.sum();
  return (std::sqrt(ab) / var) * (c * v + ((1.0 - ab) / var) * cov_v);
}

struct ConditionalMoments {
  Vector mean;
  Matrix cov;
};

/// Exact E[x0 | x_t] and Cov(x0 | x_t) under the mixture prior.
inline ConditionalMoments conditional_moments(const GaussianMixture& prior, const Vector& x_t, double alpha_bar) {
  detail::require_isotropic(prior);
  const ScoreEvaluation ev = evaluate_score(prior, x_t, alpha_bar);
  const double c = prior.isotropic_variance();
  const double var = detail::diffused_variance(c, alpha_bar);
  const double shrink = (1.0 - alpha_bar) / var;   // weight on U_k
  const double comp_var = c * (1.0 - alpha_bar) / var;
  const auto d = prior.dim();

  ConditionalMoments out;
  out.mean = shrink * ev.weighted_mean + (c * std::sqrt(alpha_bar) / var) * x_t;
  const Matrix centered = prior.means().rowwise() - ev.weighted_mean.transpose();
  const Matrix cov_u = centered.transpose() * ev.responsibilities.asDiagonal() * centered;
  out.cov = comp_var * Matrix::Identity(d, d) + shrink * shrink * cov_u;
  return out;
}

/// Posterior of an isotropic mixture prior under y = A x0 + n, n ~ N(0, sigma^2 I):
/// components N(S (A^T y / sigma^2 + U_k / c), S), S = (I / c + A^T A / sigma^2)^-1,
/// weights proportional to w_k N(y; A U_k, sigma^2 I + c A A^T).
inline GaussianMixture exact_posterior(const GaussianMixture& prior, const Matrix& a, const Vector& y, double sigma) {
  detail::require_isotropic(prior);
  if (a.cols() != prior.dim() || a.rows() != y.size())
    throw std::invalid_argument("exact posterior: dimension mismatch");
  if (!(sigma > 0.0)) throw std::invalid_argument("exact posterior: sigma must be positive");
  const double c = prior.isotropic_variance();
  const auto d = prior.dim();
  const auto m = a.rows();
  const double s2 = sigma * sigma;

  const Matrix evidence_cov = s2 * Matrix::Identity(m, m) + c * a * a.transpose();
  Eigen::LLT<Matrix> llt(evidence_cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("exact posterior: evidence covariance is not positive definite");

  // Woodbury: S = c I - c^2 A^T (sigma^2 I + c A A^T)^-1 A
  Matrix cov = c * Matrix::Identity(d, d) - (c * c) * a.transpose() * llt.solve(a);
  cov = 0.5 * (cov + cov.transpose());

  const Vector aty = a.transpose() * y / s2;
  Matrix means(prior.size(), d);
  Vector log_w(prior.size());
  for (Eigen::Index k = 0; k < prior.size(); ++k) {
    const Vector uk = prior.mean(k);
    means.row(k) = (cov * (aty + uk / c)).transpose();
    log_w[k] = prior.log_weights()[k] + gaussian_log_pdf(y, a * uk, evidence_cov);
  }
  return GaussianMixture(std::move(means), std::move(log_w), std::move(cov));
}

inline Matrix sample_mixture(const GaussianMixture& mix, Eigen::Index n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return mix.sample(n, rng);
}

}  // namespace cadps
