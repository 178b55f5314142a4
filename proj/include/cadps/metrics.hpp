#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cadps/linalg.hpp"
#include "cadps/random.hpp"

namespace cadps {

struct SwConfig {
  int n_slices = 10000;
  int order = 2;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (n_slices < 1) throw std::invalid_argument("sw: n_slices must be >= 1");
    if (order != 1 && order != 2) throw std::invalid_argument("sw: order must be 1 or 2");
  }
};

/// Unit directions, one per row. Slice i depends only on (seed, i).
inline Matrix make_slices(Eigen::Index d, const SwConfig& cfg) {
  cfg.validate();
  if (d < 1) throw std::invalid_argument("sw: dimension must be >= 1");
  Matrix dirs(cfg.n_slices, d);
  for (int i = 0; i < cfg.n_slices; ++i) {
    Rng rng = make_rng(derive_seed(cfg.rng_seed, {static_cast<std::uint64_t>(i)}));
    Vector v = standard_normal_vector(d, rng);
    double norm = v.norm();
    while (!(norm > 0.0)) {
      v = standard_normal_vector(d, rng);
      norm = v.norm();
    }
    dirs.row(i) = (v / norm).transpose();
  }
  return dirs;
}

/// Sorted projections of a sample set onto every slice, one column per slice.
/// Lets one reference set be reused against several method sample sets.
inline Matrix sorted_projections(const Matrix& samples, const Matrix& slices) {
  if (samples.cols() != slices.cols()) throw std::invalid_argument("sw: dimension mismatch");
  Matrix proj = samples * slices.transpose();
  for (Eigen::Index j = 0; j < proj.cols(); ++j) std::sort(proj.col(j).begin(), proj.col(j).end());
  return proj;
}

/// (mean over slices of (1/n) sum |a_(i) - b_(i)|^p)^(1/p) from sorted projections.
inline double sliced_wasserstein_sorted(const Matrix& sorted_a, const Matrix& sorted_b, int order) {
  if (sorted_a.rows() != sorted_b.rows() || sorted_a.cols() != sorted_b.cols())
    throw std::invalid_argument("sw: projection shapes differ");
  if (order != 1 && order != 2) throw std::invalid_argument("sw: order must be 1 or 2");
  const auto n = static_cast<double>(sorted_a.rows());
  double total = 0.0;
  for (Eigen::Index j = 0; j < sorted_a.cols(); ++j) {
    const auto diff = (sorted_a.col(j) - sorted_b.col(j)).array().abs();
    total += (order == 1 ? diff.sum() : diff.square().sum()) / n;
  }
  const double mean = total / static_cast<double>(sorted_a.cols());
  return order == 1 ? mean : std::sqrt(mean);
}

inline double sliced_wasserstein(const Matrix& sample_a, const Matrix& sample_b, const Matrix& slices, int order) {
  if (sample_a.rows() != sample_b.rows()) throw std::invalid_argument("sw: sample counts differ");
  if (sample_a.rows() == 0) throw std::invalid_argument("sw: empty sample");
  if (sample_a.cols() < 1 || sample_a.cols() != sample_b.cols())
    throw std::invalid_argument("sw: dimensions must match and be >= 1");
  return sliced_wasserstein_sorted(sorted_projections(sample_a, slices), sorted_projections(sample_b, slices),
                                   order);
}

inline double sliced_wasserstein(const Matrix& sample_a, const Matrix& sample_b, const SwConfig& cfg) {
  if (sample_a.cols() < 1) throw std::invalid_argument("sw: dimension must be >= 1");
  return sliced_wasserstein(sample_a, sample_b, make_slices(sample_a.cols(), cfg), cfg.order);
}

struct ConfidenceInterval {
  double mean;
  double halfwidth;
};

/// Mean and Student-t halfwidth t_{(1+level)/2, k-1} s / sqrt(k).
inline ConfidenceInterval aggregate_ci(const std::vector<double>& values, double level = 0.95) {
  if (values.size() < 2) throw std::invalid_argument("aggregate_ci: need at least two values");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("aggregate_ci: level must lie in (0, 1)");
  const auto k = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= k;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / (k - 1.0));
  const boost::math::students_t dist(k - 1.0);
  const double q = boost::math::quantile(dist, 0.5 + 0.5 * level);
  return {mean, q * s / std::sqrt(k)};
}

}  // namespace cadps
