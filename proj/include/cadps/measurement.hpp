#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "cadps/gmm.hpp"
#include "cadps/linalg.hpp"
#include "cadps/random.hpp"

namespace cadps {

/// y = A x_star + sigma * noise.
struct MeasurementModel {
  Matrix a;
  Vector y;
  double sigma = 1.0;
  Vector x_star;
  Vector noise;            // standard-normal draw behind y
  Vector singular_values;  // as drawn for A, empty when A was supplied directly

  Eigen::Index m() const noexcept { return a.rows(); }
  Eigen::Index d() const noexcept { return a.cols(); }
};

struct GeneratedMatrix {
  Matrix a;
  Vector singular_values;  // paired with the Gram eigenvalues in descending order
};

/// Random m x d operator: left/right singular vectors of a Gaussian seed
/// matrix, singular values redrawn i.i.d. Uniform(0, 1]. The SVD comes from
/// the eigendecomposition of the m x m Gram matrix.
inline GeneratedMatrix generate_measurement_matrix(int d, int m, std::uint64_t seed) {
  if (m < 1 || d < 1) throw std::invalid_argument("measurement matrix: sizes must be positive");
  if (m > d) throw std::invalid_argument("measurement matrix: m must not exceed d");
  Rng rng = make_rng(seed);
  Matrix seed_matrix(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) seed_matrix(i, j) = standard_normal(rng);

  const Eigensystem gram = spd_eigendecomposition(seed_matrix * seed_matrix.transpose());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeneratedMatrix out{Matrix::Zero(m, d), Vector(m)};
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    while (s == 0.0) s = unit(rng);
    out.singular_values[i] = s;
    const double root = std::sqrt(gram.eigenvalues[i]);
    if (!(root > 0.0)) throw NumericalError("measurement matrix: rank-deficient seed matrix");
    const Vector u = gram.eigenvectors.col(i);
    const Vector v = seed_matrix.transpose() * u / root;
    out.a.noalias() += s * u * v.transpose();
  }
  return out;
}

/// Draws x_star from the prior and observes it through A with noise level sigma.
inline MeasurementModel generate_observation(const Matrix& a, const GaussianMixture& prior, double sigma,
                                             std::uint64_t seed) {
  if (a.cols() != prior.dim()) throw std::invalid_argument("observation: A and prior dimensions differ");
  if (!(sigma > 0.0)) throw std::invalid_argument("observation: sigma must be positive");
  Rng rng = make_rng(seed);
  MeasurementModel meas;
  meas.a = a;
  meas.sigma = sigma;
  meas.x_star = prior.sample(1, rng).row(0).transpose();
  meas.noise = standard_normal_vector(a.rows(), rng);
  meas.y = a * meas.x_star + sigma * meas.noise;
  return meas;
}

/// y - A x
inline Vector residual(const MeasurementModel& meas, const Vector& x0_hat) {
  if (x0_hat.size() != meas.d()) throw std::invalid_argument("residual: dimension mismatch");
  return meas.y - meas.a * x0_hat;
}

inline GaussianMixture exact_posterior(const GaussianMixture& prior, const MeasurementModel& meas) {
  return exact_posterior(prior, meas.a, meas.y, meas.sigma);
}

}  // namespace cadps
