#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "cadps/gmm.hpp"
#include "cadps/random.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace {

using cadps::GaussianMixture;
using cadps::Matrix;
using cadps::Vector;

GaussianMixture standard_normal_prior(int d) { return GaussianMixture(Matrix::Zero(1, d), Vector::Zero(1), 1.0); }

TEST(ToyPrior, LatticeMeans) {
  const auto p = cadps::build_toy_prior(2);
  ASSERT_EQ(p.size(), 25);
  ASSERT_EQ(p.dim(), 2);
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) {
      const Vector u = p.mean(cadps::toy_component_index(i, j));
      EXPECT_EQ(u[0], 8.0 * i);
      EXPECT_EQ(u[1], 8.0 * j);
    }
  EXPECT_EQ(p.mean(cadps::toy_component_index(0, 0)).norm(), 0.0);
  EXPECT_NEAR(p.weights().sum(), 1.0, 1e-14);
  EXPECT_NEAR(p.weights()[7], 1.0 / 25.0, 1e-15);
  EXPECT_EQ(p.isotropic_variance(), 1.0);
}

TEST(ToyPrior, RepetitionPatternInEightDimensions) {
  const auto p = cadps::build_toy_prior(8);
  const Vector u = p.mean(cadps::toy_component_index(2, -1));
  const Vector expected = (Vector(8) << 16, -8, 16, -8, 16, -8, 16, -8).finished();
  EXPECT_EQ(u, expected);
}

TEST(ToyPrior, OddDimensionRejected) {
  EXPECT_THROW(cadps::build_toy_prior(3), std::invalid_argument);
  EXPECT_THROW(cadps::build_toy_prior(0), std::invalid_argument);
}

TEST(Mixture, LogWeightsNormalized) {
  const GaussianMixture g(Matrix::Zero(3, 2), (Vector(3) << 5.0, 1.0, -2.0).finished(), 2.0);
  EXPECT_NEAR(cadps::logsumexp(g.log_weights()), 0.0, 1e-14);
  EXPECT_THROW(GaussianMixture(Matrix::Zero(2, 2), Vector::Zero(3), 1.0), std::invalid_argument);
  EXPECT_THROW(GaussianMixture(Matrix::Zero(2, 2), Vector::Zero(2), 0.0), std::invalid_argument);
}

TEST(Score, StandardNormalPriorIsMinusX) {
  const auto p = standard_normal_prior(3);
  const Vector x = (Vector(3) << 0.3, -1.2, 2.0).finished();
  for (double ab : {0.0, 0.1, 0.5, 1.0}) EXPECT_LT((cadps::smoothed_score(p, x, ab) + x).norm(), 1e-14);
}

TEST(Score, VanishesAtLatticeCentre) {
  const auto p = cadps::build_toy_prior(2);
  EXPECT_LT(cadps::smoothed_score(p, Vector::Zero(2), 0.5).norm(), 1e-14);
}

TEST(Score, MatchesFiniteDifferenceOfLogDensity) {
  const auto p = cadps::build_toy_prior(2);
  const Vector x = Vector::Ones(2);
  const auto f = [&](const Vector& v) { return cadps::smoothed_log_density(p, v, 0.5); };
  const Vector fd = cadps::testing::numeric_gradient(f, x, 1e-5);
  EXPECT_LT((cadps::smoothed_score(p, x, 0.5) - fd).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Score, RandomPointsMatchFiniteDifference) {
  const auto p = cadps::build_toy_prior(4);
  cadps::Rng rng = cadps::make_rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const double ab = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
    const Vector x = 6.0 * cadps::standard_normal_vector(4, rng);
    const auto f = [&](const Vector& v) { return cadps::smoothed_log_density(p, v, ab); };
    EXPECT_LT((cadps::smoothed_score(p, x, ab) - cadps::testing::numeric_gradient(f, x)).norm(), 1e-5);
  }
}

TEST(ConditionalMoments, ScalarGaussianByHand) {
  const auto p = standard_normal_prior(1);
  const auto cm = cadps::conditional_moments(p, Vector::Constant(1, 2.0), 0.5);
  EXPECT_NEAR(cm.mean[0], std::sqrt(0.5) * 2.0, 1e-14);
  EXPECT_NEAR(cm.cov(0, 0), 0.5, 1e-14);
}

TEST(ConditionalMoments, NoiselessLimit) {
  const auto p = cadps::build_toy_prior(2);
  const Vector x = (Vector(2) << 3.0, -5.0).finished();
  const auto cm = cadps::conditional_moments(p, x, 1.0 - 1e-12);
  EXPECT_LT((cm.mean - x).norm(), 1e-9);
  EXPECT_LT(cm.cov.norm(), 1e-9);
}

TEST(ConditionalMoments, MatchImportanceSamplingEstimate) {
  const auto p = cadps::build_toy_prior(2);
  const double ab = 0.3;
  const Vector xt = Vector::Constant(2, 4.0);
  cadps::Rng rng = cadps::make_rng(2024);
  const int n = 1'000'000;
  const Matrix draws = p.sample(n, rng);
  Vector logw(n);
  for (int i = 0; i < n; ++i)
    logw[i] = -0.5 * (xt - std::sqrt(ab) * draws.row(i).transpose()).squaredNorm() / (1.0 - ab);
  const Vector w = (logw.array() - cadps::logsumexp(logw)).exp().matrix();
  const Vector mean = draws.transpose() * w;
  const Matrix centred = draws.rowwise() - mean.transpose();
  const Matrix cov = centred.transpose() * w.asDiagonal() * centred;

  const auto cm = cadps::conditional_moments(p, xt, ab);
  for (int j = 0; j < 2; ++j) {
    // Delta-method standard error of the self-normalized estimate.
    const double se = std::sqrt((w.array().square() * centred.col(j).array().square()).sum());
    EXPECT_NEAR(mean[j], cm.mean[j], 3.0 * se + 1e-12) << j;
    for (int k = 0; k < 2; ++k) {
      const Eigen::ArrayXd term = centred.col(j).array() * centred.col(k).array() - cov(j, k);
      const double se_cov = std::sqrt((w.array().square() * term.square()).sum());
      EXPECT_NEAR(cov(j, k), cm.cov(j, k), 3.0 * se_cov + 1e-12) << j << "," << k;
    }
  }
}

TEST(ConditionalMoments, CovarianceIsSymmetricPsd) {
  const auto p = cadps::build_toy_prior(6);
  cadps::Rng rng = cadps::make_rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const double ab = std::uniform_real_distribution<double>(1e-4, 0.9999)(rng);
    const Vector x = 10.0 * cadps::standard_normal_vector(6, rng);
    const auto cm = cadps::conditional_moments(p, x, ab);
    EXPECT_LT((cm.cov - cm.cov.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cm.cov);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(Tweedie, AnalyticScoreGivesConditionalMean) {
  const auto p = cadps::build_toy_prior(8);
  cadps::Rng rng = cadps::make_rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const double ab = std::uniform_real_distribution<double>(1e-3, 0.999)(rng);
    const Vector x = std::sqrt(ab) * p.sample(1, rng).row(0).transpose() +
                     std::sqrt(1.0 - ab) * cadps::standard_normal_vector(8, rng);
    const Vector s = cadps::smoothed_score(p, x, ab);
    const Vector tweedie = (x + (1.0 - ab) * s) / std::sqrt(ab);
    EXPECT_LT((tweedie - cadps::conditional_moments(p, x, ab).mean).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Corollary, FiniteDifferenceHessianGivesConditionalCovariance) {
  const auto p = cadps::build_toy_prior(4);
  cadps::Rng rng = cadps::make_rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const double ab = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    const Vector x = std::sqrt(ab) * p.sample(1, rng).row(0).transpose() +
                     std::sqrt(1.0 - ab) * cadps::standard_normal_vector(4, rng);
    const Matrix cov = cadps::oracle::corollary_covariance(p, x, ab);
    EXPECT_LT((cov - cadps::conditional_moments(p, x, ab).cov).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(TweedieJacobian, MatchesFiniteDifferenceOfConditionalMean) {
  const auto p = cadps::build_toy_prior(4);
  cadps::Rng rng = cadps::make_rng(12);
  for (double ab : {1e-6, 0.01, 0.3, 0.9}) {
    const Vector x = std::sqrt(ab) * p.sample(1, rng).row(0).transpose() +
                     std::sqrt(1.0 - ab) * cadps::standard_normal_vector(4, rng);
    const auto ev = cadps::evaluate_score(p, x, ab);
    const auto mean = [&](const Vector& v) { return cadps::conditional_moments(p, v, ab).mean; };
    const Matrix fd = cadps::testing::numeric_jacobian(mean, x, 1e-5);
    Matrix analytic(4, 4);
    for (int j = 0; j < 4; ++j) analytic.col(j) = cadps::tweedie_jacobian_product(p, ev, Vector::Unit(4, j));
    EXPECT_LT((analytic - fd).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, fd.cwiseAbs().maxCoeff())) << ab;
    // Jacobian equals sqrt(ab) / (1 - ab) * Cov(x0 | x_t).
    const Matrix from_cov = std::sqrt(ab) / (1.0 - ab) * cadps::conditional_moments(p, x, ab).cov;
    EXPECT_LT((analytic - from_cov).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, from_cov.cwiseAbs().maxCoeff()));
  }
}

TEST(ExactPosterior, ZeroOperatorReturnsPrior) {
  const auto p = cadps::build_toy_prior(2);
  const auto post = cadps::exact_posterior(p, Matrix::Zero(1, 2), Vector::Constant(1, 3.0), 0.5);
  EXPECT_LT((post.means() - p.means()).norm(), 1e-12);
  EXPECT_LT((post.weights() - p.weights()).norm(), 1e-12);
  EXPECT_LT((post.covariance() - Matrix::Identity(2, 2)).norm(), 1e-12);
}

TEST(ExactPosterior, ScalarConjugateUpdate) {
  const auto p = standard_normal_prior(1);
  const auto post = cadps::exact_posterior(p, Matrix::Identity(1, 1), Vector::Constant(1, 2.0), 1.0);
  EXPECT_NEAR(post.mean(0)[0], 1.0, 1e-14);
  EXPECT_NEAR(post.covariance()(0, 0), 0.5, 1e-14);
}

TEST(ExactPosterior, WeightsNormalized) {
  const auto p = cadps::build_toy_prior(8);
  cadps::Rng rng = cadps::make_rng(4);
  const Matrix a = cadps::testing::random_matrix(3, 8, rng);
  const auto post = cadps::exact_posterior(p, a, cadps::standard_normal_vector(3, rng), 0.1);
  EXPECT_NEAR(cadps::logsumexp(post.log_weights()), 0.0, 1e-12);
}

TEST(ExactPosterior, MatchesGridQuadrature) {
  const auto p = cadps::build_toy_prior(2);
  cadps::Rng rng = cadps::make_rng(77);
  const Matrix a = cadps::testing::random_matrix(1, 2, rng) * 0.5;
  const Vector x_star = p.sample(1, rng).row(0).transpose();
  const Vector y = a * x_star + 0.1 * cadps::standard_normal_vector(1, rng);
  const auto post = cadps::exact_posterior(p, a, y, 0.1);
  EXPECT_LE(cadps::oracle::posterior_grid_tv(p, a, y, 0.1, post, 400, -24.0, 24.0), 1e-3);
}

TEST(Sampling, StandardNormalMean) {
  const auto p = standard_normal_prior(3);
  const Matrix s = cadps::sample_mixture(p, 100'000, 5);
  EXPECT_LT(s.colwise().mean().cwiseAbs().maxCoeff(), 0.02);
}

TEST(Sampling, DegenerateWeights) {
  Matrix means(2, 1);
  means << -100.0, 100.0;
  const Vector logw = (Vector(2) << -std::numeric_limits<double>::infinity(), 0.0).finished();
  const GaussianMixture g(means, logw, 1.0);
  const Matrix s = cadps::sample_mixture(g, 1000, 1);
  EXPECT_GT(s.minCoeff(), 90.0);
}

TEST(Sampling, LatticeFrequencies) {
  const auto p = cadps::build_toy_prior(2);
  const int n = 25'000;
  const Matrix s = cadps::sample_mixture(p, n, 31);
  std::vector<int> counts(25, 0);
  for (int i = 0; i < n; ++i) {
    const int ci = static_cast<int>(std::lround(s(i, 0) / 8.0));
    const int cj = static_cast<int>(std::lround(s(i, 1) / 8.0));
    ++counts[static_cast<std::size_t>(cadps::toy_component_index(ci, cj))];
  }
  const double expected = n / 25.0;
  const double sd = std::sqrt(n * (1.0 / 25.0) * (24.0 / 25.0));
  for (int c : counts) EXPECT_NEAR(c, expected, 3.0 * sd);
}

TEST(Sampling, DeterministicUnderSeed) {
  const auto p = cadps::build_toy_prior(4);
  EXPECT_EQ(cadps::sample_mixture(p, 50, 9), cadps::sample_mixture(p, 50, 9));
  EXPECT_NE(cadps::sample_mixture(p, 50, 9), cadps::sample_mixture(p, 50, 10));
}

}  // namespace
