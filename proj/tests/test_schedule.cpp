#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cadps/schedule.hpp"

namespace {

using cadps::NoiseSchedule;

TEST(Schedule, ReferenceParametersReachPureNoise) {
  const auto s = cadps::build_linear_vp_schedule(1000, 0.1, 500.0);
  EXPECT_EQ(s.n_steps(), 1000);
  EXPECT_LE(s.alpha_bar(1000), 1e-20);
  EXPECT_LT(s.alpha_bar(1000), 1e-4);
}

TEST(Schedule, ZeroNoiseLimit) {
  const auto s = cadps::build_linear_vp_schedule(2, 1e-12, 2e-12);
  EXPECT_NEAR(s.alpha_bar(1), 1.0, 1e-11);
  EXPECT_NEAR(s.alpha_bar(2), 1.0, 1e-11);
  EXPECT_GT(s.one_minus_alpha_bar(2), 0.0);  // kept exact through expm1
}

TEST(Schedule, ConstantScheduleClosedForm) {
  const auto s = cadps::build_linear_vp_schedule(4, 0.4, 0.4);
  const double expected[] = {0.9, 0.81, 0.729, 0.6561};
  for (int t = 1; t <= 4; ++t) {
    EXPECT_NEAR(s.beta(t), 0.1, 1e-15);
    EXPECT_NEAR(s.alpha_bar(t), expected[t - 1], 1e-14);
  }
}

TEST(Schedule, BetaFormulaAndCap) {
  const int n = 200;
  const auto s = cadps::build_linear_vp_schedule(n, 0.1, 500.0);
  for (int i = 1; i <= n; ++i) {
    const double raw = (0.1 + (double(i) / n) * (500.0 - 0.1)) / n;
    EXPECT_DOUBLE_EQ(s.beta(i), std::min(raw, 0.999)) << i;
  }
  EXPECT_DOUBLE_EQ(s.beta(n), NoiseSchedule::kBetaCap);
}

TEST(Schedule, InvariantsAtReferenceResolution) {
  const auto s = cadps::build_linear_vp_schedule(1000, 0.1, 500.0);
  double prod = 1.0;
  for (int i = 1; i <= s.n_steps(); ++i) {
    EXPECT_GT(s.beta(i), 0.0);
    EXPECT_LT(s.beta(i), 1.0);
    if (i > 1) {
      EXPECT_GE(s.beta(i), s.beta(i - 1));
      EXPECT_LT(s.alpha_bar(i), s.alpha_bar(i - 1)) << i;
    }
    prod *= s.alpha(i);
    EXPECT_NEAR(s.alpha_bar(i) / prod, 1.0, 1e-12) << i;
    if (i > 1) {
      const double expect_sq = s.beta(i) * s.one_minus_alpha_bar(i - 1) / s.one_minus_alpha_bar(i);
      EXPECT_NEAR(s.sigma_tilde(i) * s.sigma_tilde(i), expect_sq, 1e-15);
    }
  }
  EXPECT_EQ(s.sigma_tilde(1), 0.0);
}

// At N = 200 the capped tail drives alpha_bar below the smallest double, so
// strict decrease can only hold in log space.
TEST(Schedule, LogAlphaBarStrictlyDecreasesWhenAlphaBarUnderflows) {
  const auto s = cadps::build_linear_vp_schedule(200, 0.1, 500.0);
  EXPECT_EQ(s.alpha_bar(200), 0.0);
  for (int i = 1; i <= 200; ++i) {
    EXPECT_LT(s.log_alpha_bar(i), s.log_alpha_bar(i - 1));
    EXPECT_LE(s.alpha_bar(i), s.alpha_bar(i - 1));
    EXPECT_TRUE(std::isfinite(s.sigma_tilde(i)));
  }
}

TEST(Schedule, OneMinusAlphaBarAvoidsCancellation) {
  const auto s = NoiseSchedule::from_betas({1e-17, 2e-17, 3e-17});
  EXPECT_NEAR(s.one_minus_alpha_bar(1), 1e-17, 1e-30);
  EXPECT_NEAR(s.one_minus_alpha_bar(3), 6e-17, 1e-30);
}

TEST(Schedule, RejectsInvalidParameters) {
  EXPECT_THROW(cadps::build_linear_vp_schedule(1, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(cadps::build_linear_vp_schedule(10, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(cadps::build_linear_vp_schedule(10, -1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(cadps::build_linear_vp_schedule(10, 2.0, 1.0), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::from_betas({0.2}), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::from_betas({0.0, 0.1}), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, 1.0}), std::invalid_argument);
}

TEST(Schedule, IndexRangeChecks) {
  const auto s = cadps::build_linear_vp_schedule(10, 0.1, 20.0);
  EXPECT_THROW(s.beta(0), std::out_of_range);
  EXPECT_THROW(s.beta(11), std::out_of_range);
  EXPECT_THROW(s.alpha_bar(-1), std::out_of_range);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_THROW(cadps::snr_sigma_sq(s, 0), std::out_of_range);
  EXPECT_THROW(cadps::snr_sigma_sq(s, 11), std::out_of_range);
}

TEST(Schedule, RebuildIsBitIdentical) {
  EXPECT_EQ(cadps::build_linear_vp_schedule(1000, 0.1, 500.0), cadps::build_linear_vp_schedule(1000, 0.1, 500.0));
}

TEST(SnrSigma, HandValues) {
  // alpha_bar = 0.5 and 0.2 through single-step schedules.
  const auto half = NoiseSchedule::from_betas({0.5, 0.5});
  EXPECT_NEAR(cadps::snr_sigma_sq(half, 1), 1.0, 1e-15);
  const auto fifth = NoiseSchedule::from_betas({0.8, 0.8});
  EXPECT_NEAR(cadps::snr_sigma_sq(fifth, 1), 4.0, 1e-14);
  const auto tiny = NoiseSchedule::from_betas({1e-300, 1e-300});
  EXPECT_NEAR(cadps::snr_sigma_sq(tiny, 1), 0.0, 1e-299);
}

TEST(SnrSigma, PigdmRadiusIdentityHoldsEverywhere) {
  const auto s = cadps::build_linear_vp_schedule(1000, 0.1, 500.0);
  for (int t = 1; t <= s.n_steps(); ++t) {
    const double sig2 = cadps::snr_sigma_sq(s, t);
    const double r2 = cadps::pigdm_r_sq(s, t);
    EXPECT_NEAR(r2, 1.0 - s.alpha_bar(t), 1e-12);
    if (std::isfinite(sig2)) {
      EXPECT_NEAR(sig2 / (1.0 + sig2), r2, 1e-12) << t;
    }
  }
}

}  // namespace
