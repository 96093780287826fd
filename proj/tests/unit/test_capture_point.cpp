#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pushrec/capture_point.hpp"

using namespace pushrec;

namespace {

const CpParams kValkyrie{1.1, 9.81, 137.0};

// RK4 on the linear inverted pendulum x'' = g/z (x - p) with the foot at p.
std::pair<double, double> simulate_lipm(double x, double v, double p, const CpParams& cp, double horizon) {
  const double w2 = cp.gravity / cp.com_height;
  const double h = 1e-4;
  const int steps = static_cast<int>(horizon / h);
  for (int i = 0; i < steps; ++i) {
    auto acc = [&](double xx) { return w2 * (xx - p); };
    const double k1x = v, k1v = acc(x);
    const double k2x = v + 0.5 * h * k1v, k2v = acc(x + 0.5 * h * k1x);
    const double k3x = v + 0.5 * h * k2v, k3v = acc(x + 0.5 * h * k2x);
    const double k4x = v + h * k3v, k4v = acc(x + h * k3x);
    x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
    v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
  }
  return {x, v};
}

}  // namespace

TEST(CapturePoint, AtRestUnderCom) { EXPECT_EQ(capture_point(0.0, 0.0, kValkyrie), 0.0); }

TEST(CapturePoint, DirectEvaluation) {
  // 0.5 * sqrt(1.1 / 9.81)
  EXPECT_NEAR(capture_point(0.0, 0.5, kValkyrie), 0.1674294, 1e-7);
}

TEST(CapturePoint, PendulumComesToRestOverCapturePoint) {
  const double cp = capture_point(0.0, 0.5, kValkyrie);
  const auto [x, v] = simulate_lipm(0.0, 0.5, cp, kValkyrie, 3.0);
  EXPECT_NEAR(x, cp, 1e-4);
  EXPECT_NEAR(v, 0.0, 1e-3);
  // Stepping short of it lets the pendulum run away.
  const auto [x2, v2] = simulate_lipm(0.0, 0.5, 0.9 * cp, kValkyrie, 3.0);
  EXPECT_GT(v2, 0.1);
  (void)x2;
}

TEST(CapturePoint, OffsetProportionalToVelocity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const double k = capture_point(0.0, 1.0, kValkyrie);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng), v = u(rng);
    EXPECT_NEAR(capture_point(x, v, kValkyrie) - x, k * v, 1e-12);
  }
}

TEST(MaxRejectableImpulse, ValkyrieNumbers) {
  EXPECT_NEAR(max_rejectable_impulse(kValkyrie, 0.13), 53.2, 0.05);
  EXPECT_NEAR(max_rejectable_impulse(kValkyrie, 0.19), 77.7, 0.05);
  EXPECT_NEAR(max_rejectable_impulse(kValkyrie, 0.13), 53.0, 0.53);
  EXPECT_NEAR(max_rejectable_impulse(kValkyrie, 0.19), 78.0, 0.78);
  EXPECT_EQ(max_rejectable_impulse(kValkyrie, 0.0), 0.0);
  EXPECT_THROW(max_rejectable_impulse(kValkyrie, -0.1), ConfigError);
}

TEST(MaxRejectableImpulse, LinearInMassAndMargin) {
  const double j = max_rejectable_impulse(kValkyrie, 0.1);
  CpParams heavy = kValkyrie;
  heavy.mass *= 2.5;
  EXPECT_NEAR(max_rejectable_impulse(heavy, 0.1), 2.5 * j, 1e-12);
  EXPECT_NEAR(max_rejectable_impulse(kValkyrie, 0.3), 3.0 * j, 1e-12);
}

TEST(MaxRejectableImpulse, DecreasesWithComHeight) {
  double prev = std::numeric_limits<double>::infinity();
  for (double z = 0.3; z < 2.0; z += 0.05) {
    CpParams p = kValkyrie;
    p.com_height = z;
    const double j = max_rejectable_impulse(p, 0.13);
    EXPECT_LT(j, prev);
    prev = j;
  }
}

TEST(DesiredComVelocity, Examples) {
  EXPECT_EQ(desired_com_velocity(0.2, 0.2, kValkyrie), 0.0);
  EXPECT_NEAR(desired_com_velocity(0.0, 0.1, kValkyrie), 0.29863, 5e-6);
  EXPECT_LT(desired_com_velocity(0.15, 0.1, kValkyrie), 0.0);
}

TEST(DesiredComVelocity, RoundTripThroughCapturePoint) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng), c = u(rng);
    EXPECT_NEAR(capture_point(x, desired_com_velocity(x, c, kValkyrie), kValkyrie), c, 1e-12);
  }
}
