// Copyright (c) 2026, the pvrnn authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "pvrnn/free_energy.hpp"
#include "support.hpp"

using namespace pvrnn;
using pvrnn::test::random_adaptive;
using pvrnn::test::random_observations;
using pvrnn::test::uniform_matrix;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// KL(q || p) by direct integration of q (log q - log p).
double kl_quadrature(double mq, double sq, double mp, double sp) {
  auto log_normal = [](double z, double m, double s) {
    const double u = (z - m) / s;
    return -0.5 * u * u - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
  };
  auto f = [&](double z) {
    const double lq = log_normal(z, mq, sq);
    return std::exp(lq) * (lq - log_normal(z, mp, sp));
  };
  using boost::math::quadrature::gauss_kronrod;
  return gauss_kronrod<double, 61>::integrate(f, mq - 20.0 * sq, mq + 20.0 * sq, 15, 1e-14);
}

struct Fixture {
  NetworkTopology topo = NetworkTopology::tiny(4);
  Parameters params = init_parameters(topo, 3);
  int T = 9;
  Rng rng{17};
  AdaptivePosterior adaptive = random_adaptive(topo, T, rng);
  NoiseBlock noise = draw_noise(topo, T, rng);
  Observations x = random_observations(topo, T, rng);
  Trajectory tr = forward_sequence(params, topo, &adaptive, T, noise);
};

}  // namespace

// ---------------------------------------------------------------------------
// Accuracy

TEST(AccuracyTerm, PerfectPredictionIsZero) {
  const Eigen::VectorXd x = vec({0.1, -0.4, 0.9});
  EXPECT_EQ(accuracy_term(x, x, Eigen::ArrayXd::Ones(3)), 0.0);
}

TEST(AccuracyTerm, SingleDimensionArithmetic) {
  EXPECT_NEAR(accuracy_term(vec({0.9}), vec({-0.9}), Eigen::ArrayXd::Ones(1)), 1.62, 1e-15);
}

TEST(AccuracyTerm, DividesByFullDimensionality) {
  const Eigen::VectorXd x = vec({0.5, 0.5, 0.5, 0.5});
  const Eigen::VectorXd y = vec({0.0, 0.0, 0.0, 0.0});
  Eigen::ArrayXd mask = Eigen::ArrayXd::Zero(4);
  mask[1] = 1.0;
  EXPECT_DOUBLE_EQ(accuracy_term(x, y, mask), 0.5 * 0.25 / 4.0);
}

TEST(AccuracyTerm, ShapeMismatchThrows) {
  EXPECT_THROW(accuracy_term(vec({0.1, 0.2}), vec({0.1}), Eigen::ArrayXd::Ones(2)), ShapeError);
  EXPECT_THROW(accuracy_term(vec({0.1, 0.2}), vec({0.1, 0.3}), Eigen::ArrayXd::Ones(3)), ShapeError);
}

TEST(AccuracyTerm, MaskingVisionLeavesProprioception) {
  const NetworkTopology topo = NetworkTopology::tiny(3);
  Rng rng(2);
  const Observations x = random_observations(topo, 1, rng);
  Prediction p;
  p.extero = uniform_matrix(topo.extero_dims(), 1, -0.9, 0.9, rng);
  p.proprio = uniform_matrix(topo.proprio_dims, 1, -0.9, 0.9, rng);
  LatentMoments q;
  for (int m = 0; m < kNumModules; ++m) {
    q.mu[m] = Eigen::VectorXd::Zero(3);
    q.sigma[m] = Eigen::VectorXd::Ones(3);
  }
  const FreeEnergyTerms full = step_free_energy(x, p, q, q, ObservationMask::all(topo, 1), 0, 0.005);
  const FreeEnergyTerms blind = step_free_energy(x, p, q, q, ObservationMask::resolutions(topo, 1, {}, true), 0, 0.005);
  EXPECT_EQ(blind.accuracy_extero, 0.0);
  EXPECT_GT(full.accuracy_extero, 0.0);
  EXPECT_EQ(blind.accuracy_proprio, full.accuracy_proprio);
}

TEST(AccuracyTerm, MaskMonotonicity) {
  Rng rng(5);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::VectorXd x = uniform_matrix(20, 1, -0.9, 0.9, rng);
    const Eigen::VectorXd y = uniform_matrix(20, 1, -1.0, 1.0, rng);
    Eigen::ArrayXd a(20), b(20);
    for (int i = 0; i < 20; ++i) {
      a[i] = coin(rng) ? 1.0 : 0.0;
      b[i] = a[i] > 0.0 || coin(rng) ? 1.0 : 0.0;
    }
    ASSERT_LE(accuracy_term(x, y, a), accuracy_term(x, y, b));
  }
}

// Dyadic values keep every sum exact, so duplication must agree bitwise.
TEST(AccuracyTerm, DuplicationInvarianceIsExact) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> k(-57, 57);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 40;
    Eigen::VectorXd x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = k(rng) / 64.0;
      y[i] = k(rng) / 64.0;
    }
    Eigen::VectorXd x2(2 * n), y2(2 * n);
    x2 << x, x;
    y2 << y, y;
    ASSERT_EQ(accuracy_term(x, y, Eigen::ArrayXd::Ones(n)), accuracy_term(x2, y2, Eigen::ArrayXd::Ones(2 * n)));
  }
}

TEST(AccuracyTerm, DuplicationInvarianceOnGeneralValues) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd x = uniform_matrix(31, 1, -0.9, 0.9, rng), y = uniform_matrix(31, 1, -1.0, 1.0, rng);
    Eigen::VectorXd x2(62), y2(62);
    x2 << x, x;
    y2 << y, y;
    const double a = accuracy_term(x, y, Eigen::ArrayXd::Ones(31));
    ASSERT_NEAR(accuracy_term(x2, y2, Eigen::ArrayXd::Ones(62)), a, 1e-15 * a);
  }
}

// ---------------------------------------------------------------------------
// Complexity

TEST(ComplexityTerm, IdenticalMomentsGiveZeroExactly) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd mu = uniform_matrix(7, 1, -1.0, 1.0, rng);
    const Eigen::VectorXd sigma = uniform_matrix(7, 1, 0.01, 5.0, rng);
    ASSERT_EQ(complexity_term(mu, sigma, mu, sigma), 0.0);
  }
}

TEST(ComplexityTerm, UnitShiftGivesHalf) {
  EXPECT_NEAR(complexity_term(vec({1.0}), vec({1.0}), vec({0.0}), vec({1.0})), 0.5, 1e-12);
}

TEST(ComplexityTerm, MatchesQuadrature) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> mu(-1.0, 1.0), sigma(0.2, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double mq = mu(rng), sq = sigma(rng), mp = mu(rng), sp = sigma(rng);
    const double analytic = complexity_term(vec({mq}), vec({sq}), vec({mp}), vec({sp}));
    EXPECT_LT(std::abs(analytic - kl_quadrature(mq, sq, mp, sp)), 1e-6) << mq << " " << sq << " " << mp << " " << sp;
  }
}

TEST(ComplexityTerm, DividesByLatentSize) {
  const double one = complexity_term(vec({0.3}), vec({0.7}), vec({-0.2}), vec({1.4}));
  const double two = complexity_term(vec({0.3, 0.0}), vec({0.7, 1.0}), vec({-0.2, 0.0}), vec({1.4, 1.0}));
  EXPECT_NEAR(two, one / 2.0, 1e-15);
}

TEST(ComplexityTerm, NonNegativeOnRandomMoments) {
  Rng rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::VectorXd mq = uniform_matrix(5, 1, -1.0, 1.0, rng), mp = uniform_matrix(5, 1, -1.0, 1.0, rng);
    const Eigen::VectorXd sq = uniform_matrix(5, 1, -8.0, 8.0, rng).array().exp().matrix();
    const Eigen::VectorXd sp = uniform_matrix(5, 1, -8.0, 8.0, rng).array().exp().matrix();
    ASSERT_GE(complexity_term(mq, sq, mp, sp), 0.0);
  }
}

TEST(ComplexityTerm, RejectsBadMoments) {
  EXPECT_THROW(complexity_term(vec({std::nan("")}), vec({1.0}), vec({0.0}), vec({1.0})), NumericError);
  EXPECT_THROW(complexity_term(vec({0.0}), vec({INFINITY}), vec({0.0}), vec({1.0})), NumericError);
  EXPECT_THROW(complexity_term(vec({0.0}), vec({0.0}), vec({0.0}), vec({1.0})), NumericError);
  EXPECT_THROW(complexity_term(vec({0.0, 1.0}), vec({1.0}), vec({0.0}), vec({1.0})), ShapeError);
}

// ---------------------------------------------------------------------------
// Step, sequence and window

TEST(StepFreeEnergy, ZeroMetaPriorLeavesAccuracyOnly) {
  Fixture f;
  const auto terms = trajectory_free_energy(f.tr, f.x, ObservationMask::all(f.topo, f.T), 0.0);
  for (const auto& s : terms) {
    EXPECT_EQ(s.total, s.accuracy());
    EXPECT_GT(s.complexity_sum(), 0.0);
  }
}

TEST(StepFreeEnergy, PerfectFitWithPosteriorEqualToPrior) {
  const NetworkTopology topo = NetworkTopology::tiny(3);
  Rng rng(11);
  const Observations x = random_observations(topo, 1, rng);
  Prediction p{x.extero.col(0), x.proprio.col(0), {}, {}};
  LatentMoments q;
  for (int m = 0; m < kNumModules; ++m) {
    q.mu[m] = uniform_matrix(3, 1, -0.5, 0.5, rng);
    q.sigma[m] = uniform_matrix(3, 1, 0.5, 2.0, rng);
  }
  EXPECT_EQ(step_free_energy(x, p, q, q, ObservationMask::all(topo, 1), 0, 0.005).total, 0.0);
}

TEST(StepFreeEnergy, WeightedSumMatchesScalarArithmetic) {
  Fixture f;
  const auto terms = trajectory_free_energy(f.tr, f.x, ObservationMask::all(f.topo, f.T), 0.005);
  for (int t = 0; t < f.T; ++t) {
    double ax = 0.0, ap = 0.0;
    for (Eigen::Index i = 0; i < f.x.extero.rows(); ++i) {
      const double e = f.x.extero(i, t) - f.tr.extero.output(i, t);
      ax += 0.5 * e * e;
    }
    for (Eigen::Index i = 0; i < f.x.proprio.rows(); ++i) {
      const double e = f.x.proprio(i, t) - f.tr.proprio.output(i, t);
      ap += 0.5 * e * e;
    }
    const double A = ax / static_cast<double>(f.x.extero.rows()) + ap / static_cast<double>(f.x.proprio.rows());
    double C = 0.0;
    for (int m = 0; m < kNumModules; ++m) {
      const auto& mt = f.tr.modules[m];
      double kl = 0.0;
      for (Eigen::Index i = 0; i < mt.mu_q.rows(); ++i) {
        const double sq = mt.sigma_q(i, t), sp = mt.sigma_p(i, t), dm = mt.mu_p(i, t) - mt.mu_q(i, t);
        kl += std::log(sp / sq) + (dm * dm + sq * sq) / (2.0 * sp * sp) - 0.5;
      }
      C += kl / static_cast<double>(mt.mu_q.rows());
    }
    EXPECT_NEAR(terms[static_cast<std::size_t>(t)].total, A + 0.005 * C, 1e-13);
  }
}

TEST(StepFreeEnergy, MatchesTrajectoryTerms) {
  Fixture f;
  const ObservationMask mask = ObservationMask::all(f.topo, f.T);
  const auto terms = trajectory_free_energy(f.tr, f.x, mask, 0.005);
  for (int t = 0; t < f.T; ++t) {
    LatentMoments q, p;
    for (int m = 0; m < kNumModules; ++m) {
      q.mu[m] = f.tr.modules[m].mu_q.col(t);
      q.sigma[m] = f.tr.modules[m].sigma_q.col(t);
      p.mu[m] = f.tr.modules[m].mu_p.col(t);
      p.sigma[m] = f.tr.modules[m].sigma_p.col(t);
    }
    const FreeEnergyTerms s = step_free_energy(f.x, f.tr.prediction_at(t), q, p, mask, t, 0.005);
    EXPECT_EQ(s.total, terms[static_cast<std::size_t>(t)].total);
  }
}

TEST(TrajectoryFreeEnergy, LengthMismatchThrows) {
  Fixture f;
  Rng rng(1);
  EXPECT_THROW(trajectory_free_energy(f.tr, random_observations(f.topo, f.T - 1, rng), ObservationMask::all(f.topo, f.T), 0.005),
               ShapeError);
  EXPECT_THROW(trajectory_free_energy(f.tr, f.x, ObservationMask::all(f.topo, f.T + 1), 0.005), ShapeError);
}

TEST(SequenceFreeEnergy, SingleStepEqualsStepValue) {
  Fixture f;
  const Trajectory one = forward_sequence(f.params, f.topo, &f.adaptive, 1, f.noise);
  const auto terms = trajectory_free_energy(one, f.x.slice(0, 1), ObservationMask::all(f.topo, 1), 0.005);
  EXPECT_EQ(sequence_free_energy(terms), terms[0].total);
}

TEST(SequenceFreeEnergy, ConcatenationAdditivity) {
  Fixture f;
  const auto terms = trajectory_free_energy(f.tr, f.x, ObservationMask::all(f.topo, f.T), 0.005);
  const double full = sequence_free_energy(terms);
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const std::vector<FreeEnergyTerms> head(terms.begin(), terms.begin() + static_cast<std::ptrdiff_t>(k));
    const std::vector<FreeEnergyTerms> tail(terms.begin() + static_cast<std::ptrdiff_t>(k), terms.end());
    EXPECT_NEAR(sequence_free_energy(head) + sequence_free_energy(tail), full, 1e-14 * std::abs(full));
    EXPECT_NEAR(sum_terms(terms, 0, k).total + sum_terms(terms, k).total, full, 1e-14 * std::abs(full));
  }
}

TEST(SequenceFreeEnergy, TwoSequenceBatchSums) {
  Fixture a;
  Fixture b;
  b.rng.seed(99);
  b.x = random_observations(b.topo, b.T, b.rng);
  const auto ta = trajectory_free_energy(a.tr, a.x, ObservationMask::all(a.topo, a.T), 0.005);
  const auto tb = trajectory_free_energy(b.tr, b.x, ObservationMask::all(b.topo, b.T), 0.005);
  std::vector<FreeEnergyTerms> batch = ta;
  batch.insert(batch.end(), tb.begin(), tb.end());
  EXPECT_NEAR(sequence_free_energy(batch), sequence_free_energy(ta) + sequence_free_energy(tb), 1e-13);
}

TEST(SlidingWindow, ShortPrefixUsesAvailableSteps) {
  const StepWindow w = sliding_window(1, 30);
  EXPECT_EQ(w.first, 1);
  EXPECT_EQ(w.last, 1);
  for (int t = 1; t < 30; ++t) EXPECT_EQ(sliding_window(t, 30).length(), t);
  EXPECT_EQ(sliding_window(45, 30).first, 16);
  EXPECT_EQ(sliding_window(45, 30).length(), 30);
}

TEST(SlidingWindow, EmptyWindowThrows) {
  EXPECT_THROW(sliding_window(0, 30), ConfigError);
  EXPECT_THROW(sliding_window(5, 0), ConfigError);
}

TEST(WindowFreeEnergy, FullAndUnitWindows) {
  Fixture f;
  const auto terms = trajectory_free_energy(f.tr, f.x, ObservationMask::all(f.topo, f.T), 0.005);
  EXPECT_EQ(window_free_energy(terms, f.T, f.T), sequence_free_energy(terms));
  EXPECT_EQ(window_free_energy(terms, 1, 30), terms[0].total);
  for (int t = 1; t <= f.T; ++t) EXPECT_EQ(window_free_energy(terms, t, 1), terms[static_cast<std::size_t>(t - 1)].total);
  EXPECT_THROW(window_free_energy(terms, f.T + 1, 3), ConfigError);
}

TEST(FreeEnergy, MaskedStepsStillCarryComplexity) {
  Fixture f;
  const auto terms = trajectory_free_energy(f.tr, f.x, ObservationMask::none(f.topo, f.T), 0.005);
  for (const auto& s : terms) {
    EXPECT_EQ(s.accuracy(), 0.0);
    EXPECT_GT(s.total, 0.0);
    EXPECT_EQ(s.total, 0.005 * s.complexity_sum());
  }
}

TEST(FreeEnergy, ZeroTotalOnlyForPerfectFitAndMatchedPosterior) {
  const NetworkTopology topo = NetworkTopology::tiny(3);
  Rng rng(12);
  const Observations x = random_observations(topo, 1, rng);
  LatentMoments q;
  for (int m = 0; m < kNumModules; ++m) {
    q.mu[m] = uniform_matrix(3, 1, -0.5, 0.5, rng);
    q.sigma[m] = uniform_matrix(3, 1, 0.5, 2.0, rng);
  }
  const ObservationMask all = ObservationMask::all(topo, 1);
  const Prediction exact{x.extero.col(0), x.proprio.col(0), {}, {}};
  EXPECT_EQ(step_free_energy(x, exact, q, q, all, 0, 0.005).total, 0.0);

  for (int trial = 0; trial < 100; ++trial) {
    Prediction off = exact;
    LatentMoments p = q;
    if (trial % 2 == 0) {
      off.proprio[trial % topo.proprio_dims] += 1e-3;
    } else {
      p.mu[trial % kNumModules][0] += 1e-3;
    }
    ASSERT_GT(step_free_energy(x, off, q, p, all, 0, 0.005).total, 0.0);
  }
}
