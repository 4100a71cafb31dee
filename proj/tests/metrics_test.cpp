#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "retinamatch/metrics.hpp"
#include "retinamatch/rng.hpp"

using namespace retina;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Control pairs whose identity-homography errors are exactly the given values
// (pure x offsets).
std::vector<ControlPair> pairs_with_errors(const std::vector<double>& errs) {
  std::vector<ControlPair> out;
  double y = 0.0;
  for (double e : errs) {
    ControlPair cp;
    cp.xq = 3.0;
    cp.yq = y;
    cp.xr = 3.0 + e;
    cp.yr = y;
    out.push_back(cp);
    y += 10.0;
  }
  return out;
}

// Step-function acceptance AUC by brute-force Riemann sum.
double auc_oracle(const std::vector<double>& errs, double max_t) {
  const int steps = 200000;
  double acc = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double t = (i + 0.5) * max_t / steps;
    size_t ok = 0;
    for (double e : errs)
      if (e <= t) ++ok;
    acc += double(ok) / double(errs.size());
  }
  return acc / steps;
}

// Exhaustive threshold-sweep EER oracle: evaluate FAR/FRR at every candidate
// threshold and take the midpoint at the smallest |FAR - FRR|.
double eer_oracle(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  std::vector<double> taus;
  taus.insert(taus.end(), genuine.begin(), genuine.end());
  taus.insert(taus.end(), impostor.begin(), impostor.end());
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  taus.push_back(taus.back() + 1.0);

  double best_gap = kInf, best = 0.0;
  for (double tau : taus) {
    size_t fa = 0, fr = 0;
    for (double s : impostor)
      if (s >= tau) ++fa;
    for (double s : genuine)
      if (s < tau) ++fr;
    const double far = double(fa) / double(impostor.size());
    const double frr = double(fr) / double(genuine.size());
    if (std::abs(far - frr) < best_gap) {
      best_gap = std::abs(far - frr);
      best = 0.5 * (far + frr);
    }
  }
  return best;
}

}  // namespace

TEST(RegistrationErrors, GroundTruthMappingIsZero) {
  Homography H = Homography::translation(4.0, -2.5);
  std::vector<ControlPair> pairs;
  Rng rng(11);
  for (int i = 0; i < 9; ++i) {
    ControlPair cp;
    cp.xq = rng.uniform(0, 100);
    cp.yq = rng.uniform(0, 100);
    const Eigen::Vector2d p = H.apply(cp.xq, cp.yq);
    cp.xr = p.x();
    cp.yr = p.y();
    pairs.push_back(cp);
  }
  const RegistrationErrors e = registration_errors(H, pairs);
  EXPECT_NEAR(e.mee, 0.0, 1e-12);
  EXPECT_NEAR(e.mae, 0.0, 1e-12);
}

TEST(RegistrationErrors, HandMedianAndMax) {
  const RegistrationErrors e =
      registration_errors(Homography::identity(), pairs_with_errors({9, 1, 2}));
  EXPECT_DOUBLE_EQ(e.mee, 2.0);
  EXPECT_DOUBLE_EQ(e.mae, 9.0);
}

TEST(RegistrationErrors, EvenCountMedianAveragesMiddleTwo) {
  const RegistrationErrors e =
      registration_errors(Homography::identity(), pairs_with_errors({9, 4, 1, 2}));
  EXPECT_DOUBLE_EQ(e.mee, 3.0);
  EXPECT_DOUBLE_EQ(e.mae, 9.0);
}

TEST(RegistrationErrors, PureTranslationOffsetGivesConstantError) {
  // True mapping is identity; H is off by a pure 5-px translation.
  Homography H = Homography::translation(3.0, 4.0);
  std::vector<ControlPair> pairs;
  for (int i = 0; i < 7; ++i) {
    ControlPair cp;
    cp.xq = 10.0 * i;
    cp.yq = 5.0 * i + 1.0;
    cp.xr = cp.xq;
    cp.yr = cp.yq;
    pairs.push_back(cp);
  }
  const RegistrationErrors e = registration_errors(H, pairs);
  EXPECT_NEAR(e.mee, 5.0, 1e-12);
  EXPECT_NEAR(e.mae, 5.0, 1e-12);
}

TEST(RegistrationErrors, EmptyListThrows) {
  EXPECT_THROW(registration_errors(Homography::identity(), {}), ConfigError);
}

TEST(ClassifyOutcome, PaperThresholdsAreStrict) {
  EXPECT_EQ(classify_outcome(true, 19.9, 49.0), RegistrationOutcome::Acceptable);
  EXPECT_EQ(classify_outcome(true, 20.0, 49.0), RegistrationOutcome::Inaccurate);
  EXPECT_EQ(classify_outcome(true, 19.9, 50.0), RegistrationOutcome::Inaccurate);
  EXPECT_EQ(classify_outcome(true, 0.0, 0.0), RegistrationOutcome::Acceptable);
  EXPECT_EQ(classify_outcome(false, 0.0, 0.0), RegistrationOutcome::Failed);
}

TEST(ClassifyOutcome, CustomThresholds) {
  EXPECT_EQ(classify_outcome(true, 1.5, 3.0, 2.0, 4.0), RegistrationOutcome::Acceptable);
  EXPECT_EQ(classify_outcome(true, 2.0, 3.0, 2.0, 4.0), RegistrationOutcome::Inaccurate);
}

TEST(ClassifyOutcome, ToStringNames) {
  EXPECT_STREQ(to_string(RegistrationOutcome::Failed), "Failed");
  EXPECT_STREQ(to_string(RegistrationOutcome::Inaccurate), "Inaccurate");
  EXPECT_STREQ(to_string(RegistrationOutcome::Acceptable), "Acceptable");
}

TEST(AcceptanceAuc, AllZeroErrorsGiveOne) {
  EXPECT_DOUBLE_EQ(acceptance_auc({0, 0, 0}, 25.0), 1.0);
}

TEST(AcceptanceAuc, AllFailedGiveZero) {
  EXPECT_DOUBLE_EQ(acceptance_auc({kInf, kInf}, 25.0), 0.0);
}

TEST(AcceptanceAuc, HandStepIntegral) {
  // r(t): 0 on [0,5), 1/2 on [5,15), 1 on [15,25] -> (0*5 + 0.5*10 + 1*10)/25.
  EXPECT_DOUBLE_EQ(acceptance_auc({5.0, 15.0}, 25.0), 0.6);
}

TEST(AcceptanceAuc, MatchesRiemannOracle) {
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> errs;
    for (int i = 0; i < 17; ++i) errs.push_back(rng.uniform(0.0, 40.0));
    if (trial % 2) errs.push_back(kInf);
    EXPECT_NEAR(acceptance_auc(errs, 25.0), auc_oracle(errs, 25.0), 1e-4);
  }
}

TEST(AcceptanceAuc, MonotoneInPointwiseSmallerErrors) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> errs, smaller;
    for (int i = 0; i < 12; ++i) {
      const double e = rng.uniform(0.0, 50.0);
      errs.push_back(e);
      smaller.push_back(e * rng.uniform());
    }
    const double a = acceptance_auc(errs, 25.0);
    const double b = acceptance_auc(smaller, 25.0);
    EXPECT_GE(b, a);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(b, 1.0);
  }
}

TEST(AcceptanceAuc, CurveIsMonotoneStep) {
  AcceptanceCurve curve;
  const double auc = acceptance_auc({3.0, 3.0, 7.0, 30.0}, 25.0, &curve);
  EXPECT_NEAR(auc, (22.0 / 4.0 + 22.0 / 4.0 + 18.0 / 4.0) / 25.0, 1e-12);
  ASSERT_GE(curve.points.size(), 2u);
  EXPECT_DOUBLE_EQ(curve.points.front().first, 0.0);
  EXPECT_DOUBLE_EQ(curve.points.back().first, 25.0);
  EXPECT_DOUBLE_EQ(curve.points.back().second, 0.75);  // 3 of 4 within 25 px
  for (size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_GE(curve.points[i].first, curve.points[i - 1].first);
    EXPECT_GE(curve.points[i].second, curve.points[i - 1].second);
  }
}

TEST(AcceptanceAuc, EmptyOrBadThresholdThrows) {
  EXPECT_THROW(acceptance_auc({}, 25.0), ConfigError);
  EXPECT_THROW(acceptance_auc({1.0}, 0.0), ConfigError);
}

TEST(MeanAuc, AveragesPerCategory) {
  std::map<std::string, std::vector<double>> cats;
  cats["S"] = {0.0, 0.0};          // AUC 1
  cats["P"] = {kInf};              // AUC 0
  cats["A"] = {5.0, 15.0};         // AUC 0.6
  EXPECT_DOUBLE_EQ(mean_auc(cats, 25.0), (1.0 + 0.0 + 0.6) / 3.0);
  EXPECT_THROW(mean_auc({}, 25.0), ConfigError);
}

TEST(ComputeEer, PerfectSeparationIsZero) {
  ScoreSet s;
  s.genuine = {10, 11, 12, 13};
  s.impostor = {1, 2, 3};
  const EerResult r = compute_eer(s);
  EXPECT_DOUBLE_EQ(r.eer, 0.0);
  EXPECT_FALSE(r.polarity_warning);
  // Operating threshold separates the lists.
  EXPECT_GT(r.threshold, 3.0);
  EXPECT_LE(r.threshold, 10.0);
}

TEST(ComputeEer, IdenticalListsGiveHalf) {
  ScoreSet s;
  s.genuine = {4, 7, 7, 9, 12};
  s.impostor = s.genuine;
  EXPECT_DOUBLE_EQ(compute_eer(s).eer, 0.5);

  ScoreSet single;
  single.genuine = {7};
  single.impostor = {7};
  EXPECT_DOUBLE_EQ(compute_eer(single).eer, 0.5);
}

TEST(ComputeEer, MatchesExhaustiveSweepOracle) {
  Rng rng(97);
  ScoreSet s;
  for (int i = 0; i < 500; ++i) s.genuine.push_back(10.0 + rng.normal());
  for (int i = 0; i < 500; ++i) s.impostor.push_back(5.0 + rng.normal());
  const EerResult r = compute_eer(s);
  const double oracle = eer_oracle(s.genuine, s.impostor);
  EXPECT_NEAR(r.eer, oracle, 1e-3);  // within 0.1 percentage points
  EXPECT_GE(r.eer, 0.0);
  EXPECT_LE(r.eer, 0.5);
  EXPECT_FALSE(r.polarity_warning);
}

TEST(ComputeEer, IntegerTiedScoresInterpolate) {
  // Match counts are small integers with heavy ties; the crossing falls
  // between threshold steps and must be interpolated.
  ScoreSet s;
  s.genuine = {3, 4, 4, 5, 6, 6, 7, 9};
  s.impostor = {1, 2, 2, 3, 3, 4, 5, 6};
  const EerResult r = compute_eer(s);
  EXPECT_NEAR(r.eer, eer_oracle(s.genuine, s.impostor), 0.1);
  EXPECT_GE(r.eer, 0.0);
  EXPECT_LE(r.eer, 0.5);
}

TEST(ComputeEer, DetCurveIsMonotone) {
  Rng rng(55);
  ScoreSet s;
  for (int i = 0; i < 60; ++i) s.genuine.push_back(rng.uniform(4.0, 14.0));
  for (int i = 0; i < 60; ++i) s.impostor.push_back(rng.uniform(0.0, 9.0));
  const EerResult r = compute_eer(s);
  ASSERT_GE(r.curve.size(), 2u);
  for (size_t i = 1; i < r.curve.size(); ++i) {
    EXPECT_GT(r.curve[i].threshold, r.curve[i - 1].threshold);
    EXPECT_LE(r.curve[i].far, r.curve[i - 1].far);    // FAR falls
    EXPECT_GE(r.curve[i].frr, r.curve[i - 1].frr);    // FRR climbs
  }
  EXPECT_DOUBLE_EQ(r.curve.front().far, 1.0);
  EXPECT_DOUBLE_EQ(r.curve.front().frr, 0.0);
  EXPECT_DOUBLE_EQ(r.curve.back().far, 0.0);
  EXPECT_DOUBLE_EQ(r.curve.back().frr, 1.0);
}

TEST(ComputeEer, DuplicatingScoresIsInvariant) {
  Rng rng(71);
  ScoreSet s;
  for (int i = 0; i < 25; ++i) s.genuine.push_back(std::floor(rng.uniform(5.0, 15.0)));
  for (int i = 0; i < 25; ++i) s.impostor.push_back(std::floor(rng.uniform(0.0, 10.0)));
  ScoreSet doubled = s;
  doubled.genuine.insert(doubled.genuine.end(), s.genuine.begin(), s.genuine.end());
  doubled.impostor.insert(doubled.impostor.end(), s.impostor.begin(), s.impostor.end());
  EXPECT_DOUBLE_EQ(compute_eer(s).eer, compute_eer(doubled).eer);
}

TEST(ComputeEer, ReversedPolarityWarns) {
  ScoreSet s;
  s.genuine = {1, 2, 3};
  s.impostor = {8, 9, 10};
  const EerResult r = compute_eer(s);
  EXPECT_TRUE(r.polarity_warning);
  EXPECT_GT(r.eer, 0.5);  // wrong polarity pushes past the 0.5 ceiling
}

TEST(ComputeEer, EmptyListsThrow) {
  ScoreSet s;
  s.genuine = {1.0};
  EXPECT_THROW(compute_eer(s), ConfigError);
  s.genuine.clear();
  s.impostor = {1.0};
  EXPECT_THROW(compute_eer(s), ConfigError);
}
