#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pathmamba/gradcheck.hpp"
#include "pathmamba/gradcheck_suite.hpp"
#include "pathmamba/ssm.hpp"

using namespace pathmamba;
using Td = Tensor<double>;

namespace {

Td rand_t(Shape s, SplitMix64& rng, double lo, double hi) {
  Td t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

template <class T>
DiscreteParams<T> random_discrete(std::size_t L, std::size_t D, std::size_t N, SplitMix64& rng) {
  DiscreteParams<T> dp{Tensor<T>({L, D, N}), Tensor<T>({L, D, N}), Tensor<T>({L, N})};
  for (auto& v : dp.Abar.vec()) v = static_cast<T>(rng.uniform(0.05, 0.999));
  for (auto& v : dp.Bbar_x.vec()) v = static_cast<T>(rng.uniform(-1, 1));
  for (auto& v : dp.C.vec()) v = static_cast<T>(rng.uniform(-1, 1));
  return dp;
}

// independent loop oracle of the recurrence and readout
std::vector<double> oracle_scan(const DiscreteParams<double>& dp) {
  const std::size_t L = dp.length(), D = dp.channels(), N = dp.state();
  std::vector<double> h(D * N, 0.0), y(L * D, 0.0);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t n = 0; n < N; ++n) {
        double& s = h[d * N + n];
        s = dp.Abar[(t * D + d) * N + n] * s + dp.Bbar_x[(t * D + d) * N + n];
        y[t * D + d] += dp.C[t * N + n] * s;
      }
  return y;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Zoh, AnalyticExample) {
  const auto [abar, bbar] = discretize_zoh(Td({1, 1}, {-1.0}), Td({1}, {1.0}), Td({1}, {std::log(2.0)}));
  EXPECT_NEAR(abar.item(), 0.5, 1e-15);
  EXPECT_NEAR(bbar.item(), 0.5, 1e-15);
}

TEST(Zoh, SmallALimitIsDeltaB) {
  const auto [abar, bbar] = discretize_zoh(Td({1, 1}, {-1e-12}), Td({1}, {3.0}), Td({1}, {0.2}));
  EXPECT_NEAR(bbar.item(), 0.2 * 3.0, 1e-12);
  EXPECT_NEAR(abar.item(), 1.0, 1e-12);
}

TEST(Zoh, TaylorBranchMatchesExactAtSwitchPoint) {
  SplitMix64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const double delta = rng.uniform(1e-3, 2.0);
    const double a = -kZohTaylorThreshold / delta;
    const double exact = std::expm1(delta * a) / a;
    const double taylor = delta * (1 + delta * a / 2 + delta * a * delta * a / 6);
    EXPECT_NEAR(taylor, exact, 1e-9);
    // both sides of the switch
    EXPECT_NEAR(zoh::gain(delta, a * (1 - 1e-9)), exact, 1e-9);
    EXPECT_NEAR(zoh::gain(delta, a * (1 + 1e-9)), exact, 1e-9);
  }
}

TEST(Zoh, RejectsNonpositiveDelta) {
  EXPECT_THROW(discretize_zoh(Td({1, 1}, {-1.0}), Td({1}, {1.0}), Td({1}, {0.0})), DomainError);
  EXPECT_THROW(discretize_zoh(Td({1, 1}, {-1.0}), Td({1}, {1.0}), Td({1}, {-0.5})), DomainError);
}

TEST(Zoh, AbarInUnitInterval) {
  SplitMix64 rng(12);
  const Td A = rand_t({3, 4}, rng, -5, -0.01);
  const auto [abar, bbar] = discretize_zoh(A, rand_t({4}, rng, -1, 1), rand_t({3}, rng, 0.001, 2));
  for (double v : abar.vec()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Scan, ScalarHandExample) {
  DiscreteParams<double> dp{Td({3, 1, 1}, 0.5), Td({3, 1, 1}, 1.0), Td({3, 1}, 1.0)};
  EXPECT_EQ(scan_sequential(dp).vec(), (std::vector<double>{1, 1.5, 1.75}));
  EXPECT_EQ(scan_parallel(dp).vec(), (std::vector<double>{1, 1.5, 1.75}));
}

TEST(Scan, MemorylessAndSingleStep) {
  SplitMix64 rng(13);
  auto dp = random_discrete<double>(5, 2, 3, rng);
  std::fill(dp.Abar.vec().begin(), dp.Abar.vec().end(), 0.0);
  const Td y = scan_sequential(dp);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t d = 0; d < 2; ++d) {
      double e = 0;
      for (std::size_t n = 0; n < 3; ++n) e += dp.C[t * 3 + n] * dp.Bbar_x[(t * 2 + d) * 3 + n];
      EXPECT_NEAR(y[t * 2 + d], e, 1e-15);
    }
  auto one = random_discrete<double>(1, 2, 3, rng);
  const Td h0 = rand_t({2, 3}, rng, -1, 1);
  const Td y1 = scan_sequential(one, h0);
  for (std::size_t d = 0; d < 2; ++d) {
    double e = 0;
    for (std::size_t n = 0; n < 3; ++n) e += one.C[n] * (one.Abar[d * 3 + n] * h0[d * 3 + n] + one.Bbar_x[d * 3 + n]);
    EXPECT_NEAR(y1[d], e, 1e-15);
  }
  EXPECT_EQ(scan_parallel(one, h0).vec(), y1.vec());
}

TEST(Scan, SequentialMatchesLoopOracle) {
  SplitMix64 rng(14);
  auto dp = random_discrete<double>(40, 3, 5, rng);
  const auto ref = oracle_scan(dp);
  const Td y = scan_sequential(dp);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Scan, ParallelMatchesSequentialNonPowerOfTwo) {
  SplitMix64 rng(15);
  auto dp = random_discrete<double>(257, 4, 8, rng);
  const Td a = scan_sequential(dp), b = scan_parallel(dp);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_LT(rel_diff(b[i], a[i]), 1e-10);
}

TEST(Scan, ParallelMatchesSequential200Random64) {
  SplitMix64 rng(16);
  for (int k = 0; k < 200; ++k) {
    const auto L = static_cast<std::size_t>(rng.integer(1, 64));
    const auto D = static_cast<std::size_t>(rng.integer(1, 8));
    const auto N = static_cast<std::size_t>(rng.integer(1, 8));
    auto dp = random_discrete<double>(L, D, N, rng);
    const Td h0 = rand_t({D, N}, rng, -1, 1);
    const Td a = scan_sequential(dp, h0), b = scan_parallel(dp, h0);
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_LT(rel_diff(b[i], a[i]), 1e-10) << "instance " << k;
  }
}

TEST(Scan, ParallelMatchesSequential200Random32) {
  SplitMix64 rng(17);
  for (int k = 0; k < 200; ++k) {
    const auto L = static_cast<std::size_t>(rng.integer(1, 64));
    const auto D = static_cast<std::size_t>(rng.integer(1, 8));
    const auto N = static_cast<std::size_t>(rng.integer(1, 8));
    auto dp = random_discrete<float>(L, D, N, rng);
    const Tensor<float> a = scan_sequential(dp), b = scan_parallel(dp);
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_LT(rel_diff(b[i], a[i]), 1e-5) << "instance " << k;
  }
}

TEST(Scan, StableOverLongSequences) {
  SplitMix64 rng(18);
  const std::size_t L = 10000, D = 2, N = 3;
  DiscreteParams<double> dp{Td({L, D, N}), Td({L, D, N}), Td({L, N}, 1.0)};
  double max_abar = 0;
  for (auto& v : dp.Abar.vec()) {
    v = rng.uniform(0.9, 0.999);
    max_abar = std::max(max_abar, v);
  }
  for (auto& v : dp.Bbar_x.vec()) v = rng.uniform(-1, 1);
  const double bound = 1.0 / (1.0 - max_abar);  // per state, |Bbar x| <= 1
  for (auto mode : {0, 1}) {
    const Td y = mode ? scan_parallel(dp) : scan_sequential(dp);
    for (double v : y.vec()) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_LE(std::abs(v), N * bound + 1e-9);
    }
  }
}

TEST(Scan, OrderDependent) {
  SplitMix64 rng(19);
  SSMParams<double> p = SSMParams<double>::init(3, 4, 2, rng);
  for (auto& v : p.delta_proj.bias.vec()) v = 1.0;
  const Td x = rand_t({6, 3}, rng, -1, 1);
  std::vector<std::size_t> perm{5, 4, 3, 2, 1, 0};
  const Td xp = gather_rows(x, perm, {6, 3});
  const Td y = ssm_forward(x, p), yp = ssm_forward(xp, p);
  const Td y_permuted = gather_rows(y, perm, {6, 3});
  double diff = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) diff = std::max(diff, std::abs(yp[i] - y_permuted[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(SelectiveParams, Contracts) {
  SplitMix64 rng(20);
  SSMParams<double> p = SSMParams<double>::init(3, 5, 4, rng);
  const Td x = rand_t({7, 3}, rng, -1, 1);
  const auto sp = selective_params(x, p);
  EXPECT_EQ(sp.delta.shape(), (Shape{7, 5}));
  EXPECT_EQ(sp.B.shape(), (Shape{7, 4}));
  EXPECT_EQ(sp.C.shape(), (Shape{7, 4}));
  for (double v : sp.delta.vec()) EXPECT_GT(v, 0.0);

  for (auto* l : {&p.delta_proj.weight, &p.delta_proj.bias}) std::fill(l->vec().begin(), l->vec().end(), 0.0);
  for (double v : selective_params(x, p).delta.vec()) EXPECT_NEAR(v, std::log(2.0), 1e-15);

  Td twin({2, 3}, {0.1, -0.2, 0.3, 0.1, -0.2, 0.3});
  const auto st = selective_params(twin, p);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(st.B[j], st.B[4 + j]);
    EXPECT_EQ(st.C[j], st.C[4 + j]);
  }
}

TEST(SsmForward, IdentityAblation) {
  SplitMix64 rng(21);
  SSMParams<double> p = SSMParams<double>::init(3, 4, 2, rng);
  const Td x = rand_t({5, 3}, rng, -1, 1);
  EXPECT_EQ(ssm_forward(x, p, true).vec(), x.vec());
}

TEST(SsmForward, ZeroInputZeroBiasesGiveZero) {
  SplitMix64 rng(22);
  SSMParams<double> p = SSMParams<double>::init(3, 4, 2, rng);
  for (auto* b : {&p.in_proj.bias, &p.out_proj.bias}) std::fill(b->vec().begin(), b->vec().end(), 0.0);
  for (double v : ssm_forward(Td({5, 3}, 0.0), p).vec()) EXPECT_EQ(v, 0.0);
}

TEST(SsmForward, ParallelModeMatchesSequential) {
  SplitMix64 rng(23);
  SSMParams<double> p = SSMParams<double>::init(4, 6, 3, rng);
  const Td x = rand_t({33, 4}, rng, -1, 1);
  const Td a = ssm_forward(x, p, false, ScanMode::sequential), b = ssm_forward(x, p, false, ScanMode::parallel);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_LT(rel_diff(b[i], a[i]), 1e-10);
}

TEST(SsmForward, GradCheckTinyInstance) {
  SplitMix64 rng(24);
  SSMParams<double> p = SSMParams<double>::init(4, 8, 4, rng);
  for (auto& v : p.delta_proj.bias.vec()) v += 1.0;
  Td x = rand_t({6, 4}, rng, -1, 1);
  NamedParams<double> ps;
  p.collect("ssm", ps);
  std::vector<Td> ts{x};
  for (auto& [n, t] : ps) ts.push_back(t);
  const double err = grad_check_params([&] { return sum(mul(ssm_forward(x, p), ssm_forward(x, p))); }, ts);
  EXPECT_LT(err, 1e-5);
}

TEST(SsmForward, GradCheckSuite) {
  for (const auto& r : run_gradcheck("ssm")) {
    SCOPED_TRACE(r.name);
    EXPECT_LT(r.error, 1e-6);
  }
}

TEST(SsmParams, InitInvariants) {
  SplitMix64 rng(25);
  SSMParams<float> p = SSMParams<float>::init(8, 16, 4, rng);
  for (float v : p.A().vec()) EXPECT_LT(v, 0.0f);
  NamedParams<float> ps;
  p.collect("s", ps);
  EXPECT_EQ(count_params(ps), SSMParams<float>::param_count(8, 16, 4));
  // initial step sizes softplus(bias) within [1e-3, 1e-1]
  for (float b : p.delta_proj.bias.vec()) {
    const double dt = std::log1p(std::exp(static_cast<double>(b)));
    EXPECT_GE(dt, 1e-3 * 0.999);
    EXPECT_LE(dt, 1e-1 * 1.001);
  }
}
