#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "matwm/core/numerics.hpp"
#include "matwm/core/ops.hpp"
#include "matwm/core/rng.hpp"
#include "test_util.hpp"

using namespace matwm;

// ---------------------------------------------------------------------------
// symlog / symexp
// ---------------------------------------------------------------------------

TEST(Symlog, FixedPointAtZero) { EXPECT_EQ(symlog(0.0), 0.0); }

TEST(Symlog, RoundtripExamples) {
  EXPECT_NEAR(symexp(symlog(12.5)), 12.5, 1e-9);
  EXPECT_NEAR(symlog(std::numbers::e - 1.0), 1.0, 1e-9);
}

TEST(Symlog, InverseOverWideRange) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double mag = std::pow(10.0, rng.uniform(-6.0, 6.0));
    const double x = rng.uniform() < 0.5 ? -mag : mag;
    EXPECT_NEAR(symexp(symlog(x)), x, 1e-9 * std::max(1.0, std::abs(x)));
  }
}

TEST(Symlog, OddAndMonotone) {
  Rng rng(2);
  double prev_x = -1e6, prev_y = symlog(-1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-1e6, 1e6);
    EXPECT_NEAR(symlog(-x), -symlog(x), 1e-12 * std::max(1.0, std::abs(symlog(x))));
    EXPECT_NEAR(symexp(-symlog(x)), -x, 1e-9 * std::max(1.0, std::abs(x)));
  }
  for (double x = -10.0; x < 10.0; x += 0.1) {
    const double y = symlog(x);
    EXPECT_GT(y, prev_y);
    prev_x = x;
    prev_y = y;
  }
  (void)prev_x;
}

TEST(Symlog, NonFiniteRejected) {
  EXPECT_THROW(symlog(std::numeric_limits<double>::infinity()), std::domain_error);
  EXPECT_THROW(symexp(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
}

// ---------------------------------------------------------------------------
// Two-hot
// ---------------------------------------------------------------------------

TEST(TwoHotCodec, OneHotOnExactCenter) {
  TwoHot<double> spec(255, -20.0, 20.0);
  const int k = 87;
  const double r = symexp(spec.centers[k]);
  Tensor<double> probs = spec.encode({r});
  for (int c = 0; c < spec.bins; ++c)
    EXPECT_NEAR(probs.at2(0, c), c == k ? 1.0 : 0.0, 1e-9);
}

TEST(TwoHotCodec, HalfHalfAtMidpoint) {
  TwoHot<double> spec(255, -20.0, 20.0);
  const int k = 130;
  const double mid = 0.5 * (spec.centers[k] + spec.centers[k + 1]);
  Tensor<double> probs = spec.encode({symexp(mid)});
  EXPECT_NEAR(probs.at2(0, k), 0.5, 1e-9);
  EXPECT_NEAR(probs.at2(0, k + 1), 0.5, 1e-9);
}

TEST(TwoHotCodec, ExpectationEqualsSymlog) {
  // Brute-force expectation over bucket centers reproduces clamp(symlog(r)).
  TwoHot<double> spec(255, -20.0, 20.0);
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double r = rng.uniform(-1000.0, 1000.0);
    Tensor<double> probs = spec.encode({r});
    double sum = 0, expectation = 0;
    for (int c = 0; c < spec.bins; ++c) {
      sum += probs.at2(0, c);
      expectation += probs.at2(0, c) * spec.centers[static_cast<size_t>(c)];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_NEAR(expectation, symlog(r), 1e-6);
  }
}

TEST(TwoHotCodec, DecodeExamples) {
  TwoHot<double> spec(255, -20.0, 20.0);
  // one-hot at a center decodes to symexp(center)
  Tensor<double> onehot({1, spec.bins});
  onehot.at2(0, 200) = 1.0;
  EXPECT_NEAR(spec.decode_row(onehot, 0), symexp(spec.centers[200]), 1e-9);
  // uniform over a symmetric grid decodes to 0
  Tensor<double> uni = Tensor<double>::full({1, spec.bins}, 1.0 / spec.bins);
  EXPECT_NEAR(spec.decode_row(uni, 0), 0.0, 1e-6);
  // roundtrip
  Tensor<double> enc = spec.encode({3.7});
  EXPECT_NEAR(spec.decode_row(enc, 0), 3.7, 1e-5);
}

TEST(TwoHotCodec, RoundtripInsideRange) {
  TwoHot<double> spec(255, -20.0, 20.0);
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const double mag = std::pow(10.0, rng.uniform(-3.0, 6.0));
    const double r = rng.uniform() < 0.5 ? -mag : mag;
    Tensor<double> enc = spec.encode({r});
    EXPECT_NEAR(spec.decode(enc)[0], r, 1e-5 * std::max(1.0, std::abs(r)));
  }
}

TEST(TwoHotCodec, OutOfRangeClampsToEdge) {
  TwoHot<double> spec(255, -20.0, 20.0);
  Tensor<double> enc = spec.encode({1e30});
  EXPECT_NEAR(enc.at2(0, spec.bins - 1), 1.0, 1e-9);
}

TEST(TwoHotCodec, NegativeProbabilityRejected) {
  TwoHot<double> spec(5, -1.0, 1.0);
  Tensor<double> p({1, 5});
  p.at2(0, 0) = 1.2;
  p.at2(0, 1) = -0.2;
  EXPECT_THROW(spec.decode_row(p, 0), std::domain_error);
}

// ---------------------------------------------------------------------------
// Lambda returns
// ---------------------------------------------------------------------------

namespace {

// Independent oracle: explicit mixture of n-step returns,
//   G^(n)_t = sum_{i<n} gamma^i (prod_{j<i} c_{t+j}) r_{t+i}
//           + gamma^n (prod_{j<n} c_{t+j}) V_{t+n},
// weighted (1-lambda) lambda^(n-1), with the final weight lambda^(L-t-1).
std::vector<double> brute_force_lambda(const std::vector<double>& r, const std::vector<double>& c,
                                       const std::vector<double>& v, double gamma, double lambda) {
  const size_t L = r.size();
  std::vector<double> out(L);
  for (size_t t = 0; t < L; ++t) {
    const size_t max_n = L - t;
    double total = 0;
    for (size_t n = 1; n <= max_n; ++n) {
      double nstep = 0, disc = 1, carry = 1;
      for (size_t i = 0; i < n; ++i) {
        nstep += disc * carry * r[t + i];
        carry *= c[t + i];
        disc *= gamma;
      }
      nstep += disc * carry * v[t + n];
      const double w = n == max_n ? std::pow(lambda, static_cast<double>(max_n - 1))
                                  : (1 - lambda) * std::pow(lambda, static_cast<double>(n - 1));
      total += w * nstep;
    }
    out[t] = total;
  }
  return out;
}

}  // namespace

TEST(LambdaReturns, CollapsesToOneStepTd) {
  const std::vector<double> r = {1.0, -0.5, 2.0};
  const std::vector<double> c = {1.0, 1.0, 0.0};
  const std::vector<double> v = {0.3, 0.7, -0.2, 5.0};
  const double gamma = 0.9;
  const auto g = lambda_returns(r, c, v, gamma, 0.0);
  ASSERT_EQ(g.size(), 3u);
  for (size_t t = 0; t < 3; ++t)
    EXPECT_NEAR(g[t], r[t] + gamma * c[t] * v[t + 1], 1e-12);
}

TEST(LambdaReturns, TerminationTruncates) {
  const std::vector<double> r = {1.0, 2.0, 3.0};
  const std::vector<double> c = {0.0, 0.0, 0.0};
  const std::vector<double> v = {9.0, 9.0, 9.0, 9.0};
  const auto g = lambda_returns(r, c, v, 0.99, 0.95);
  for (size_t t = 0; t < 3; ++t) EXPECT_NEAR(g[t], r[t], 1e-12);
}

TEST(LambdaReturns, MonteCarloLimitAtLambdaOne) {
  const std::vector<double> r = {1.0, -1.0, 0.5, 2.0};
  const std::vector<double> c = {1.0, 1.0, 1.0, 1.0};
  const std::vector<double> v = {0.0, 0.0, 0.0, 0.0, 4.0};
  const double gamma = 0.9;
  const auto g = lambda_returns(r, c, v, gamma, 1.0);
  for (size_t t = 0; t < 4; ++t) {
    double want = 0, disc = 1;
    for (size_t k = t; k < 4; ++k) {
      want += disc * r[k];
      disc *= gamma;
    }
    want += disc * v[4];
    EXPECT_NEAR(g[t], want, 1e-6);
  }
}

TEST(LambdaReturns, MatchesBruteForceOnRandomTraces) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t L = 1 + static_cast<size_t>(rng.uniform_int(8));
    std::vector<double> r(L), c(L), v(L + 1);
    for (auto& x : r) x = rng.uniform(-2.0, 2.0);
    for (auto& x : c) x = rng.uniform() < 0.3 ? 0.0 : 1.0;
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    const double gamma = rng.uniform(0.8, 1.0);
    const double lambda = rng.uniform(0.0, 1.0);
    const auto fast = lambda_returns(r, c, v, gamma, lambda);
    const auto slow = brute_force_lambda(r, c, v, gamma, lambda);
    ASSERT_EQ(fast.size(), slow.size());
    for (size_t t = 0; t < L; ++t) ASSERT_NEAR(fast[t], slow[t], 1e-6) << "t=" << t;
  }
}

TEST(LambdaReturns, LengthMismatchThrows) {
  EXPECT_THROW(lambda_returns<double>({1.0}, {1.0, 1.0}, {0.0, 0.0}, 0.9, 0.9),
               std::invalid_argument);
  EXPECT_THROW(lambda_returns<double>({1.0}, {1.0}, {0.0}, 0.9, 0.9), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Percentile scale
// ---------------------------------------------------------------------------

TEST(PercentileScale, AllEqualGivesZero) {
  EXPECT_EQ(percentile_scale(std::vector<double>(17, 3.3)), 0.0);
}

TEST(PercentileScale, UniformGrid) {
  std::vector<double> xs(101);
  for (int i = 0; i <= 100; ++i) xs[static_cast<size_t>(i)] = i;
  EXPECT_NEAR(percentile_scale(xs), 90.0, 0.5);
}

TEST(PercentileScale, TwoValuesClosedForm) {
  const std::vector<double> xs = {2.0, 10.0};
  EXPECT_NEAR(percentile_scale(xs), 0.9 * 8.0, 1e-12);
}

TEST(PercentileScale, ScalesHomogeneously) {
  Rng rng(6);
  std::vector<double> xs(64);
  for (auto& x : xs) x = rng.uniform(-5.0, 5.0);
  const double s = percentile_scale(xs);
  std::vector<double> scaled = xs;
  for (auto& x : scaled) x *= 3.7;
  EXPECT_NEAR(percentile_scale(scaled), 3.7 * s, 1e-9);
}

TEST(PercentileScale, EmptyThrows) {
  EXPECT_THROW(percentile_scale(std::vector<double>{}), std::invalid_argument);
}

TEST(PercentileScale, AdvantageInvariantUnderJointScaling) {
  // (G - V)/max(1,S) unchanged when G and V are both scaled by k, provided
  // S >= 1 before and after.
  Rng rng(7);
  std::vector<double> g(128), v(128);
  for (auto& x : g) x = rng.uniform(-4.0, 4.0);
  for (auto& x : v) x = rng.uniform(-4.0, 4.0);
  const double s = percentile_scale(g);
  ASSERT_GE(s, 1.0);
  const double k = 2.5;
  std::vector<double> gk = g;
  for (auto& x : gk) x *= k;
  const double sk = percentile_scale(gk);
  ASSERT_GE(sk, 1.0);
  for (size_t i = 0; i < g.size(); ++i) {
    const double adv = (g[i] - v[i]) / std::max(1.0, s);
    const double advk = (k * g[i] - k * v[i]) / std::max(1.0, sk);
    EXPECT_NEAR(advk, adv, 1e-9);
  }
}

// ---------------------------------------------------------------------------
// KL free bits (value forms)
// ---------------------------------------------------------------------------

TEST(KlFreeBits, EqualGridsClampToFloor) {
  Rng rng(8);
  Tensor<double> logits({32, 32});
  for (int64_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-1.0, 1.0);
  EXPECT_EQ(kl_free_bits_value(logits, logits, 1.0), 1.0);
}

TEST(KlFreeBits, MatchesBruteForceWhenLive) {
  Rng rng(9);
  Tensor<double> p({32, 32}), q({32, 32});
  for (int64_t i = 0; i < p.size(); ++i) p[i] = rng.uniform(-2.0, 2.0);
  for (int64_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(-2.0, 2.0);
  // Independent brute force: normalize with plain exp sums, accumulate
  // p*ln(p/q) cell by cell.
  double kl = 0;
  for (int r = 0; r < 32; ++r) {
    double zp = 0, zq = 0;
    for (int c = 0; c < 32; ++c) {
      zp += std::exp(p.at2(r, c));
      zq += std::exp(q.at2(r, c));
    }
    for (int c = 0; c < 32; ++c) {
      const double pp = std::exp(p.at2(r, c)) / zp;
      const double qq = std::exp(q.at2(r, c)) / zq;
      kl += pp * std::log(pp / qq);
    }
  }
  ASSERT_GT(kl, 1.0);
  EXPECT_NEAR(kl_free_bits_value(p, q, 1.0), kl, 1e-9 * kl);
  EXPECT_NEAR(kl_free_bits_value(p, q, 0.0), kl, 1e-9 * kl);  // floor 0: plain KL
}

TEST(KlFreeBits, AlwaysAtLeastFloor) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> p({4, 8}), q({4, 8});
    const double spread = rng.uniform(0.001, 2.0);
    for (int64_t i = 0; i < p.size(); ++i) p[i] = rng.uniform(-spread, spread);
    for (int64_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(-spread, spread);
    EXPECT_GE(kl_free_bits_value(p, q, 1.0), 1.0);
  }
}

// ---------------------------------------------------------------------------
// Tape composition sanity: the batched free-bits mean matches per-sample
// value computation.
// ---------------------------------------------------------------------------

TEST(KlFreeBits, BatchedTapeMatchesPerSampleValues) {
  Rng rng(11);
  const int samples = 3, vars = 4, classes = 5;
  Tensor<double> p({samples * vars, classes}), q({samples * vars, classes});
  for (int64_t i = 0; i < p.size(); ++i) p[i] = rng.uniform(-2.0, 2.0);
  for (int64_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(-2.0, 2.0);
  Var<double> loss = kl_free_bits(variable(p), variable(q), vars, 1.0);
  double want = 0;
  for (int s = 0; s < samples; ++s) {
    Tensor<double> ps({vars, classes}), qs({vars, classes});
    for (int r = 0; r < vars; ++r)
      for (int c = 0; c < classes; ++c) {
        ps.at2(r, c) = p.at2(s * vars + r, c);
        qs.at2(r, c) = q.at2(s * vars + r, c);
      }
    want += kl_free_bits_value(ps, qs, 1.0);
  }
  want /= samples;
  EXPECT_NEAR(loss.val()[0], want, 1e-9);
}
