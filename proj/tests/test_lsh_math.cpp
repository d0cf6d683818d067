#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "lshx/lsh_math.hpp"
#include "lshx/random.hpp"

using namespace lshx;

namespace {

// Adaptive Simpson; independent of the closed forms under test.
double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
               double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50);
}

// P(r) = int_0^w (1/r) f(t/r) (1 - t/w) dt with f the density of |N(0,1)|.
double e2_quadrature(double r, double w) {
  const double k = std::sqrt(2.0 / std::numbers::pi);
  return integrate([&](double t) { return k * std::exp(-0.5 * (t / r) * (t / r)) / r * (1.0 - t / w); }, 0.0, w);
}

// P(|N(0, r^2)| <= w / 2)
double qa_quadrature(double r, double w) {
  const double k = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return 2.0 * integrate([&](double t) { return k * std::exp(-0.5 * t * t); }, 0.0, w / (2.0 * r));
}

}  // namespace

TEST(CollisionProb, E2MatchesQuadratureAtReferencePoints) {
  EXPECT_NEAR(collision_prob_e2(1.0, 2.184), 0.6394, 1e-3);
  EXPECT_NEAR(collision_prob_e2(2.0, 2.184), 0.3970, 1e-3);
  EXPECT_NEAR(collision_prob_e2(1.0, 2.184), e2_quadrature(1.0, 2.184), 1e-9);
  EXPECT_NEAR(collision_prob_e2(2.0, 2.184), e2_quadrature(2.0, 2.184), 1e-9);
  // high-precision values, frozen
  EXPECT_NEAR(collision_prob_e2(1.0, 2.184), 0.639351, 1e-6);
  EXPECT_NEAR(collision_prob_e2(2.0, 2.184), 0.397014, 1e-6);
}

TEST(CollisionProb, QueryAwareMatchesQuadrature) {
  EXPECT_NEAR(collision_prob_qa(1.0, 2.781), 0.835623, 1e-6);
  EXPECT_NEAR(collision_prob_qa(2.0, 2.781), 0.513101, 1e-6);
  for (double r : {0.3, 1.0, 2.5, 7.0})
    for (double w : {0.5, 2.781, 6.0}) EXPECT_NEAR(collision_prob_qa(r, w), qa_quadrature(r, w), 1e-9);
}

TEST(CollisionProb, ClosedFormAgreesWithQuadratureOnGrid) {
  int points = 0;
  for (int i = 0; i < 10; ++i) {
    const double r = 0.25 + 0.4 * i;
    for (int j = 0; j < 10; ++j) {
      const double w = 0.5 + 0.8 * j;
      EXPECT_NEAR(collision_prob_e2(r, w), e2_quadrature(r, w), 1e-6) << "r=" << r << " w=" << w;
      ++points;
    }
  }
  EXPECT_EQ(points, 100);
}

TEST(CollisionProb, MonotoneInRadiusAndWidth) {
  for (Scheme s : {Scheme::E2, Scheme::QueryAware}) {
    for (double w : {0.5, 1.0, 2.184, 4.0}) {
      double prev = 1.0;
      for (double r = 0.1; r < 20.0; r *= 1.3) {
        const double p = collision_prob(s, r, w);
        EXPECT_GT(p, 0.0);
        EXPECT_LE(p, 1.0);
        if (prev < 1.0) { EXPECT_LT(p, prev); } else { EXPECT_LE(p, prev); }
        prev = p;
      }
    }
    for (double r : {0.5, 1.0, 3.0}) {
      double prev = 0.0;
      for (double w = 0.1; w < 20.0; w *= 1.3) {
        const double p = collision_prob(s, r, w);
        if (p < 1.0) { EXPECT_GT(p, prev); } else { EXPECT_GE(p, prev); }
        prev = p;
      }
    }
  }
}

TEST(CollisionProb, RejectsNonPositiveInputs) {
  EXPECT_THROW(collision_prob_e2(0.0, 1.0), DomainError);
  EXPECT_THROW(collision_prob_e2(1.0, -1.0), DomainError);
  EXPECT_THROW(collision_prob_qa(-2.0, 1.0), DomainError);
  EXPECT_THROW(collision_prob_qa(1.0, 0.0), DomainError);
}

TEST(CollisionProb, MonteCarloWithSampledFamily) {
  // two fixed points at distance r, many sampled functions
  const std::uint32_t m = 200000;
  for (Scheme scheme : {Scheme::E2, Scheme::QueryAware}) {
    const double w = scheme == Scheme::E2 ? 2.184 : 2.781;
    const auto family = sample_family(3, m, w, 99, scheme);
    for (double r : {1.0, 2.0}) {
      const std::vector<double> x{0.3, -1.2, 5.0};
      const double ux = 2.0 / 3.0, uy = 1.0 / 3.0, uz = -2.0 / 3.0;
      const std::vector<double> y{x[0] + r * ux, x[1] + r * uy, x[2] + r * uz};
      std::size_t hits = 0;
      for (const auto& fn : family.functions()) {
        if (scheme == Scheme::E2) {
          hits += hash_e2<double>(x, fn, w) == hash_e2<double>(y, fn, w);
        } else {
          hits += std::fabs(hash_qa<double>(x, fn) - hash_qa<double>(y, fn)) <= w / 2.0;
        }
      }
      const double p = collision_prob(scheme, r, w);
      const double sigma = std::sqrt(p * (1 - p) / m);
      EXPECT_NEAR(static_cast<double>(hits) / m, p, 5 * sigma) << to_string(scheme) << " r=" << r;
    }
  }
}

TEST(DeriveParams, ReferenceInstanceE2) {
  const auto p = derive_params(10000, 2.0, 0.1, 2.184, Scheme::E2);
  EXPECT_EQ(p.m, 125u);
  EXPECT_EQ(p.l, 68u);
  EXPECT_NEAR(p.z, 1.5169, 1e-3);
  EXPECT_NEAR(p.alpha, 0.5431, 1e-3);
  EXPECT_NEAR(p.z, 1.516915, 1e-6);
  EXPECT_NEAR(p.alpha, 0.543068, 1e-6);
  EXPECT_DOUBLE_EQ(p.beta, 0.01);
  EXPECT_EQ(p.false_positive_budget(), 100u);
  EXPECT_EQ(p.candidate_cap(10), 110u);
}

TEST(DeriveParams, ReferenceInstanceQueryAware) {
  const auto p = derive_params(10000, 2.0, 0.1, 2.781, Scheme::QueryAware);
  EXPECT_NEAR(p.p1, 0.8357, 1e-3);
  EXPECT_NEAR(p.p2, 0.5131, 1e-3);
  EXPECT_EQ(p.m, 71u);
  EXPECT_EQ(p.l, 51u);
  EXPECT_NEAR(p.alpha, 0.70748, 1e-5);
}

TEST(DeriveParams, TinyInstanceWithBetaOverride) {
  const auto p = derive_params(200, 2.0, 0.1, 2.184, Scheme::E2, 0.5);
  EXPECT_EQ(p.m, 62u);
  EXPECT_EQ(p.l, 32u);
  EXPECT_EQ(p.false_positive_budget(), 100u);
}

TEST(DeriveParams, HandComputedFormula) {
  // independent restatement of the derivation
  const double n = 5000, c = 3, delta = 0.05, w = 4.0;
  const double p1 = collision_prob_e2(1, w), p2 = collision_prob_e2(c, w);
  const double beta = 100 / n;
  const double z = std::sqrt(std::log(2 / beta) / std::log(1 / delta));
  const auto m = static_cast<std::uint32_t>(std::ceil(std::log(1 / delta) / (2 * (p1 - p2) * (p1 - p2)) * (1 + z) * (1 + z)));
  const double alpha = (z * p1 + p2) / (1 + z);
  const auto p = derive_params(5000, c, delta, w, Scheme::E2);
  EXPECT_EQ(p.m, m);
  EXPECT_EQ(p.l, static_cast<std::uint32_t>(std::ceil(alpha * m)));
  EXPECT_GE(p.alpha, p.p2);
  EXPECT_LE(p.alpha, p.p1);
}

TEST(DeriveParams, Errors) {
  EXPECT_THROW(derive_params(100, 2.0, 0.1, 2.184, Scheme::E2), ParameterError);  // beta = 1
  EXPECT_THROW(derive_params(50, 2.0, 0.1, 2.184, Scheme::E2), ParameterError);
  EXPECT_NO_THROW(derive_params(50, 2.0, 0.1, 2.184, Scheme::E2, 0.5));
  EXPECT_THROW(derive_params(1000, 1.0, 0.1, 2.184, Scheme::E2), ParameterError);
  EXPECT_THROW(derive_params(1000, 2.0, 0.0, 2.184, Scheme::E2), ParameterError);
  EXPECT_THROW(derive_params(1000, 2.0, 1.0, 2.184, Scheme::E2), ParameterError);
  EXPECT_THROW(derive_params(1000, 2.0, 0.1, 0.0, Scheme::E2), ParameterError);
  EXPECT_THROW(derive_params(1000, 2.0, 0.1, 2.184, Scheme::E2, 1.5), ParameterError);
  EXPECT_THROW(derive_params(10, 2.0, 0.1, 2.184, Scheme::E2, 0.05), ParameterError);  // beta n < 1
}

TEST(FloorDiv, RoundsTowardNegativeInfinity) {
  EXPECT_EQ(floor_div(7, 2), 3);
  EXPECT_EQ(floor_div(-7, 2), -4);
  EXPECT_EQ(floor_div(-8, 2), -4);
  EXPECT_EQ(floor_div(0, 5), 0);
  EXPECT_EQ(floor_div(-1, 4), -1);
  EXPECT_EQ(bucket_at_radius(-5, 4), -2);
  EXPECT_EQ(bucket_at_radius(5, 1), 5);
  EXPECT_THROW(bucket_at_radius(5, 0), DomainError);
}

TEST(HashFamily, SamplerStatistics) {
  const auto f = sample_family(16, 4000, 2.184, 7, Scheme::E2);
  double sum = 0, sq = 0, bsum = 0, bsq = 0;
  std::size_t count = 0;
  for (const auto& fn : f.functions()) {
    for (double a : fn.a) {
      sum += a;
      sq += a * a;
      ++count;
    }
    EXPECT_GE(fn.b, 0.0);
    EXPECT_LT(fn.b, 2.184);
    bsum += fn.b;
    bsq += fn.b * fn.b;
  }
  const double mean = sum / count, var = sq / count - mean * mean;
  EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(count));
  EXPECT_NEAR(var, 1.0, 0.02);
  const double bmean = bsum / 4000, bvar = bsq / 4000 - bmean * bmean;
  EXPECT_NEAR(bmean, 2.184 / 2, 0.04);
  EXPECT_NEAR(bvar, 2.184 * 2.184 / 12, 0.03);
}

TEST(HashFamily, DeterministicPerSeed) {
  EXPECT_EQ(sample_family(8, 20, 2.0, 5, Scheme::E2), sample_family(8, 20, 2.0, 5, Scheme::E2));
  EXPECT_FALSE(sample_family(8, 20, 2.0, 5, Scheme::E2) == sample_family(8, 20, 2.0, 6, Scheme::E2));
  const auto qa = sample_family(8, 20, 2.0, 5, Scheme::QueryAware);
  for (const auto& fn : qa.functions()) EXPECT_EQ(fn.b, 0.0);
}

TEST(HashFamily, ValidatesInvariants) {
  EXPECT_THROW(HashFamily(Scheme::E2, 2, 1.0, 0, {{{1.0, 2.0}, 1.5}}), ParameterError);   // b >= w
  EXPECT_THROW(HashFamily(Scheme::E2, 3, 1.0, 0, {{{1.0, 2.0}, 0.5}}), ParameterError);   // wrong d
  EXPECT_THROW(HashFamily(Scheme::QueryAware, 2, 1.0, 0, {{{1.0, 2.0}, 0.5}}), ParameterError);
  EXPECT_THROW(HashFamily(Scheme::E2, 2, 1.0, 0, {}), ParameterError);
  EXPECT_THROW(sample_family(0, 1, 1.0, 0, Scheme::E2), ParameterError);
}

TEST(HashFamily, HashValues) {
  const HashFunction fn{{1.0, -2.0}, 0.5};
  const std::vector<float> x{3.0f, 1.0f};
  EXPECT_DOUBLE_EQ(project<float>(x, fn), 1.0);
  EXPECT_EQ(hash_e2<float>(x, fn, 1.0), 1);   // floor(1.5)
  EXPECT_EQ(hash_e2<float>(x, fn, 4.0), 0);
  const std::vector<float> y{-3.0f, 1.0f};
  EXPECT_EQ(hash_e2<float>(y, fn, 1.0), -5);  // floor(-4.5)
  EXPECT_THROW(project<float>(std::vector<float>{1.0f}, fn), DomainError);
}

TEST(SensitiveRadius, PowerOfCCoveringTD) {
  EXPECT_DOUBLE_EQ(max_sensitive_radius(2.0, 10000, 32), 524288.0);  // 2^19 >= 320000
  EXPECT_DOUBLE_EQ(max_sensitive_radius(2.0, 1024, 1), 1024.0);
  EXPECT_DOUBLE_EQ(max_sensitive_radius(3.0, 10, 1), 27.0);
  EXPECT_DOUBLE_EQ(max_sensitive_radius(2.0, 0.0, 4), 1.0);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
  Rng r(1);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++hist[r.below(7)];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}
