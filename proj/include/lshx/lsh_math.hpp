#pragma once

// Closed-form LSH mathematics shared by the three indexes: hash evaluation,
// collision probabilities and collision-counting parameter derivation.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lshx/error.hpp"
#include "lshx/random.hpp"

namespace lshx {

enum class Scheme : std::uint8_t {
  E2 = 0,          ///< floor((a.x + b) / w), b uniform in [0, w)
  QueryAware = 1,  ///< a.x, collision window anchored at the query
};

inline const char* to_string(Scheme s) { return s == Scheme::E2 ? "e2" : "query-aware"; }

/// One random projection. `b` is 0 for the query-aware scheme.
struct HashFunction {
  std::vector<double> a;
  double b = 0.0;

  friend bool operator==(const HashFunction&, const HashFunction&) = default;
};

class HashFamily {
 public:
  HashFamily(Scheme scheme, std::uint32_t dims, double w, std::uint64_t seed,
             std::vector<HashFunction> functions)
      : scheme_(scheme), dims_(dims), w_(w), seed_(seed), functions_(std::move(functions)) {
    if (dims_ == 0) throw ParameterError("hash family: dimensionality must be >= 1");
    if (!(w_ > 0.0)) throw ParameterError("hash family: bucket width must be > 0");
    if (functions_.empty()) throw ParameterError("hash family: need at least one function");
    for (const auto& fn : functions_) {
      if (fn.a.size() != dims_) throw ParameterError("hash family: projection has wrong dimensionality");
      if (scheme_ == Scheme::E2 && !(fn.b >= 0.0 && fn.b < w_))
        throw ParameterError("hash family: E2 offset outside [0, w)");
      if (scheme_ == Scheme::QueryAware && fn.b != 0.0)
        throw ParameterError("hash family: query-aware functions carry no offset");
    }
  }

  Scheme scheme() const noexcept { return scheme_; }
  std::uint32_t dims() const noexcept { return dims_; }
  std::uint32_t size() const noexcept { return static_cast<std::uint32_t>(functions_.size()); }
  double width() const noexcept { return w_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const HashFunction& operator[](std::size_t i) const { return functions_[i]; }
  const std::vector<HashFunction>& functions() const noexcept { return functions_; }

  friend bool operator==(const HashFamily&, const HashFamily&) = default;

 private:
  Scheme scheme_;
  std::uint32_t dims_;
  double w_;
  std::uint64_t seed_;
  std::vector<HashFunction> functions_;
};

struct IndexParams {
  std::uint64_t n = 0;
  std::uint32_t d = 0;
  double c = 2.0;
  double delta = 0.1;
  double beta = 0.0;
  double w = 0.0;
  Scheme scheme = Scheme::E2;
  double p1 = 0.0;
  double p2 = 0.0;
  double z = 0.0;
  std::uint32_t m = 0;
  double alpha = 0.0;
  std::uint32_t l = 0;

  /// Number of false positives tolerated, floor(beta * n).
  std::uint64_t false_positive_budget() const {
    return static_cast<std::uint64_t>(std::floor(beta * static_cast<double>(n) + 1e-9));
  }
  /// k + beta * n: the candidate count at which a query stops unconditionally.
  std::uint64_t candidate_cap(std::uint64_t k) const { return k + false_positive_budget(); }
};

/// Standard normal CDF from erfc (accurate to ~1e-16 absolute).
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Probability that two points at distance r share a bucket of
/// floor((a.x + b) / w).
inline double collision_prob_e2(double r, double w) {
  if (!(r > 0.0) || !(w > 0.0)) throw DomainError("collision_prob_e2: r and w must be positive");
  const double u = w / r;
  // 2 (Phi(u) - 1/2) == erf(u / sqrt 2)
  const double head = std::erf(u / std::numbers::sqrt2);
  const double tail = 2.0 / (u * std::sqrt(2.0 * std::numbers::pi)) * -std::expm1(-0.5 * u * u);
  return head - tail;
}

/// Probability that a point at distance r lands within w/2 of the query's
/// projection: a.(o - q) ~ N(0, r^2), so P = 2 Phi(w / 2r) - 1.
inline double collision_prob_qa(double r, double w) {
  if (!(r > 0.0) || !(w > 0.0)) throw DomainError("collision_prob_qa: r and w must be positive");
  return std::erf(w / (2.0 * r * std::numbers::sqrt2));
}

inline double collision_prob(Scheme scheme, double r, double w) {
  return scheme == Scheme::E2 ? collision_prob_e2(r, w) : collision_prob_qa(r, w);
}

/// Derives m, l and friends for collision counting.
///
/// beta defaults to 100 / n. Datasets with n <= 100 need an explicit
/// `beta_override` because the default would allow every point as a false
/// positive.
inline IndexParams derive_params(std::uint64_t n, double c, double delta, double w, Scheme scheme,
                                 std::optional<double> beta_override = std::nullopt) {
  if (n < 1) throw ParameterError("derive_params: n must be >= 1");
  if (!(c > 1.0)) throw ParameterError("derive_params: approximation ratio c must be > 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("derive_params: delta must lie in (0, 1)");
  if (!(w > 0.0)) throw ParameterError("derive_params: w must be > 0");

  IndexParams p;
  p.n = n;
  p.c = c;
  p.delta = delta;
  p.w = w;
  p.scheme = scheme;
  if (beta_override) {
    p.beta = *beta_override;
    if (!(p.beta > 0.0 && p.beta < 1.0))
      throw ParameterError("derive_params: beta override must lie in (0, 1)");
  } else {
    p.beta = 100.0 / static_cast<double>(n);
    if (p.beta >= 1.0)
      throw ParameterError("derive_params: n = " + std::to_string(n) +
                           " gives beta = 100/n >= 1; supply an explicit beta override");
  }
  if (p.beta * static_cast<double>(n) < 1.0 - 1e-9)
    throw ParameterError("derive_params: beta * n must be >= 1");

  p.p1 = collision_prob(scheme, 1.0, w);
  p.p2 = collision_prob(scheme, c, w);
  if (!(p.p1 > p.p2)) throw ParameterError("derive_params: p1 <= p2");

  const double log_inv_delta = std::log(1.0 / delta);
  p.z = std::sqrt(std::log(2.0 / p.beta) / log_inv_delta);
  const double gap = p.p1 - p.p2;
  p.m = static_cast<std::uint32_t>(
      std::ceil(log_inv_delta / (2.0 * gap * gap) * (1.0 + p.z) * (1.0 + p.z)));
  p.alpha = (p.z * p.p1 + p.p2) / (1.0 + p.z);
  p.l = static_cast<std::uint32_t>(std::ceil(p.alpha * p.m));
  return p;
}

/// Floor division toward negative infinity.
inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  const std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

template <std::floating_point T>
double project(std::span<const T> x, const HashFunction& fn) {
  if (x.size() != fn.a.size()) throw DomainError("projection: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += fn.a[i] * static_cast<double>(x[i]);
  return acc;
}

template <std::floating_point T>
std::int64_t hash_e2(std::span<const T> x, const HashFunction& fn, double w) {
  return static_cast<std::int64_t>(std::floor((project(x, fn) + fn.b) / w));
}

template <std::floating_point T>
double hash_qa(std::span<const T> x, const HashFunction& fn) {
  return project(x, fn);
}

/// Level-R bucket of an R = 1 hash value.
inline std::int64_t bucket_at_radius(std::int64_t h, std::int64_t radius) {
  if (radius < 1) throw DomainError("bucket_at_radius: radius must be >= 1");
  return floor_div(h, radius);
}

inline HashFamily sample_family(std::uint32_t d, std::uint32_t m, double w, std::uint64_t seed,
                                Scheme scheme) {
  if (d < 1 || m < 1) throw ParameterError("sample_family: d and m must be >= 1");
  if (!(w > 0.0)) throw ParameterError("sample_family: w must be > 0");
  Rng rng(seed);
  std::vector<HashFunction> fns(m);
  for (auto& fn : fns) {
    fn.a.resize(d);
    for (auto& coef : fn.a) coef = rng.normal();
    if (scheme == Scheme::E2) {
      fn.b = rng.uniform() * w;
      if (fn.b >= w) fn.b = 0.0;
    }
  }
  return HashFamily(scheme, d, w, seed, std::move(fns));
}

/// Largest radius c^ceil(log_c(t d)) for which h^R stays (R, cR, p1, p2)-sensitive.
inline double max_sensitive_radius(double c, double t, std::uint32_t d) {
  const double td = std::max(1.0, t * static_cast<double>(d));
  const double e = std::ceil(std::log(td) / std::log(c) - 1e-12);
  return std::pow(c, std::max(0.0, e));
}

}  // namespace lshx
