#pragma once

// Special functions: regularized incomplete beta (continued fraction) and
// its inverse, the standard normal quantile, and the Student t and F
// distribution functions built on them.

#include <cmath>
#include <limits>

#include "qsign/error.hpp"

namespace qsign::special {

namespace detail {

// Modified Lentz evaluation of the incomplete beta continued fraction.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

inline double log_beta_prefactor(double a, double b, double x) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
         b * std::log1p(-x);
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete beta: a, b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double front = std::exp(detail::log_beta_prefactor(a, b, x));
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Upper tail 1 - I_x(a, b), evaluated without cancellation.
inline double incomplete_beta_complement(double a, double b, double x) {
  return incomplete_beta(b, a, 1.0 - x);
}

/// Solves I_x(a, b) = p for x by safeguarded Newton iteration.
inline double incomplete_beta_inverse(double a, double b, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("incomplete beta inverse: p outside [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  double x = a / (a + b);
  const double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  for (int it = 0; it < 300; ++it) {
    const double f = incomplete_beta(a, b, x) - p;
    if (f == 0.0) return x;
    if (f < 0.0) lo = x; else hi = x;
    const double log_density = log_norm + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
    double next = x - f / std::exp(log_density);
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::fabs(next - x) <= 1e-15 * std::max(1e-300, x) || hi - lo < 1e-300) return next;
    x = next;
  }
  return x;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Standard normal quantile: Acklam's rational approximation refined by
/// one Halley step on erfc.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

inline double student_cdf(double t, double df) {
  if (!(df > 0.0)) throw InvalidArgument("student cdf: df must be positive");
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
  return t < 0.0 ? tail : 1.0 - tail;
}

/// Student t quantile through the incomplete beta inverse.
inline double student_quantile(double p, double df) {
  if (!(df > 0.0)) throw InvalidArgument("student quantile: df must be positive");
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("student quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  const double tail = std::min(p, 1.0 - p);
  double t;
  if (tail < 0.25) {
    const double x = incomplete_beta_inverse(0.5 * df, 0.5, 2.0 * tail);
    t = std::sqrt(df * (1.0 / x - 1.0));
  } else {
    // near the centre work with 1 - x = t^2 / (df + t^2) to avoid cancellation
    const double y = incomplete_beta_inverse(0.5, 0.5 * df, 1.0 - 2.0 * tail);
    t = std::sqrt(df * y / (1.0 - y));
  }
  return p < 0.5 ? -t : t;
}

/// P(F > f) for F ~ F(d1, d2).
inline double f_upper_tail(double f, double d1, double d2) {
  if (!(d1 > 0.0) || !(d2 > 0.0)) throw InvalidArgument("F tail: degrees of freedom must be positive");
  if (f <= 0.0) return 1.0;
  return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f));
}

}  // namespace qsign::special
