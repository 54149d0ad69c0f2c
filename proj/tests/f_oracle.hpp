#pragma once

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <cmath>
#include <limits>

namespace qsign::testing {

// F(d1, d2) density, integrated numerically for the upper tail
inline double f_tail_quadrature(double f, double d1, double d2) {
  const double logc = 0.5 * d1 * std::log(d1 / d2) - std::log(boost::math::beta(0.5 * d1, 0.5 * d2));
  auto density = [&](double x) {
    if (x <= 0.0) return 0.0;
    return std::exp(logc + (0.5 * d1 - 1.0) * std::log(x) - 0.5 * (d1 + d2) * std::log1p(d1 * x / d2));
  };
  boost::math::quadrature::exp_sinh<double> upper;
  return upper.integrate([&](double t) { return density(f + t); }, 0.0,
                         std::numeric_limits<double>::infinity(), 1e-13);
}

}  // namespace qsign::testing
