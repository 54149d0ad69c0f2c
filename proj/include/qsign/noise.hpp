#pragma once

#include <functional>
#include <string>

#include "qsign/core.hpp"
#include "qsign/random.hpp"
#include "qsign/special.hpp"

namespace qsign {

/// Error distribution used to simulate responses. Draws are shifted so the
/// tau-quantile of the noise is exactly zero, then scaled by xi.
struct NoiseSpec {
  enum class Family { gaussian, student, custom };

  Family family = Family::gaussian;
  double scale = 1.0;  // xi
  double df = 3.0;     // student only
  // custom only: draws from the unscaled family; `custom_quantile` gives
  // its tau-quantile for centering.
  std::function<double(RandomStream&)> custom_sampler;
  std::function<double(double)> custom_quantile;

  static NoiseSpec gaussian(double scale = 1.0) {
    NoiseSpec s;
    s.scale = scale;
    return s;
  }

  static NoiseSpec student(double df, double scale = 1.0) {
    NoiseSpec s;
    s.family = Family::student;
    s.df = df;
    s.scale = scale;
    return s;
  }

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw InvalidArgument("noise scale must be positive");
    if (family == Family::student && !(df >= 1.0))
      throw InvalidArgument("student noise needs df >= 1");
    if (family == Family::custom && (!custom_sampler || !custom_quantile))
      throw InvalidArgument("custom noise needs a sampler and a quantile function");
  }

  std::string describe() const {
    switch (family) {
      case Family::gaussian: return "gaussian";
      case Family::student: {
        std::string d = std::to_string(df);
        d.erase(d.find_last_not_of('0') + 1);
        if (!d.empty() && d.back() == '.') d.pop_back();
        return "student:" + d;
      }
      case Family::custom: return "custom";
    }
    return "unknown";
  }
};

/// Draws tau-centered noise. Precomputes the centering shift.
class NoiseSampler {
 public:
  NoiseSampler(const NoiseSpec& spec, double tau) : spec_(spec) {
    spec_.validate();
    switch (spec_.family) {
      case NoiseSpec::Family::gaussian:
        shift_ = tau == 0.5 ? 0.0 : special::normal_quantile(tau);
        break;
      case NoiseSpec::Family::student:
        shift_ = tau == 0.5 ? 0.0 : special::student_quantile(tau, spec_.df);
        break;
      case NoiseSpec::Family::custom:
        shift_ = spec_.custom_quantile(tau);
        break;
    }
  }

  double shift() const noexcept { return spec_.scale * shift_; }

  double operator()(RandomStream& stream) const {
    double e = 0.0;
    switch (spec_.family) {
      case NoiseSpec::Family::gaussian: e = stream.normal(); break;
      case NoiseSpec::Family::student: e = stream.student(spec_.df); break;
      case NoiseSpec::Family::custom: e = spec_.custom_sampler(stream); break;
    }
    return spec_.scale * (e - shift_);
  }

  Vector draw(RandomStream& stream, Index n) const {
    Vector e(n);
    for (Index i = 0; i < n; ++i) e(i) = (*this)(stream);
    return e;
  }

 private:
  NoiseSpec spec_;
  double shift_ = 0.0;
};

inline double noise_sampler(const NoiseSpec& spec, double tau, RandomStream& stream) {
  return NoiseSampler(spec, tau)(stream);
}

}  // namespace qsign
