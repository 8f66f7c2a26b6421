#pragma once

#include <span>
#include <vector>

namespace scr {

// Right-continuous step function: value(t) = initial for t < times[0], values[i] on [times[i], times[i+1]).
struct StepFunction {
  double initial = 0.0;
  std::vector<double> times;
  std::vector<double> values;

  double operator()(double t) const;
};

// Product-limit survival curve. Events precede censorings at tied times.
StepFunction kaplan_meier(std::span<const double> times, std::span<const int> event_flags);

// Cause-specific CDF 1 - exp(-Lambda) with Lambda the Nelson-Aalen cumulative
// hazard for `cause`. Flags: 0 = censored, k >= 1 = event of cause k. Events of
// other causes and censorings only leave the risk set.
StepFunction cause_specific_cdf(std::span<const double> times, std::span<const int> cause_flags, int cause);

}  // namespace scr
