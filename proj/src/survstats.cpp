#include "scr/survstats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scr/error.hpp"

namespace scr {

double StepFunction::operator()(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return initial;
  return values[static_cast<std::size_t>(it - times.begin()) - 1];
}

namespace {

struct TimeGroup {
  double time;
  std::size_t at_risk;
  std::size_t events;  // events counted toward the estimator
};

// Distinct times with their risk-set size and event count. `is_event` decides
// which flags count; every subject leaves the risk set after its time.
template <class Pred>
std::vector<TimeGroup> group_times(std::span<const double> times, std::span<const int> flags, Pred is_event) {
  if (times.size() != flags.size()) throw DataError("times and flags differ in length");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  std::vector<TimeGroup> groups;
  std::size_t remaining = times.size();
  for (std::size_t i = 0; i < order.size();) {
    const double t = times[order[i]];
    if (!(t > 0.0) || !std::isfinite(t)) throw DataError("survival times must be positive and finite");
    std::size_t events = 0;
    std::size_t j = i;
    for (; j < order.size() && times[order[j]] == t; ++j)
      if (is_event(flags[order[j]])) ++events;
    groups.push_back({t, remaining, events});
    remaining -= j - i;
    i = j;
  }
  return groups;
}

}  // namespace

StepFunction kaplan_meier(std::span<const double> times, std::span<const int> event_flags) {
  for (int f : event_flags)
    if (f != 0 && f != 1) throw DataError("event flags must be 0 or 1");
  StepFunction out;
  out.initial = 1.0;
  double s = 1.0;
  for (const auto& g : group_times(times, event_flags, [](int f) { return f == 1; })) {
    if (g.events == 0) continue;
    s *= 1.0 - static_cast<double>(g.events) / static_cast<double>(g.at_risk);
    out.times.push_back(g.time);
    out.values.push_back(s);
  }
  return out;
}

StepFunction cause_specific_cdf(std::span<const double> times, std::span<const int> cause_flags, int cause) {
  if (cause < 1) throw DataError("cause must be a positive cause code");
  StepFunction out;
  out.initial = 0.0;
  double cumhaz = 0.0;
  for (const auto& g : group_times(times, cause_flags, [cause](int f) { return f == cause; })) {
    if (g.events == 0) continue;
    if (g.at_risk == 0) throw DataError("no subjects at risk at an event time");
    cumhaz += static_cast<double>(g.events) / static_cast<double>(g.at_risk);
    out.times.push_back(g.time);
    out.values.push_back(1.0 - std::exp(-cumhaz));
  }
  return out;
}

}  // namespace scr
