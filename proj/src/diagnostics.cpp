#include "scr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "scr/error.hpp"

namespace scr {

double effective_sample_size(std::span<const double> chain, bool* zero_variance) {
  const std::size_t n = chain.size();
  if (zero_variance) *zero_variance = false;
  if (n < 2) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : chain) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = chain[i] - mean;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += x[i] * x[i + lag];
    return s / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) {
    if (zero_variance) *zero_variance = true;
    return static_cast<double>(n);
  }
  double sum = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(static_cast<double>(std::max<std::size_t>(n, 10))));
  return static_cast<double>(n) / tau;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw DataError("split R-hat needs at least two chains");
  std::size_t len = chains.front().size();
  for (const auto& c : chains) len = std::min(len, c.size());
  const std::size_t half = len / 2;
  if (half < 2) throw DataError("split R-hat needs at least four draws per chain");
  std::vector<std::span<const double>> parts;
  for (const auto& c : chains) {
    parts.emplace_back(c.data(), half);
    parts.emplace_back(c.data() + (len - half), half);
  }
  const double m = static_cast<double>(parts.size());
  const double n = static_cast<double>(half);
  std::vector<double> means, vars;
  for (const auto& p : parts) {
    double mu = 0.0;
    for (double v : p) mu += v;
    mu /= n;
    double s = 0.0;
    for (double v : p) s += (v - mu) * (v - mu);
    means.push_back(mu);
    vars.push_back(s / (n - 1.0));
  }
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= m;
  double B = 0.0;
  for (double v : means) B += (v - grand) * (v - grand);
  B *= n / (m - 1.0);
  double W = 0.0;
  for (double v : vars) W += v;
  W /= m;
  if (!(W > 0.0)) return B > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

std::vector<std::pair<std::string, double>> draw_scalars(const MixtureDraw& draw) {
  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("alpha_omega", draw.alpha_omega);
  out.emplace_back("max_gamma", *std::max_element(draw.gamma.begin(), draw.gamma.end()));
  const auto names = outcome_names(draw.mode);
  for (std::size_t o = 0; o < names.size(); ++o) {
    const auto& per_k = draw.theta[o];
    const std::size_t p = per_k.front().beta.size();
    std::vector<double> beta(p, 0.0);
    double bz = 0.0, s2 = 0.0;
    for (std::size_t k = 0; k < per_k.size(); ++k) {
      for (std::size_t c = 0; c < p; ++c) beta[c] += draw.gamma[k] * per_k[k].beta[c];
      bz += draw.gamma[k] * per_k[k].beta_z;
      s2 += draw.gamma[k] * per_k[k].sigma2;
    }
    for (std::size_t c = 0; c < p; ++c) out.emplace_back(names[o] + ".beta[" + std::to_string(c) + "]", beta[c]);
    out.emplace_back(names[o] + ".beta_z", bz);
    out.emplace_back(names[o] + ".sigma2", s2);
  }
  return out;
}

std::vector<ParamDiagnostic> diagnose(const std::vector<std::vector<MixtureDraw>>& chains) {
  if (chains.empty()) throw DataError("diagnostics need at least one chain");
  for (const auto& c : chains)
    if (c.size() < 10)
      throw DataError("diagnostics need at least 10 draws per chain, got " + std::to_string(c.size()));
  // series[param][chain][draw]
  std::vector<std::string> names;
  std::vector<std::vector<std::vector<double>>> series;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (const auto& d : chains[c]) {
      const auto scalars = draw_scalars(d);
      if (names.empty()) {
        for (const auto& s : scalars) names.push_back(s.first);
        series.assign(names.size(), std::vector<std::vector<double>>(chains.size()));
      }
      if (scalars.size() != names.size()) throw DataError("draws disagree in shape");
      for (std::size_t p = 0; p < scalars.size(); ++p) series[p][c].push_back(scalars[p].second);
    }
  std::vector<ParamDiagnostic> out;
  for (std::size_t p = 0; p < names.size(); ++p) {
    ParamDiagnostic d;
    d.name = names[p];
    d.n = chains.front().size();
    bool all_constant = true;
    for (const auto& c : series[p]) {
      bool zero = false;
      d.ess += effective_sample_size(c, &zero);
      all_constant = all_constant && zero;
    }
    d.zero_variance = all_constant;
    if (chains.size() >= 2) d.rhat = split_rhat(series[p]);
    out.push_back(std::move(d));
  }
  return out;
}

void write_diagnostics_csv(std::ostream& out, const std::vector<ParamDiagnostic>& diags) {
  out << "parameter,n,ess,rhat,zero_variance\n";
  char buf[64];
  for (const auto& d : diags) {
    out << d.name << ',' << d.n << ',';
    std::snprintf(buf, sizeof buf, "%.1f", d.ess);
    out << buf << ',';
    if (d.rhat) {
      std::snprintf(buf, sizeof buf, "%.4f", *d.rhat);
      out << buf;
    } else {
      out << "NA";
    }
    out << ',' << (d.zero_variance ? 1 : 0) << '\n';
  }
}

}  // namespace scr
