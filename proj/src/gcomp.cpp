#include "scr/gcomp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include "scr/error.hpp"

namespace scr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double log_sum_exp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

std::size_t pick(const std::vector<double>& w, double u) {
  double total = 0.0;
  for (double v : w) total += v;
  const double target = u * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (target < acc) return i;
  }
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return i;
  return 0;
}

// Per-draw constants and scratch buffers for replicate evaluation.
class DrawContext {
 public:
  DrawContext(const MixtureDraw& d, const CovariateSchema& s) : d_(d), s_(s), N_(d.upper()), M_(d.lower()) {
    log_g_.resize(N_);
    log_gn_.resize(N_ * M_);
    log_pz_.resize(N_ * M_);
    log_qz_.resize(N_ * M_);
    for (std::size_t k = 0; k < N_; ++k) {
      log_g_[k] = d.gamma[k] > 0.0 ? std::log(d.gamma[k]) : kNegInf;
      for (std::size_t j = 0; j < M_; ++j) {
        const double g = d.gamma_nested[k][j];
        log_gn_[k * M_ + j] = g > 0.0 ? std::log(g) : kNegInf;
        log_pz_[k * M_ + j] = std::log(d.omega[k][j].psi_z);
        log_qz_[k * M_ + j] = std::log1p(-d.omega[k][j].psi_z);
      }
    }
    llx_.resize(N_ * M_);
    inner_.resize(M_);
  }

  void weights(const std::vector<double>& x, std::vector<double>& w0, std::vector<double>& w1) {
    for (std::size_t k = 0; k < N_; ++k)
      for (std::size_t j = 0; j < M_; ++j)
        llx_[k * M_ + j] = log_gn_[k * M_ + j] > kNegInf
                               ? log_gn_[k * M_ + j] + d_.omega[k][j].log_likelihood_x(s_, x)
                               : kNegInf;
    fill_weights(0, w0);
    fill_weights(1, w1);
  }

  void mixture(const std::vector<double>& row, int z, std::size_t o, const std::vector<double>& w,
               OutcomeMixture& mix) const {
    mix.weight = w;
    mix.mean.resize(N_);
    mix.sd.resize(N_);
    for (std::size_t k = 0; k < N_; ++k) {
      const auto& t = d_.theta[o][k];
      mix.mean[k] = t.mean(row, z);
      mix.sd[k] = std::sqrt(t.sigma2);
    }
  }

 private:
  void fill_weights(int z, std::vector<double>& w) {
    w.assign(N_, kNegInf);
    for (std::size_t k = 0; k < N_; ++k) {
      if (log_g_[k] == kNegInf) continue;
      for (std::size_t j = 0; j < M_; ++j) inner_[j] = llx_[k * M_ + j] + (z ? log_pz_ : log_qz_)[k * M_ + j];
      w[k] = log_g_[k] + log_sum_exp(inner_);
    }
    const double total = log_sum_exp(w);
    if (!std::isfinite(total)) throw NumericalError("cluster weights vanish for a simulated subject");
    for (double& v : w) v = std::exp(v - total);
  }

  const MixtureDraw& d_;
  const CovariateSchema& s_;
  std::size_t N_, M_;
  std::vector<double> log_g_, log_gn_, log_pz_, log_qz_, llx_, inner_;
};

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int nt = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Counters {
  std::vector<TauDraw> out;
  std::vector<double> log_u;
  std::int64_t n_mc;
  std::size_t open;

  Counters(const GcompConfig& cfg) : n_mc(cfg.n_mc), open(cfg.u_grid.size()) {
    for (double u : cfg.u_grid) {
      TauDraw t;
      t.u = u;
      out.push_back(t);
      log_u.push_back(std::log(u));
    }
  }
  bool needs(std::size_t i) const { return out[i].n_valid < n_mc; }
  void touch() {
    for (std::size_t i = 0; i < out.size(); ++i)
      if (needs(i)) ++out[i].attempts;
  }
  void record(std::size_t i, bool event1, bool event0) {
    auto& t = out[i];
    ++t.n_valid;
    t.num += event1;
    t.den += event0;
    if (t.n_valid == n_mc) --open;
  }
};

}  // namespace

CopulaParams one_terminal_params(double rho, double rho_star_0, double rho_star_1) {
  return CopulaParams{Correlation(rho), Correlation(rho_star_0), Correlation(rho_star_1), std::nullopt};
}

CopulaParams two_terminal_params(double rho, double rho_star_0, double rho_star_1, double rho_star_star) {
  return CopulaParams{Correlation(rho), Correlation(rho_star_0), Correlation(rho_star_1), Correlation(rho_star_star)};
}

void GcompConfig::validate() const {
  if (u_grid.empty()) throw ConfigError("gcomp: u_grid must be nonempty");
  for (std::size_t i = 0; i < u_grid.size(); ++i) {
    if (!(u_grid[i] > 0.0) || !std::isfinite(u_grid[i])) throw ConfigError("gcomp: thresholds must be positive");
    if (i > 0 && !(u_grid[i] > u_grid[i - 1])) throw ConfigError("gcomp: u_grid must be strictly increasing");
  }
  if (n_mc < 1) throw ConfigError("gcomp: n_mc must be >= 1");
  if (max_attempts != 0 && max_attempts < n_mc) throw ConfigError("gcomp: max_attempts must be >= n_mc");
  if (threads < 1) throw ConfigError("gcomp: threads must be >= 1");
}

double TauDraw::tau() const {
  return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : kNaN;
}

std::string TauEstimate::flag() const {
  if (degenerate && shortfall) return "degenerate+shortfall";
  if (degenerate) return "degenerate";
  if (shortfall) return "shortfall";
  return "ok";
}

SubjectDraw draw_subject(const MixtureDraw& draw, const CovariateSchema& schema, Rng& rng) {
  SubjectDraw s;
  s.k = rng.categorical(draw.gamma);
  s.j = rng.categorical(draw.gamma_nested[s.k]);
  const auto& w = draw.omega[s.k][s.j];
  s.x.resize(schema.size());
  std::size_t c = 0, b = 0;
  for (std::size_t h = 0; h < schema.size(); ++h) {
    if (schema[h].kind == CovariateKind::continuous) {
      s.x[h] = std::exp(rng.normal(w.lambda[c], std::sqrt(w.tau[c])));
      ++c;
    } else {
      s.x[h] = rng.uniform() < w.psi[b] ? 1.0 : 0.0;
      ++b;
    }
  }
  return s;
}

double latent_score(const OutcomeMixture& mix, double t) {
  const double c = mix.cdf(t);
  if (c <= 0.5) return safe_probit(c);
  return -safe_probit(mix.sf(t));
}

std::vector<TauDraw> tau_counts(const MixtureDraw& draw, const CovariateSchema& schema, const CopulaParams& params,
                                const GcompConfig& cfg, std::uint64_t stream_seed) {
  const bool two = params.mode() == Mode::two_terminal;
  if (draw.mode != params.mode()) throw ConfigError("copula parameters do not match the draw's mode");
  const double rho = params.rho.value(), c_rho = params.rho.complement();
  const double rs1 = params.rho_star_1.value(), c1 = params.rho_star_1.complement();
  const double rs0 = params.rho_star_0.value(), c0 = params.rho_star_0.complement();
  const double rss = two ? params.rho_star_star->value() : 0.0;
  const double css = two ? params.rho_star_star->complement() : 1.0;
  // Outcome indices: progression, the death that defines survival, and (two-terminal) the first death.
  const std::size_t oP = 0, oDeath = two ? 2 : 1, oFirst = 1;

  DrawContext ctx(draw, schema);
  Rng rng(stream_seed);
  Counters cnt(cfg);
  const std::size_t U = cfg.u_grid.size();
  std::vector<double> w0, w1, row;
  OutcomeMixture dth1, dth0, first1, first0;
  std::vector<char> valid(U);
  const std::int64_t cap = cfg.attempt_cap();

  for (std::int64_t attempt = 0; attempt < cap && cnt.open > 0; ++attempt) {
    // Every replicate consumes the same draws whatever the grid.
    const SubjectDraw sub = draw_subject(draw, schema, rng);
    const double uk1 = rng.uniform();
    const double nA = rng.normal();
    const double nE = rng.normal();
    const double uk0 = rng.uniform();
    const double e1 = rng.normal();
    const double e_other = rng.normal();
    const double nP1 = two ? rng.normal() : 0.0;
    const double nP0 = two ? rng.normal() : 0.0;
    cnt.touch();

    row = design_row(schema, sub.x);
    ctx.weights(sub.x, w0, w1);
    ctx.mixture(row, 1, oDeath, w1, dth1);
    ctx.mixture(row, 0, oDeath, w0, dth0);

    const std::size_t k1 = pick(w1, uk1);
    const double y_death1 = dth1.mean[k1] + dth1.sd[k1] * nA;
    const double A = latent_score(dth1, y_death1);
    const double B = rho * A + c_rho * nE;

    bool any = false;
    for (std::size_t i = 0; i < U; ++i) {
      valid[i] = cnt.needs(i) && A >= latent_score(dth1, cnt.log_u[i]) && B >= latent_score(dth0, cnt.log_u[i]);
      any = any || valid[i];
    }
    if (!any) continue;

    const double y_death0 = dth0.latent_quantile(B);
    const std::size_t k0 = pick(dth0.component_posterior(y_death0), uk0);
    const double s0 = conditional_score(B, A, params.rho);
    const double s1 = conditional_score(A, B, params.rho);
    const double w_1 = rs1 * s0 + c1 * e1;

    const auto& p1 = draw.theta[oP][k1];
    const auto& p0 = draw.theta[oP][k0];
    double y_prog1, y_prog0;
    if (!two) {
      const double w_0 = rs0 * s1 + c0 * e_other;
      y_prog1 = p1.mean(row, 1) + std::sqrt(p1.sigma2) * w_1;
      y_prog0 = p0.mean(row, 0) + std::sqrt(p0.sigma2) * w_0;
    } else {
      const double e0 = rss * e1 + css * e_other;
      const double w_0 = rs0 * s1 + c0 * e0;
      const auto& f1 = draw.theta[oFirst][k1];
      const auto& f0 = draw.theta[oFirst][k0];
      const double y_first1 = f1.mean(row, 1) + std::sqrt(f1.sigma2) * w_1;
      const double y_first0 = f0.mean(row, 0) + std::sqrt(f0.sigma2) * w_0;
      const bool ordered = y_death1 >= y_first1 && y_death0 >= y_first0;
      for (std::size_t i = 0; i < U; ++i)
        valid[i] = valid[i] && ordered && y_first1 >= cnt.log_u[i] && y_first0 >= cnt.log_u[i];
      y_prog1 = p1.mean(row, 1) + std::sqrt(p1.sigma2) * nP1;
      y_prog0 = p0.mean(row, 0) + std::sqrt(p0.sigma2) * nP0;
    }
    for (std::size_t i = 0; i < U; ++i)
      if (valid[i]) cnt.record(i, y_prog1 < cnt.log_u[i], y_prog0 < cnt.log_u[i]);
  }
  return cnt.out;
}

std::vector<TauDraw> tau_counts_independent(const MixtureDraw& draw, const CovariateSchema& schema, double rho_value,
                                            const GcompConfig& cfg, std::uint64_t stream_seed) {
  if (draw.mode != Mode::one_terminal) throw ConfigError("the independence reference is one-terminal only");
  const Correlation rho(rho_value);
  Rng rng(stream_seed);
  Counters cnt(cfg);
  const std::size_t U = cfg.u_grid.size();
  const std::int64_t cap = cfg.attempt_cap();
  for (std::int64_t attempt = 0; attempt < cap && cnt.open > 0; ++attempt) {
    const SubjectDraw sub = draw_subject(draw, schema, rng);
    const double zp1 = rng.normal();
    const double zp0 = rng.normal();
    const double uk1 = rng.uniform();
    const double uk0 = rng.uniform();
    const double v1 = rng.normal();
    const double v0 = conditional_latent_draw(v1, rho, rng);
    cnt.touch();

    const auto death1 = outcome_mixture(draw, schema, sub.x, 1, 1);
    const auto death0 = outcome_mixture(draw, schema, sub.x, 0, 1);
    const std::size_t k1 = pick(death1.weight, uk1);
    const double y1 = death1.mean[k1] + death1.sd[k1] * v1;
    const double a = latent_score(death1, y1);
    // With a single component a equals v1 and b equals v0.
    const double b = rho.value() * a + rho.complement() * conditional_score(v0, v1, rho);
    const double y0 = death0.latent_quantile(b);
    const std::size_t k0 = pick(death0.component_posterior(y0), uk0);
    const auto row = design_row(schema, sub.x);
    const auto& p1 = draw.theta[0][k1];
    const auto& p0 = draw.theta[0][k0];
    const double yp1 = p1.mean(row, 1) + std::sqrt(p1.sigma2) * zp1;
    const double yp0 = p0.mean(row, 0) + std::sqrt(p0.sigma2) * zp0;
    for (std::size_t i = 0; i < U; ++i)
      if (cnt.needs(i) && y1 >= cnt.log_u[i] && y0 >= cnt.log_u[i])
        cnt.record(i, yp1 < cnt.log_u[i], yp0 < cnt.log_u[i]);
  }
  return cnt.out;
}

std::vector<TauEstimate> summarize_tau(const std::vector<double>& u_grid,
                                       const std::vector<std::vector<TauDraw>>& per_draw) {
  std::vector<TauEstimate> out;
  for (std::size_t i = 0; i < u_grid.size(); ++i) {
    TauEstimate e;
    e.u = u_grid[i];
    for (const auto& d : per_draw) {
      const TauDraw& t = d.at(i);
      if (t.defined())
        e.draw_tau.push_back(t.tau());
      else
        ++e.n_excluded;
    }
    e.n_draws_used = e.draw_tau.size();
    e.degenerate = per_draw.empty() || static_cast<double>(e.n_excluded) > 0.1 * static_cast<double>(per_draw.size());
    std::vector<double> sorted = e.draw_tau;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty()) {
      e.mean = e.ci_low = e.ci_high = kNaN;
    } else {
      double s = 0.0;
      for (double v : e.draw_tau) s += v;
      e.mean = s / static_cast<double>(sorted.size());
      auto quantile = [&](double p) {
        const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
      };
      e.ci_low = quantile(0.025);
      e.ci_high = quantile(0.975);
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

template <class Counter>
std::vector<TauEstimate> estimate_with(const std::vector<MixtureDraw>& draws, const GcompConfig& cfg,
                                       Counter&& count) {
  cfg.validate();
  if (draws.empty()) throw ConfigError("gcomp: no posterior draws");
  std::vector<std::vector<TauDraw>> per_draw(draws.size());
  parallel_for(draws.size(), cfg.threads, [&](std::size_t d) { per_draw[d] = count(d); });
  auto est = summarize_tau(cfg.u_grid, per_draw);
  for (std::size_t i = 0; i < est.size(); ++i)
    for (const auto& d : per_draw)
      if (d[i].n_valid < cfg.n_mc) {
        ++est[i].n_shortfall;
        est[i].shortfall = true;
      }
  return est;
}

}  // namespace

std::vector<TauEstimate> estimate_tau(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                      const CopulaParams& params, const GcompConfig& cfg) {
  return estimate_with(draws, cfg, [&](std::size_t d) {
    return tau_counts(draws[d], schema, params, cfg, derive_seed(cfg.seed, d));
  });
}

std::vector<TauEstimate> estimate_tau_one(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                          const CopulaParams& params, const GcompConfig& cfg) {
  if (params.mode() != Mode::one_terminal) throw ConfigError("rho_star_star is not used in one-terminal mode");
  return estimate_tau(draws, schema, params, cfg);
}

std::vector<TauEstimate> estimate_tau_two(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                          const CopulaParams& params, const GcompConfig& cfg) {
  if (params.mode() != Mode::two_terminal) throw ConfigError("two-terminal estimation needs rho_star_star");
  return estimate_tau(draws, schema, params, cfg);
}

std::vector<TauEstimate> estimate_tau_independent(const std::vector<MixtureDraw>& draws,
                                                  const CovariateSchema& schema, double rho, const GcompConfig& cfg) {
  return estimate_with(draws, cfg, [&](std::size_t d) {
    return tau_counts_independent(draws[d], schema, rho, cfg, derive_seed(cfg.seed, d, 0x1d));
  });
}

std::vector<GridCell> sensitivity_grid(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                       const std::vector<CopulaParams>& grid, const GcompConfig& cfg) {
  if (grid.empty()) throw ConfigError("sensitivity grid is empty");
  for (const auto& p : grid)
    if (p.mode() != grid.front().mode()) throw ConfigError("sensitivity grid mixes one- and two-terminal entries");
  std::vector<GridCell> cells;
  for (const auto& p : grid) {
    GridCell cell{p, {}, {}};
    try {
      cell.estimates = estimate_tau(draws, schema, p, cfg);
    } catch (const Error& e) {
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

namespace {

std::string fmt(const char* f, double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

void write_estimand_csv(std::ostream& out, const std::vector<GridCell>& cells) {
  out << "u,rho,rho_star_0,rho_star_1,rho_star_star,tau_mean,ci_low,ci_high,n_draws_used,flag\n";
  for (const auto& cell : cells) {
    const auto& p = cell.params;
    const std::string params = fmt("%g", p.rho.value()) + "," + fmt("%g", p.rho_star_0.value()) + "," +
                               fmt("%g", p.rho_star_1.value()) + "," +
                               (p.rho_star_star ? fmt("%g", p.rho_star_star->value()) : std::string("NA"));
    if (!cell.error.empty()) {
      out << "NA," << params << ",NA,NA,NA,0,error\n";
      continue;
    }
    for (const auto& e : cell.estimates)
      out << fmt("%g", e.u) << ',' << params << ',' << fmt("%.6f", e.mean) << ',' << fmt("%.6f", e.ci_low) << ','
          << fmt("%.6f", e.ci_high) << ',' << e.n_draws_used << ',' << e.flag() << '\n';
  }
}

std::string format_report_row(const TauEstimate& est) {
  return "u=" + fmt("%g", est.u) + " → " + fmt("%.2f", est.mean) + " (" + fmt("%.2f", est.ci_low) + ", " +
         fmt("%.2f", est.ci_high) + ")";
}

}  // namespace scr
