#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scr/edpm.hpp"
#include "scr/gauss_copula.hpp"

namespace scr {

// Sensitivity correlations. rho couples the two arms' (last) death latents, rho_star_z couples
// arm z's first outcome to the other arm's death score, rho_star_star couples the two
// first-death scores in two-terminal mode.
struct CopulaParams {
  Correlation rho;
  Correlation rho_star_0;
  Correlation rho_star_1;
  std::optional<Correlation> rho_star_star;

  Mode mode() const { return rho_star_star ? Mode::two_terminal : Mode::one_terminal; }
};

CopulaParams one_terminal_params(double rho, double rho_star_0, double rho_star_1);
CopulaParams two_terminal_params(double rho, double rho_star_0, double rho_star_1, double rho_star_star);

struct GcompConfig {
  std::vector<double> u_grid{10.0, 20.0, 30.0, 40.0};
  std::int64_t n_mc = 2000;
  std::int64_t max_attempts = 0;  // 0 means 50 * n_mc
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;  // throws ConfigError
  std::int64_t attempt_cap() const { return max_attempts > 0 ? max_attempts : 50 * n_mc; }
};

// Monte-Carlo counts for one posterior draw at one threshold.
struct TauDraw {
  double u = 0.0;
  std::int64_t num = 0;      // progression events in arm 1 among valid replicates
  std::int64_t den = 0;      // progression events in arm 0 among valid replicates
  std::int64_t n_valid = 0;  // replicates meeting the survival criterion
  std::int64_t attempts = 0; // replicates examined until n_valid reached n_mc (or the cap)

  bool defined() const { return den > 0; }
  double tau() const;  // NaN when undefined
};

struct TauEstimate {
  double u = 0.0;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_draws_used = 0;
  std::size_t n_excluded = 0;
  std::size_t n_shortfall = 0;
  bool degenerate = false;  // more than 10% of draws had den = 0
  bool shortfall = false;   // some draw hit max_attempts before n_mc valid replicates
  std::vector<double> draw_tau;  // per-draw ratios that entered the summary

  std::string flag() const;  // "ok", "degenerate", "shortfall" or "degenerate+shortfall"
};

struct SubjectDraw {
  std::size_t k = 0;
  std::size_t j = 0;
  std::vector<double> x;  // covariates on the original scale, schema order
};

// k ~ gamma, j | k ~ gamma_nested[k], then covariates from omega[k][j]:
// continuous log-normal(lambda, sqrt(tau)), binary Bernoulli(psi).
SubjectDraw draw_subject(const MixtureDraw& draw, const CovariateSchema& schema, Rng& rng);

// Phi^{-1}(G(t)) computed from whichever tail keeps precision, clamped like safe_probit.
double latent_score(const OutcomeMixture& mix, double t);

// Counts for a single posterior draw; all thresholds share one replicate stream seeded by stream_seed.
std::vector<TauDraw> tau_counts(const MixtureDraw& draw, const CovariateSchema& schema, const CopulaParams& params,
                                const GcompConfig& cfg, std::uint64_t stream_seed);

// Conditional-independence reference for one-terminal mode: progression log-times are drawn
// directly from the selected cluster with no cross-arm dependence.
std::vector<TauDraw> tau_counts_independent(const MixtureDraw& draw, const CovariateSchema& schema, double rho,
                                            const GcompConfig& cfg, std::uint64_t stream_seed);

// Posterior mean and 2.5% / 97.5% quantiles over draws with den > 0.
std::vector<TauEstimate> summarize_tau(const std::vector<double>& u_grid,
                                       const std::vector<std::vector<TauDraw>>& per_draw);

// Draw d uses the stream derive_seed(cfg.seed, d).
std::vector<TauEstimate> estimate_tau(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                      const CopulaParams& params, const GcompConfig& cfg);
std::vector<TauEstimate> estimate_tau_one(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                          const CopulaParams& params, const GcompConfig& cfg);
std::vector<TauEstimate> estimate_tau_two(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                          const CopulaParams& params, const GcompConfig& cfg);
std::vector<TauEstimate> estimate_tau_independent(const std::vector<MixtureDraw>& draws,
                                                  const CovariateSchema& schema, double rho, const GcompConfig& cfg);

struct GridCell {
  CopulaParams params;
  std::vector<TauEstimate> estimates;
  std::string error;  // nonempty when the cell failed
};

std::vector<GridCell> sensitivity_grid(const std::vector<MixtureDraw>& draws, const CovariateSchema& schema,
                                       const std::vector<CopulaParams>& grid, const GcompConfig& cfg);

// Columns: u,rho,rho_star_0,rho_star_1,rho_star_star,tau_mean,ci_low,ci_high,n_draws_used,flag
void write_estimand_csv(std::ostream& out, const std::vector<GridCell>& cells);

// "u=10 → 0.86 (0.53, 1.26)"
std::string format_report_row(const TauEstimate& est);

}  // namespace scr
