#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scr/data_model.hpp"
#include "scr/rng.hpp"

namespace scr {

// Outcome regressions: {P, D} in one-terminal mode, {P, D1, D2} in two-terminal mode.
// Index 0 is always progression.
std::vector<std::string> outcome_names(Mode mode);
std::size_t outcome_count(Mode mode);
std::size_t outcome_index(Mode mode, const std::string& name);  // throws ConfigError

// Regression row without treatment: (1, log x_c ..., x_b ...) in schema order.
std::vector<double> design_row(const CovariateSchema& schema, std::span<const double> x);

struct RegressionPrior {
  std::vector<double> mean;  // design_size coefficients followed by the treatment coefficient
  std::vector<double> var;   // diagonal prior variances, same layout
  double sigma2_shape = 3.0;
  double sigma2_scale = 1.0;
};

struct ContinuousPrior {
  double mean = 0.0;  // location prior N(mean, var) on the log scale
  double var = 1.0;
  double tau_shape = 3.0;
  double tau_scale = 1.0;
};

struct BinaryPrior {
  double a = 1.0;
  double b = 1.0;
};

struct PriorSpec {
  Mode mode = Mode::one_terminal;
  CovariateSchema schema;
  std::vector<RegressionPrior> outcomes;   // indexed like outcome_names(mode)
  std::vector<ContinuousPrior> continuous; // indexed like schema.continuous()
  std::vector<BinaryPrior> binary;         // indexed like schema.binary()
  BinaryPrior treatment;
  double alpha_omega_shape = 1.0;
  double alpha_omega_rate = 1.0;

  void validate() const;  // throws ConfigError
};

// Complete-case log-normal AFT fits per outcome and sample moments of the covariates.
PriorSpec init_priors(const Dataset& ds);

struct OutcomeParams {
  std::vector<double> beta;  // design_size entries
  double beta_z = 0.0;
  double sigma2 = 1.0;

  // Location of the log-time for a design row and treatment arm.
  double mean(std::span<const double> row, int z) const;
};

struct CovariateParams {
  std::vector<double> lambda;  // per continuous covariate, log-scale mean
  std::vector<double> tau;     // per continuous covariate, log-scale variance
  std::vector<double> psi;     // per binary covariate
  double psi_z = 0.5;          // treatment probability

  // log P(x, z | omega) with continuous covariates evaluated on the log scale.
  double log_likelihood(const CovariateSchema& schema, std::span<const double> x, int z) const;
  double log_likelihood_x(const CovariateSchema& schema, std::span<const double> x) const;
};

// One state of the truncated EDPM.
struct MixtureDraw {
  Mode mode = Mode::one_terminal;
  std::vector<double> gamma;                       // N upper weights
  std::vector<std::vector<double>> gamma_nested;   // N x M lower weights
  std::vector<std::vector<OutcomeParams>> theta;   // [outcome][k]
  std::vector<std::vector<CovariateParams>> omega; // [k][j]
  double alpha_omega = 1.0;
  std::int64_t iter = 0;

  std::size_t upper() const { return gamma.size(); }
  std::size_t lower() const { return gamma_nested.empty() ? 0 : gamma_nested.front().size(); }
  void validate(const CovariateSchema& schema) const;  // throws NumericalError
};

struct ChainConfig {
  int N = 10;
  int M = 8;
  std::int64_t iterations = 40000;
  std::int64_t burn_in = 20000;
  std::int64_t thin = 20;
  std::uint64_t seed = 1;
  double alpha_theta = 1.0;

  void validate() const;  // throws ConfigError
  std::int64_t retained() const { return (iterations - burn_in) / thin; }
};

ChainConfig default_chain_config(Mode mode);

struct AllocationState {
  std::vector<int> k;
  std::vector<int> j;
  std::vector<std::vector<double>> y;  // [outcome][subject] complete-data log-times
};

// Normalized w_k(x, z) proportional to gamma_k sum_j gamma_{j|k} P(x, z | omega_{j|k}).
std::vector<double> normalized_weights(const MixtureDraw& draw, const CovariateSchema& schema,
                                       std::span<const double> x, int z);

// Mixture of normals on the log-time scale for one outcome, arm and covariate vector.
struct OutcomeMixture {
  std::vector<double> weight;
  std::vector<double> mean;
  std::vector<double> sd;

  double cdf(double t) const;
  double sf(double t) const;
  double density(double t) const;
  // t with Phi^{-1}(cdf(t)) = v, solved on the tail that keeps precision.
  double latent_quantile(double v) const;
  // Component posterior P(k | t) proportional to weight_k * phi_k(t).
  std::vector<double> component_posterior(double t) const;
};

OutcomeMixture outcome_mixture(const MixtureDraw& draw, const CovariateSchema& schema, std::span<const double> x,
                               int z, std::size_t outcome);

double mixture_cdf(const MixtureDraw& draw, const CovariateSchema& schema, std::span<const double> x, int z,
                   std::size_t outcome, double log_t);

// Posterior of a single Gaussian linear model with independent N(mean, diag var) coefficients
// and known noise variance: returns (posterior mean, posterior covariance) as row-major arrays.
struct GaussianPosterior {
  std::vector<double> mean;
  std::vector<double> cov;  // p x p row-major
};
GaussianPosterior conjugate_regression_posterior(const std::vector<std::vector<double>>& rows,
                                                 std::span<const double> y, std::span<const double> prior_mean,
                                                 std::span<const double> prior_var, double sigma2);

// Draw from N(mean, sd^2) truncated to (bound, inf); the result is strictly above bound.
double truncated_normal_above(double mean, double sd, double bound, Rng& rng);

class Sampler {
 public:
  Sampler(const Dataset& ds, const PriorSpec& prior, const ChainConfig& cfg);

  MixtureDraw initial_draw() const;
  AllocationState initial_state() const;

  // One sweep: augmentation, allocation, sticks, regressions, covariate parameters, alpha_omega.
  void gibbs_step(AllocationState& state, MixtureDraw& draw, Rng& rng) const;

  std::size_t subjects() const { return rows_.size(); }
  bool censored(std::size_t outcome, std::size_t i) const { return !observed_[outcome][i]; }
  double bound(std::size_t outcome, std::size_t i) const { return log_time_[outcome][i]; }

 private:
  void augment(AllocationState& state, const MixtureDraw& draw, Rng& rng) const;
  void allocate(AllocationState& state, const MixtureDraw& draw, Rng& rng) const;
  void update_regressions(const AllocationState& state, MixtureDraw& draw, Rng& rng) const;
  void update_covariates(const AllocationState& state, MixtureDraw& draw, Rng& rng) const;

  const Dataset* ds_;
  PriorSpec prior_;
  ChainConfig cfg_;
  std::size_t n_out_;
  std::vector<std::vector<double>> rows_;        // design rows
  std::vector<std::vector<double>> log_cont_;    // log continuous covariates per subject
  std::vector<std::vector<int>> bin_;            // binary covariates per subject
  std::vector<std::vector<double>> log_time_;    // [outcome][subject] observed or censoring log-time
  std::vector<std::vector<char>> observed_;      // [outcome][subject]
};

using DrawCallback = std::function<void(const MixtureDraw&)>;

// Retains iteration it (1-based) when it > burn_in and (it - burn_in) % thin == 0.
std::vector<MixtureDraw> run_chain(const Dataset& ds, const ChainConfig& cfg, const PriorSpec& prior,
                                   const DrawCallback& on_draw = {});

// Independent chains; chain 0 reproduces run_chain, chain c > 0 uses derive_seed(cfg.seed, c, 1).
// Runs up to `threads` chains at once.
std::vector<std::vector<MixtureDraw>> run_chains(const Dataset& ds, const ChainConfig& cfg, const PriorSpec& prior,
                                                 int chains, int threads);

}  // namespace scr
