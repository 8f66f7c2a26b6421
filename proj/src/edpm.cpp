#include "scr/edpm.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include <Eigen/Dense>

#include "scr/error.hpp"
#include "scr/gauss_copula.hpp"

namespace scr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kProbFloor = 1e-12;

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

double ig_mean(double shape, double scale) { return shape > 1.0 ? scale / (shape - 1.0) : scale; }

// Truncated stick-breaking: the last stick is 1 so the weights sum to one.
std::vector<double> sticks_to_weights(std::span<const double> nu) {
  std::vector<double> w(nu.size());
  double rest = 1.0;
  for (std::size_t k = 0; k + 1 < nu.size(); ++k) {
    w[k] = nu[k] * rest;
    rest *= 1.0 - nu[k];
  }
  w.back() = rest;
  return w;
}

std::vector<double> prior_mean_weights(std::size_t n, double alpha) {
  std::vector<double> nu(n, 1.0 / (1.0 + alpha));
  return sticks_to_weights(nu);
}

// Bound and observation flag of outcome o for one record.
std::pair<double, bool> outcome_obs(const ObservedRecord& r, Mode mode, std::size_t o) {
  if (o == 0) return {std::log(r.t1), r.delta == 1};
  if (mode == Mode::one_terminal || o == 1) return {std::log(r.t2), r.xi1 == 1};
  return {std::log(r.t2), r.xi2 == 1};
}

}  // namespace

std::vector<std::string> outcome_names(Mode mode) {
  if (mode == Mode::one_terminal) return {"P", "D"};
  return {"P", "D1", "D2"};
}

std::size_t outcome_count(Mode mode) { return mode == Mode::one_terminal ? 2 : 3; }

std::size_t outcome_index(Mode mode, const std::string& name) {
  const auto names = outcome_names(mode);
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw ConfigError("unknown outcome '" + name + "' for " + to_string(mode) + " mode");
}

std::vector<double> design_row(const CovariateSchema& schema, std::span<const double> x) {
  if (x.size() != schema.size())
    throw DataError("covariate vector has " + std::to_string(x.size()) + " entries, schema has " +
                    std::to_string(schema.size()));
  std::vector<double> row(schema.design_size());
  row[0] = 1.0;
  for (std::size_t h = 0; h < schema.size(); ++h)
    row[h + 1] = schema[h].kind == CovariateKind::continuous ? std::log(x[h]) : x[h];
  return row;
}

void PriorSpec::validate() const {
  if (outcomes.size() != outcome_count(mode)) throw ConfigError("prior: wrong number of outcome regressions");
  const std::size_t p = schema.design_size() + 1;
  for (const auto& o : outcomes) {
    if (o.mean.size() != p || o.var.size() != p) throw ConfigError("prior: regression dimension mismatch");
    for (double v : o.var)
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("prior: regression variances must be positive");
    if (!(o.sigma2_shape > 0.0 && o.sigma2_scale > 0.0)) throw ConfigError("prior: bad variance prior");
  }
  if (continuous.size() != schema.continuous().size() || binary.size() != schema.binary().size())
    throw ConfigError("prior: covariate prior count mismatch");
  for (const auto& c : continuous)
    if (!(c.var > 0.0 && c.tau_shape > 0.0 && c.tau_scale > 0.0))
      throw ConfigError("prior: continuous covariate prior must have positive parameters");
  for (const auto& b : binary)
    if (!(b.a > 0.0 && b.b > 0.0)) throw ConfigError("prior: Beta parameters must be positive");
  if (!(treatment.a > 0.0 && treatment.b > 0.0)) throw ConfigError("prior: Beta parameters must be positive");
  if (!(alpha_omega_shape > 0.0 && alpha_omega_rate > 0.0)) throw ConfigError("prior: bad alpha_omega prior");
}

PriorSpec init_priors(const Dataset& ds) {
  PriorSpec prior;
  prior.mode = ds.mode;
  prior.schema = ds.schema;
  const std::size_t n = ds.size();
  const std::size_t p = ds.schema.design_size() + 1;
  const auto names = outcome_names(ds.mode);

  for (std::size_t o = 0; o < names.size(); ++o) {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (const auto& r : ds.records) {
      const auto [t, seen] = outcome_obs(r, ds.mode, o);
      if (!seen) continue;
      auto row = design_row(ds.schema, r.x);
      row.push_back(r.z);
      rows.push_back(std::move(row));
      y.push_back(t);
    }
    const std::size_t ne = y.size();
    if (ne < p + 2)
      throw DataError("cannot initialise priors for outcome " + names[o] + ": " + std::to_string(ne) +
                      " events, need at least " + std::to_string(p + 2));
    Eigen::MatrixXd X(ne, p);
    Eigen::VectorXd Y(ne);
    for (std::size_t i = 0; i < ne; ++i) {
      for (std::size_t c = 0; c < p; ++c) X(i, c) = rows[i][c];
      Y(i) = y[i];
    }
    const Eigen::MatrixXd xtx = X.transpose() * X;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xtx);
    if (qr.rank() < static_cast<Eigen::Index>(p))
      throw DataError("cannot initialise priors for outcome " + names[o] + ": design is rank deficient");
    const Eigen::VectorXd beta = qr.solve(X.transpose() * Y);
    const double rss = (Y - X * beta).squaredNorm();
    const double s2 = std::max(rss / static_cast<double>(ne), 1e-8);
    const Eigen::MatrixXd inv = qr.inverse();
    RegressionPrior rp;
    rp.mean.assign(beta.data(), beta.data() + p);
    rp.var.resize(p);
    for (std::size_t c = 0; c < p; ++c) rp.var[c] = static_cast<double>(ne) / 5.0 * s2 * inv(c, c);
    rp.sigma2_shape = 3.0;
    rp.sigma2_scale = s2;
    prior.outcomes.push_back(std::move(rp));
  }

  for (std::size_t h : ds.schema.continuous()) {
    double sum = 0.0, sq = 0.0;
    for (const auto& r : ds.records) sum += std::log(r.x[h]);
    const double mean = sum / static_cast<double>(n);
    for (const auto& r : ds.records) sq += std::pow(std::log(r.x[h]) - mean, 2);
    const double var = sq / static_cast<double>(n);
    if (!(var > 0.0))
      throw DataError("cannot initialise priors: covariate " + ds.schema[h].name + " has zero variance");
    prior.continuous.push_back({mean, static_cast<double>(n) / 5.0 * var, 3.0, 2.0 * var});
  }
  auto beta_prior = [&](auto value_of) {
    double s = 0.0;
    for (const auto& r : ds.records) s += value_of(r);
    const double pbar = std::clamp(s / static_cast<double>(n), 0.005, 0.995);
    return BinaryPrior{10.0 * pbar, 10.0 * (1.0 - pbar)};
  };
  for (std::size_t h : ds.schema.binary())
    prior.binary.push_back(beta_prior([h](const ObservedRecord& r) { return r.x[h]; }));
  prior.treatment = beta_prior([](const ObservedRecord& r) { return static_cast<double>(r.z); });
  prior.validate();
  return prior;
}

double OutcomeParams::mean(std::span<const double> row, int z) const {
  double m = beta_z * z;
  for (std::size_t c = 0; c < beta.size(); ++c) m += beta[c] * row[c];
  return m;
}

double CovariateParams::log_likelihood_x(const CovariateSchema& schema, std::span<const double> x) const {
  double ll = 0.0;
  const auto& cont = schema.continuous();
  const auto& bin = schema.binary();
  for (std::size_t c = 0; c < cont.size(); ++c) ll += log_normal_pdf(std::log(x[cont[c]]), lambda[c], tau[c]);
  for (std::size_t b = 0; b < bin.size(); ++b) ll += std::log(x[bin[b]] > 0.5 ? psi[b] : 1.0 - psi[b]);
  return ll;
}

double CovariateParams::log_likelihood(const CovariateSchema& schema, std::span<const double> x, int z) const {
  return log_likelihood_x(schema, x) + std::log(z ? psi_z : 1.0 - psi_z);
}

void MixtureDraw::validate(const CovariateSchema& schema) const {
  const std::size_t N = upper();
  const std::size_t M = lower();
  if (N == 0 || M == 0) throw NumericalError("mixture draw has no components");
  auto check_simplex = [](std::span<const double> w, const char* what) {
    double s = 0.0;
    for (double v : w) {
      if (!(v >= 0.0)) throw NumericalError(std::string(what) + " has a negative or NaN weight");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw NumericalError(std::string(what) + " does not sum to one");
  };
  check_simplex(gamma, "gamma");
  if (gamma_nested.size() != N) throw NumericalError("gamma_nested has wrong shape");
  for (const auto& g : gamma_nested) {
    if (g.size() != M) throw NumericalError("gamma_nested has wrong shape");
    check_simplex(g, "gamma_nested");
  }
  if (theta.size() != outcome_count(mode)) throw NumericalError("theta has wrong number of outcomes");
  for (const auto& per_k : theta) {
    if (per_k.size() != N) throw NumericalError("theta has wrong number of clusters");
    for (const auto& t : per_k)
      if (t.beta.size() != schema.design_size() || !(t.sigma2 > 0.0))
        throw NumericalError("theta entry malformed");
  }
  if (omega.size() != N) throw NumericalError("omega has wrong number of clusters");
  for (const auto& per_j : omega) {
    if (per_j.size() != M) throw NumericalError("omega has wrong number of lower clusters");
    for (const auto& w : per_j) {
      if (w.lambda.size() != schema.continuous().size() || w.tau.size() != schema.continuous().size() ||
          w.psi.size() != schema.binary().size())
        throw NumericalError("omega entry malformed");
      for (double t : w.tau)
        if (!(t > 0.0)) throw NumericalError("omega tau must be positive");
      for (double q : w.psi)
        if (!(q > 0.0 && q < 1.0)) throw NumericalError("omega psi must lie in (0, 1)");
      if (!(w.psi_z > 0.0 && w.psi_z < 1.0)) throw NumericalError("omega psi_z must lie in (0, 1)");
    }
  }
  if (!(alpha_omega > 0.0)) throw NumericalError("alpha_omega must be positive");
}

void ChainConfig::validate() const {
  if (N < 1 || M < 1) throw ConfigError("chain: truncation levels N and M must be >= 1");
  if (iterations < 1) throw ConfigError("chain: iterations must be >= 1");
  if (burn_in < 0 || burn_in >= iterations) throw ConfigError("chain: burn_in must lie in [0, iterations)");
  if (thin < 1) throw ConfigError("chain: thin must be >= 1");
  if (!(alpha_theta > 0.0)) throw ConfigError("chain: alpha_theta must be positive");
}

ChainConfig default_chain_config(Mode mode) {
  ChainConfig cfg;
  cfg.iterations = mode == Mode::one_terminal ? 40000 : 50000;
  cfg.burn_in = cfg.iterations / 2;
  cfg.thin = (cfg.iterations - cfg.burn_in) / 1000;
  return cfg;
}

std::vector<double> normalized_weights(const MixtureDraw& draw, const CovariateSchema& schema,
                                       std::span<const double> x, int z) {
  const std::size_t N = draw.upper();
  const std::size_t M = draw.lower();
  std::vector<double> lw(N, kNegInf);
  std::vector<double> inner(M);
  for (std::size_t k = 0; k < N; ++k) {
    if (!(draw.gamma[k] > 0.0)) continue;
    for (std::size_t j = 0; j < M; ++j)
      inner[j] = draw.gamma_nested[k][j] > 0.0
                     ? std::log(draw.gamma_nested[k][j]) + draw.omega[k][j].log_likelihood(schema, x, z)
                     : kNegInf;
    lw[k] = std::log(draw.gamma[k]) + log_sum_exp(inner);
  }
  const double total = log_sum_exp(lw);
  if (!std::isfinite(total)) throw NumericalError("cluster weights vanish for this covariate vector");
  for (double& v : lw) v = std::exp(v - total);
  return lw;
}

double OutcomeMixture::cdf(double t) const {
  double s = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k)
    if (weight[k] > 0.0) s += weight[k] * normal_cdf((t - mean[k]) / sd[k]);
  return std::min(s, 1.0);
}

double OutcomeMixture::sf(double t) const {
  double s = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k)
    if (weight[k] > 0.0) s += weight[k] * normal_sf((t - mean[k]) / sd[k]);
  return std::min(s, 1.0);
}

double OutcomeMixture::density(double t) const {
  double s = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k)
    if (weight[k] > 0.0) s += weight[k] * normal_pdf((t - mean[k]) / sd[k]) / sd[k];
  return s;
}

double OutcomeMixture::latent_quantile(double v) const {
  std::size_t active = 0, last = 0;
  for (std::size_t k = 0; k < weight.size(); ++k)
    if (weight[k] > 0.0) ++active, last = k;
  if (active == 1) return mean[last] + sd[last] * v;

  // Increasing residual: lower tail below the median, upper tail above it.
  const bool upper = v > 0.0;
  const double target = upper ? normal_sf(v) : normal_cdf(v);
  auto residual = [&](double t) { return upper ? target - sf(t) : cdf(t) - target; };
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    if (!(weight[k] > 0.0)) continue;
    lo = std::min(lo, mean[k] - sd[k] * (std::abs(v) + 12.0));
    hi = std::max(hi, mean[k] + sd[k] * (std::abs(v) + 12.0));
  }
  double t = 0.0;
  for (std::size_t k = 0; k < weight.size(); ++k) t += weight[k] * mean[k];
  t = std::clamp(t, lo, hi);
  for (int iter = 0; iter < 200; ++iter) {
    const double f = residual(t);
    if (f == 0.0) return t;
    if (f < 0.0)
      lo = t;
    else
      hi = t;
    const double d = density(t);
    double next = d > 0.0 ? t - f / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) <= 1e-13 * (1.0 + std::abs(t)) || hi - lo <= 1e-13 * (1.0 + std::abs(t))) return next;
    t = next;
  }
  return t;
}

std::vector<double> OutcomeMixture::component_posterior(double t) const {
  std::vector<double> lp(weight.size(), kNegInf);
  for (std::size_t k = 0; k < weight.size(); ++k)
    if (weight[k] > 0.0) lp[k] = std::log(weight[k]) + log_normal_pdf(t, mean[k], sd[k] * sd[k]);
  const double total = log_sum_exp(lp);
  if (!std::isfinite(total)) throw NumericalError("component posterior vanishes");
  for (double& v : lp) v = std::exp(v - total);
  return lp;
}

OutcomeMixture outcome_mixture(const MixtureDraw& draw, const CovariateSchema& schema, std::span<const double> x,
                               int z, std::size_t outcome) {
  if (outcome >= draw.theta.size()) throw ConfigError("unknown outcome index " + std::to_string(outcome));
  OutcomeMixture mix;
  mix.weight = normalized_weights(draw, schema, x, z);
  const auto row = design_row(schema, x);
  for (const auto& t : draw.theta[outcome]) {
    mix.mean.push_back(t.mean(row, z));
    mix.sd.push_back(std::sqrt(t.sigma2));
  }
  return mix;
}

double mixture_cdf(const MixtureDraw& draw, const CovariateSchema& schema, std::span<const double> x, int z,
                   std::size_t outcome, double log_t) {
  return outcome_mixture(draw, schema, x, z, outcome).cdf(log_t);
}

GaussianPosterior conjugate_regression_posterior(const std::vector<std::vector<double>>& rows,
                                                 std::span<const double> y, std::span<const double> prior_mean,
                                                 std::span<const double> prior_var, double sigma2) {
  const std::size_t p = prior_mean.size();
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b(p);
  for (std::size_t c = 0; c < p; ++c) {
    Q(c, c) = 1.0 / prior_var[c];
    b(c) = prior_mean[c] / prior_var[c];
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Eigen::Map<const Eigen::VectorXd> r(rows[i].data(), p);
    Q.noalias() += r * r.transpose() / sigma2;
    b.noalias() += r * (y[i] / sigma2);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success) throw NumericalError("regression precision is not positive definite");
  const Eigen::VectorXd mu = llt.solve(b);
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
  GaussianPosterior out;
  out.mean.assign(mu.data(), mu.data() + p);
  out.cov.resize(p * p);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) out.cov[r * p + c] = cov(r, c);
  return out;
}

double truncated_normal_above(double mean, double sd, double bound, Rng& rng) {
  const double alpha = (bound - mean) / sd;
  double z = -std::numeric_limits<double>::infinity();
  if (alpha < 7.0) z = -normal_quantile(rng.uniform() * normal_sf(alpha));
  if (!(z > alpha)) {
    // Robert (1995) exponential proposal for far tails.
    const double lam = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
    do {
      z = alpha - std::log(rng.uniform()) / lam;
    } while (rng.uniform() > std::exp(-0.5 * (z - lam) * (z - lam)));
  }
  double y = mean + sd * z;
  if (!std::isfinite(y)) throw NumericalError("truncated normal draw is not finite");
  if (!(y > bound)) y = std::nextafter(bound, std::numeric_limits<double>::infinity());
  return y;
}

Sampler::Sampler(const Dataset& ds, const PriorSpec& prior, const ChainConfig& cfg)
    : ds_(&ds), prior_(prior), cfg_(cfg), n_out_(outcome_count(ds.mode)) {
  cfg_.validate();
  prior_.validate();
  if (prior_.mode != ds.mode) throw ConfigError("prior mode does not match dataset mode");
  if (prior_.schema.size() != ds.schema.size()) throw ConfigError("prior schema does not match dataset schema");
  const std::size_t n = ds.size();
  log_time_.assign(n_out_, std::vector<double>(n));
  observed_.assign(n_out_, std::vector<char>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ds.records[i];
    rows_.push_back(design_row(ds.schema, r.x));
    std::vector<double> lc;
    for (std::size_t h : ds.schema.continuous()) lc.push_back(std::log(r.x[h]));
    std::vector<int> b;
    for (std::size_t h : ds.schema.binary()) b.push_back(r.x[h] > 0.5 ? 1 : 0);
    log_cont_.push_back(std::move(lc));
    bin_.push_back(std::move(b));
    for (std::size_t o = 0; o < n_out_; ++o) {
      const auto [t, seen] = outcome_obs(r, ds.mode, o);
      log_time_[o][i] = t;
      observed_[o][i] = seen;
    }
  }
}

MixtureDraw Sampler::initial_draw() const {
  MixtureDraw d;
  d.mode = ds_->mode;
  const auto N = static_cast<std::size_t>(cfg_.N);
  const auto M = static_cast<std::size_t>(cfg_.M);
  d.alpha_omega = 1.0;
  d.gamma = prior_mean_weights(N, cfg_.alpha_theta);
  d.gamma_nested.assign(N, prior_mean_weights(M, d.alpha_omega));
  const std::size_t p = prior_.schema.design_size();
  for (const auto& rp : prior_.outcomes) {
    OutcomeParams t;
    t.beta.assign(rp.mean.begin(), rp.mean.begin() + static_cast<std::ptrdiff_t>(p));
    t.beta_z = rp.mean[p];
    t.sigma2 = ig_mean(rp.sigma2_shape, rp.sigma2_scale);
    d.theta.emplace_back(N, t);
  }
  CovariateParams w;
  for (const auto& c : prior_.continuous) {
    w.lambda.push_back(c.mean);
    w.tau.push_back(ig_mean(c.tau_shape, c.tau_scale));
  }
  for (const auto& b : prior_.binary) w.psi.push_back(b.a / (b.a + b.b));
  w.psi_z = prior_.treatment.a / (prior_.treatment.a + prior_.treatment.b);
  d.omega.assign(N, std::vector<CovariateParams>(M, w));
  return d;
}

AllocationState Sampler::initial_state() const {
  AllocationState s;
  s.k.assign(subjects(), 0);
  s.j.assign(subjects(), 0);
  s.y = log_time_;
  return s;
}

void Sampler::augment(AllocationState& state, const MixtureDraw& draw, Rng& rng) const {
  for (std::size_t o = 0; o < n_out_; ++o)
    for (std::size_t i = 0; i < subjects(); ++i) {
      if (observed_[o][i]) {
        state.y[o][i] = log_time_[o][i];
        continue;
      }
      const auto& t = draw.theta[o][static_cast<std::size_t>(state.k[i])];
      const double m = t.mean(rows_[i], ds_->records[i].z);
      if (!std::isfinite(m) || !(t.sigma2 > 0.0))
        throw NumericalError("subject " + std::to_string(i) + ": non-finite augmentation likelihood");
      state.y[o][i] = truncated_normal_above(m, std::sqrt(t.sigma2), log_time_[o][i], rng);
    }
}

void Sampler::allocate(AllocationState& state, const MixtureDraw& draw, Rng& rng) const {
  const std::size_t N = draw.upper();
  const std::size_t M = draw.lower();
  const std::size_t nc = prior_.continuous.size();
  const std::size_t nb = prior_.binary.size();

  // Per-(k, j) constants of the covariate likelihood.
  std::vector<double> log_gk(N), log_gjk(N * M), cont_const(N * M), log_pz(N * M), log_qz(N * M);
  std::vector<double> log_p(N * M * nb), log_q(N * M * nb);
  for (std::size_t k = 0; k < N; ++k) {
    log_gk[k] = draw.gamma[k] > 0.0 ? std::log(draw.gamma[k]) : kNegInf;
    for (std::size_t j = 0; j < M; ++j) {
      const std::size_t kj = k * M + j;
      const auto& w = draw.omega[k][j];
      log_gjk[kj] = draw.gamma_nested[k][j] > 0.0 ? std::log(draw.gamma_nested[k][j]) : kNegInf;
      double cc = 0.0;
      for (std::size_t c = 0; c < nc; ++c) cc -= 0.5 * (kLog2Pi + std::log(w.tau[c]));
      cont_const[kj] = cc;
      log_pz[kj] = std::log(w.psi_z);
      log_qz[kj] = std::log1p(-w.psi_z);
      for (std::size_t b = 0; b < nb; ++b) {
        log_p[kj * nb + b] = std::log(w.psi[b]);
        log_q[kj * nb + b] = std::log1p(-w.psi[b]);
      }
    }
  }

  std::vector<double> lk(N), logits(N * M);
  for (std::size_t i = 0; i < subjects(); ++i) {
    const int z = ds_->records[i].z;
    for (std::size_t k = 0; k < N; ++k) {
      double l = log_gk[k];
      for (std::size_t o = 0; o < n_out_; ++o) {
        const auto& t = draw.theta[o][k];
        l += log_normal_pdf(state.y[o][i], t.mean(rows_[i], z), t.sigma2);
      }
      lk[k] = l;
    }
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t j = 0; j < M; ++j) {
        const std::size_t kj = k * M + j;
        const auto& w = draw.omega[k][j];
        double l = lk[k] + log_gjk[kj] + cont_const[kj] + (z ? log_pz[kj] : log_qz[kj]);
        for (std::size_t c = 0; c < nc; ++c) {
          const double d = log_cont_[i][c] - w.lambda[c];
          l -= 0.5 * d * d / w.tau[c];
        }
        for (std::size_t b = 0; b < nb; ++b) l += bin_[i][b] ? log_p[kj * nb + b] : log_q[kj * nb + b];
        logits[kj] = l;
      }
    const double total = log_sum_exp(logits);
    if (!std::isfinite(total) || std::isnan(total))
      throw NumericalError("subject " + std::to_string(i) + ": non-finite allocation likelihood");
    for (double& v : logits) v = std::exp(v - total);
    const std::size_t pick = rng.categorical(logits);
    state.k[i] = static_cast<int>(pick / M);
    state.j[i] = static_cast<int>(pick % M);
  }
}

// Returns the sum of log(1 - nu_{j|k}) over the free nested sticks.
static double draw_sticks(const AllocationState& state, MixtureDraw& draw, double alpha_theta, Rng& rng) {
  const std::size_t N = draw.upper();
  const std::size_t M = draw.lower();
  std::vector<double> nk(N, 0.0), njk(N * M, 0.0);
  for (std::size_t i = 0; i < state.k.size(); ++i) {
    const auto k = static_cast<std::size_t>(state.k[i]);
    nk[k] += 1.0;
    njk[k * M + static_cast<std::size_t>(state.j[i])] += 1.0;
  }
  std::vector<double> nu(N, 1.0);
  double tail = std::accumulate(nk.begin(), nk.end(), 0.0);
  for (std::size_t k = 0; k + 1 < N; ++k) {
    tail -= nk[k];
    nu[k] = rng.beta(1.0 + nk[k], alpha_theta + tail);
  }
  draw.gamma = sticks_to_weights(nu);

  double sum_log = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    std::vector<double> nuj(M, 1.0);
    double t = 0.0;
    for (std::size_t j = 0; j < M; ++j) t += njk[k * M + j];
    for (std::size_t j = 0; j + 1 < M; ++j) {
      t -= njk[k * M + j];
      nuj[j] = rng.beta(1.0 + njk[k * M + j], draw.alpha_omega + t);
      sum_log += std::log1p(-std::min(nuj[j], 1.0 - kProbFloor));
    }
    draw.gamma_nested[k] = sticks_to_weights(nuj);
  }
  return sum_log;
}

void Sampler::update_regressions(const AllocationState& state, MixtureDraw& draw, Rng& rng) const {
  const std::size_t N = draw.upper();
  const std::size_t p = prior_.schema.design_size() + 1;
  std::vector<std::vector<std::size_t>> members(N);
  for (std::size_t i = 0; i < subjects(); ++i) members[static_cast<std::size_t>(state.k[i])].push_back(i);

  Eigen::MatrixXd Q(p, p);
  Eigen::VectorXd b(p), eps(p), r(p);
  for (std::size_t o = 0; o < n_out_; ++o) {
    const auto& rp = prior_.outcomes[o];
    for (std::size_t k = 0; k < N; ++k) {
      auto& t = draw.theta[o][k];
      const auto& idx = members[k];
      // Coefficients given the current variance.
      Q.setZero();
      for (std::size_t c = 0; c < p; ++c) {
        Q(c, c) = 1.0 / rp.var[c];
        b(c) = rp.mean[c] / rp.var[c];
      }
      const double inv_s2 = 1.0 / t.sigma2;
      for (std::size_t i : idx) {
        for (std::size_t c = 0; c + 1 < p; ++c) r(c) = rows_[i][c];
        r(p - 1) = ds_->records[i].z;
        Q.selfadjointView<Eigen::Lower>().rankUpdate(r, inv_s2);
        b.noalias() += r * (state.y[o][i] * inv_s2);
      }
      Q.triangularView<Eigen::StrictlyUpper>() = Q.transpose();
      Eigen::LLT<Eigen::MatrixXd> llt(Q);
      if (llt.info() != Eigen::Success)
        throw NumericalError("cluster " + std::to_string(k) + ": regression precision not positive definite");
      const Eigen::VectorXd mu = llt.solve(b);
      for (std::size_t c = 0; c < p; ++c) eps(c) = rng.normal();
      const Eigen::VectorXd beta = mu + llt.matrixU().solve(eps);
      for (std::size_t c = 0; c + 1 < p; ++c) t.beta[c] = beta(c);
      t.beta_z = beta(p - 1);

      // Variance given the new coefficients.
      double rss = 0.0;
      for (std::size_t i : idx) {
        const double e = state.y[o][i] - t.mean(rows_[i], ds_->records[i].z);
        rss += e * e;
      }
      t.sigma2 = rng.inv_gamma(rp.sigma2_shape + 0.5 * static_cast<double>(idx.size()), rp.sigma2_scale + 0.5 * rss);
      if (!(t.sigma2 > 0.0) || !std::isfinite(t.sigma2))
        throw NumericalError("cluster " + std::to_string(k) + ": variance draw is not positive and finite");
    }
  }
}

void Sampler::update_covariates(const AllocationState& state, MixtureDraw& draw, Rng& rng) const {
  const std::size_t N = draw.upper();
  const std::size_t M = draw.lower();
  std::vector<std::vector<std::size_t>> members(N * M);
  for (std::size_t i = 0; i < subjects(); ++i)
    members[static_cast<std::size_t>(state.k[i]) * M + static_cast<std::size_t>(state.j[i])].push_back(i);

  for (std::size_t k = 0; k < N; ++k)
    for (std::size_t j = 0; j < M; ++j) {
      auto& w = draw.omega[k][j];
      const auto& idx = members[k * M + j];
      const double n = static_cast<double>(idx.size());
      for (std::size_t c = 0; c < prior_.continuous.size(); ++c) {
        const auto& cp = prior_.continuous[c];
        double s = 0.0;
        for (std::size_t i : idx) s += log_cont_[i][c];
        const double prec = 1.0 / cp.var + n / w.tau[c];
        const double m = (cp.mean / cp.var + s / w.tau[c]) / prec;
        w.lambda[c] = rng.normal(m, std::sqrt(1.0 / prec));
        double ss = 0.0;
        for (std::size_t i : idx) ss += std::pow(log_cont_[i][c] - w.lambda[c], 2);
        w.tau[c] = rng.inv_gamma(cp.tau_shape + 0.5 * n, cp.tau_scale + 0.5 * ss);
      }
      for (std::size_t b = 0; b < prior_.binary.size(); ++b) {
        double s = 0.0;
        for (std::size_t i : idx) s += bin_[i][b];
        w.psi[b] = clamp_prob(rng.beta(prior_.binary[b].a + s, prior_.binary[b].b + n - s));
      }
      double sz = 0.0;
      for (std::size_t i : idx) sz += ds_->records[i].z;
      w.psi_z = clamp_prob(rng.beta(prior_.treatment.a + sz, prior_.treatment.b + n - sz));
    }
}

void Sampler::gibbs_step(AllocationState& state, MixtureDraw& draw, Rng& rng) const {
  augment(state, draw, rng);
  allocate(state, draw, rng);
  const double sum_log = draw_sticks(state, draw, cfg_.alpha_theta, rng);
  update_regressions(state, draw, rng);
  update_covariates(state, draw, rng);
  const double free_sticks = static_cast<double>(draw.upper() * (draw.lower() - 1));
  draw.alpha_omega =
      rng.gamma(prior_.alpha_omega_shape + free_sticks, prior_.alpha_omega_rate - sum_log);
}

std::vector<MixtureDraw> run_chain(const Dataset& ds, const ChainConfig& cfg, const PriorSpec& prior,
                                   const DrawCallback& on_draw) {
  const Sampler sampler(ds, prior, cfg);
  Rng rng(derive_seed(cfg.seed, 0));
  MixtureDraw draw = sampler.initial_draw();
  AllocationState state = sampler.initial_state();
  std::vector<MixtureDraw> out;
  out.reserve(static_cast<std::size_t>(cfg.retained()));
  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    try {
      sampler.gibbs_step(state, draw, rng);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(it) + ": " + e.what());
    }
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      draw.iter = it;
      out.push_back(draw);
      if (on_draw) on_draw(out.back());
    }
  }
  return out;
}

std::vector<std::vector<MixtureDraw>> run_chains(const Dataset& ds, const ChainConfig& cfg, const PriorSpec& prior,
                                                 int chains, int threads) {
  if (chains < 1) throw ConfigError("chain count must be >= 1");
  std::vector<std::vector<MixtureDraw>> out(static_cast<std::size_t>(chains));
  std::vector<std::exception_ptr> errors(out.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t c;
      {
        std::lock_guard lock(mu);
        if (next >= out.size()) return;
        c = next++;
      }
      try {
        ChainConfig cc = cfg;
        cc.seed = c == 0 ? cfg.seed : derive_seed(cfg.seed, c, 1);
        out[c] = run_chain(ds, cc, prior);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int nt = std::clamp(threads, 1, chains);
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace scr
