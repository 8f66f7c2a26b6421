#include "scr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "scr/draw_io.hpp"
#include "scr/error.hpp"

namespace scr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kShard = 1 << 16;

// Arm-specific mixture law of one outcome given x, evaluated independently of the sampler code.
struct ArmLaw {
  std::vector<double> w, mu, sd;

  double cdf(double t) const {
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * 0.5 * std::erfc(-(t - mu[k]) / sd[k] / std::sqrt(2.0));
    return s;
  }
  double sf(double t) const {
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * 0.5 * std::erfc((t - mu[k]) / sd[k] / std::sqrt(2.0));
    return s;
  }
  // Solve Phi(v) = G(t) by bisection, on the upper tail when v > 0.
  double invert(double v) const {
    const double target = 0.5 * std::erfc(std::abs(v) / std::sqrt(2.0));
    double lo = kInf, hi = -kInf;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (w[k] <= 0.0) continue;
      lo = std::min(lo, mu[k] - sd[k] * (std::abs(v) + 10.0));
      hi = std::max(hi, mu[k] + sd[k] * (std::abs(v) + 10.0));
    }
    for (int it = 0; it < 100 && hi - lo > 1e-11; ++it) {
      const double mid = 0.5 * (lo + hi);
      const bool below = v > 0.0 ? sf(mid) > target : cdf(mid) < target;
      (below ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
  std::size_t component(double t, double u) const {
    std::vector<double> lp(w.size());
    double m = -kInf;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double d = (t - mu[k]) / sd[k];
      lp[k] = w[k] > 0.0 ? std::log(w[k]) - std::log(sd[k]) - 0.5 * d * d : -kInf;
      m = std::max(m, lp[k]);
    }
    double total = 0.0;
    for (double& v : lp) total += (v = std::exp(v - m));
    double acc = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k) {
      acc += lp[k];
      if (u * total < acc) return k;
    }
    return lp.size() - 1;
  }
};

std::vector<double> arm_weights(const MixtureDraw& d, const CovariateSchema& s, const std::vector<double>& x, int z) {
  std::vector<double> lw(d.upper(), -kInf);
  double m = -kInf;
  for (std::size_t k = 0; k < d.upper(); ++k) {
    if (d.gamma[k] <= 0.0) continue;
    double inner = 0.0;
    for (std::size_t j = 0; j < d.lower(); ++j)
      inner += d.gamma_nested[k][j] * std::exp(d.omega[k][j].log_likelihood(s, x, z));
    lw[k] = std::log(d.gamma[k] * inner);
    m = std::max(m, lw[k]);
  }
  if (!std::isfinite(m)) throw NumericalError("truth weights vanish");
  double total = 0.0;
  for (double& v : lw) total += (v = std::exp(v - m));
  for (double& v : lw) v /= total;
  return lw;
}

ArmLaw arm_law(const MixtureDraw& d, const std::vector<double>& w, const std::vector<double>& row, int z,
               std::size_t o) {
  ArmLaw law;
  law.w = w;
  for (const auto& t : d.theta[o]) {
    double m = t.beta_z * z;
    for (std::size_t c = 0; c < row.size(); ++c) m += t.beta[c] * row[c];
    law.mu.push_back(m);
    law.sd.push_back(std::sqrt(t.sigma2));
  }
  return law;
}

struct Subject {
  std::vector<double> x;
  int z = 0;
};

Subject draw_truth_subject(const TruthSpec& truth, Rng& rng) {
  const auto& d = truth.mixture;
  const std::size_t k = rng.categorical(d.gamma);
  const std::size_t j = rng.categorical(d.gamma_nested[k]);
  const auto& w = d.omega[k][j];
  Subject s;
  std::size_t c = 0, b = 0;
  for (std::size_t h = 0; h < truth.schema.size(); ++h) {
    if (truth.schema[h].kind == CovariateKind::continuous)
      s.x.push_back(std::exp(w.lambda[c] + std::sqrt(w.tau[c]) * rng.normal())), ++c;
    else
      s.x.push_back(rng.uniform() < w.psi[b] ? 1.0 : 0.0), ++b;
  }
  s.z = rng.uniform() < w.psi_z ? 1 : 0;
  return s;
}

PotentialOutcomeRow draw_row(const TruthSpec& truth, Rng& rng) {
  const auto& d = truth.mixture;
  const bool two = truth.mode() == Mode::two_terminal;
  const Subject s = draw_truth_subject(truth, rng);
  PotentialOutcomeRow row;
  row.x = s.x;
  row.z = s.z;

  // Arm latents of the death defining survival, coupled by rho.
  const double rho = truth.copula.rho.value();
  const double a1 = rng.normal();
  const double a0 = rho * a1 + truth.copula.rho.complement() * rng.normal();
  const double u1 = rng.uniform(), u0 = rng.uniform();
  const double e1 = rng.normal(), e_other = rng.normal();
  const double g1 = rng.normal(), g0 = rng.normal();

  const auto design = design_row(truth.schema, s.x);
  const std::array<std::vector<double>, 2> w{arm_weights(d, truth.schema, s.x, 0),
                                             arm_weights(d, truth.schema, s.x, 1)};
  const std::size_t oDeath = two ? 2 : 1;
  const ArmLaw death1 = arm_law(d, w[1], design, 1, oDeath);
  const ArmLaw death0 = arm_law(d, w[0], design, 0, oDeath);
  row.death[1] = death1.invert(a1);
  row.death[0] = death0.invert(a0);
  const std::array<std::size_t, 2> k{death0.component(row.death[0], u0), death1.component(row.death[1], u1)};

  // Residual scores of each arm's latent given the other arm's.
  const double c = truth.copula.rho.complement();
  const double score0 = (a0 - rho * a1) / c;
  const double score1 = (a1 - rho * a0) / c;
  const double r1 = truth.copula.rho_star_1.value(), r0 = truth.copula.rho_star_0.value();
  const double lat1 = r1 * score0 + std::sqrt(1.0 - r1 * r1) * e1;
  double e0 = e_other;
  if (two) {
    const double rss = truth.copula.rho_star_star->value();
    e0 = rss * e1 + std::sqrt(1.0 - rss * rss) * e_other;
  }
  const double lat0 = r0 * score1 + std::sqrt(1.0 - r0 * r0) * e0;
  const std::array<double, 2> lat{lat0, lat1};

  for (int z = 0; z < 2; ++z) {
    const ArmLaw prog = arm_law(d, w[z], design, z, 0);
    const std::size_t kz = k[z];
    if (!two) {
      row.prog[z] = prog.mu[kz] + prog.sd[kz] * lat[z];
      row.first[z] = std::numeric_limits<double>::quiet_NaN();
    } else {
      const ArmLaw first = arm_law(d, w[z], design, z, 1);
      row.first[z] = first.mu[kz] + first.sd[kz] * lat[z];
      row.prog[z] = prog.mu[kz] + prog.sd[kz] * (z ? g1 : g0);
    }
  }
  return row;
}

ObservedRecord observe(const TruthSpec& truth, const PotentialOutcomeRow& row, double cens) {
  const int z = row.z;
  const double p = std::exp(row.prog[z]);
  ObservedRecord r;
  r.z = z;
  r.x = row.x;
  if (truth.mode() == Mode::one_terminal) {
    const double d = std::exp(row.death[z]);
    r.t2 = std::min(d, cens);
    r.xi1 = d < cens ? 1 : 0;
    r.delta = p < r.t2 ? 1 : 0;
    r.t1 = r.delta ? p : r.t2;
  } else {
    const double d1 = std::exp(row.first[z]);
    const double d2 = std::exp(row.death[z]);
    r.t2 = std::min({d1, d2, cens});
    r.xi1 = d1 < std::min(d2, cens) ? 1 : 0;
    r.xi2 = d2 < std::min(d1, cens) ? 1 : 0;
    r.delta = p < r.t2 ? 1 : 0;
    r.t1 = r.delta ? p : r.t2;
  }
  if (r.delta == 1 && !(r.t1 < r.t2)) {
    r.delta = 0;
    r.t1 = r.t2;
  }
  return r;
}

}  // namespace

void TruthSpec::validate() const {
  mixture.validate(schema);
  if (copula.mode() != mixture.mode) throw ConfigError("truth copula does not match the mixture's mode");
  if (censoring.enabled && !(censoring.log_sd > 0.0)) throw ConfigError("truth censoring log_sd must be positive");
}

std::vector<PotentialOutcomeRow> generate_potential_outcomes(const TruthSpec& truth, std::size_t n,
                                                             std::uint64_t seed) {
  truth.validate();
  std::vector<PotentialOutcomeRow> rows;
  rows.reserve(n);
  for (std::size_t shard = 0; shard * kShard < n; ++shard) {
    Rng rng(derive_seed(seed, shard, 0x5eed));
    const std::size_t end = std::min(n, (shard + 1) * kShard);
    for (std::size_t i = shard * kShard; i < end; ++i) rows.push_back(draw_row(truth, rng));
  }
  return rows;
}

std::pair<Dataset, std::vector<PotentialOutcomeRow>> generate_population(const TruthSpec& truth, std::size_t n,
                                                                         Rng& rng) {
  truth.validate();
  Dataset ds;
  ds.schema = truth.schema;
  ds.mode = truth.mode();
  std::vector<PotentialOutcomeRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    rows.push_back(draw_row(truth, rng));
    const double cens = truth.censoring.enabled
                            ? std::exp(truth.censoring.log_mean + truth.censoring.log_sd * rng.normal())
                            : kInf;
    ObservedRecord r = observe(truth, rows.back(), cens);
    validate_record(r, ds.schema, ds.mode, i);
    ds.records.push_back(std::move(r));
  }
  return {std::move(ds), std::move(rows)};
}

OracleValue oracle_tau(const std::vector<PotentialOutcomeRow>& rows, double u, Mode mode) {
  const double lu = std::log(u);
  OracleValue v;
  for (const auto& r : rows) {
    bool in;
    if (mode == Mode::one_terminal)
      in = r.death[0] >= lu && r.death[1] >= lu;
    else
      in = r.death[0] >= r.first[0] && r.first[0] >= lu && r.death[1] >= r.first[1] && r.first[1] >= lu;
    if (!in) continue;
    ++v.n_stratum;
    const bool e1 = r.prog[1] < lu, e0 = r.prog[0] < lu;
    v.n1 += e1;
    v.n0 += e0;
    v.n11 += e1 && e0;
  }
  if (v.n_stratum == 0) throw DegenerateError("oracle stratum is empty at u=" + std::to_string(u) + " (0 rows)");
  if (v.n0 == 0)
    throw DegenerateError("oracle has no arm-0 progressions at u=" + std::to_string(u) + " among " +
                          std::to_string(v.n_stratum) + " rows");
  const double n = static_cast<double>(v.n_stratum);
  const double p1 = static_cast<double>(v.n1) / n, p0 = static_cast<double>(v.n0) / n;
  const double p11 = static_cast<double>(v.n11) / n;
  v.tau = p1 / p0;
  const double var1 = p1 * (1.0 - p1) / n, var0 = p0 * (1.0 - p0) / n, cov = (p11 - p1 * p0) / n;
  const double rel = (p1 > 0.0 ? var1 / (p1 * p1) - 2.0 * cov / (p1 * p0) : 0.0) + var0 / (p0 * p0);
  v.se = p1 > 0.0 ? v.tau * std::sqrt(std::max(rel, 0.0)) : std::sqrt(var1) / p0;
  return v;
}

// ---------------------------------------------------------------------------
// Presets

namespace {

CovariateSchema preset_schema() {
  return CovariateSchema({{"age", CovariateKind::continuous}, {"male", CovariateKind::binary}});
}

struct OutcomeSpec {
  double centre;   // log-time mean at the component's typical covariates
  double slope_age;
  double slope_male;
  double beta_z;
  double sigma2;
};

struct ComponentSpec {
  double weight;
  double log_age;
  double male;
  std::vector<OutcomeSpec> outcomes;
};

TruthSpec build_truth(Mode mode, const std::vector<ComponentSpec>& comps, CopulaParams copula, CensoringSpec cens) {
  TruthSpec t;
  t.schema = preset_schema();
  t.copula = copula;
  t.censoring = cens;
  auto& d = t.mixture;
  d.mode = mode;
  d.theta.assign(outcome_count(mode), {});
  for (const auto& c : comps) {
    d.gamma.push_back(c.weight);
    d.gamma_nested.push_back({1.0});
    d.omega.push_back({CovariateParams{{c.log_age}, {0.04}, {c.male}, 0.5}});
    for (std::size_t o = 0; o < c.outcomes.size(); ++o) {
      const auto& s = c.outcomes[o];
      const double intercept = s.centre - s.slope_age * c.log_age - s.slope_male * c.male;
      d.theta[o].push_back(OutcomeParams{{intercept, s.slope_age, s.slope_male}, s.beta_z, s.sigma2});
    }
  }
  t.validate();
  return t;
}

}  // namespace

std::vector<std::string> truth_preset_names() {
  return {"one-terminal",  "two-terminal",  "null-one",    "null-two",
          "direction-one", "direction-two", "mixture-one", "mixture-two"};
}

TruthSpec truth_preset(const std::string& name) {
  const double log50 = std::log(50.0);
  const CensoringSpec light{true, 4.5, 0.3};
  const CopulaParams one = one_terminal_params(0.3, 0.3, 0.3);
  const CopulaParams two = two_terminal_params(0.3, 0.3, 0.3, 0.3);
  auto one_comp = [&](double bz_prog, double bz_death) {
    return ComponentSpec{1.0, log50, 0.45,
                         {{2.6, -0.5, -0.1, bz_prog, 0.49}, {3.8, -0.4, -0.1, bz_death, 0.16}}};
  };
  auto two_comp = [&](double bz_prog, double bz_first) {
    return ComponentSpec{1.0, log50, 0.45,
                         {{2.6, -0.5, -0.1, bz_prog, 0.49},
                          {3.8, -0.4, -0.1, bz_first, 0.1225},
                          {4.2, -0.3, 0.0, 0.0, 0.16}}};
  };
  if (name == "one-terminal") return build_truth(Mode::one_terminal, {one_comp(-0.2, 0.05)}, one, light);
  if (name == "two-terminal") return build_truth(Mode::two_terminal, {two_comp(-0.2, 0.0)}, two, light);
  if (name == "null-one") return build_truth(Mode::one_terminal, {one_comp(0.0, 0.0)}, one, light);
  if (name == "null-two") return build_truth(Mode::two_terminal, {two_comp(0.0, 0.0)}, two, light);
  if (name == "direction-one") return build_truth(Mode::one_terminal, {one_comp(-0.6, 0.0)}, one, light);
  if (name == "direction-two") return build_truth(Mode::two_terminal, {two_comp(-0.6, 0.0)}, two, light);
  if (name == "mixture-one") {
    const ComponentSpec a{0.6, std::log(45.0), 0.35, {{2.4, -0.5, -0.1, -0.3, 0.36}, {3.7, -0.4, -0.1, 0.0, 0.09}}};
    const ComponentSpec b{0.4, std::log(60.0), 0.6, {{2.9, -0.5, -0.1, -0.1, 0.36}, {4.0, -0.4, -0.1, 0.1, 0.09}}};
    return build_truth(Mode::one_terminal, {a, b}, one, light);
  }
  if (name == "mixture-two") {
    const ComponentSpec a{0.6, std::log(45.0), 0.35,
                          {{2.4, -0.5, -0.1, -0.3, 0.36}, {3.7, -0.4, -0.1, 0.0, 0.09}, {4.1, -0.3, 0.0, 0.0, 0.12}}};
    const ComponentSpec b{0.4, std::log(60.0), 0.6,
                          {{2.9, -0.5, -0.1, -0.1, 0.36}, {4.0, -0.4, -0.1, 0.1, 0.09}, {4.3, -0.3, 0.0, 0.0, 0.12}}};
    return build_truth(Mode::two_terminal, {a, b}, two, light);
  }
  throw ConfigError("unknown truth preset '" + name + "'");
}

nlohmann::ordered_json truth_to_json(const TruthSpec& truth) {
  auto j = draw_to_json(truth.mixture);
  const auto& c = truth.copula;
  nlohmann::ordered_json cop;
  cop["rho"] = c.rho.value();
  cop["rho_star_0"] = c.rho_star_0.value();
  cop["rho_star_1"] = c.rho_star_1.value();
  cop["rho_star_star"] = c.rho_star_star ? nlohmann::ordered_json(c.rho_star_star->value()) : nullptr;
  j["copula"] = cop;
  j["censoring"] = {{"enabled", truth.censoring.enabled},
                    {"log_mean", truth.censoring.log_mean},
                    {"log_sd", truth.censoring.log_sd}};
  nlohmann::ordered_json schema = nlohmann::ordered_json::array();
  for (const auto& cov : truth.schema.covariates())
    schema.push_back({{"name", cov.name}, {"kind", cov.kind == CovariateKind::continuous ? "continuous" : "binary"}});
  j["schema"] = schema;
  j["mode"] = to_string(truth.mode());
  return j;
}

TruthSpec truth_from_json(const nlohmann::json& j) {
  TruthSpec t;
  try {
    t.mixture = draw_from_json(j);
    const Mode mode = parse_mode(j.at("mode").get<std::string>());
    if (mode != t.mixture.mode) throw ConfigError("truth: mode does not match theta keys");
    std::vector<Covariate> covs;
    for (const auto& c : j.at("schema")) {
      const auto kind = c.at("kind").get<std::string>();
      if (kind != "continuous" && kind != "binary") throw ConfigError("truth: unknown covariate kind '" + kind + "'");
      covs.push_back({c.at("name").get<std::string>(),
                      kind == "continuous" ? CovariateKind::continuous : CovariateKind::binary});
    }
    t.schema = CovariateSchema(std::move(covs));
    const auto& cop = j.at("copula");
    const double rho = cop.at("rho").get<double>(), r0 = cop.at("rho_star_0").get<double>(),
                 r1 = cop.at("rho_star_1").get<double>();
    if (mode == Mode::two_terminal)
      t.copula = two_terminal_params(rho, r0, r1, cop.at("rho_star_star").get<double>());
    else
      t.copula = one_terminal_params(rho, r0, r1);
    const auto& cens = j.at("censoring");
    t.censoring = {cens.at("enabled").get<bool>(), cens.at("log_mean").get<double>(), cens.at("log_sd").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("truth: ") + e.what());
  } catch (const std::domain_error& e) {
    throw ConfigError(std::string("truth: ") + e.what());
  }
  t.validate();
  return t;
}

TruthSpec read_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open truth file " + path.string());
  try {
    return truth_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("truth file " + path.string() + ": " + e.what());
  }
}

}  // namespace scr
