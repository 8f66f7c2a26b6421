#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scr/data_model.hpp"
#include "scr/edpm.hpp"
#include "scr/gcomp.hpp"

namespace scr {

struct CensoringSpec {
  bool enabled = false;  // disabled means censoring at +infinity
  double log_mean = 0.0;
  double log_sd = 1.0;
};

// A fully specified data-generating process: a fixed mixture (usually one component),
// the cross-world copula and an independent log-normal censoring time.
struct TruthSpec {
  CovariateSchema schema;
  MixtureDraw mixture;
  CopulaParams copula;
  CensoringSpec censoring;

  Mode mode() const { return mixture.mode; }
  void validate() const;  // throws ConfigError
};

// Potential log-times for both arms. death is the death that defines the survival stratum
// (D, or D2 in two-terminal mode); first is D1 in two-terminal mode and NaN otherwise.
struct PotentialOutcomeRow {
  std::vector<double> x;
  int z = 0;
  std::array<double, 2> prog{};
  std::array<double, 2> death{};
  std::array<double, 2> first{};
};

// Potential outcomes only, generated latent-first: arm latents, then mixture quantiles,
// then each arm's component from its posterior given the death time.
std::vector<PotentialOutcomeRow> generate_potential_outcomes(const TruthSpec& truth, std::size_t n,
                                                             std::uint64_t seed);

// Observed data under the semi-competing observation rule, plus the rows it came from.
std::pair<Dataset, std::vector<PotentialOutcomeRow>> generate_population(const TruthSpec& truth, std::size_t n,
                                                                         Rng& rng);

struct OracleValue {
  double tau = 0.0;
  double se = 0.0;
  std::size_t n_stratum = 0;
  std::size_t n1 = 0;   // arm-1 progressions before u in the stratum
  std::size_t n0 = 0;   // arm-0 progressions before u in the stratum
  std::size_t n11 = 0;  // both
};

// Counting estimate of tau(u) over rows in the principal stratum; delta-method SE.
// Throws DegenerateError (with the count) when the stratum or the arm-0 count is empty.
OracleValue oracle_tau(const std::vector<PotentialOutcomeRow>& rows, double u, Mode mode);

// Built-in truths used by `simulate` and the tests:
// one-terminal, two-terminal, null-one, null-two, direction-one, direction-two, mixture-one, mixture-two.
std::vector<std::string> truth_preset_names();
TruthSpec truth_preset(const std::string& name);

// Truth sidecar: the draw record plus copula, censoring, schema and mode keys.
nlohmann::ordered_json truth_to_json(const TruthSpec& truth);
TruthSpec truth_from_json(const nlohmann::json& j);
TruthSpec read_truth(const std::filesystem::path& path);

}  // namespace scr
