#pragma once

// Small builders shared by the unit tests.

#include <cmath>
#include <vector>

#include "scr/data_model.hpp"
#include "scr/edpm.hpp"
#include "scr/rng.hpp"

namespace fixtures {

inline scr::CovariateSchema age_male() {
  return scr::CovariateSchema({{"age", scr::CovariateKind::continuous}, {"male", scr::CovariateKind::binary}});
}

// A draw with the given upper weights, one lower component per cluster unless M > 1,
// and cluster-specific outcome means (intercept only) for every outcome.
inline scr::MixtureDraw simple_draw(scr::Mode mode, const std::vector<double>& gamma, std::size_t M = 1) {
  scr::MixtureDraw d;
  d.mode = mode;
  d.gamma = gamma;
  const std::size_t N = gamma.size();
  d.gamma_nested.assign(N, std::vector<double>(M, 1.0 / static_cast<double>(M)));
  d.theta.assign(scr::outcome_count(mode), {});
  for (std::size_t o = 0; o < d.theta.size(); ++o)
    for (std::size_t k = 0; k < N; ++k)
      d.theta[o].push_back(scr::OutcomeParams{{2.0 + 0.5 * static_cast<double>(o + k), 0.0, 0.0}, 0.0, 0.25});
  d.omega.assign(N, std::vector<scr::CovariateParams>(M, scr::CovariateParams{{std::log(50.0)}, {0.04}, {0.5}, 0.5}));
  d.alpha_omega = 1.0;
  return d;
}

// Diffuse-ish prior for the age/male schema.
inline scr::PriorSpec simple_prior(scr::Mode mode) {
  scr::PriorSpec p;
  p.mode = mode;
  p.schema = age_male();
  for (std::size_t o = 0; o < scr::outcome_count(mode); ++o)
    p.outcomes.push_back(scr::RegressionPrior{{2.5, -0.2, 0.1, -0.1}, {1.0, 0.5, 0.25, 0.3}, 3.0, 0.4});
  p.continuous.push_back(scr::ContinuousPrior{std::log(50.0), 0.5, 3.0, 0.08});
  p.binary.push_back(scr::BinaryPrior{4.0, 6.0});
  p.treatment = scr::BinaryPrior{5.0, 5.0};
  p.alpha_omega_shape = 1.0;
  p.alpha_omega_rate = 1.0;
  return p;
}

}  // namespace fixtures
