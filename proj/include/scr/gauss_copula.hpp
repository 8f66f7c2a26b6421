#pragma once

#include <cmath>

#include "scr/rng.hpp"

namespace scr {

// Probit arguments are clamped to [kProbitClamp, 1 - kProbitClamp].
inline constexpr double kProbitClamp = 1e-12;

// Correlation strictly inside (-1, 1).
class Correlation {
 public:
  Correlation() = default;
  explicit Correlation(double value);  // throws std::domain_error on |value| >= 1 or NaN
  double value() const noexcept { return value_; }
  // sqrt(1 - rho^2)
  double complement() const noexcept { return std::sqrt((1.0 - value_) * (1.0 + value_)); }

 private:
  double value_ = 0.0;
};

// Standard normal density, CDF, and upper tail.
double normal_pdf(double x);
double normal_cdf(double x);
double normal_sf(double x);
double log_normal_pdf(double x, double mean, double var);

// Exact (unclamped) standard normal quantile for p in (0, 1).
double normal_quantile(double p);

// Phi^{-1}(clamp(p, eps, 1 - eps)); p outside [0, 1] throws std::domain_error.
double safe_probit(double p);

// Pr(V1 <= a, V2 <= b) for a standard bivariate normal with correlation rho.
// Infinite arguments are allowed.
double bivariate_gaussian_cdf(double a, double b, Correlation rho);

// Draw V0 | V1 = v ~ N(rho v, 1 - rho^2).
double conditional_latent_draw(double v, Correlation rho, Rng& rng);

// (v_given - rho v_anchor) / sqrt(1 - rho^2): the standardized score of v_given
// under the conditional law given v_anchor.
double conditional_score(double v_given, double v_anchor, Correlation rho);

}  // namespace scr
