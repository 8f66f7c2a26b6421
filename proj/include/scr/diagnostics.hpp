#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scr/edpm.hpp"

namespace scr {

// Geyer initial-monotone-sequence ESS. A constant chain returns n and sets zero_variance.
double effective_sample_size(std::span<const double> chain, bool* zero_variance = nullptr);

// Split-chain potential scale reduction over two or more chains of equal length.
double split_rhat(const std::vector<std::vector<double>>& chains);

// Label-invariant scalars of a draw: alpha_omega, max_gamma, and for every outcome the
// gamma-weighted coefficients and variance.
std::vector<std::pair<std::string, double>> draw_scalars(const MixtureDraw& draw);

struct ParamDiagnostic {
  std::string name;
  std::size_t n = 0;  // draws per chain
  double ess = 0.0;   // summed over chains
  std::optional<double> rhat;
  bool zero_variance = false;
};

// Throws DataError when any chain has fewer than 10 draws.
std::vector<ParamDiagnostic> diagnose(const std::vector<std::vector<MixtureDraw>>& chains);

// Columns: parameter,n,ess,rhat,zero_variance
void write_diagnostics_csv(std::ostream& out, const std::vector<ParamDiagnostic>& diags);

}  // namespace scr
