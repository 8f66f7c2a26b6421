#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scr/data_model.hpp"

namespace scr {

// Edge c_{i,(i+l)|(i+1..i+l-1)} of a D-vine.
struct VineEdge {
  std::string first;
  std::string second;
  std::vector<std::string> conditioning;

  std::string label() const;  // "a,b | c,d"
  auto operator<=>(const VineEdge&) const = default;
};

struct VineTree {
  std::vector<std::string> order;
  std::vector<std::vector<VineEdge>> levels;  // levels[l-1] is tree T_l

  std::size_t edge_count() const;
};

enum class EdgeTag { identified, sensitivity, unneeded };
std::string to_string(EdgeTag tag);

VineTree build_dvine(const std::vector<std::string>& order);

using EdgePredicate = std::function<bool(const VineEdge&)>;

// Edges failing `needed` are unneeded; of the rest, those passing
// `same_arm_identified` are identified and everything else is a sensitivity edge.
std::map<VineEdge, EdgeTag> classify_edges(const VineTree& vine, const EdgePredicate& same_arm_identified,
                                           const EdgePredicate& needed);

// Variable labels are "<outcome>^<arm>", e.g. "P^1", "D2^0".
std::string label_outcome(const std::string& label);
int label_arm(const std::string& label);

// The causal vines of the one- and two-terminal estimands.
VineTree causal_vine(Mode mode);
bool same_arm_edge(const VineEdge& edge);
bool needed_edge(const VineEdge& edge);  // false only for the progression-progression edge

// Name of the correlation parameter a sensitivity edge carries:
// rho, rho_star_0, rho_star_1, rho_star_star, or "independence" (pinned to 0).
std::string sensitivity_parameter(const VineEdge& edge, Mode mode);

// Indented text listing of the vine levels, tags and parameters.
std::string dump_vine(Mode mode);

}  // namespace scr
