#include "scr/vine.hpp"

#include <set>
#include <sstream>

#include "scr/error.hpp"

namespace scr {

std::string VineEdge::label() const {
  std::string s = first + "," + second;
  if (!conditioning.empty()) {
    s += " | ";
    for (std::size_t i = 0; i < conditioning.size(); ++i) s += (i ? "," : "") + conditioning[i];
  }
  return s;
}

std::size_t VineTree::edge_count() const {
  std::size_t n = 0;
  for (const auto& level : levels) n += level.size();
  return n;
}

std::string to_string(EdgeTag tag) {
  switch (tag) {
    case EdgeTag::identified: return "identified";
    case EdgeTag::sensitivity: return "sensitivity";
    case EdgeTag::unneeded: return "unneeded";
  }
  return "?";
}

VineTree build_dvine(const std::vector<std::string>& order) {
  if (order.size() < 2) throw ConfigError("a D-vine needs at least two variables");
  std::set<std::string> unique(order.begin(), order.end());
  if (unique.size() != order.size()) throw ConfigError("duplicate labels in vine order");
  VineTree tree;
  tree.order = order;
  const std::size_t d = order.size();
  for (std::size_t l = 1; l < d; ++l) {
    std::vector<VineEdge> level;
    for (std::size_t i = 0; i + l < d; ++i) {
      VineEdge e{order[i], order[i + l], {}};
      for (std::size_t c = i + 1; c < i + l; ++c) e.conditioning.push_back(order[c]);
      level.push_back(std::move(e));
    }
    tree.levels.push_back(std::move(level));
  }
  return tree;
}

std::map<VineEdge, EdgeTag> classify_edges(const VineTree& vine, const EdgePredicate& same_arm_identified,
                                           const EdgePredicate& needed) {
  std::map<VineEdge, EdgeTag> tags;
  for (const auto& level : vine.levels)
    for (const auto& e : level) {
      EdgeTag t = EdgeTag::sensitivity;
      if (!needed(e))
        t = EdgeTag::unneeded;
      else if (same_arm_identified(e))
        t = EdgeTag::identified;
      tags.emplace(e, t);
    }
  return tags;
}

std::string label_outcome(const std::string& label) {
  const auto pos = label.find('^');
  if (pos == std::string::npos) throw ConfigError("vine label '" + label + "' lacks an arm suffix");
  return label.substr(0, pos);
}

int label_arm(const std::string& label) {
  const auto pos = label.find('^');
  if (pos == std::string::npos || pos + 1 >= label.size())
    throw ConfigError("vine label '" + label + "' lacks an arm suffix");
  return label[pos + 1] == '1' ? 1 : 0;
}

VineTree causal_vine(Mode mode) {
  if (mode == Mode::one_terminal) return build_dvine({"P^1", "D^1", "D^0", "P^0"});
  return build_dvine({"P^1", "D1^1", "D2^1", "D2^0", "D1^0", "P^0"});
}

bool same_arm_edge(const VineEdge& edge) {
  const int arm = label_arm(edge.first);
  if (label_arm(edge.second) != arm) return false;
  for (const auto& c : edge.conditioning)
    if (label_arm(c) != arm) return false;
  return true;
}

bool needed_edge(const VineEdge& edge) {
  return !(label_outcome(edge.first) == "P" && label_outcome(edge.second) == "P");
}

std::string sensitivity_parameter(const VineEdge& edge, Mode mode) {
  const std::string a = edge.first;
  const std::string b = edge.second;
  auto pair_is = [&](const std::string& x, const std::string& y) {
    return (a == x && b == y) || (a == y && b == x);
  };
  if (mode == Mode::one_terminal) {
    if (pair_is("D^1", "D^0")) return "rho";
    if (pair_is("P^1", "D^0")) return "rho_star_1";
    if (pair_is("P^0", "D^1")) return "rho_star_0";
  } else {
    if (pair_is("D2^1", "D2^0")) return "rho";
    if (pair_is("D1^1", "D2^0")) return "rho_star_1";
    if (pair_is("D1^0", "D2^1")) return "rho_star_0";
    if (pair_is("D1^1", "D1^0")) return "rho_star_star";
    if ((label_outcome(a) == "P" || label_outcome(b) == "P") && needed_edge(edge) && !same_arm_edge(edge))
      return "independence";
  }
  throw ConfigError("edge " + edge.label() + " carries no sensitivity parameter");
}

std::string dump_vine(Mode mode) {
  const VineTree vine = causal_vine(mode);
  const auto tags = classify_edges(vine, same_arm_edge, needed_edge);
  std::ostringstream out;
  out << "D-vine (" << to_string(mode) << "):";
  for (const auto& v : vine.order) out << ' ' << v;
  out << '\n';
  for (std::size_t l = 0; l < vine.levels.size(); ++l) {
    out << "T" << l + 1 << '\n';
    for (const auto& e : vine.levels[l]) {
      const EdgeTag tag = tags.at(e);
      std::string line = "  " + e.label();
      line.resize(std::max<std::size_t>(line.size() + 2, 32), ' ');
      line += to_string(tag);
      if (tag == EdgeTag::sensitivity) line += " [" + sensitivity_parameter(e, mode) + "]";
      out << line << '\n';
    }
  }
  return out.str();
}

}  // namespace scr
