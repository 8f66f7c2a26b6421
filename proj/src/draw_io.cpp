#include "scr/draw_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "scr/error.hpp"

namespace scr {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json draw_to_json(const MixtureDraw& draw) {
  ordered_json out;
  out["gamma"] = draw.gamma;
  out["gamma_nested"] = draw.gamma_nested;
  ordered_json theta = ordered_json::object();
  const auto names = outcome_names(draw.mode);
  for (std::size_t o = 0; o < names.size(); ++o) {
    ordered_json per;
    ordered_json beta = ordered_json::array(), beta_z = ordered_json::array(), sigma2 = ordered_json::array();
    for (const auto& t : draw.theta[o]) {
      beta.push_back(t.beta);
      beta_z.push_back(t.beta_z);
      sigma2.push_back(t.sigma2);
    }
    per["beta"] = std::move(beta);
    per["beta_z"] = std::move(beta_z);
    per["sigma2"] = std::move(sigma2);
    theta[names[o]] = std::move(per);
  }
  out["theta"] = std::move(theta);
  ordered_json lambda = ordered_json::array(), tau = ordered_json::array(), psi = ordered_json::array(),
               psi_z = ordered_json::array();
  for (const auto& per_j : draw.omega) {
    ordered_json l = ordered_json::array(), t = ordered_json::array(), p = ordered_json::array(),
                 pz = ordered_json::array();
    for (const auto& w : per_j) {
      l.push_back(w.lambda);
      t.push_back(w.tau);
      p.push_back(w.psi);
      pz.push_back(w.psi_z);
    }
    lambda.push_back(std::move(l));
    tau.push_back(std::move(t));
    psi.push_back(std::move(p));
    psi_z.push_back(std::move(pz));
  }
  out["omega"] = {{"lambda", lambda}, {"tau", tau}, {"psi", psi}, {"psi_z", psi_z}};
  out["alpha_omega"] = draw.alpha_omega;
  out["iter"] = draw.iter;
  return out;
}

MixtureDraw draw_from_json(const json& j) {
  try {
    MixtureDraw d;
    const auto& theta = j.at("theta");
    d.mode = theta.contains("D1") ? Mode::two_terminal : Mode::one_terminal;
    d.gamma = j.at("gamma").get<std::vector<double>>();
    d.gamma_nested = j.at("gamma_nested").get<std::vector<std::vector<double>>>();
    for (const auto& name : outcome_names(d.mode)) {
      const auto& per = theta.at(name);
      const auto beta = per.at("beta").get<std::vector<std::vector<double>>>();
      const auto beta_z = per.at("beta_z").get<std::vector<double>>();
      const auto sigma2 = per.at("sigma2").get<std::vector<double>>();
      if (beta.size() != beta_z.size() || beta.size() != sigma2.size())
        throw DataError("draw record: theta." + name + " arrays differ in length");
      std::vector<OutcomeParams> ks;
      for (std::size_t k = 0; k < beta.size(); ++k) ks.push_back({beta[k], beta_z[k], sigma2[k]});
      d.theta.push_back(std::move(ks));
    }
    const auto& om = j.at("omega");
    const auto lambda = om.at("lambda").get<std::vector<std::vector<std::vector<double>>>>();
    const auto tau = om.at("tau").get<std::vector<std::vector<std::vector<double>>>>();
    const auto psi = om.at("psi").get<std::vector<std::vector<std::vector<double>>>>();
    const auto psi_z = om.at("psi_z").get<std::vector<std::vector<double>>>();
    for (std::size_t k = 0; k < lambda.size(); ++k) {
      std::vector<CovariateParams> js;
      for (std::size_t m = 0; m < lambda.at(k).size(); ++m)
        js.push_back({lambda[k][m], tau.at(k).at(m), psi.at(k).at(m), psi_z.at(k).at(m)});
      d.omega.push_back(std::move(js));
    }
    d.alpha_omega = j.at("alpha_omega").get<double>();
    d.iter = j.at("iter").get<std::int64_t>();
    return d;
  } catch (const json::exception& e) {
    throw DataError(std::string("draw record: ") + e.what());
  }
}

void write_draw_line(std::ostream& out, const MixtureDraw& draw) { out << draw_to_json(draw).dump() << '\n'; }

void write_draws(const std::filesystem::path& path, const std::vector<MixtureDraw>& draws) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& d : draws) write_draw_line(out, d);
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<MixtureDraw> read_draws(std::istream& in) {
  std::vector<MixtureDraw> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("draw file line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(draw_from_json(j));
  }
  return out;
}

std::vector<MixtureDraw> read_draws(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open draw file " + path.string());
  return read_draws(in);
}

}  // namespace scr
