#include "scr/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "scr/diagnostics.hpp"
#include "scr/draw_io.hpp"
#include "scr/survstats.hpp"

namespace scr {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
  }
}

CopulaParams parse_grid_entry(const json& e, Mode mode) {
  if (!e.is_object()) throw ConfigError("grid entries must be objects");
  reject_unknown(e, {"rho", "rho_star", "rho_star_0", "rho_star_1", "rho_star_star"}, "grid entry");
  if (!e.contains("rho")) throw ConfigError("grid entry lacks 'rho'");
  const double rho = e.at("rho").get<double>();
  double r0, r1;
  if (e.contains("rho_star")) {
    if (e.contains("rho_star_0") || e.contains("rho_star_1"))
      throw ConfigError("grid entry mixes 'rho_star' with 'rho_star_0'/'rho_star_1'");
    r0 = r1 = e.at("rho_star").get<double>();
  } else {
    if (!e.contains("rho_star_0") || !e.contains("rho_star_1"))
      throw ConfigError("grid entry needs 'rho_star' or both 'rho_star_0' and 'rho_star_1'");
    r0 = e.at("rho_star_0").get<double>();
    r1 = e.at("rho_star_1").get<double>();
  }
  try {
    if (mode == Mode::two_terminal) {
      if (!e.contains("rho_star_star")) throw ConfigError("two-terminal grid entries need 'rho_star_star'");
      return two_terminal_params(rho, r0, r1, e.at("rho_star_star").get<double>());
    }
    if (e.contains("rho_star_star")) throw ConfigError("'rho_star_star' is only valid in two-terminal mode");
    return one_terminal_params(rho, r0, r1);
  } catch (const std::domain_error& err) {
    throw ConfigError(std::string("grid entry: ") + err.what());
  }
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <class Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ExitCode::data, name + ": " + e.what());
  }
}

}  // namespace

CovariateSchema parse_schema(const json& j) {
  if (!j.is_array()) throw ConfigError("schema must be an array of {name, kind}");
  std::vector<Covariate> covs;
  for (const auto& c : j) {
    if (!c.is_object() || !c.contains("name") || !c.contains("kind"))
      throw ConfigError("schema entries need 'name' and 'kind'");
    const auto kind = c.at("kind").get<std::string>();
    if (kind != "continuous" && kind != "binary")
      throw ConfigError("schema: kind must be 'continuous' or 'binary', got '" + kind + "'");
    covs.push_back({c.at("name").get<std::string>(),
                    kind == "continuous" ? CovariateKind::continuous : CovariateKind::binary});
  }
  try {
    return CovariateSchema(std::move(covs));
  } catch (const Error& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
}

json schema_to_json(const CovariateSchema& schema) {
  json arr = json::array();
  for (const auto& c : schema.covariates())
    arr.push_back({{"name", c.name}, {"kind", c.kind == CovariateKind::continuous ? "continuous" : "binary"}});
  return arr;
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir, bool require_grid) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, {"dataset", "mode", "schema", "chain", "gcomp", "grid", "out"}, "config");
  RunConfig cfg;
  try {
    if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset'");
    if (!j.contains("schema")) throw ConfigError("config: missing 'schema'");
    cfg.mode = parse_mode(get_or<std::string>(j, "mode", "one-terminal"));
    std::filesystem::path ds = j.at("dataset").get<std::string>();
    cfg.dataset = ds.is_absolute() ? ds : base_dir / ds;
    cfg.schema = parse_schema(j.at("schema"));
    cfg.out = get_or<std::string>(j, "out", "out");

    cfg.chain = default_chain_config(cfg.mode);
    const json chain = j.value("chain", json::object());
    reject_unknown(chain, {"N", "M", "iterations", "burn_in", "thin", "seed", "alpha_theta", "chains"}, "chain");
    cfg.chain.N = get_or<int>(chain, "N", cfg.chain.N);
    cfg.chain.M = get_or<int>(chain, "M", cfg.chain.M);
    cfg.chain.iterations = get_or<std::int64_t>(chain, "iterations", cfg.chain.iterations);
    cfg.chain.burn_in = get_or<std::int64_t>(chain, "burn_in", cfg.chain.iterations / 2);
    cfg.chain.thin = get_or<std::int64_t>(
        chain, "thin", std::max<std::int64_t>(1, (cfg.chain.iterations - cfg.chain.burn_in) / 1000));
    cfg.chain.seed = get_or<std::uint64_t>(chain, "seed", 1);
    cfg.chain.alpha_theta = get_or<double>(chain, "alpha_theta", 1.0);
    cfg.chains = get_or<int>(chain, "chains", 1);
    cfg.chain.validate();
    if (cfg.chains < 1) throw ConfigError("chain: chains must be >= 1");

    const json g = j.value("gcomp", json::object());
    reject_unknown(g, {"u_grid", "n_mc", "max_attempts", "seed"}, "gcomp");
    cfg.gcomp.u_grid = get_or<std::vector<double>>(g, "u_grid", cfg.gcomp.u_grid);
    cfg.gcomp.n_mc = get_or<std::int64_t>(g, "n_mc", cfg.gcomp.n_mc);
    cfg.gcomp.max_attempts = get_or<std::int64_t>(g, "max_attempts", 50 * cfg.gcomp.n_mc);
    cfg.gcomp.seed = get_or<std::uint64_t>(g, "seed", cfg.chain.seed);
    cfg.gcomp.validate();

    if (j.contains("grid")) {
      if (!j.at("grid").is_array()) throw ConfigError("config: 'grid' must be an array");
      for (const auto& e : j.at("grid")) cfg.grid.push_back(parse_grid_entry(e, cfg.mode));
    }
    if (require_grid && cfg.grid.empty()) throw ConfigError("config: sensitivity grid is empty");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg, const ConfigOverrides& over) {
  if (over.seed) {
    cfg.chain.seed = *over.seed;
    cfg.gcomp.seed = *over.seed;
  }
  if (over.threads) {
    if (*over.threads < 1) throw ConfigError("--threads must be >= 1");
    cfg.threads = *over.threads;
    cfg.gcomp.threads = *over.threads;
  }
  if (over.out) cfg.out = *over.out;
}

RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& over, bool require_grid) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  RunConfig cfg = parse_run_config(j, path.parent_path(), require_grid);
  apply_overrides(cfg, over);
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json grid = json::array();
  for (const auto& p : cfg.grid) {
    json e = {{"rho", p.rho.value()}, {"rho_star_0", p.rho_star_0.value()}, {"rho_star_1", p.rho_star_1.value()}};
    if (p.rho_star_star) e["rho_star_star"] = p.rho_star_star->value();
    grid.push_back(e);
  }
  return {{"dataset", cfg.dataset.generic_string()},
          {"mode", to_string(cfg.mode)},
          {"schema", schema_to_json(cfg.schema)},
          {"chain",
           {{"N", cfg.chain.N},
            {"M", cfg.chain.M},
            {"iterations", cfg.chain.iterations},
            {"burn_in", cfg.chain.burn_in},
            {"thin", cfg.chain.thin},
            {"seed", cfg.chain.seed},
            {"alpha_theta", cfg.chain.alpha_theta},
            {"chains", cfg.chains}}},
          {"gcomp",
           {{"u_grid", cfg.gcomp.u_grid},
            {"n_mc", cfg.gcomp.n_mc},
            {"max_attempts", cfg.gcomp.attempt_cap()},
            {"seed", cfg.gcomp.seed}}},
          {"grid", grid}};
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary);
    if (!out) throw DataError("cannot write " + partial.string());
    writer(out);
    out.flush();
    if (!out) throw DataError("write failed for " + partial.string());
  }
  std::filesystem::rename(partial, path);
}

void write_km_csv(std::ostream& out, const Dataset& ds, bool hf_free) {
  out << "z,t,s\n";
  for (int z = 0; z < 2; ++z) {
    std::vector<double> times;
    std::vector<int> flags;
    for (const auto& r : ds.records) {
      if (r.z != z) continue;
      const int died = r.xi1 || r.xi2;
      times.push_back(hf_free ? r.t1 : r.t2);
      flags.push_back(hf_free ? (r.delta || died) : died);
    }
    out << z << ",0,1\n";
    if (times.empty()) continue;
    const StepFunction km = kaplan_meier(times, flags);
    char buf[96];
    for (std::size_t i = 0; i < km.times.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g\n", z, km.times[i], km.values[i]);
      out << buf;
    }
  }
}

Dataset load_dataset(const RunConfig& cfg) { return ingest_dataset(cfg.dataset, cfg.schema, cfg.mode); }

std::vector<std::vector<MixtureDraw>> fit_stage(const RunConfig& cfg, const Dataset& ds, std::ostream& log) {
  return stage("fit", [&] {
    const PriorSpec prior = init_priors(ds);
    log << "fit: " << cfg.chains << " chain(s), " << cfg.chain.iterations << " iterations, N=" << cfg.chain.N
        << " M=" << cfg.chain.M << '\n';
    auto chains = run_chains(ds, cfg.chain, prior, cfg.chains, cfg.threads);
    std::filesystem::create_directories(cfg.out);
    for (std::size_t c = 0; c < chains.size(); ++c)
      write_atomic(cfg.out / ("draws_chain" + std::to_string(c) + ".jsonl"), [&](std::ostream& out) {
        for (const auto& d : chains[c]) write_draw_line(out, d);
      });
    return chains;
  });
}

std::vector<MixtureDraw> pooled_draws(const std::vector<std::vector<MixtureDraw>>& chains) {
  std::vector<MixtureDraw> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  return all;
}

std::vector<GridCell> grid_stage(const RunConfig& cfg, const std::vector<MixtureDraw>& draws, std::ostream& log) {
  return stage("estimate", [&] {
    GcompConfig g = cfg.gcomp;
    g.threads = cfg.threads;
    auto cells = sensitivity_grid(draws, cfg.schema, cfg.grid, g);
    std::filesystem::create_directories(cfg.out);
    write_atomic(cfg.out / "estimands.csv", [&](std::ostream& out) { write_estimand_csv(out, cells); });
    write_atomic(cfg.out / "report.txt", [&](std::ostream& out) {
      for (const auto& cell : cells) {
        const auto& p = cell.params;
        out << "rho=" << p.rho.value() << " rho_star_0=" << p.rho_star_0.value()
            << " rho_star_1=" << p.rho_star_1.value();
        if (p.rho_star_star) out << " rho_star_star=" << p.rho_star_star->value();
        out << '\n';
        if (!cell.error.empty()) {
          out << "  error: " << cell.error << '\n';
          continue;
        }
        for (const auto& e : cell.estimates) {
          out << "  " << format_report_row(e);
          if (e.flag() != "ok") out << "  [" << e.flag() << "]";
          out << '\n';
        }
      }
    });
    for (const auto& cell : cells)
      if (!cell.error.empty()) log << "estimate: cell failed: " << cell.error << '\n';
    return cells;
  });
}

ExitCode grid_status(const std::vector<GridCell>& cells) {
  for (const auto& cell : cells)
    if (!cell.error.empty()) return ExitCode::numerical;
  for (const auto& cell : cells)
    for (const auto& e : cell.estimates)
      if (e.degenerate) return ExitCode::degenerate;
  return ExitCode::ok;
}

ExitCode run_pipeline(const RunConfig& cfg, std::ostream& log) {
  const std::string started = utc_now();
  const json effective = config_to_json(cfg);
  std::filesystem::create_directories(cfg.out);

  const Dataset ds = stage("ingest", [&] { return load_dataset(cfg); });
  log << "ingest: " << ds.size() << " records\n";
  stage("describe", [&] {
    write_atomic(cfg.out / "km_hf_free.csv", [&](std::ostream& out) { write_km_csv(out, ds, true); });
    write_atomic(cfg.out / "km_overall.csv", [&](std::ostream& out) { write_km_csv(out, ds, false); });
    if (ds.mode == Mode::two_terminal)
      write_atomic(cfg.out / "crosstab.csv", [&](std::ostream& out) { write_crosstab_csv(out, crosstab(ds)); });
    return 0;
  });

  const auto chains = fit_stage(cfg, ds, log);
  const auto diags = stage("diagnostics", [&] {
    auto d = diagnose(chains);
    write_atomic(cfg.out / "diagnostics.csv", [&](std::ostream& out) { write_diagnostics_csv(out, d); });
    return d;
  });
  const auto cells = grid_stage(cfg, pooled_draws(chains), log);
  const ExitCode status = grid_status(cells);

  json diag_json = json::array();
  for (const auto& d : diags) {
    json e = {{"parameter", d.name}, {"ess", d.ess}, {"zero_variance", d.zero_variance}};
    e["rhat"] = d.rhat ? json(*d.rhat) : json(nullptr);
    diag_json.push_back(e);
  }
  nlohmann::ordered_json manifest;
  manifest["config_hash"] = config_hash(effective);
  manifest["seed"] = cfg.chain.seed;
  manifest["version"] = kVersion;
  manifest["config"] = effective;
  manifest["records"] = ds.size();
  manifest["draws"] = pooled_draws(chains).size();
  manifest["diagnostics"] = diag_json;
  manifest["status"] = static_cast<int>(status);
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_now();
  write_atomic(cfg.out / "manifest.json", [&](std::ostream& out) { out << manifest.dump(2) << '\n'; });
  log << "done: status " << static_cast<int>(status) << '\n';
  return status;
}

void simulate_to_dir(const TruthSpec& truth, std::size_t n, std::size_t oracle_n, std::uint64_t seed,
                     const std::vector<double>& u_grid, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Rng rng(derive_seed(seed, 0, 0xda7a));
  const auto [ds, rows] = generate_population(truth, n, rng);
  write_atomic(dir / "dataset.csv", [&](std::ostream& out) { emit_dataset(out, ds); });
  write_atomic(dir / "truth.jsonl", [&](std::ostream& out) { out << truth_to_json(truth).dump() << '\n'; });

  const auto big = generate_potential_outcomes(truth, oracle_n, derive_seed(seed, 1, 0x0dac));
  write_atomic(dir / "oracle.csv", [&](std::ostream& out) {
    out << "u,tau_true,se\n";
    char buf[96];
    for (double u : u_grid) {
      try {
        const auto v = oracle_tau(big, u, truth.mode());
        std::snprintf(buf, sizeof buf, "%g,%.6f,%.6f\n", u, v.tau, v.se);
      } catch (const DegenerateError&) {
        std::snprintf(buf, sizeof buf, "%g,NA,NA\n", u);
      }
      out << buf;
    }
  });

  const auto& c = truth.copula;
  json entry = {{"rho", c.rho.value()}, {"rho_star_0", c.rho_star_0.value()}, {"rho_star_1", c.rho_star_1.value()}};
  if (c.rho_star_star) entry["rho_star_star"] = c.rho_star_star->value();
  const json config = {{"dataset", "dataset.csv"},
                       {"mode", to_string(truth.mode())},
                       {"schema", schema_to_json(truth.schema)},
                       {"chain", {{"seed", seed}}},
                       {"gcomp", {{"u_grid", u_grid}}},
                       {"grid", json::array({entry})},
                       {"out", "out"}};
  write_atomic(dir / "config.json", [&](std::ostream& out) { out << config.dump(2) << '\n'; });
}

}  // namespace scr
