// scr: semi-competing-risks causal engine (fit, G-computation, reporting).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "scr/data_model.hpp"
#include "scr/diagnostics.hpp"
#include "scr/draw_io.hpp"
#include "scr/error.hpp"
#include "scr/gcomp.hpp"
#include "scr/pipeline.hpp"
#include "scr/synth.hpp"
#include "scr/vine.hpp"

namespace fs = std::filesystem;
using namespace scr;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;

  ConfigOverrides overrides() const {
    ConfigOverrides o;
    o.seed = seed;
    o.threads = threads;
    if (out) o.out = fs::path(*out);
    return o;
  }
  RunConfig load(bool require_grid) const {
    if (config.empty()) throw ConfigError("--config is required");
    return load_run_config(config, overrides(), require_grid);
  }
};

std::vector<std::vector<MixtureDraw>> load_chains(const RunConfig& cfg, const std::vector<std::string>& files) {
  std::vector<std::vector<MixtureDraw>> chains;
  if (!files.empty()) {
    for (const auto& f : files) chains.push_back(read_draws(fs::path(f)));
    return chains;
  }
  for (int c = 0;; ++c) {
    const fs::path p = cfg.out / ("draws_chain" + std::to_string(c) + ".jsonl");
    if (!fs::exists(p)) break;
    chains.push_back(read_draws(p));
  }
  if (chains.empty()) throw DataError("no draw files found in " + cfg.out.string() + "; run `scr fit` first");
  return chains;
}

int run(int argc, char** argv) {
  CLI::App app{"Bayesian nonparametric semi-competing-risks causal engine"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Master seed (overrides chain and gcomp seeds)");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_option("--out", g.out, "Output directory");

  auto* ingest = app.add_subcommand("ingest", "Validate a dataset and print a summary");
  auto* fit = app.add_subcommand("fit", "Run the EDPM sampler and write posterior draws");

  auto* estimate = app.add_subcommand("estimate", "Estimate tau(u) for one set of sensitivity correlations");
  std::vector<std::string> draw_files;
  std::optional<double> rho, rho_star, rho_star_0, rho_star_1, rho_star_star;
  estimate->add_option("--draws", draw_files, "Posterior draw files (default: <out>/draws_chain*.jsonl)");
  estimate->add_option("--rho", rho, "Cross-arm death correlation")->required();
  estimate->add_option("--rho-star", rho_star, "Both rho_star_0 and rho_star_1");
  estimate->add_option("--rho-star-0", rho_star_0);
  estimate->add_option("--rho-star-1", rho_star_1);
  estimate->add_option("--rho-star-star", rho_star_star, "Two-terminal first-death correlation");

  auto* grid = app.add_subcommand("grid", "Estimate tau(u) over the configured sensitivity grid");
  grid->add_option("--draws", draw_files, "Posterior draw files (default: <out>/draws_chain*.jsonl)");

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset with its truth and oracle table");
  std::string preset = "one-terminal", truth_file;
  std::size_t n = 500, oracle_n = 1000000;
  std::vector<double> u_grid{10, 20, 30, 40};
  simulate->add_option("--preset", preset, "Built-in truth")->check(CLI::IsMember(truth_preset_names()));
  simulate->add_option("--truth", truth_file, "Truth file (JSON record) instead of a preset");
  simulate->add_option("--n", n, "Observed records");
  simulate->add_option("--oracle-n", oracle_n, "Potential-outcome rows for the oracle");
  simulate->add_option("--u", u_grid, "Thresholds for the oracle table");

  auto* km = app.add_subcommand("km", "Kaplan-Meier curves by arm (HF-free and overall survival)");
  auto* xtab = app.add_subcommand("crosstab", "HF status by vital status table (two-terminal)");

  auto* vine = app.add_subcommand("vine", "D-vine structure of the estimand");
  auto* vine_dump = vine->add_subcommand("dump", "Print vine levels, edge tags and parameters");
  std::string vine_mode = "one-terminal";
  vine_dump->add_option("--mode", vine_mode, "one-terminal or two-terminal");
  vine->require_subcommand(1);

  auto* diag = app.add_subcommand("diagnostics", "ESS and split R-hat of posterior draws");
  diag->add_option("--draws", draw_files, "Draw files, one per chain (default: <out>/draws_chain*.jsonl)");

  auto* full = app.add_subcommand("run", "ingest -> fit -> estimate -> report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  if (ingest->parsed()) {
    const auto cfg = g.load(false);
    const Dataset ds = load_dataset(cfg);
    std::size_t prog = 0, d1 = 0, d2 = 0;
    for (const auto& r : ds.records) prog += r.delta, d1 += r.xi1, d2 += r.xi2;
    std::cout << "records " << ds.size() << "\nprogressions " << prog << "\ndeaths_cause1 " << d1
              << "\ndeaths_cause2 " << d2 << '\n';
    return 0;
  }
  if (fit->parsed()) {
    const auto cfg = g.load(false);
    const Dataset ds = load_dataset(cfg);
    const auto chains = fit_stage(cfg, ds, std::cerr);
    const auto d = diagnose(chains);
    write_atomic(cfg.out / "diagnostics.csv", [&](std::ostream& out) { write_diagnostics_csv(out, d); });
    return 0;
  }
  if (estimate->parsed()) {
    RunConfig cfg = g.load(false);
    const double r0 = rho_star_0 ? *rho_star_0 : rho_star.value_or(0.0);
    const double r1 = rho_star_1 ? *rho_star_1 : rho_star.value_or(0.0);
    if (!rho_star && !(rho_star_0 && rho_star_1))
      throw ConfigError("give --rho-star or both --rho-star-0 and --rho-star-1");
    try {
      if (cfg.mode == Mode::two_terminal) {
        if (!rho_star_star) throw ConfigError("two-terminal estimation needs --rho-star-star");
        cfg.grid = {two_terminal_params(*rho, r0, r1, *rho_star_star)};
      } else {
        if (rho_star_star) throw ConfigError("--rho-star-star is only valid in two-terminal mode");
        cfg.grid = {one_terminal_params(*rho, r0, r1)};
      }
    } catch (const std::domain_error& e) {
      throw ConfigError(e.what());
    }
    const auto cells = grid_stage(cfg, pooled_draws(load_chains(cfg, draw_files)), std::cerr);
    if (!cells.front().error.empty()) throw NumericalError(cells.front().error);
    for (const auto& e : cells.front().estimates) std::cout << format_report_row(e) << '\n';
    return static_cast<int>(grid_status(cells));
  }
  if (grid->parsed()) {
    const auto cfg = g.load(true);
    const auto cells = grid_stage(cfg, pooled_draws(load_chains(cfg, draw_files)), std::cerr);
    return static_cast<int>(grid_status(cells));
  }
  if (simulate->parsed()) {
    const TruthSpec truth = truth_file.empty() ? truth_preset(preset) : read_truth(truth_file);
    const fs::path dir = g.out ? fs::path(*g.out) : fs::path("sim");
    simulate_to_dir(truth, n, oracle_n, g.seed.value_or(1), u_grid, dir);
    std::cout << "wrote " << (dir / "dataset.csv").string() << ", truth.jsonl, oracle.csv, config.json\n";
    return 0;
  }
  if (km->parsed()) {
    const auto cfg = g.load(false);
    const Dataset ds = load_dataset(cfg);
    fs::create_directories(cfg.out);
    write_atomic(cfg.out / "km_hf_free.csv", [&](std::ostream& out) { write_km_csv(out, ds, true); });
    write_atomic(cfg.out / "km_overall.csv", [&](std::ostream& out) { write_km_csv(out, ds, false); });
    return 0;
  }
  if (xtab->parsed()) {
    const auto cfg = g.load(false);
    const Dataset ds = load_dataset(cfg);
    const CrossTab tab = crosstab(ds);
    fs::create_directories(cfg.out);
    write_atomic(cfg.out / "crosstab.csv", [&](std::ostream& out) { write_crosstab_csv(out, tab); });
    write_crosstab_csv(std::cout, tab);
    return 0;
  }
  if (vine_dump->parsed()) {
    std::cout << dump_vine(parse_mode(vine_mode));
    return 0;
  }
  if (diag->parsed()) {
    std::vector<std::vector<MixtureDraw>> chains;
    if (!draw_files.empty()) {
      for (const auto& f : draw_files) chains.push_back(read_draws(fs::path(f)));
    } else {
      chains = load_chains(g.load(false), {});
    }
    write_diagnostics_csv(std::cout, diagnose(chains));
    return 0;
  }
  if (full->parsed()) {
    const auto cfg = g.load(true);
    return static_cast<int>(run_pipeline(cfg, std::cerr));
  }
  return static_cast<int>(ExitCode::config);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
