#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scr/data_model.hpp"
#include "scr/edpm.hpp"
#include "scr/error.hpp"
#include "scr/gcomp.hpp"
#include "scr/synth.hpp"

namespace scr {

inline constexpr const char* kVersion = "0.3.0";

struct RunConfig {
  std::filesystem::path dataset;
  Mode mode = Mode::one_terminal;
  CovariateSchema schema;
  ChainConfig chain;
  int chains = 1;
  GcompConfig gcomp;
  std::vector<CopulaParams> grid;
  std::filesystem::path out = "out";
  int threads = 1;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::filesystem::path> out;
};

// Relative dataset paths resolve against base_dir. Unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir, bool require_grid = true);
RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& over = {},
                          bool require_grid = true);
void apply_overrides(RunConfig& cfg, const ConfigOverrides& over);

// Effective configuration with all defaults filled in.
nlohmann::json config_to_json(const RunConfig& cfg);
// FNV-1a 64 over the sorted-key dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

CovariateSchema parse_schema(const nlohmann::json& j);
nlohmann::json schema_to_json(const CovariateSchema& schema);

// Writes to `path.partial`, then renames onto `path` once writer returns.
void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);

// KM step points per treatment arm: HF-free survival on T1 (progression or death) and overall survival on T2.
void write_km_csv(std::ostream& out, const Dataset& ds, bool hf_free);

Dataset load_dataset(const RunConfig& cfg);

// Stages of the full run. Each stage prefixes errors with its name.
std::vector<std::vector<MixtureDraw>> fit_stage(const RunConfig& cfg, const Dataset& ds, std::ostream& log);
std::vector<GridCell> grid_stage(const RunConfig& cfg, const std::vector<MixtureDraw>& draws, std::ostream& log);
std::vector<MixtureDraw> pooled_draws(const std::vector<std::vector<MixtureDraw>>& chains);

// Exit status of a finished grid: first failed cell's code, else degenerate if any estimate is, else ok.
ExitCode grid_status(const std::vector<GridCell>& cells);

// ingest -> fit -> estimate -> report, with manifest. Returns the exit status.
ExitCode run_pipeline(const RunConfig& cfg, std::ostream& log);

// Writes dataset.csv, truth.jsonl, oracle.csv (u,tau_true,se) and config.json into dir.
void simulate_to_dir(const TruthSpec& truth, std::size_t n, std::size_t oracle_n, std::uint64_t seed,
                     const std::vector<double>& u_grid, const std::filesystem::path& dir);

}  // namespace scr
