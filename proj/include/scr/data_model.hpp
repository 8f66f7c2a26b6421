#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace scr {

// One terminal event (death) or two competing terminal events (CVD / non-CVD death).
enum class Mode { one_terminal, two_terminal };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

enum class CovariateKind { continuous, binary };

struct Covariate {
  std::string name;
  CovariateKind kind;
};

// Ordered covariate list; the regression intercept is implicit.
class CovariateSchema {
 public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<Covariate> covariates);

  const std::vector<Covariate>& covariates() const { return covariates_; }
  std::size_t size() const { return covariates_.size(); }
  const Covariate& operator[](std::size_t i) const { return covariates_[i]; }

  // Schema positions of continuous and binary covariates, in schema order.
  const std::vector<std::size_t>& continuous() const { return continuous_; }
  const std::vector<std::size_t>& binary() const { return binary_; }

  // Regression coefficients per outcome excluding the treatment term: intercept + covariates.
  std::size_t design_size() const { return covariates_.size() + 1; }

 private:
  std::vector<Covariate> covariates_;
  std::vector<std::size_t> continuous_;
  std::vector<std::size_t> binary_;
};

// O = (T1, T2, delta, xi1, xi2, Z, X). In one-terminal mode xi1 is the death
// indicator and xi2 is always 0.
struct ObservedRecord {
  double t1 = 0.0;
  double t2 = 0.0;
  int delta = 0;
  int xi1 = 0;
  int xi2 = 0;
  int z = 0;
  std::vector<double> x;

  bool operator==(const ObservedRecord&) const = default;
};

// Throws RowError(row, ...) when a record breaks an ObservedRecord invariant.
void validate_record(const ObservedRecord& rec, const CovariateSchema& schema, Mode mode, std::size_t row);

struct Dataset {
  CovariateSchema schema;
  Mode mode = Mode::one_terminal;
  std::vector<ObservedRecord> records;

  std::size_t size() const { return records.size(); }
};

Dataset ingest_dataset(std::istream& in, const CovariateSchema& schema, Mode mode);
Dataset ingest_dataset(const std::filesystem::path& path, const CovariateSchema& schema, Mode mode);

void emit_dataset(std::ostream& out, const Dataset& ds);
void emit_dataset(const std::filesystem::path& path, const Dataset& ds);

// HF status (rows: delta = 1, delta = 0) by vital status (CVD dead, non-CVD dead, alive).
struct CrossTab {
  std::array<std::array<std::size_t, 3>, 2> cells{};

  std::size_t row_total(std::size_t r) const { return cells[r][0] + cells[r][1] + cells[r][2]; }
  std::size_t col_total(std::size_t c) const { return cells[0][c] + cells[1][c]; }
  std::size_t total() const { return row_total(0) + row_total(1); }
};

CrossTab crosstab(const Dataset& ds);
void write_crosstab_csv(std::ostream& out, const CrossTab& tab);

}  // namespace scr
