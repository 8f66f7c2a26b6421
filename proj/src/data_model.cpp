#include "scr/data_model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "scr/error.hpp"

namespace scr {

std::string to_string(Mode mode) { return mode == Mode::one_terminal ? "one-terminal" : "two-terminal"; }

Mode parse_mode(const std::string& text) {
  if (text == "one-terminal" || text == "one_terminal" || text == "one") return Mode::one_terminal;
  if (text == "two-terminal" || text == "two_terminal" || text == "two") return Mode::two_terminal;
  throw ConfigError("unknown mode '" + text + "' (expected one-terminal or two-terminal)");
}

CovariateSchema::CovariateSchema(std::vector<Covariate> covariates) : covariates_(std::move(covariates)) {
  if (covariates_.empty()) throw ConfigError("covariate schema needs at least one covariate");
  std::set<std::string> seen;
  static const std::set<std::string> reserved{"t1", "t2", "delta", "xi", "xi1", "xi2", "z"};
  for (std::size_t i = 0; i < covariates_.size(); ++i) {
    const auto& c = covariates_[i];
    if (c.name.empty()) throw ConfigError("covariate name is empty");
    if (reserved.contains(c.name)) throw ConfigError("covariate name '" + c.name + "' is reserved");
    if (!seen.insert(c.name).second) throw ConfigError("duplicate covariate name '" + c.name + "'");
    (c.kind == CovariateKind::continuous ? continuous_ : binary_).push_back(i);
  }
}

void validate_record(const ObservedRecord& rec, const CovariateSchema& schema, Mode mode, std::size_t row) {
  if (!(std::isfinite(rec.t1) && rec.t1 > 0.0)) throw RowError(row, "t1 must be a positive finite time");
  if (!(std::isfinite(rec.t2) && rec.t2 > 0.0)) throw RowError(row, "t2 must be a positive finite time");
  auto binary = [](int v) { return v == 0 || v == 1; };
  if (!binary(rec.delta)) throw RowError(row, "delta must be 0 or 1");
  if (!binary(rec.xi1)) throw RowError(row, "xi1 must be 0 or 1");
  if (!binary(rec.xi2)) throw RowError(row, "xi2 must be 0 or 1");
  if (!binary(rec.z)) throw RowError(row, "z must be 0 or 1");
  if (mode == Mode::one_terminal && rec.xi2 != 0) throw RowError(row, "xi2 must be 0 in one-terminal mode");
  if (rec.xi1 + rec.xi2 > 1) throw RowError(row, "at most one cause of death may be observed");
  if (rec.t1 > rec.t2) throw RowError(row, "t1 exceeds t2");
  if (rec.delta == 1 && !(rec.t1 < rec.t2)) throw RowError(row, "progression must strictly precede t2");
  if (rec.delta == 0 && rec.t1 != rec.t2) throw RowError(row, "delta = 0 requires t1 = t2");
  if (rec.x.size() != schema.size())
    throw RowError(row, "expected " + std::to_string(schema.size()) + " covariates, got " +
                            std::to_string(rec.x.size()));
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const double v = rec.x[i];
    if (!std::isfinite(v)) throw RowError(row, "covariate '" + schema[i].name + "' is not finite");
    if (schema[i].kind == CovariateKind::continuous && !(v > 0.0))
      throw RowError(row, "continuous covariate '" + schema[i].name + "' must be positive");
    if (schema[i].kind == CovariateKind::binary && v != 0.0 && v != 1.0)
      throw RowError(row, "binary covariate '" + schema[i].name + "' must be 0 or 1");
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, std::size_t row, const std::string& column) {
  const std::string t = trim(field);
  if (t.empty()) throw RowError(row, "missing value in column '" + column + "'");
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw RowError(row, "cannot parse '" + t + "' in column '" + column + "'");
  return v;
}

int parse_flag(const std::string& field, std::size_t row, const std::string& column) {
  const double v = parse_number(field, row, column);
  if (v != 0.0 && v != 1.0) throw RowError(row, "column '" + column + "' must be 0 or 1");
  return static_cast<int>(v);
}

}  // namespace

Dataset ingest_dataset(std::istream& in, const CovariateSchema& schema, Mode mode) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset is empty: missing header row");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  auto find_column = [&](const std::string& name) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  };
  auto require = [&](const std::string& name) -> std::size_t {
    const auto idx = find_column(name);
    if (idx < 0) throw DataError("schema error: missing column '" + name + "'");
    return static_cast<std::size_t>(idx);
  };

  const std::size_t c_t1 = require("t1");
  const std::size_t c_t2 = require("t2");
  const std::size_t c_delta = require("delta");
  std::size_t c_xi1 = 0;
  std::ptrdiff_t c_xi2 = -1;
  if (mode == Mode::one_terminal) {
    const auto xi = find_column("xi");
    c_xi1 = xi >= 0 ? static_cast<std::size_t>(xi) : require("xi1");
    c_xi2 = find_column("xi2");
  } else {
    c_xi1 = require("xi1");
    c_xi2 = static_cast<std::ptrdiff_t>(require("xi2"));
  }
  const std::size_t c_z = require("z");
  std::vector<std::size_t> c_x;
  for (const auto& cov : schema.covariates()) c_x.push_back(require(cov.name));

  Dataset ds{schema, mode, {}};
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw RowError(row, "expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
    ObservedRecord rec;
    rec.t1 = parse_number(fields[c_t1], row, "t1");
    rec.t2 = parse_number(fields[c_t2], row, "t2");
    rec.delta = parse_flag(fields[c_delta], row, "delta");
    rec.xi1 = parse_flag(fields[c_xi1], row, header[c_xi1]);
    rec.xi2 = c_xi2 >= 0 ? parse_flag(fields[static_cast<std::size_t>(c_xi2)], row, "xi2") : 0;
    rec.z = parse_flag(fields[c_z], row, "z");
    rec.x.reserve(c_x.size());
    for (std::size_t i = 0; i < c_x.size(); ++i)
      rec.x.push_back(parse_number(fields[c_x[i]], row, schema[i].name));
    validate_record(rec, schema, mode, row);
    ds.records.push_back(std::move(rec));
    ++row;
  }
  return ds;
}

Dataset ingest_dataset(const std::filesystem::path& path, const CovariateSchema& schema, Mode mode) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  return ingest_dataset(in, schema, mode);
}

void emit_dataset(std::ostream& out, const Dataset& ds) {
  out << "t1,t2,delta,xi1,xi2,z";
  for (const auto& c : ds.schema.covariates()) out << ',' << c.name;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& r : ds.records) {
    out << r.t1 << ',' << r.t2 << ',' << r.delta << ',' << r.xi1 << ',' << r.xi2 << ',' << r.z;
    for (double v : r.x) out << ',' << v;
    out << '\n';
  }
}

void emit_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  emit_dataset(out, ds);
}

CrossTab crosstab(const Dataset& ds) {
  if (ds.mode != Mode::two_terminal) throw ConfigError("crosstab requires two-terminal data");
  CrossTab tab;
  for (const auto& r : ds.records) {
    const std::size_t row = r.delta == 1 ? 0 : 1;
    const std::size_t col = r.xi1 == 1 ? 0 : (r.xi2 == 1 ? 1 : 2);
    ++tab.cells[row][col];
  }
  return tab;
}

void write_crosstab_csv(std::ostream& out, const CrossTab& tab) {
  out << "status,cvd_dead,non_cvd_dead,alive,total\n";
  const char* names[2] = {"HF", "Non-HF"};
  for (std::size_t r = 0; r < 2; ++r)
    out << names[r] << ',' << tab.cells[r][0] << ',' << tab.cells[r][1] << ',' << tab.cells[r][2] << ','
        << tab.row_total(r) << '\n';
  out << "Total," << tab.col_total(0) << ',' << tab.col_total(1) << ',' << tab.col_total(2) << ','
      << tab.total() << '\n';
}

}  // namespace scr
