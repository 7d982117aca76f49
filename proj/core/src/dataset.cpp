#include "bifdr/dataset.hpp"

#include "bifdr/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace bifdr {

namespace {

std::size_t find_name(const std::vector<std::string>& names, std::string_view name) {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return j;
  }
  return names.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

// Returns k for names of the form z<k> with k >= 1, else 0.
std::size_t covariate_number(std::string_view name) {
  if (name.size() < 2 || name[0] != 'z') return 0;
  std::size_t k = 0;
  auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), k);
  if (ec != std::errc{} || ptr != name.data() + name.size()) return 0;
  return k;
}

std::string location(std::size_t line, std::size_t col) {
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

double Observation::operator[](std::string_view field) const {
  const std::size_t j = find_name(*names_, field);
  if (j == names_->size()) {
    throw DataError("observation has no field '" + std::string(field) + "'");
  }
  return fields_[j];
}

bool Observation::has(std::string_view field) const {
  return find_name(*names_, field) != names_->size();
}

Dataset::Dataset(std::vector<std::string> field_names, RowMatrix fields, RowMatrix covariates)
    : names_(std::move(field_names)), fields_(std::move(fields)), z_(std::move(covariates)) {
  if (fields_.rows() == 0 && z_.rows() == 0) throw DataError("dataset has no rows");
  if (static_cast<std::size_t>(fields_.cols()) != names_.size()) {
    throw DataError("dataset: field matrix has " + std::to_string(fields_.cols()) +
                    " columns but " + std::to_string(names_.size()) + " names");
  }
  if (fields_.rows() != z_.rows()) {
    if (names_.empty() && fields_.rows() == 0) {
      fields_.resize(z_.rows(), 0);
    } else {
      throw DataError("dataset: field and covariate row counts differ");
    }
  }
  if (fields_.rows() == 0) throw DataError("dataset has no rows");
  for (std::size_t a = 0; a < names_.size(); ++a) {
    for (std::size_t b = a + 1; b < names_.size(); ++b) {
      if (names_[a] == names_[b]) throw DataError("duplicate field name '" + names_[a] + "'");
    }
  }
  for (Eigen::Index i = 0; i < fields_.rows(); ++i) {
    for (Eigen::Index j = 0; j < fields_.cols(); ++j) {
      if (!std::isfinite(fields_(i, j))) {
        throw DataError("non-finite value in field '" + names_[j] + "' at row " +
                        std::to_string(i));
      }
    }
    for (Eigen::Index j = 0; j < z_.cols(); ++j) {
      if (!std::isfinite(z_(i, j))) {
        throw DataError("non-finite covariate z" + std::to_string(j + 1) + " at row " +
                        std::to_string(i));
      }
    }
  }
}

bool Dataset::has_field(std::string_view name) const {
  return find_name(names_, name) != names_.size();
}

std::size_t Dataset::field_index(std::string_view name) const {
  const std::size_t j = find_name(names_, name);
  if (j == names_.size()) throw DataError("dataset has no field '" + std::string(name) + "'");
  return j;
}

Observation Dataset::row(std::size_t i) const {
  const auto nf = static_cast<std::size_t>(fields_.cols());
  return Observation(names_, std::span<const double>(fields_.data() + i * nf, nf), z(i));
}

std::span<const double> Dataset::z(std::size_t i) const {
  const auto d = static_cast<std::size_t>(z_.cols());
  return {z_.data() + i * d, d};
}

double Dataset::value(std::size_t i, std::string_view field) const {
  return fields_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(field_index(field)));
}

Vector Dataset::field(std::string_view name) const {
  return fields_.col(static_cast<Eigen::Index>(field_index(name)));
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  RowMatrix f(static_cast<Eigen::Index>(rows.size()), fields_.cols());
  RowMatrix z(static_cast<Eigen::Index>(rows.size()), z_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= this->rows()) throw DataError("subset row index out of range");
    f.row(static_cast<Eigen::Index>(r)) = fields_.row(static_cast<Eigen::Index>(rows[r]));
    z.row(static_cast<Eigen::Index>(r)) = z_.row(static_cast<Eigen::Index>(rows[r]));
  }
  return Dataset(names_, std::move(f), std::move(z));
}

Dataset Dataset::with_field(const std::string& name, const Vector& values) const {
  if (static_cast<std::size_t>(values.size()) != rows()) {
    throw DataError("with_field: length mismatch for '" + name + "'");
  }
  auto names = names_;
  RowMatrix f = fields_;
  const std::size_t j = find_name(names, name);
  if (j == names.size()) {
    names.push_back(name);
    f.conservativeResize(Eigen::NoChange, f.cols() + 1);
  }
  f.col(static_cast<Eigen::Index>(j)) = values;
  return Dataset(std::move(names), std::move(f), z_);
}

Dataset parse_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw DataError("CSV is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
  const auto header = split_commas(line);
  std::vector<std::string> names;
  std::vector<std::size_t> field_cols;
  std::map<std::size_t, std::size_t> cov_cols;  // k -> column
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].empty()) {
      throw DataError("CSV header: empty column name at " + location(line_no, c + 1));
    }
    if (const std::size_t k = covariate_number(header[c]); k > 0) {
      if (!cov_cols.emplace(k, c).second) {
        throw DataError("CSV header: duplicate covariate '" + std::string(header[c]) + "'");
      }
    } else {
      names.emplace_back(header[c]);
      field_cols.push_back(c);
    }
  }
  std::size_t expect = 1;
  for (const auto& [k, c] : cov_cols) {
    if (k != expect) {
      throw DataError("CSV header: covariates must be z1..zd without gaps (missing z" +
                      std::to_string(expect) + ")");
    }
    ++expect;
  }
  std::vector<double> fvals, zvals;
  std::size_t n = 0;
  std::vector<double> cells(header.size());
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto parts = split_commas(line);
    if (parts.size() != header.size()) {
      throw DataError("CSV " + location(line_no, std::min(parts.size(), header.size()) + 1) +
                      ": expected " + std::to_string(header.size()) + " cells, found " +
                      std::to_string(parts.size()));
    }
    for (std::size_t c = 0; c < parts.size(); ++c) {
      double v = 0.0;
      const auto cell = parts[c];
      const char* first = cell.data();
      if (!cell.empty() && cell.front() == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() ||
          !std::isfinite(v)) {
        throw DataError("CSV " + location(line_no, c + 1) + ": not a finite number '" +
                        std::string(cell) + "'");
      }
      cells[c] = v;
    }
    for (std::size_t c : field_cols) fvals.push_back(cells[c]);
    for (const auto& [k, c] : cov_cols) zvals.push_back(cells[c]);
    ++n;
  }
  if (n == 0) throw DataError("CSV has a header but no data rows");
  RowMatrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(field_cols.size()));
  RowMatrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cov_cols.size()));
  std::copy(fvals.begin(), fvals.end(), f.data());
  std::copy(zvals.begin(), zvals.end(), z.data());
  return Dataset(std::move(names), std::move(f), std::move(z));
}

Dataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_csv(in);
}

void write_csv(const Dataset& data, std::ostream& out) {
  const auto& names = data.field_names();
  bool first = true;
  for (const auto& name : names) {
    out << (first ? "" : ",") << name;
    first = false;
  }
  for (std::size_t k = 1; k <= data.covariate_dim(); ++k) {
    out << (first ? "" : ",") << 'z' << k;
    first = false;
  }
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    first = true;
    for (std::size_t j = 0; j < names.size(); ++j) {
      out << (first ? "" : ",") << data.field_matrix()(static_cast<Eigen::Index>(i),
                                                         static_cast<Eigen::Index>(j));
      first = false;
    }
    for (double v : data.z(i)) {
      out << (first ? "" : ",") << v;
      first = false;
    }
    out << '\n';
  }
}

}  // namespace bifdr
