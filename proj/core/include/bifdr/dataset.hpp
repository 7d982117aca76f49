#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bifdr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Read-only view of one row: named scalar fields plus the covariate vector z.
/// Valid only while the owning Dataset is alive.
class Observation {
 public:
  Observation(const std::vector<std::string>& names, std::span<const double> fields,
              std::span<const double> z)
      : names_(&names), fields_(fields), z_(z) {}

  /// Value of a named scalar field; throws DataError when absent.
  double operator[](std::string_view field) const;
  bool has(std::string_view field) const;
  std::span<const double> z() const { return z_; }
  std::span<const double> fields() const { return fields_; }

 private:
  const std::vector<std::string>* names_;
  std::span<const double> fields_;
  std::span<const double> z_;
};

/// n observations sharing one schema. Immutable after construction.
class Dataset {
 public:
  /// Throws DataError on shape mismatch, n == 0, duplicate field names or
  /// non-finite entries.
  Dataset(std::vector<std::string> field_names, RowMatrix fields, RowMatrix covariates);

  std::size_t rows() const { return static_cast<std::size_t>(fields_.rows()); }
  std::size_t covariate_dim() const { return static_cast<std::size_t>(z_.cols()); }
  const std::vector<std::string>& field_names() const { return names_; }
  bool has_field(std::string_view name) const;
  /// Column index of a field; throws DataError when absent.
  std::size_t field_index(std::string_view name) const;

  Observation row(std::size_t i) const;
  std::span<const double> z(std::size_t i) const;
  double value(std::size_t i, std::string_view field) const;
  Vector field(std::string_view name) const;
  const RowMatrix& covariates() const { return z_; }
  const RowMatrix& field_matrix() const { return fields_; }

  /// Rows in the given order.
  Dataset subset(std::span<const std::size_t> rows) const;
  /// Copy with one field replaced (or appended when new).
  Dataset with_field(const std::string& name, const Vector& values) const;

 private:
  std::vector<std::string> names_;
  RowMatrix fields_;
  RowMatrix z_;
};

/// CSV layout: a header naming scalar fields followed by z1..zd, then one row per
/// observation. Columns named z<k> are covariates, ordered by k; every other
/// column is a scalar field. Errors report the 1-based line and column.
Dataset parse_csv(std::istream& in);
Dataset read_csv(const std::filesystem::path& path);
void write_csv(const Dataset& data, std::ostream& out);

}  // namespace bifdr
