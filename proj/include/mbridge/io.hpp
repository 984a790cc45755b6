#pragma once

// JSON and CSV plumbing. Measures:
//   {"dimension": d, "atoms": [[...], ...], "weights": [...]}
//   {"gaussian": {"mean": [...], "covariance": [[...], ...]}}
// Reports carry "schema": "mbridge/1". Every float is written with 17
// significant digits so that it reads back bit for bit.

#include "mbridge/errors.hpp"
#include "mbridge/measures.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace mbridge::io {

using json = nlohmann::ordered_json;

inline constexpr const char* kSchema = "mbridge/1";

inline std::string format_double(double x) {
  if (std::isnan(x)) return "NaN";
  if (std::isinf(x)) return x > 0 ? "Infinity" : "-Infinity";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// JSON writing with fixed-precision floats. Non-finite values become null
// in JSON (which has no spelling for them).

namespace detail {

inline void write_json(std::ostream& os, const json& j, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string pad_close(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case json::value_t::number_float: {
      const double x = j.get<double>();
      os << (std::isfinite(x) ? format_double(x) : "null");
      return;
    }
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ",\n";
        first = false;
        os << pad << json(it.key()).dump() << ": ";
        write_json(os, it.value(), indent, depth + 1);
      }
      os << "\n" << pad_close << "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool flat = true;
      for (const auto& v : j) flat = flat && !v.is_structured();
      os << "[";
      bool first = true;
      for (const auto& v : j) {
        if (!first) os << (flat ? ", " : ",");
        first = false;
        if (!flat) os << "\n" << pad;
        write_json(os, v, indent, depth + 1);
      }
      if (!flat) os << "\n" << pad_close;
      os << "]";
      return;
    }
    default:
      os << j.dump();
  }
}

}  // namespace detail

inline std::string dump(const json& j) {
  std::ostringstream os;
  detail::write_json(os, j, 2, 0);
  os << "\n";
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw StructuralError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw StructuralError("write to " + path + " failed");
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

// ---------------------------------------------------------------------------
// CSV: header row, comma delimiter, LF line endings.

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    row_strings(header);
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_) throw StructuralError("csv: row has wrong number of columns");
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (k) out_ << ',';
      out_ << format_double(values[k]);
    }
    out_ << '\n';
  }

  // Leading integer columns followed by floats.
  void row(const std::vector<long long>& ids, const std::vector<double>& values) {
    if (ids.size() + values.size() != columns_) throw StructuralError("csv: row has wrong number of columns");
    bool first = true;
    for (long long v : ids) {
      if (!first) out_ << ',';
      first = false;
      out_ << v;
    }
    for (double v : values) {
      if (!first) out_ << ',';
      first = false;
      out_ << format_double(v);
    }
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }
  void save(const std::string& path) const { write_text(path, out_.str()); }

 private:
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) out_ << ',';
      out_ << cells[k];
    }
    out_ << '\n';
  }

  std::size_t columns_;
  std::ostringstream out_;
};

// ---------------------------------------------------------------------------
// Measure files

using Measure = std::variant<DiscreteMeasure, GaussianSpec>;

namespace detail {

inline double number_at(const json& j, const std::string& field) {
  if (!j.is_number()) throw StructuralError("field '" + field + "' must be a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) throw StructuralError("field '" + field + "' must be finite");
  return x;
}

inline Vector vector_at(const json& j, const std::string& field) {
  if (!j.is_array()) throw StructuralError("field '" + field + "' must be an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k)
    v(static_cast<Eigen::Index>(k)) = number_at(j[k], field + "[" + std::to_string(k) + "]");
  return v;
}

inline Matrix matrix_at(const json& j, const std::string& field, Eigen::Index cols = -1) {
  if (!j.is_array() || j.empty()) throw StructuralError("field '" + field + "' must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Matrix m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::string name = field + "[" + std::to_string(r) + "]";
    const json& row = j[static_cast<std::size_t>(r)];
    Vector v = row.is_number() ? Vector::Constant(1, number_at(row, name)) : vector_at(row, name);
    if (r == 0) {
      if (cols < 0) cols = v.size();
      m.resize(rows, cols);
    }
    if (v.size() != cols)
      throw StructuralError("field '" + name + "' has " + std::to_string(v.size()) + " entries, expected " +
                            std::to_string(cols));
    m.row(r) = v.transpose();
  }
  return m;
}

}  // namespace detail

// Weights summing to 1 within 1e-6 are renormalized; anything further off is
// rejected.
inline Measure measure_from_json(const json& j) {
  if (!j.is_object()) throw StructuralError("measure must be a JSON object");
  if (j.contains("gaussian")) {
    const json& g = j["gaussian"];
    if (!g.is_object()) throw StructuralError("field 'gaussian' must be an object");
    if (!g.contains("mean")) throw StructuralError("field 'gaussian.mean' is missing");
    if (!g.contains("covariance")) throw StructuralError("field 'gaussian.covariance' is missing");
    const Vector mean = detail::vector_at(g["mean"], "gaussian.mean");
    const Matrix cov = detail::matrix_at(g["covariance"], "gaussian.covariance", mean.size());
    if (cov.rows() != mean.size()) throw StructuralError("field 'gaussian.covariance' must be square of the mean's size");
    return GaussianSpec(mean, cov);
  }
  for (const char* f : {"atoms", "weights"})
    if (!j.contains(f)) throw StructuralError(std::string("field '") + f + "' is missing");
  Eigen::Index d = -1;
  if (j.contains("dimension")) {
    const json& dj = j["dimension"];
    if (!dj.is_number_integer() || dj.get<long long>() < 1)
      throw StructuralError("field 'dimension' must be a positive integer");
    d = static_cast<Eigen::Index>(dj.get<long long>());
  }
  const Matrix atoms = detail::matrix_at(j["atoms"], "atoms", d);
  Vector w = detail::vector_at(j["weights"], "weights");
  if (w.size() != atoms.rows())
    throw StructuralError("field 'weights' has " + std::to_string(w.size()) + " entries for " +
                          std::to_string(atoms.rows()) + " atoms");
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (!(w(k) > 0.0)) throw StructuralError("field 'weights[" + std::to_string(k) + "]' must be positive");
  const double s = w.sum();
  if (std::abs(s - 1.0) > 1e-6) throw StructuralError("field 'weights' sums to " + format_double(s) + ", not 1");
  w /= s;
  return DiscreteMeasure(atoms, w);
}

inline json measure_to_json(const DiscreteMeasure& m) {
  json j;
  j["dimension"] = m.dimension();
  j["atoms"] = to_json(m.atoms());
  j["weights"] = to_json(m.weights());
  return j;
}

inline json measure_to_json(const GaussianSpec& g) {
  json j;
  j["gaussian"]["mean"] = to_json(g.mean);
  j["gaussian"]["covariance"] = to_json(g.covariance);
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StructuralError(path + ": cannot open file");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw StructuralError(path + ": malformed JSON at byte " + std::to_string(e.byte));
  }
}

inline Measure load_measure(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return measure_from_json(j);
  } catch (const NotInConvexOrder& e) {
    throw StructuralError(path + ": " + e.what());
  } catch (const StructuralError& e) {
    throw StructuralError(path + ": " + e.what());
  }
}

inline DiscreteMeasure load_discrete(const std::string& path) {
  Measure m = load_measure(path);
  if (!std::holds_alternative<DiscreteMeasure>(m)) throw StructuralError(path + ": expected a discrete measure");
  return std::get<DiscreteMeasure>(std::move(m));
}

inline GaussianSpec load_gaussian(const std::string& path) {
  Measure m = load_measure(path);
  if (!std::holds_alternative<GaussianSpec>(m)) throw StructuralError(path + ": expected a Gaussian measure");
  return std::get<GaussianSpec>(std::move(m));
}

}  // namespace mbridge::io
