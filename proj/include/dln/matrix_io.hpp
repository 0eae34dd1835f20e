#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dln/model.hpp"

namespace dln {

// Matrix text format, shared repo-wide:
//   line 1:        "rows cols"
//   lines 2..1+rows: cols whitespace-separated decimal literals
// Serialization uses 17 significant digits so values round-trip exactly.

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string matrix_to_text(const MatrixReal& m) {
  std::ostringstream os;
  os << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
  return os.str();
}

inline MatrixReal matrix_from_stream(std::istream& in) {
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty matrix file", 1);
  ++lineno;
  std::istringstream header(line);
  long long rows = 0, cols = 0;
  std::string extra;
  if (!(header >> rows >> cols) || (header >> extra))
    throw ParseError("expected header 'rows cols'", lineno);
  if (rows < 1 || cols < 1)
    throw ParseError("matrix dimensions must be positive", lineno);
  if (static_cast<std::size_t>(rows) * cols > kElementBudget)
    throw ParseError("matrix exceeds the element budget", lineno);

  MatrixReal m(rows, cols);
  for (long long i = 0; i < rows; ++i) {
    if (!std::getline(in, line))
      throw ParseError("expected " + std::to_string(rows) + " data rows, got " +
                           std::to_string(i),
                       lineno + 1);
    ++lineno;
    std::istringstream row(line);
    for (long long j = 0; j < cols; ++j) {
      double v = 0.0;
      if (!(row >> v))
        throw ParseError("row has fewer than " + std::to_string(cols) +
                             " values",
                         lineno);
      if (!std::isfinite(v))
        throw ParseError("non-finite entry", lineno);
      m(i, j) = v;
    }
    if (row >> extra)
      throw ParseError("row has more than " + std::to_string(cols) + " values",
                       lineno);
  }
  return m;
}

inline MatrixReal read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open matrix file: " + path.string(), 0);
  try {
    return matrix_from_stream(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ":" + std::to_string(e.line) + ": " +
                         e.what(),
                     e.line);
  }
}

inline void write_matrix(const std::filesystem::path& path, const MatrixReal& m) {
  std::ofstream out(path);
  if (!out)
    throw ParseError("cannot write matrix file: " + path.string(), 0);
  out << matrix_to_text(m);
}

// A weight stack on disk is one matrix file per layer plus manifest.json
// naming the widths and the layer files in order.
inline void save_weight_stack(const std::filesystem::path& dir,
                              const WeightStack& w) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["widths"] = w.shape.widths;
  std::vector<std::string> files;
  for (int k = 1; k <= w.shape.hidden_count() + 1; ++k) {
    const std::string name = "W" + std::to_string(k) + ".txt";
    write_matrix(dir / name, w.layer(k));
    files.push_back(name);
  }
  manifest["layers"] = files;
  std::ofstream out(dir / "manifest.json");
  if (!out)
    throw ParseError("cannot write manifest in " + dir.string(), 0);
  out << manifest.dump(2) << '\n';
}

inline WeightStack load_weight_stack(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in)
    throw ParseError("cannot open manifest: " + (dir / "manifest.json").string(),
                     0);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad manifest in " + dir.string() + ": " + e.what(), 0);
  }
  WeightStack w;
  w.shape = NetworkShape::from_widths(
      manifest.at("widths").get<std::vector<int>>());
  for (const auto& name : manifest.at("layers").get<std::vector<std::string>>())
    w.layers.push_back(read_matrix(dir / name));
  w.validate();
  return w;
}

}  // namespace dln
