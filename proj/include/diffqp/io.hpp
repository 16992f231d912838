#pragma once

/// On-disk formats.
///
/// Problem files are JSON documents tagged "diffqp-problem v1" with fields
/// {n, p, m, storage_mode, P, q, A, b, C, d}. Dense matrices are row-major
/// nested arrays; sparse matrices are {rows, cols, row_offsets, col_indices,
/// values} in compressed-sparse-row form. Every float is written with 17
/// significant digits, so doubles round-trip bit-exactly. An optional
/// "p_upper_only": true lets hand-written sparse files store only the upper
/// triangle of P.
///
/// Generated instances get a metadata sidecar "<path>.meta.json" carrying
/// {family, size_desc, seed, notes} and, when available, the analytic
/// ground truth.

#include "diffqp/benchgen.hpp"
#include "diffqp/problem.hpp"
#include "diffqp/types.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace diffqp {

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

inline void append_vector(std::string& out, const Vector& v) {
  out += '[';
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_double(out, v[i]);
  }
  out += ']';
}

inline void append_dense(std::string& out, const Matrix& m) {
  out += '[';
  for (Index r = 0; r < m.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      append_double(out, m(r, c));
    }
    out += ']';
  }
  out += ']';
}

inline void append_sparse(std::string& out, const SparseMatrixRm& m) {
  out += "{\"rows\":" + std::to_string(m.rows()) + ",\"cols\":" + std::to_string(m.cols());
  out += ",\"row_offsets\":[";
  for (Index r = 0; r <= m.rows(); ++r) {
    if (r) out += ',';
    out += std::to_string(m.outerIndexPtr()[r]);
  }
  out += "],\"col_indices\":[";
  for (Index k = 0; k < m.nonZeros(); ++k) {
    if (k) out += ',';
    out += std::to_string(m.innerIndexPtr()[k]);
  }
  out += "],\"values\":[";
  for (Index k = 0; k < m.nonZeros(); ++k) {
    if (k) out += ',';
    append_double(out, m.valuePtr()[k]);
  }
  out += "]}";
}

inline std::string escape_json(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidProblem(path + ": JSON parse error: " + e.what());
  }
}

inline Vector json_to_vector(const nlohmann::json& j, Index expected, const char* name) {
  if (!j.is_array()) throw InvalidProblem(std::string(name) + ": expected array");
  if (static_cast<Index>(j.size()) != expected) {
    throw InvalidProblem(std::string(name) + ": wrong length");
  }
  Vector v(expected);
  for (Index i = 0; i < expected; ++i) {
    if (!j[static_cast<size_t>(i)].is_number()) {
      throw InvalidProblem(std::string(name) + ": non-numeric entry");
    }
    v[i] = j[static_cast<size_t>(i)].get<double>();
  }
  return v;
}

inline Matrix json_to_dense(const nlohmann::json& j, Index rows, Index cols, const char* name) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw InvalidProblem(std::string(name) + ": expected " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw InvalidProblem(std::string(name) + ": row length mismatch");
    }
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<size_t>(c)].get<double>();
  }
  return m;
}

inline SparseMatrixRm json_to_sparse(const nlohmann::json& j, Index rows, Index cols,
                                     const char* name) {
  if (!j.is_object()) throw InvalidProblem(std::string(name) + ": expected CSR object");
  const auto& offs = j.at("row_offsets");
  const auto& cidx = j.at("col_indices");
  const auto& vals = j.at("values");
  if (static_cast<Index>(offs.size()) != rows + 1) {
    throw InvalidProblem(std::string(name) + ": row_offsets length mismatch");
  }
  const Index nnz = offs[static_cast<size_t>(rows)].get<Index>();
  if (static_cast<Index>(cidx.size()) != nnz || static_cast<Index>(vals.size()) != nnz) {
    throw InvalidProblem(std::string(name) + ": nnz mismatch");
  }
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(nnz));
  Index prev = 0;
  for (Index r = 0; r < rows; ++r) {
    const Index lo = offs[static_cast<size_t>(r)].get<Index>();
    const Index hi = offs[static_cast<size_t>(r) + 1].get<Index>();
    if (lo != prev || hi < lo) throw InvalidProblem(std::string(name) + ": bad row_offsets");
    prev = hi;
    for (Index k = lo; k < hi; ++k) {
      const Index c = cidx[static_cast<size_t>(k)].get<Index>();
      if (c < 0 || c >= cols) throw InvalidProblem(std::string(name) + ": column out of range");
      trips.emplace_back(static_cast<int>(r), static_cast<int>(c),
                         vals[static_cast<size_t>(k)].get<double>());
    }
  }
  SparseMatrixRm m(rows, cols);
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

}  // namespace detail

/// Serializes a problem to the "diffqp-problem v1" format.
inline void write_problem(const std::string& path, const QpProblem& problem) {
  std::string out = "{\"format\":\"diffqp-problem v1\",";
  out += "\"n\":" + std::to_string(problem.n) + ",\"p\":" + std::to_string(problem.p) +
         ",\"m\":" + std::to_string(problem.m) + ",";
  out += "\"storage_mode\":\"";
  out += problem.is_dense() ? "dense" : "sparse_csr";
  out += "\",\n\"P\":";
  if (problem.is_dense()) {
    detail::append_dense(out, problem.P);
  } else {
    detail::append_sparse(out, problem.Ps);
  }
  out += ",\n\"q\":";
  detail::append_vector(out, problem.q);
  out += ",\n\"A\":";
  if (problem.is_dense()) {
    detail::append_dense(out, problem.A);
  } else {
    detail::append_sparse(out, problem.As);
  }
  out += ",\n\"b\":";
  detail::append_vector(out, problem.b);
  out += ",\n\"C\":";
  if (problem.is_dense()) {
    detail::append_dense(out, problem.C);
  } else {
    detail::append_sparse(out, problem.Cs);
  }
  out += ",\n\"d\":";
  detail::append_vector(out, problem.d);
  out += "\n}\n";
  detail::write_text_file(path, out);
}

/// Reads a "diffqp-problem v1" file and rebuilds the canonical problem.
inline QpProblem read_problem(const std::string& path) {
  const nlohmann::json j = detail::parse_json_file(path);
  try {
    if (j.at("format").get<std::string>() != "diffqp-problem v1") {
      throw InvalidProblem(path + ": unknown format tag");
    }
    const Index n = j.at("n").get<Index>();
    const Index p = j.at("p").get<Index>();
    const Index m = j.at("m").get<Index>();
    if (n < 1 || p < 0 || m < 0) throw InvalidProblem(path + ": bad dimensions");
    const std::string mode = j.at("storage_mode").get<std::string>();
    const Vector q = detail::json_to_vector(j.at("q"), n, "q");
    const Vector b = detail::json_to_vector(j.at("b"), p, "b");
    const Vector d = detail::json_to_vector(j.at("d"), m, "d");
    if (mode == "dense") {
      return build_problem(detail::json_to_dense(j.at("P"), n, n, "P"), q,
                           detail::json_to_dense(j.at("A"), p, n, "A"), b,
                           detail::json_to_dense(j.at("C"), m, n, "C"), d);
    }
    if (mode == "sparse_csr") {
      const bool upper_only = j.value("p_upper_only", false);
      return build_problem(detail::json_to_sparse(j.at("P"), n, n, "P"), q,
                           detail::json_to_sparse(j.at("A"), p, n, "A"), b,
                           detail::json_to_sparse(j.at("C"), m, n, "C"), d, upper_only);
    }
    throw InvalidProblem(path + ": unknown storage_mode " + mode);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidProblem(path + ": " + e.what());
  }
}

/// Sidecar metadata for generated instances.
struct InstanceMetadata {
  std::string family;
  std::vector<Index> size_desc;
  std::uint64_t seed = 0;
  std::string notes;
  bool has_truth = false;
  Vector truth_z;
  Vector truth_data;
};

inline std::string sidecar_path(const std::string& problem_path) {
  return problem_path + ".meta.json";
}

/// Writes the problem file plus its metadata sidecar.
inline void write_instance(const std::string& path, const BenchInstance& instance) {
  write_problem(path, instance.problem);
  std::string out = "{\"family\":\"" + detail::escape_json(instance.family) + "\",";
  out += "\"size_desc\":[";
  for (size_t i = 0; i < instance.size_desc.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(instance.size_desc[i]);
  }
  out += "],\"seed\":" + std::to_string(instance.seed) + ",";
  out += "\"notes\":\"" + detail::escape_json(instance.truth.note) + "\"";
  if (instance.truth.has_z) {
    out += ",\"truth_z\":";
    detail::append_vector(out, instance.truth.z_star);
  }
  if (instance.truth.data.size() > 0) {
    out += ",\"truth_data\":";
    detail::append_vector(out, instance.truth.data);
  }
  out += "}\n";
  detail::write_text_file(sidecar_path(path), out);
}

/// Loads the sidecar next to a problem file, if present.
inline std::optional<InstanceMetadata> read_metadata(const std::string& problem_path) {
  const std::string path = sidecar_path(problem_path);
  std::ifstream probe(path);
  if (!probe) return std::nullopt;
  probe.close();
  const nlohmann::json j = detail::parse_json_file(path);
  InstanceMetadata meta;
  meta.family = j.value("family", std::string());
  meta.seed = j.value("seed", std::uint64_t{0});
  meta.notes = j.value("notes", std::string());
  if (j.contains("size_desc")) {
    for (const auto& v : j.at("size_desc")) meta.size_desc.push_back(v.get<Index>());
  }
  if (j.contains("truth_z")) {
    const auto& t = j.at("truth_z");
    meta.truth_z = detail::json_to_vector(t, static_cast<Index>(t.size()), "truth_z");
    meta.has_truth = true;
  }
  if (j.contains("truth_data")) {
    const auto& t = j.at("truth_data");
    meta.truth_data = detail::json_to_vector(t, static_cast<Index>(t.size()), "truth_data");
  }
  return meta;
}

/// Reads a whitespace-separated list of numbers (upstream gradient files).
inline Vector read_vector_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<double> vals;
  double x;
  while (f >> x) vals.push_back(x);
  if (!f.eof()) throw InvalidProblem(path + ": non-numeric content");
  Vector v(static_cast<Index>(vals.size()));
  for (size_t i = 0; i < vals.size(); ++i) v[static_cast<Index>(i)] = vals[i];
  return v;
}

}  // namespace diffqp
