#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mscos/areal.hpp"
#include "mscos/evaluate.hpp"
#include "mscos/model.hpp"
#include "mscos/predict.hpp"
#include "mscos/sampler.hpp"

namespace mscos {

using Json = nlohmann::json;

namespace io {

// 17 significant digits: doubles round-trip exactly, so identical inputs
// give byte-identical files.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::invalid_argument("cannot write file: " + path);
  out << content;
}

inline double parse_double(const std::string& field, const std::string& where) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument(where + ": not a number: '" + field + "'");
  }
  if (pos != field.size())
    throw std::invalid_argument(where + ": trailing garbage in number: '" + field + "'");
  return v;
}

// Split one CSV line; the formats here never quote fields.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

inline std::vector<std::string> csv_lines(const std::string& content,
                                          const std::string& path) {
  std::vector<std::string> lines;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (const auto& l : lines)
    if (l.empty())
      throw std::invalid_argument(path + ": blank line inside table");
  return lines;
}

}  // namespace io

// ---- areal support JSON -----------------------------------------------
// {"schema":1, "units":[{"id":..., "area":..., "centroid":[x,y]},...],
//  "adjacency":[["id_a","id_b"],...]}

inline ArealSupport load_support_json(const std::string& path) {
  Json j;
  try {
    j = Json::parse(io::read_file(path));
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(path + ": bad JSON: " + e.what());
  }
  if (!j.contains("units") || !j["units"].is_array() || j["units"].empty())
    throw std::invalid_argument(path + ": 'units' must be a non-empty array");
  const auto n = static_cast<Eigen::Index>(j["units"].size());
  std::vector<std::string> ids;
  Eigen::VectorXd areas(n);
  Eigen::MatrixX2d centroids(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Json& u = j["units"][static_cast<std::size_t>(i)];
    if (!u.contains("id") || !u.contains("area") || !u.contains("centroid"))
      throw std::invalid_argument(path + ": units[" + std::to_string(i) +
                                  "] needs id, area, centroid");
    ids.push_back(u["id"].get<std::string>());
    areas[i] = u["area"].get<double>();
    const Json& c = u["centroid"];
    if (!c.is_array() || c.size() != 2)
      throw std::invalid_argument(path + ": centroid must be [x, y]");
    centroids(i, 0) = c[0].get<double>();
    centroids(i, 1) = c[1].get<double>();
  }
  Eigen::MatrixXd adjacency = Eigen::MatrixXd::Zero(n, n);
  std::map<std::string, Eigen::Index> index;
  for (Eigen::Index i = 0; i < n; ++i) index[ids[static_cast<std::size_t>(i)]] = i;
  for (const Json& e : j.value("adjacency", Json::array())) {
    if (!e.is_array() || e.size() != 2)
      throw std::invalid_argument(path + ": adjacency entries must be id pairs");
    const auto a = index.find(e[0].get<std::string>());
    const auto b = index.find(e[1].get<std::string>());
    if (a == index.end() || b == index.end())
      throw std::invalid_argument(path + ": adjacency references unknown unit");
    adjacency(a->second, b->second) = adjacency(b->second, a->second) = 1.0;
  }
  try {
    return ArealSupport(std::move(ids), std::move(areas), std::move(centroids),
                        std::move(adjacency));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

inline void save_support_json(const ArealSupport& support, const std::string& path) {
  Json units = Json::array();
  for (Eigen::Index i = 0; i < support.n(); ++i) {
    units.push_back({{"id", support.ids()[static_cast<std::size_t>(i)]},
                     {"area", support.areas()[i]},
                     {"centroid", {support.centroids()(i, 0), support.centroids()(i, 1)}}});
  }
  Json edges = Json::array();
  for (Eigen::Index i = 0; i < support.n(); ++i)
    for (Eigen::Index k = i + 1; k < support.n(); ++k)
      if (support.adjacency()(i, k) != 0.0)
        edges.push_back({support.ids()[static_cast<std::size_t>(i)],
                         support.ids()[static_cast<std::size_t>(k)]});
  const Json j = {{"schema", 1}, {"units", units}, {"adjacency", edges}};
  io::write_file(path, j.dump(2) + "\n");
}

// ---- overlap table CSV: fine_id,coarse_id,overlap_area ------------------

inline OverlapTable load_overlap_csv(const std::string& path) {
  const auto lines = io::csv_lines(io::read_file(path), path);
  if (lines.empty() || io::split_csv_line(lines[0]) !=
                           std::vector<std::string>{"fine_id", "coarse_id",
                                                    "overlap_area"})
    throw std::invalid_argument(path +
                                ": expected header fine_id,coarse_id,overlap_area");
  OverlapTable table;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto fields = io::split_csv_line(lines[k]);
    if (fields.size() != 3)
      throw std::invalid_argument(path + ": line " + std::to_string(k + 1) +
                                  ": expected 3 fields");
    table.push_back({fields[0], fields[1],
                     io::parse_double(fields[2], path + ": line " + std::to_string(k + 1))});
  }
  return table;
}

inline void save_overlap_csv(const OverlapTable& table, const std::string& path) {
  std::string out = "fine_id,coarse_id,overlap_area\n";
  for (const OverlapRow& row : table)
    out += row.fine_id + "," + row.coarse_id + "," +
           io::format_double(row.overlap_area) + "\n";
  io::write_file(path, out);
}

// ---- data CSV: unit_id,value (empty value = missing) --------------------

// Returns the values aligned to the support's unit order. Every unit must
// appear exactly once.
inline Eigen::VectorXd load_data_csv(const std::string& path,
                                     const ArealSupport& support) {
  const auto lines = io::csv_lines(io::read_file(path), path);
  if (lines.empty() ||
      io::split_csv_line(lines[0]) != std::vector<std::string>{"unit_id", "value"})
    throw std::invalid_argument(path + ": expected header unit_id,value");
  Eigen::VectorXd values = Eigen::VectorXd::Constant(
      support.n(), std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> seen(static_cast<std::size_t>(support.n()), false);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto fields = io::split_csv_line(lines[k]);
    const std::string where = path + ": line " + std::to_string(k + 1);
    if (fields.size() != 2)
      throw std::invalid_argument(where + ": expected 2 fields");
    const Eigen::Index i = support.index_of(fields[0]);
    if (seen[static_cast<std::size_t>(i)])
      throw std::invalid_argument(where + ": duplicate unit " + fields[0]);
    seen[static_cast<std::size_t>(i)] = true;
    if (!fields[1].empty()) values[i] = io::parse_double(fields[1], where);
  }
  for (Eigen::Index i = 0; i < support.n(); ++i)
    if (!seen[static_cast<std::size_t>(i)])
      throw std::invalid_argument(path + ": missing row for unit " +
                                  support.ids()[static_cast<std::size_t>(i)]);
  return values;
}

inline void save_data_csv(const std::vector<std::string>& ids,
                          const Eigen::VectorXd& values, const std::string& path) {
  if (static_cast<Eigen::Index>(ids.size()) != values.size())
    throw std::invalid_argument("save_data_csv: id/value size mismatch");
  std::string out = "unit_id,value\n";
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    out += ids[static_cast<std::size_t>(i)] + ",";
    if (std::isfinite(values[i])) out += io::format_double(values[i]);
    out += "\n";
  }
  io::write_file(path, out);
}

// ---- posterior draws CSV -------------------------------------------------
// chain,iter,<scalar columns>,<process_0..process_{d-1}>

inline void save_draws_csv(const PosteriorDraws& draws, int chain_index,
                           const std::string& path) {
  std::string header = "chain,iter";
  for (const auto& name : draws.scalar_names) header += "," + name;
  for (Eigen::Index k = 0; k < draws.process.cols(); ++k)
    header += "," + draws.process_name + "_" + std::to_string(k);
  std::string out = header + "\n";
  for (Eigen::Index s = 0; s < draws.n_draws(); ++s) {
    const long iter = draws.config.burn_in + static_cast<long>(s) * draws.config.thin;
    out += std::to_string(chain_index) + "," + std::to_string(iter);
    for (Eigen::Index k = 0; k < draws.scalars.cols(); ++k)
      out += "," + io::format_double(draws.scalars(s, k));
    for (Eigen::Index k = 0; k < draws.process.cols(); ++k)
      out += "," + io::format_double(draws.process(s, k));
    out += "\n";
  }
  io::write_file(path, out);
}

// Loads one chain's draws; column names must match the spec-derived layout.
inline PosteriorDraws load_draws_csv(const std::string& path, const ModelSpec& spec) {
  const auto lines = io::csv_lines(io::read_file(path), path);
  if (lines.empty()) throw std::invalid_argument(path + ": empty draws file");
  const auto header = io::split_csv_line(lines[0]);
  PosteriorDraws draws;
  draws.scalar_names = scalar_names_for(spec);
  draws.process_name = spec.uses_basis() ? "eta" : "psi";
  std::vector<std::string> expected = {"chain", "iter"};
  for (const auto& n : draws.scalar_names) expected.push_back(n);
  for (Eigen::Index k = 0; k < spec.process_dim(); ++k)
    expected.push_back(draws.process_name + "_" + std::to_string(k));
  if (header != expected)
    throw std::invalid_argument(path + ": draws columns do not match the model spec");

  const auto n_rows = static_cast<Eigen::Index>(lines.size()) - 1;
  if (n_rows < 1) throw std::invalid_argument(path + ": no draws");
  draws.scalars.resize(n_rows, static_cast<Eigen::Index>(draws.scalar_names.size()));
  draws.process.resize(n_rows, spec.process_dim());
  for (Eigen::Index s = 0; s < n_rows; ++s) {
    const auto fields = io::split_csv_line(lines[static_cast<std::size_t>(s) + 1]);
    const std::string where = path + ": line " + std::to_string(s + 2);
    if (fields.size() != expected.size())
      throw std::invalid_argument(where + ": wrong field count");
    for (Eigen::Index k = 0; k < draws.scalars.cols(); ++k)
      draws.scalars(s, k) = io::parse_double(fields[static_cast<std::size_t>(2 + k)], where);
    for (Eigen::Index k = 0; k < draws.process.cols(); ++k)
      draws.process(s, k) = io::parse_double(
          fields[static_cast<std::size_t>(2 + draws.scalars.cols() + k)], where);
  }
  return draws;
}

// Pool several chains' draws (rows stacked in chain order).
inline PosteriorDraws pool_draws(const std::vector<PosteriorDraws>& chains) {
  if (chains.empty()) throw std::invalid_argument("pool_draws: no chains");
  PosteriorDraws out = chains[0];
  Eigen::Index total = 0;
  for (const auto& c : chains) total += c.n_draws();
  out.scalars.resize(total, chains[0].scalars.cols());
  out.process.resize(total, chains[0].process.cols());
  Eigen::Index row = 0;
  for (const auto& c : chains) {
    if (c.scalar_names != chains[0].scalar_names)
      throw std::invalid_argument("pool_draws: chains disagree on columns");
    out.scalars.middleRows(row, c.n_draws()) = c.scalars;
    out.process.middleRows(row, c.n_draws()) = c.process;
    row += c.n_draws();
  }
  return out;
}

// ---- prediction CSV: unit_id,variable,mean,sd,lo95,hi95 ------------------

inline void save_prediction_csv(const PredictionResult& pred, const std::string& path) {
  std::string out = "unit_id,variable,mean,sd,lo95,hi95\n";
  auto emit = [&](const std::string& variable, const Eigen::VectorXd& mean,
                  const Eigen::VectorXd& sd, const Eigen::VectorXd& lo,
                  const Eigen::VectorXd& hi) {
    for (Eigen::Index i = 0; i < mean.size(); ++i)
      out += pred.unit_ids[static_cast<std::size_t>(i)] + "," + variable + "," +
             io::format_double(mean[i]) + "," + io::format_double(sd[i]) + "," +
             io::format_double(lo[i]) + "," + io::format_double(hi[i]) + "\n";
  };
  if (pred.has_var1) emit("y1", pred.mean1, pred.sd1, pred.lo1, pred.hi1);
  if (pred.has_var2) emit("y2", pred.mean2, pred.sd2, pred.lo2, pred.hi2);
  io::write_file(path, out);
}

struct PredictionTable {
  std::vector<std::string> unit_ids;  // per variable-1 rows
  Eigen::VectorXd mean1, mean2;
  bool has_var1 = false, has_var2 = false;
};

inline PredictionTable load_prediction_csv(const std::string& path) {
  const auto lines = io::csv_lines(io::read_file(path), path);
  if (lines.empty() ||
      io::split_csv_line(lines[0]) !=
          std::vector<std::string>{"unit_id", "variable", "mean", "sd", "lo95", "hi95"})
    throw std::invalid_argument(path + ": expected prediction CSV header");
  std::vector<std::string> ids1, ids2;
  std::vector<double> mean1, mean2;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto fields = io::split_csv_line(lines[k]);
    const std::string where = path + ": line " + std::to_string(k + 1);
    if (fields.size() != 6)
      throw std::invalid_argument(where + ": expected 6 fields");
    const double mean = io::parse_double(fields[2], where);
    if (fields[1] == "y1") {
      ids1.push_back(fields[0]);
      mean1.push_back(mean);
    } else if (fields[1] == "y2") {
      ids2.push_back(fields[0]);
      mean2.push_back(mean);
    } else {
      throw std::invalid_argument(where + ": variable must be y1 or y2");
    }
  }
  PredictionTable out;
  out.has_var1 = !ids1.empty();
  out.has_var2 = !ids2.empty();
  out.unit_ids = out.has_var1 ? ids1 : ids2;
  if (out.has_var1)
    out.mean1 = Eigen::Map<const Eigen::VectorXd>(mean1.data(),
                                                  static_cast<Eigen::Index>(mean1.size()));
  if (out.has_var2)
    out.mean2 = Eigen::Map<const Eigen::VectorXd>(mean2.data(),
                                                  static_cast<Eigen::Index>(mean2.size()));
  return out;
}

// ---- metric report --------------------------------------------------------

inline Json metric_report_json(const MetricReport& report) {
  Json j;
  j["schema"] = 1;
  for (const auto& [key, value] : report.rmse) j["rmse"][key] = value;
  for (const auto& [key, value] : report.waic) {
    j["waic"][key] = {{"waic", value.waic},
                      {"lppd", value.lppd},
                      {"p_waic", value.p_waic}};
  }
  for (const auto& [key, value] : report.gelman_rubin) j["gelman_rubin"][key] = value;
  for (const auto& [key, value] : report.config) j["config"][key] = value;
  return j;
}

// One flat row: metric,key,value — tabulates across scenario runs and
// round-trips the numeric content of the JSON report.
inline std::string metric_report_csv(const MetricReport& report) {
  std::string out = "metric,key,value\n";
  for (const auto& [key, value] : report.rmse)
    out += "rmse," + key + "," + io::format_double(value) + "\n";
  for (const auto& [key, value] : report.waic) {
    out += "waic," + key + "," + io::format_double(value.waic) + "\n";
    out += "lppd," + key + "," + io::format_double(value.lppd) + "\n";
    out += "p_waic," + key + "," + io::format_double(value.p_waic) + "\n";
  }
  for (const auto& [key, value] : report.gelman_rubin)
    out += "gelman_rubin," + key + "," + io::format_double(value) + "\n";
  return out;
}

inline std::map<std::string, double> load_metric_csv(const std::string& path) {
  const auto lines = io::csv_lines(io::read_file(path), path);
  if (lines.empty() || io::split_csv_line(lines[0]) !=
                           std::vector<std::string>{"metric", "key", "value"})
    throw std::invalid_argument(path + ": expected header metric,key,value");
  std::map<std::string, double> out;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto fields = io::split_csv_line(lines[k]);
    if (fields.size() != 3)
      throw std::invalid_argument(path + ": line " + std::to_string(k + 1) +
                                  ": expected 3 fields");
    out[fields[0] + "/" + fields[1]] =
        io::parse_double(fields[2], path + ": line " + std::to_string(k + 1));
  }
  return out;
}

}  // namespace mscos
