#pragma once

// CSV datasets with a JSON role map, and JSON parsing of model specs.

#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "powerlik/errors.hpp"
#include "powerlik/model.hpp"

namespace powerlik {

using Json = nlohmann::json;

// Shortest representation that parses back to the same double.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  const auto t = detail::trim(s);
  if (t == "NA" || t == "NaN" || t == "nan" || t.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* b = t.data();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) throw InvalidDataset("csv: cannot parse number '" + t + "'");
  return v;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string to_csv(const Dataset& d) {
  std::string out;
  for (std::size_t j = 0; j < d.cols(); ++j) out += (j ? "," : "") + d.names()[j];
  out += "\n";
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.cols(); ++j) {
      if (j) out += ",";
      out += format_double(d.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    out += "\n";
  }
  return out;
}

inline Json roles_json(const Dataset& d) {
  Json j = Json::object();
  for (std::size_t k = 0; k < d.cols(); ++k) j[d.names()[k]] = std::string(to_string(d.roles()[k]));
  return j;
}

// Columns absent from `roles` are dropped.
inline Dataset parse_csv(const std::string& text, const std::map<std::string, Role>& roles, Source source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidDataset("csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split(line, ',');
  std::vector<std::size_t> keep;
  std::vector<std::string> names;
  std::vector<Role> rs;
  for (std::size_t j = 0; j < header.size(); ++j) {
    auto h = header[j];
    if (h.size() >= 2 && h.front() == '"' && h.back() == '"') h = h.substr(1, h.size() - 2);
    auto it = roles.find(h);
    if (it == roles.end()) continue;
    keep.push_back(j);
    names.push_back(h);
    rs.push_back(it->second);
  }
  for (const auto& [name, role] : roles)
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw InvalidDataset("csv: role map names column '" + name + "' which is not in the header");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != header.size())
      throw InvalidDataset("csv: row " + std::to_string(rows.size() + 1) + " has " + std::to_string(cells.size()) +
                           " fields, header has " + std::to_string(header.size()));
    std::vector<double> r;
    for (auto j : keep) r.push_back(parse_double(cells[j]));
    rows.push_back(std::move(r));
  }
  Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < keep.size(); ++j) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return Dataset(std::move(names), std::move(rs), std::move(v), source);
}

inline std::map<std::string, Role> parse_roles(const Json& j) {
  if (!j.is_object()) throw ConfigError("roles must be a JSON object of column -> role");
  std::map<std::string, Role> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = parse_role(it.value().get<std::string>());
  return out;
}

inline Dataset read_csv(const std::string& path, const std::map<std::string, Role>& roles, Source source) {
  return parse_csv(read_text(path), roles, source);
}

// {"past": [{"target", "formula", "family"}], "causal": "...",
//  "copula": {"members": [...], "yz_link": "...", "zz_link": "...", "per_pair": false}}
inline FrugalModelSpec parse_spec(const Json& j) {
  try {
    FrugalModelSpec spec;
    for (const auto& c : j.at("past"))
      spec.past.push_back({c.at("target").get<std::string>(), Formula::parse(c.at("formula").get<std::string>()),
                           parse_family(c.value("family", std::string("gaussian")))});
    spec.causal = Formula::parse(j.at("causal").get<std::string>());
    if (j.contains("copula")) {
      const auto& cj = j.at("copula");
      spec.copula.members = cj.value("members", std::vector<std::string>{});
      if (cj.contains("yz_link")) spec.copula.yz_link = Formula::parse(cj.at("yz_link").get<std::string>());
      if (cj.contains("zz_link")) spec.copula.zz_link = Formula::parse(cj.at("zz_link").get<std::string>());
      spec.copula.per_pair = cj.value("per_pair", false);
    }
    return spec;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

inline Json spec_json(const FrugalModelSpec& spec) {
  Json j;
  j["past"] = Json::array();
  for (const auto& c : spec.past)
    j["past"].push_back({{"target", c.target}, {"formula", c.formula.to_string()}, {"family", std::string(to_string(c.family))}});
  j["causal"] = spec.causal.to_string();
  j["copula"] = {{"members", spec.copula.members},
                 {"yz_link", spec.copula.yz_link.to_string()},
                 {"zz_link", spec.copula.zz_link.to_string()},
                 {"per_pair", spec.copula.per_pair}};
  return j;
}

}  // namespace powerlik
