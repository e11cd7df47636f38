#pragma once

// Internal helpers shared by the serialization code. Not installed.

#include <fstream>
#include <string>

#include <json.hpp>

#include "ndi/errors.hpp"
#include "ndi/geometry.hpp"
#include "ndi/mat.hpp"

namespace ndi::detail {

inline nlohmann::json box_to_json(const Box& b) {
  return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2});
}

inline Box box_from_json(const nlohmann::json& j) {
  return Box{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
             j.at(3).get<double>()};
}

inline nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols; ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat mat_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(j.at(0).size());
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  }
  return m;
}

inline nlohmann::json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) {
    throw FileNotFoundError(std::string(what) + " file not found: " + path);
  }
  nlohmann::json j;
  in >> j;
  return j;
}

inline void write_json_file(const nlohmann::json& j, const std::string& path, const char* what) {
  std::ofstream out(path);
  if (!out) {
    throw ContractError(std::string("cannot write ") + what + ": " + path);
  }
  out << j.dump(2) << '\n';
}

}  // namespace ndi::detail
