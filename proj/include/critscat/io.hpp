#pragma once

#include "critscat/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace critscat::io {

/// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Shortest round-trippable decimal form ("%.17g").
std::string fmt(double v);

/// Writes via a temporary file in the same directory and renames it over the
/// destination, so readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, std::string_view contents);

/// Minimal CSV table builder with deterministic number formatting.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add_row(const std::vector<std::string>& cells);
  void add_numeric_row(const std::vector<double>& cells);
  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Parses a CSV file with a header line into rows of doubles.
struct CsvData {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvData read_csv(const std::filesystem::path& path);

nlohmann::json vec_json(const Vec& v);
Vec json_vec(const nlohmann::json& j);

std::string read_text(const std::filesystem::path& path);

}  // namespace critscat::io
