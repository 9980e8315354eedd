#include "critscat/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace critscat::io {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void atomic_write(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("io", "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void CsvTable::add_row(const std::vector<std::string>& cells) { rows_.push_back(cells); }

void CsvTable::add_numeric_row(const std::vector<double>& cells) {
  std::vector<std::string> row;
  row.reserve(cells.size());
  for (double c : cells) row.push_back(fmt(c));
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < header_.size(); ++i) os << (i ? "," : "") << header_[i];
  os << '\n';
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
  return os.str();
}

namespace {
std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}
}  // namespace

CsvData read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV " + path.string());
  CsvData data;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV " + path.string());
  data.header = split(line);
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    for (const auto& cell : split(line)) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("non-numeric CSV cell '" + cell + "' in " + path.string());
      }
    }
    data.rows.push_back(std::move(row));
  }
  return data;
}

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

Vec json_vec(const nlohmann::json& j) {
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace critscat::io
