#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rlbvae {

// Shortest round-trip decimal form.
std::string format_double(double v);

// Writes to a sibling temporary and renames over path.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

// Header plus rows of equal field count. Fields must not contain commas or
// newlines; lists inside a field are ';'-separated.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> fields);

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t column(std::string_view name) const;

  std::string str() const;
  void save(const std::filesystem::path& path) const;
  static CsvTable load(const std::filesystem::path& path);

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace rlbvae
