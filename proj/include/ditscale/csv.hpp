#pragma once

// Minimal RFC-4180 reader/writer. Doubles are written in shortest
// round-trip form so that re-parsing reproduces them exactly.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ditscale::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws StoreError if absent.
  std::size_t column(const std::string& name) const;
};

std::string format_double(double value);
double parse_double(const std::string& text);

void write(std::ostream& out, const Table& table);
void write(const std::filesystem::path& path, const Table& table);
Table read(std::istream& in);
Table read(const std::filesystem::path& path);

}  // namespace ditscale::csv
