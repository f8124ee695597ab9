#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ganunlearn/core/common.hpp"

namespace gu {

// Append-style CSV writer with enough float digits to round-trip doubles.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : f_(path) {
    if (!f_) throw StateError("cannot open for writing: " + path);
    write_row_strings(header);
  }

  void row(const std::vector<std::string>& cells) { write_row_strings(cells); }

  static std::string num(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  }

 private:
  void write_row_strings(const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) f_ << ',';
      // cells in this project never contain commas or quotes, but keep the
      // escape path for captions
      if (cells[i].find_first_of(",\"\n") != std::string::npos) {
        f_ << '"';
        for (char c : cells[i]) {
          if (c == '"') f_ << '"';
          f_ << c;
        }
        f_ << '"';
      } else {
        f_ << cells[i];
      }
    }
    f_ << '\n';
  }

  std::ofstream f_;
};

}  // namespace gu
