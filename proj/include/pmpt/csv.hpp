#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pmpt/common.hpp"

namespace pmpt {

// All numeric output goes through this: 17 significant digits, '.' decimal
// point, LF line endings.
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open CSV for writing: " + path);
  }

  void header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (i) out_ << ',';
      out_ << names[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      out_ << fmt17(values[i]);
    }
    out_ << '\n';
  }

  // Mixed row: leading text cells followed by numeric cells.
  void row(const std::vector<std::string>& text, const std::vector<double>& values) {
    bool first = true;
    for (const auto& t : text) {
      if (!first) out_ << ',';
      out_ << t;
      first = false;
    }
    for (double v : values) {
      if (!first) out_ << ',';
      out_ << fmt17(v);
      first = false;
    }
    out_ << '\n';
  }

  void comment(const std::string& text) { out_ << "# " << text << '\n'; }

 private:
  std::ofstream out_;
};

inline void ensure_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

}  // namespace pmpt
