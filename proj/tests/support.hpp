#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <string>

#include <unistd.h>

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path data_dir() { return fs::path(LGSIM_TEST_DATA); }
inline fs::path suite_file() { return data_dir() / "scenes" / "suite.yaml"; }

// Fresh empty directory under the system temp dir, unique per process.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lgsim_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Relative path -> file contents for every regular file under root.
inline std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  }
  return out;
}

}  // namespace testsupport
