// Shared helpers for the test suites: scratch directories, file IO, process
// spawning for CLI checks, and byte-level tree comparison.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace testutil {

namespace fs = std::filesystem;

inline fs::path make_temp_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path base = fs::temp_directory_path();
  fs::path dir;
  do {
    dir = base / ("toremi-" + tag + "-" + std::to_string(::getpid()) + "-" +
                  std::to_string(counter++));
  } while (fs::exists(dir));
  fs::create_directories(dir);
  return dir;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(make_temp_dir(tag)) {}
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string str(const std::string& rel = {}) const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

// Relative path -> file bytes, for whole-tree comparisons.
inline std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    files[fs::relative(entry.path(), root).string()] = read_file(entry.path().string());
  }
  return files;
}

struct ProcResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

inline ProcResult run_process(const std::string& command) {
  ProcResult result;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed for: " + command);
  char buf[4096];
  std::size_t n;
  while ((n = ::fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, n);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

inline std::string cli_path() {
  const char* bin = std::getenv("TOREMI_BIN");
  if (!bin || !*bin)
    throw std::runtime_error("TOREMI_BIN is not set; run through ctest");
  return bin;
}

inline std::string quote(const std::string& arg) { return "'" + arg + "'"; }

}  // namespace testutil
