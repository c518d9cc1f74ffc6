#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace paratune::cli {

/// Bad configuration or input; the message is shown to the user and the run exits 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Key-value run configuration. Reads are recorded so the manifest lists every value
/// a run actually used, defaults included.
class Config {
 public:
  /// Lines of `key = value`; blank lines and lines starting with '#' are ignored.
  void load_file(const std::filesystem::path& path);
  /// Parses `key=value`.
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback);
  std::string required(const std::string& key);
  double num(const std::string& key, double fallback);
  std::size_t count(const std::string& key, std::size_t fallback);
  bool flag(const std::string& key, bool fallback);
  std::vector<std::string> list(const std::string& key, const std::string& fallback);
  /// Existing input file named by `key`.
  std::filesystem::path input(const std::string& key);

  const std::map<std::string, std::string>& resolved() const { return resolved_; }
  const std::map<std::string, std::string>& inputs() const { return inputs_; }
  std::vector<std::string> unused() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
  std::map<std::string, std::string> inputs_;
};

/// Entry point shared by the executable and the tests. Returns the process exit code:
/// 0 success, 1 validation or runtime failure, 2 usage error.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace paratune::cli
