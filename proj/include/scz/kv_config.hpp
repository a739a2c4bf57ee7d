#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace scz {

// Flat `key = value` text format shared by every config file. Blank lines
// and lines starting with '#' are ignored; keys are unique.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues read(const std::filesystem::path& path);

  void write(const std::filesystem::path& path) const;
  std::string str() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace scz
