#pragma once

#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vmbpo/mdp.hpp"

namespace vmbpo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` document with dotted sections, '#' comments, and
/// whitespace-separated list values. Values keep their raw text; typed
/// getters parse on demand and name the offending key on failure.
class KeyValueDoc {
 public:
  static KeyValueDoc parse_file(const std::string& path);
  static KeyValueDoc parse_string(const std::string& text);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::vector<std::string> keys() const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_real(const std::string& key) const;
  double get_real(const std::string& key, double fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_reals(const std::string& key) const;
  std::vector<long> get_ints(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  void set_real(const std::string& key, double value);
  void set_int(const std::string& key, long value);
  void set_reals(const std::string& key, std::span<const double> values);
  void set_strings(const std::string& key, const std::vector<std::string>& values);

  /// Keys in lexicographic order, `key = value` per line.
  std::string serialize() const;
  void write_file(const std::string& path) const;

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> entries_;
};

/// Reals serialized with 17 significant digits (round-trip exact).
std::string format_real(double value);

FiniteMdp mdp_from_doc(const KeyValueDoc& doc);
KeyValueDoc mdp_to_doc(const FiniteMdp& mdp);
FiniteMdp load_mdp(const std::string& path);
void save_mdp(const std::string& path, const FiniteMdp& mdp);

/// Append-only CSV writer with deterministic number formatting; every row is
/// flushed as it is written.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  std::size_t columns_ = 0;
};

}  // namespace vmbpo
