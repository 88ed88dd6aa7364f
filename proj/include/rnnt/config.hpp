#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "rnnt/decoder.hpp"
#include "rnnt/model.hpp"
#include "rnnt/synthetic.hpp"
#include "rnnt/training.hpp"

namespace rnnt {

/// Line-oriented "key = value" settings. "[section]" headers prefix the
/// following keys as "section.key"; '#' starts a comment.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& raw(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  /// "key=value" override, as given on a command line.
  void apply_override(const std::string& assignment);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws ContractError naming the first key outside `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const;

  /// Sectioned text that parse() reads back to the same values.
  std::string dump() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Everything a CLI run needs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  SyntheticTaskSpec task;
  std::string data_dir;  // empty: generate the synthetic task in memory
  std::uint64_t seed = 1;
};

/// Keys understood by run_config_from.
const std::set<std::string>& run_config_keys();

/// Builds and validates a RunConfig. Unknown keys, malformed values and
/// missing paths throw ContractError naming the key.
RunConfig run_config_from(const KeyValueConfig& kv);
KeyValueConfig to_key_values(const RunConfig& cfg);

/// Model section only, as stored in checkpoints.
KeyValueConfig model_key_values(const ModelConfig& cfg);
ModelConfig model_config_from(const KeyValueConfig& kv);

}  // namespace rnnt
