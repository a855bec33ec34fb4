#pragma once

#include <map>
#include <string>

#include "adaseg/adapt.hpp"
#include "adaseg/envsim.hpp"

// Plain-text run configuration: every knob of the pipeline as `key = value`
// lines. Unknown keys are rejected; every run writes the fully resolved
// config next to its outputs so any result is reproducible from
// (config, seed) alone.
namespace adaseg::cli {

class RunConfig {
 public:
  RunConfig();  // defaults

  static RunConfig from_file(const std::string& path);

  // throws on unknown key; flags may address a key by its unique last
  // segment (e.g. "points" -> "data.points")
  void set(const std::string& key, const std::string& value);
  std::string resolve_key(const std::string& flag) const;

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  void write(const std::string& path) const;
  std::string to_text() const;

  env::EnvConfig env_config() const;
  adapt::Runtime runtime() const;  // finalized
  adapt::TrainConfig train_config() const;
  std::uint64_t seed() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace adaseg::cli
