#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "adaseg/rng.hpp"
#include "adaseg/tensor.hpp"

// Named parameter groups shared by the segmentation model and the fusion
// module. Tensors are held by value; an adapted copy of a ParamSet may
// replace individual entries with graph-produced tensors, which is how the
// inner update stays differentiable.
namespace adaseg::nn {

class ParamSet {
 public:
  struct Entry {
    std::string group, name;
    ag::Tensor t;
  };

  ag::Tensor& add(const std::string& group, const std::string& name, ag::Tensor t);
  const ag::Tensor& get(const std::string& group, const std::string& name) const;
  ag::Tensor& at(const std::string& group, const std::string& name);
  bool has(const std::string& group, const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::string> group_names() const;  // in first-seen order

  std::int64_t total_params() const;
  std::int64_t group_params(const std::string& group) const;

  // deep copy; copies keep leaf status and the given requires_grad
  ParamSet clone(bool requires_grad) const;
  // bitwise restore of values into existing leaf tensors
  void copy_values_from(const ParamSet& other);

  // FNV-1a over the group's raw bytes; empty group name hashes everything
  std::uint64_t checksum(const std::string& group = "") const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  static std::string key(const std::string& group, const std::string& name) {
    return group + "/" + name;
  }
};

// leaf initializers
ag::Tensor randn(ag::Shape shape, double scale, Rng& rng);

// checkpoint container: named parameter sets plus free-form metadata;
// byte-stable round-trip
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, ParamSet> sets;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace adaseg::nn
