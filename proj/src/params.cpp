#include "adaseg/params.hpp"
#include <algorithm>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adaseg::nn {

ag::Tensor& ParamSet::add(const std::string& group, const std::string& name, ag::Tensor t) {
  const std::string k = key(group, name);
  if (index_.count(k)) throw std::runtime_error("param already exists: " + k);
  index_[k] = entries_.size();
  entries_.push_back({group, name, std::move(t)});
  return entries_.back().t;
}

const ag::Tensor& ParamSet::get(const std::string& group, const std::string& name) const {
  auto it = index_.find(key(group, name));
  if (it == index_.end()) throw std::runtime_error("unknown param " + key(group, name));
  return entries_[it->second].t;
}

ag::Tensor& ParamSet::at(const std::string& group, const std::string& name) {
  auto it = index_.find(key(group, name));
  if (it == index_.end()) throw std::runtime_error("unknown param " + key(group, name));
  return entries_[it->second].t;
}

bool ParamSet::has(const std::string& group, const std::string& name) const {
  return index_.count(key(group, name)) != 0;
}

std::vector<std::string> ParamSet::group_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (out.empty() || std::find(out.begin(), out.end(), e.group) == out.end())
      out.push_back(e.group);
  return out;
}

std::int64_t ParamSet::total_params() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.t.numel();
  return n;
}

std::int64_t ParamSet::group_params(const std::string& group) const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e.group == group) n += e.t.numel();
  return n;
}

ParamSet ParamSet::clone(bool requires_grad) const {
  ParamSet out;
  for (const auto& e : entries_) {
    ag::Tensor t = e.t.detach();
    t.set_requires_grad(requires_grad);
    out.add(e.group, e.name, std::move(t));
  }
  return out;
}

void ParamSet::copy_values_from(const ParamSet& other) {
  if (other.entries_.size() != entries_.size())
    throw std::runtime_error("param set restore: layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.entries_[i];
    auto& dst = entries_[i];
    if (src.group != dst.group || src.name != dst.name || src.t.numel() != dst.t.numel())
      throw std::runtime_error("param set restore: entry mismatch at " + dst.group + "/" + dst.name);
    dst.t.leaf_data() = src.t.data();
  }
}

std::uint64_t ParamSet::checksum(const std::string& group) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    if (!group.empty() && e.group != group) continue;
    mix(e.name.data(), e.name.size());
    mix(e.t.data().data(), e.t.data().size() * sizeof(double));
  }
  return h;
}

ag::Tensor randn(ag::Shape shape, double scale, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(ag::numel_of(shape)));
  for (auto& x : v) x = rng.normal() * scale;
  ag::Tensor t = ag::Tensor::from(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

namespace {

void put_u32(std::ofstream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void put_str(std::ofstream& o, const std::string& s) {
  put_u32(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::string get_str(std::ifstream& in) {
  std::string s(get_u32(in), '\0');
  in.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

constexpr std::uint64_t kMagic = 0x314b435047455341ULL;  // "ASEGPCK1"

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write checkpoint " + path);
  o.write(reinterpret_cast<const char*>(&kMagic), 8);
  put_u32(o, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(o, k);
    put_str(o, v);
  }
  put_u32(o, static_cast<std::uint32_t>(sets.size()));
  for (const auto& [name, set] : sets) {
    put_str(o, name);
    put_u32(o, static_cast<std::uint32_t>(set.entries().size()));
    for (const auto& e : set.entries()) {
      put_str(o, e.group);
      put_str(o, e.name);
      put_u32(o, static_cast<std::uint32_t>(e.t.shape().size()));
      for (int d : e.t.shape()) put_u32(o, static_cast<std::uint32_t>(d));
      o.write(reinterpret_cast<const char*>(e.t.data().data()),
              static_cast<std::streamsize>(e.t.data().size() * sizeof(double)));
    }
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  std::uint64_t magic = 0;
  in.read(reinterpret_cast<char*>(&magic), 8);
  if (magic != kMagic) throw std::runtime_error("bad checkpoint header in " + path);
  Checkpoint c;
  const std::uint32_t n_meta = get_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_str(in);
    c.meta[k] = get_str(in);
  }
  const std::uint32_t n_sets = get_u32(in);
  for (std::uint32_t i = 0; i < n_sets; ++i) {
    std::string set_name = get_str(in);
    ParamSet set;
    const std::uint32_t n_entries = get_u32(in);
    for (std::uint32_t j = 0; j < n_entries; ++j) {
      std::string group = get_str(in);
      std::string name = get_str(in);
      ag::Shape shape(get_u32(in));
      for (auto& d : shape) d = static_cast<int>(get_u32(in));
      std::vector<double> data(static_cast<std::size_t>(ag::numel_of(shape)));
      in.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
      ag::Tensor t = ag::Tensor::from(std::move(shape), std::move(data));
      t.set_requires_grad(true);
      set.add(group, name, std::move(t));
    }
    c.sets.emplace(std::move(set_name), std::move(set));
  }
  if (!in) throw std::runtime_error("truncated checkpoint " + path);
  return c;
}

}  // namespace adaseg::nn
