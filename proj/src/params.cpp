#include "viewfuse/params.hpp"

#include "viewfuse/error.hpp"

namespace viewfuse {

void ParamSet::add(std::string name, Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("parameter '" + name + "' shape " + shape_str(shape) +
                     " does not match " + std::to_string(values.size()) +
                     " values");
  }
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = blocks_.size();
  blocks_.push_back({std::move(name), std::move(shape), std::move(values)});
}

bool ParamSet::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

ParamBlock& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return blocks_[it->second];
}

const ParamBlock& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return blocks_[it->second];
}

std::size_t ParamSet::total_values() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.values.size();
  return n;
}

void ParamSet::erase_prefix(const std::string& prefix) {
  std::vector<ParamBlock> kept;
  for (auto& b : blocks_) {
    if (b.name.rfind(prefix, 0) != 0) kept.push_back(std::move(b));
  }
  blocks_ = std::move(kept);
  index_.clear();
  for (std::size_t i = 0; i < blocks_.size(); ++i) index_[blocks_[i].name] = i;
}

void ParamSet::assign_prefix(const ParamSet& other, const std::string& prefix) {
  for (const auto& b : other.blocks()) {
    if (b.name.rfind(prefix, 0) != 0) continue;
    auto& dst = at(b.name);
    if (dst.shape != b.shape) {
      throw ShapeError("parameter '" + b.name + "' shape " +
                       shape_str(dst.shape) + " vs " + shape_str(b.shape));
    }
    dst.values = b.values;
  }
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.name != b.name || a.shape != b.shape || a.values != b.values)
      return false;
  }
  return true;
}

ParamLeaves::ParamLeaves(const ParamSet& params, bool requires_grad) {
  for (const auto& b : params.blocks()) {
    leaves_.emplace(b.name, Tensor::from(b.shape, b.values, requires_grad));
  }
}

const Tensor& ParamLeaves::operator[](const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

GradSet ParamLeaves::grads() const {
  GradSet out;
  for (const auto& [name, t] : leaves_) {
    const auto g = t.grad();
    if (g.empty()) {
      out[name].assign(t.numel(), 0.0);
    } else {
      out[name].assign(g.begin(), g.end());
    }
  }
  return out;
}

void add_into(GradSet& acc, const GradSet& g) {
  for (const auto& [name, v] : g) {
    auto& dst = acc[name];
    if (dst.empty()) {
      dst = v;
      continue;
    }
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
  }
}

void scale_grads(GradSet& g, double s) {
  for (auto& [name, v] : g)
    for (auto& x : v) x *= s;
}

}  // namespace viewfuse
