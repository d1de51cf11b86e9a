#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "viewfuse/tensor.hpp"

namespace viewfuse {

struct ParamBlock {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Named parameter storage, kept in insertion order. Values live outside any
// computation graph; leaves() copies them into fresh graph leaves.
class ParamSet {
 public:
  void add(std::string name, Shape shape, std::vector<double> values);
  bool contains(const std::string& name) const;
  ParamBlock& at(const std::string& name);
  const ParamBlock& at(const std::string& name) const;
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  std::size_t size() const { return blocks_.size(); }
  std::size_t total_values() const;
  void erase_prefix(const std::string& prefix);
  // Copies every block whose name starts with prefix from other.
  void assign_prefix(const ParamSet& other, const std::string& prefix);

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<ParamBlock> blocks_;
  std::map<std::string, std::size_t> index_;
};

// Gradient buffers keyed like a ParamSet.
using GradSet = std::map<std::string, std::vector<double>>;

// Per-graph leaves that mirror a ParamSet. After backward(), grads() reads
// the accumulated gradient of every leaf.
class ParamLeaves {
 public:
  explicit ParamLeaves(const ParamSet& params, bool requires_grad = true);
  const Tensor& operator[](const std::string& name) const;
  GradSet grads() const;

 private:
  std::map<std::string, Tensor> leaves_;
};

void add_into(GradSet& acc, const GradSet& g);
void scale_grads(GradSet& g, double s);

}  // namespace viewfuse
