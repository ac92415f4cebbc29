#pragma once

#include <string>
#include <vector>

#include "dilocox/tensor.hpp"

namespace dilocox {

// Ordered collection of uniquely named tensors (model parameters, gradients,
// pseudo-gradients, error buffers all share this shape).
class ParamSet {
 public:
  void add(std::string name, Tensor t);

  int count() const { return static_cast<int>(items_.size()); }
  const std::string& name(int i) const { return items_[static_cast<size_t>(i)].name; }
  Tensor& tensor(int i) { return items_[static_cast<size_t>(i)].tensor; }
  const Tensor& tensor(int i) const { return items_[static_cast<size_t>(i)].tensor; }
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  int64_t total_params() const;
  bool same_layout(const ParamSet& o) const;

  static ParamSet zeros_like(const ParamSet& p);

 private:
  struct Item {
    std::string name;
    Tensor tensor;
  };
  std::vector<Item> items_;
};

// a - b, elementwise.
ParamSet ps_sub(const ParamSet& a, const ParamSet& b);
// a += alpha * b
void ps_axpy(ParamSet& a, float alpha, const ParamSet& b);
void ps_add(ParamSet& a, const ParamSet& b);
void ps_scale(ParamSet& a, float alpha);
double ps_l2_norm(const ParamSet& a);
bool ps_equal_bits(const ParamSet& a, const ParamSet& b);
bool ps_all_finite(const ParamSet& a);

}  // namespace dilocox
