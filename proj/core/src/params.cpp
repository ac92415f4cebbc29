#include "dilocox/params.hpp"

#include <cmath>
#include <cstring>

namespace dilocox {

void ParamSet::add(std::string name, Tensor t) {
  if (find(name) != nullptr) throw ValidationError("duplicate parameter name: " + name);
  items_.push_back({std::move(name), std::move(t)});
}

Tensor* ParamSet::find(const std::string& name) {
  for (auto& it : items_)
    if (it.name == name) return &it.tensor;
  return nullptr;
}

const Tensor* ParamSet::find(const std::string& name) const {
  for (const auto& it : items_)
    if (it.name == name) return &it.tensor;
  return nullptr;
}

int64_t ParamSet::total_params() const {
  int64_t n = 0;
  for (const auto& it : items_) n += it.tensor.size();
  return n;
}

bool ParamSet::same_layout(const ParamSet& o) const {
  if (count() != o.count()) return false;
  for (int i = 0; i < count(); ++i)
    if (name(i) != o.name(i) || !tensor(i).same_shape(o.tensor(i))) return false;
  return true;
}

ParamSet ParamSet::zeros_like(const ParamSet& p) {
  ParamSet out;
  for (int i = 0; i < p.count(); ++i) out.add(p.name(i), Tensor::zeros(p.tensor(i).shape()));
  return out;
}

namespace {
void require_layout(const ParamSet& a, const ParamSet& b, const char* who) {
  if (!a.same_layout(b)) throw ShapeError(std::string(who) + ": parameter layouts disagree");
}
}  // namespace

ParamSet ps_sub(const ParamSet& a, const ParamSet& b) {
  require_layout(a, b, "ps_sub");
  ParamSet out = ParamSet::zeros_like(a);
  for (int i = 0; i < a.count(); ++i) {
    const float* pa = a.tensor(i).data();
    const float* pb = b.tensor(i).data();
    float* po = out.tensor(i).data();
    const int64_t n = a.tensor(i).size();
    for (int64_t k = 0; k < n; ++k) po[k] = pa[k] - pb[k];
  }
  return out;
}

void ps_axpy(ParamSet& a, float alpha, const ParamSet& b) {
  require_layout(a, b, "ps_axpy");
  for (int i = 0; i < a.count(); ++i) {
    float* pa = a.tensor(i).data();
    const float* pb = b.tensor(i).data();
    const int64_t n = a.tensor(i).size();
    for (int64_t k = 0; k < n; ++k) pa[k] += alpha * pb[k];
  }
}

void ps_add(ParamSet& a, const ParamSet& b) { ps_axpy(a, 1.0f, b); }

void ps_scale(ParamSet& a, float alpha) {
  for (int i = 0; i < a.count(); ++i) {
    float* pa = a.tensor(i).data();
    const int64_t n = a.tensor(i).size();
    for (int64_t k = 0; k < n; ++k) pa[k] *= alpha;
  }
}

double ps_l2_norm(const ParamSet& a) {
  double s = 0.0;
  for (int i = 0; i < a.count(); ++i) s += frobenius_norm_sq(a.tensor(i));
  return std::sqrt(s);
}

bool ps_equal_bits(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  for (int i = 0; i < a.count(); ++i) {
    const auto& va = a.tensor(i).values();
    const auto& vb = b.tensor(i).values();
    if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

bool ps_all_finite(const ParamSet& a) {
  for (int i = 0; i < a.count(); ++i)
    if (!a.tensor(i).all_finite()) return false;
  return true;
}

}  // namespace dilocox
