#include "avemo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace avemo {

Parameter& ParamStore::add(std::string name, std::string group, Tensor value,
                           bool frozen) {
  if (by_name_.count(name))
    throw std::invalid_argument("ParamStore: duplicate name " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->group = std::move(group);
  p->value = std::move(value);
  p->frozen = frozen;
  Parameter* raw = p.get();
  by_name_.emplace(raw->name, raw);
  params_.push_back(std::move(p));
  return *raw;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw std::out_of_range("ParamStore: no parameter " + name);
  return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw std::out_of_range("ParamStore: no parameter " + name);
  return *it->second;
}

bool ParamStore::contains(const std::string& name) const {
  return by_name_.count(name) > 0;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::in_group(const std::string& group) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->group == group) out.push_back(p.get());
  return out;
}

void ParamStore::freeze_group(const std::string& group, bool frozen) {
  for (auto& p : params_)
    if (p->group == group) p->frozen = frozen;
}

void ParamStore::freeze_all() {
  for (auto& p : params_) p->frozen = true;
}

void ParamStore::require_trainable_groups(
    const std::vector<std::string>& groups) const {
  for (auto& p : params_) {
    bool should_train = false;
    for (const auto& g : groups)
      if (p->group == g) should_train = true;
    if (should_train == p->frozen)
      throw std::runtime_error("trainable-group policy violated by parameter " +
                               p->name + " (group " + p->group + ")");
  }
}

long long ParamStore::numel_in_group(const std::string& group) const {
  long long n = 0;
  for (auto& p : params_)
    if (p->group == group) n += p->value.numel();
  return n;
}

void AdamW::step(const std::vector<std::pair<Parameter*, Tensor>>& grads) {
  ++step_count_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (const auto& [param, grad] : grads) {
    if (param->frozen) continue;
    if (!param->value.same_shape(grad))
      throw std::invalid_argument("AdamW: gradient shape mismatch for " +
                                  param->name);
    auto [it, inserted] = state_.try_emplace(param);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Tensor(param->value.shape);
      mo.v = Tensor(param->value.shape);
    }
    for (size_t i = 0; i < grad.data.size(); ++i) {
      double g = grad.data[i];
      mo.m.data[i] = cfg_.beta1 * mo.m.data[i] + (1.0 - cfg_.beta1) * g;
      mo.v.data[i] = cfg_.beta2 * mo.v.data[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = mo.m.data[i] / bc1;
      double vhat = mo.v.data[i] / bc2;
      double& w = param->value.data[i];
      w -= cfg_.lr * cfg_.weight_decay * w;  // decoupled decay
      w -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace avemo
