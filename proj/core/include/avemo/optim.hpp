#pragma once

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "avemo/autodiff.hpp"
#include "avemo/tensor.hpp"

namespace avemo {

/// Named, group-tagged trainable (or frozen) tensor.
struct Parameter {
  std::string name;
  std::string group;
  Tensor value;
  bool frozen = false;
};

/// Owns all model parameters in a stable registration order (the checkpoint
/// payload order). Addresses are stable for the store's lifetime.
class ParamStore {
 public:
  Parameter& add(std::string name, std::string group, Tensor value,
                 bool frozen = false);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> in_group(const std::string& group);

  void freeze_group(const std::string& group, bool frozen = true);
  void freeze_all();
  /// Hard configuration check: exactly these groups are trainable.
  void require_trainable_groups(const std::vector<std::string>& groups) const;

  long long numel_in_group(const std::string& group) const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

/// Per-tape usage tracker: one leaf per parameter, grads collected after
/// backward.
struct ParamCtx {
  Tape& tape;
  std::unordered_map<Parameter*, Var> uses;

  explicit ParamCtx(Tape& t) : tape(t) {}

  Var operator()(Parameter& p) {
    auto it = uses.find(&p);
    if (it != uses.end()) return it->second;
    Var v = tape.leaf(p.value, !p.frozen);
    uses.emplace(&p, v);
    return v;
  }

  /// Gradient for a used parameter, or zeros if it never received one.
  Tensor grad_of(Parameter& p) const {
    auto it = uses.find(&p);
    if (it == uses.end() || !tape.has_grad(it->second))
      return Tensor(p.value.shape);
    return tape.grad(it->second);
  }
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam. Frozen parameters are never touched.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  /// Applies one step to every (param, grad) pair; shared step count.
  void step(const std::vector<std::pair<Parameter*, Tensor>>& grads);

  long long step_count() const { return step_count_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  AdamWConfig cfg_;
  long long step_count_ = 0;
  std::unordered_map<Parameter*, Moments> state_;
};

}  // namespace avemo
