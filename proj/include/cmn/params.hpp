#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cmn/autodiff.hpp"
#include "cmn/tensor.hpp"

namespace cmn {

// Per-parameter gradient buffers keyed by parameter name.
struct Gradients {
  std::map<std::string, Tensor> by_name;

  Tensor& at(const std::string& name, const Shape& shape);
  void add(const Gradients& other);
  void scale(double s);
  bool any_nonzero() const;
};

// Named trainable tensors plus the RMSProp running averages. Iteration order
// is std::map order, i.e. sorted by name.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);

  const std::map<std::string, Tensor>& values() const { return values_; }
  const std::map<std::string, Tensor>& accumulators() const { return accumulators_; }
  std::vector<std::string> names() const;
  std::size_t total_size() const;
  bool all_finite() const;

  Gradients zero_gradients() const;

  friend class RmsProp;
  friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, Tensor> accumulators_;
};

struct RmsPropConfig {
  double lr = 1e-4;
  double decay = 0.99;
  double eps = 1e-8;
};

class RmsProp {
 public:
  // acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/sqrt(acc+eps)
  static void step(ParameterStore& params, const Gradients& grads, const RmsPropConfig& cfg);
};

inline void rmsprop_step(ParameterStore& params, const Gradients& grads,
                         const RmsPropConfig& cfg = {}) {
  RmsProp::step(params, grads, cfg);
}

using ScalarFn = std::function<Var(ParamView&)>;

// Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|), central
// differences with step eps.
double grad_check(const ScalarFn& f, const ParameterStore& params, double eps = 1e-5);

// Reverse-mode gradient of f at params.
Gradients gradient(const ScalarFn& f, const ParameterStore& params, double* value = nullptr);
double evaluate(const ScalarFn& f, const ParameterStore& params);

}  // namespace cmn
