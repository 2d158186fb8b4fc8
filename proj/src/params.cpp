#include "cmn/params.hpp"

#include <algorithm>
#include <cmath>

#include "cmn/errors.hpp"

namespace cmn {

Tensor& Gradients::at(const std::string& name, const Shape& shape) {
  auto it = by_name.find(name);
  if (it == by_name.end()) it = by_name.emplace(name, Tensor(shape)).first;
  return it->second;
}

void Gradients::add(const Gradients& other) {
  for (const auto& [name, g] : other.by_name) {
    Tensor& mine = at(name, g.shape());
    if (mine.shape() != g.shape()) throw DimensionError("gradients: shape mismatch for " + name);
    for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
  }
}

void Gradients::scale(double s) {
  for (auto& [name, g] : by_name)
    for (double& v : g.values()) v *= s;
}

bool Gradients::any_nonzero() const {
  for (const auto& [name, g] : by_name)
    for (double v : g.values())
      if (v != 0.0) return true;
  return false;
}

void ParameterStore::add(const std::string& name, Tensor value) {
  if (values_.count(name)) throw KeyError("parameter store: duplicate parameter " + name);
  accumulators_.emplace(name, Tensor(value.shape()));
  values_.emplace(name, std::move(value));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw KeyError("parameter store: no parameter named " + name);
  return it->second;
}

Tensor& ParameterStore::get_mut(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw KeyError("parameter store: no parameter named " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, v] : values_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, v] : values_) n += v.size();
  return n;
}

bool ParameterStore::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

Gradients ParameterStore::zero_gradients() const {
  Gradients g;
  for (const auto& [name, v] : values_) g.by_name.emplace(name, Tensor(v.shape()));
  return g;
}

void RmsProp::step(ParameterStore& params, const Gradients& grads, const RmsPropConfig& cfg) {
  for (const auto& [name, g] : grads.by_name) {
    if (!params.values_.count(name)) throw KeyError("rmsprop: gradient for unknown parameter " + name);
  }
  for (auto& [name, p] : params.values_) {
    auto it = grads.by_name.find(name);
    if (it == grads.by_name.end()) throw KeyError("rmsprop: missing gradient for parameter " + name);
    const Tensor& g = it->second;
    if (g.shape() != p.shape()) {
      throw KeyError("rmsprop: gradient shape " + shape_str(g.shape()) + " does not match parameter " + name +
                     " " + shape_str(p.shape()));
    }
    Tensor& acc = params.accumulators_.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc[i] = cfg.decay * acc[i] + (1.0 - cfg.decay) * g[i] * g[i];
      if (g[i] == 0.0) continue;
      p[i] -= cfg.lr * g[i] / std::sqrt(acc[i] + cfg.eps);
    }
  }
}

double evaluate(const ScalarFn& f, const ParameterStore& params) {
  Tape tape;
  ParamView view(tape, params);
  Var out = f(view);
  if (out.size() != 1) throw DimensionError("evaluate: function must return a scalar");
  return out.value()[0];
}

Gradients gradient(const ScalarFn& f, const ParameterStore& params, double* value) {
  Tape tape;
  ParamView view(tape, params);
  Var out = f(view);
  tape.backward(out);
  Gradients g = params.zero_gradients();
  tape.accumulate_into(g);
  if (value) *value = out.value()[0];
  return g;
}

double grad_check(const ScalarFn& f, const ParameterStore& params, double eps) {
  const Gradients analytic = gradient(f, params);
  ParameterStore probe = params;
  double worst = 0.0;
  for (const auto& name : params.names()) {
    const Tensor& ga = analytic.by_name.at(name);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      double& slot = probe.get_mut(name)[i];
      const double orig = slot;
      slot = orig + eps;
      const double up = evaluate(f, probe);
      slot = orig - eps;
      const double down = evaluate(f, probe);
      slot = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite value when perturbing " + name + "[" + std::to_string(i) + "]");
      }
      const double fd = (up - down) / (2.0 * eps);
      const double err = std::abs(ga[i] - fd) / std::max({1.0, std::abs(ga[i]), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace cmn
