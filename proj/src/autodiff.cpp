#include "cmn/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cmn/errors.hpp"
#include "cmn/params.hpp"

namespace cmn {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::parameter(const std::string& name, const Tensor& value) {
  Var v = record(value, true, nullptr);
  leaves_.emplace_back(name, v.id());
  return v;
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, requires_grad ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward: loss must be a single value, got " + shape_str(loss.shape()));
  }
  if (!requires_grad(loss.id())) return;
  grad(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && !node.grad.empty()) node.backward(*this, i);
  }
}

void Tape::accumulate_into(Gradients& out) const {
  for (const auto& [name, id] : leaves_) {
    const auto& node = nodes_[id];
    Tensor& g = out.at(name, node.value.shape());
    if (node.grad.empty()) continue;
    for (std::size_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
  }
}

Var ParamView::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = trainable_ ? tape_->parameter(name, store_->get(name)) : tape_->constant(store_->get(name));
  bound_.emplace(name, v);
  return v;
}

namespace ops {
namespace {

[[noreturn]] void shape_fail(const char* op, const Var& a, const Var& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
}

bool is_vector(const Var& v) { return v.shape().size() == 1; }
bool is_matrix(const Var& v) { return v.shape().size() == 2; }

bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs) {
    if (v.requires_grad()) return true;
  }
  return false;
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += G[m x n] * B[k x n]^T
void gemm_nt_acc(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* grow = g + i * n;
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * G[m x n]
void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* grow = g + i * n;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

Var matmul_impl(Var a, Var b, std::size_t m, std::size_t k, std::size_t n, Shape out_shape) {
  Tensor out(std::move(out_shape));
  gemm_acc(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), any_grad({a, b}), [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data();
    if (t.requires_grad(ia)) gemm_nt_acc(g, t.value(ib).data().data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) gemm_tn_acc(t.value(ia).data().data(), g, t.grad(ib).data(), m, k, n);
  });
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, deriv](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  if (!is_matrix(a) || !is_matrix(b) || a.shape()[1] != b.shape()[0]) shape_fail("matmul", a, b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  return matmul_impl(a, b, m, k, n, {m, n});
}

Var vecmat(Var x, Var w) {
  if (!is_vector(x) || !is_matrix(w) || x.shape()[0] != w.shape()[0]) shape_fail("vecmat", x, w);
  const std::size_t k = w.shape()[0], n = w.shape()[1];
  return matmul_impl(x, w, 1, k, n, {n});
}

Var matvec(Var a, Var x) {
  if (!is_matrix(a) || !is_vector(x) || a.shape()[1] != x.shape()[0]) shape_fail("matvec", a, x);
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  return matmul_impl(a, x, m, k, 1, {m});
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) shape_fail("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto& gx = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  if (a.shape() != b.shape()) shape_fail("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), any_grad({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      const auto& vb = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      const auto& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_rowwise(Var x, Var b) {
  if (!is_matrix(x) || !is_vector(b) || x.shape()[1] != b.shape()[0]) shape_fail("add_rowwise", x, b);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += b.value()[c];
  const std::size_t ix = x.id(), ib = b.id();
  return x.tape().record(std::move(out), any_grad({x, b}), [ix, ib, rows, cols](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ix)) {
      auto& gx = t.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
}

Var linear(Var x, Var w, Var b) {
  if (!is_matrix(w) || !is_vector(b) || w.shape()[1] != b.shape()[0]) {
    throw DimensionError("linear: weight " + shape_str(w.shape()) + " and bias " + shape_str(b.shape()) +
                         " do not conform");
  }
  if (is_vector(x)) {
    if (x.shape()[0] != w.shape()[0]) shape_fail("linear", x, w);
    return add(vecmat(x, w), b);
  }
  if (is_matrix(x)) {
    if (x.shape()[1] != w.shape()[0]) shape_fail("linear", x, w);
    return add_rowwise(matmul(x, w), b);
  }
  shape_fail("linear", x, w);
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), a.requires_grad(), [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& x : t.grad(ia)) x += g;
  });
}

Var dot(Var a, Var b) {
  if (!is_vector(a) || a.shape() != b.shape()) shape_fail("dot", a, b);
  return sum(mul(a, b));
}

Var softmax(Var v) {
  if (!is_vector(v) || v.size() == 0) {
    throw DimensionError("softmax: expected a non-empty vector, got " + shape_str(v.shape()));
  }
  const auto& x = v.value();
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  Tensor out(x.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] /= z;
  const std::size_t iv = v.id();
  return v.tape().record(std::move(out), v.requires_grad(), [iv](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    auto& gv = t.grad(iv);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += y[i] * (g[i] - gy);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  if (!is_vector(x) || x.size() == 0) throw DimensionError("layer_norm: expected a non-empty vector");
  if (gamma.shape() != x.shape()) shape_fail("layer_norm", x, gamma);
  if (beta.shape() != x.shape()) shape_fail("layer_norm", x, beta);
  const std::size_t n = x.size();
  const auto& xv = x.value();
  double mean = 0.0;
  for (double v : xv.data()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : xv.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double denom = std::sqrt(var + eps);
  // Zero variance with eps = 0 has no defined normalization; the centred input is all zeros then.
  const double inv = denom > 0.0 ? 1.0 / denom : 0.0;
  std::vector<double> xhat(n);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (xv[i] - mean) * inv;
    out[i] = gamma.value()[i] * xhat[i] + beta.value()[i];
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), any_grad({x, gamma, beta}),
      [ix, ig, ib, n, inv, xhat = std::move(xhat)](Tape& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ib)) {
          auto& gb = t.grad(ib);
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
        if (t.requires_grad(ig)) {
          auto& gg = t.grad(ig);
          for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * xhat[i];
        }
        if (t.requires_grad(ix)) {
          const auto& gam = t.value(ig);
          double s1 = 0.0, s2 = 0.0;
          std::vector<double> gh(n);
          for (std::size_t i = 0; i < n; ++i) {
            gh[i] = g[i] * gam[i];
            s1 += gh[i];
            s2 += gh[i] * xhat[i];
          }
          const double nn = static_cast<double>(n);
          auto& gx = t.grad(ix);
          for (std::size_t i = 0; i < n; ++i) gx[i] += inv * (gh[i] - s1 / nn - xhat[i] * s2 / nn);
        }
      });
}

Var concat(Var a, Var b) {
  if (!is_vector(a) || !is_vector(b)) shape_fail("concat", a, b);
  const std::size_t na = a.size(), nb = b.size();
  std::vector<double> data(a.value().values());
  data.insert(data.end(), b.value().values().begin(), b.value().values().end());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::vector(std::move(data)), any_grad({a, b}),
                         [ia, ib, na, nb](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           if (t.requires_grad(ia)) {
                             auto& ga = t.grad(ia);
                             for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             auto& gb = t.grad(ib);
                             for (std::size_t i = 0; i < nb; ++i) gb[i] += g[na + i];
                           }
                         });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no rows");
  const std::size_t n = rows[0].size();
  std::vector<double> data;
  data.reserve(rows.size() * n);
  bool needs = false;
  std::vector<std::size_t> ids;
  for (const auto& r : rows) {
    if (!is_vector(r) || r.size() != n) shape_fail("stack_rows", rows[0], r);
    data.insert(data.end(), r.value().values().begin(), r.value().values().end());
    needs = needs || r.requires_grad();
    ids.push_back(r.id());
  }
  return rows[0].tape().record(Tensor::matrix(rows.size(), n, std::move(data)), needs,
                               [ids = std::move(ids), n](Tape& t, std::size_t self) {
                                 const auto& g = t.grad(self);
                                 for (std::size_t r = 0; r < ids.size(); ++r) {
                                   if (!t.requires_grad(ids[r])) continue;
                                   auto& gr = t.grad(ids[r]);
                                   for (std::size_t i = 0; i < n; ++i) gr[i] += g[r * n + i];
                                 }
                               });
}

Var row(Var m, std::size_t r) {
  if (!is_matrix(m) || r >= m.shape()[0]) {
    throw DimensionError("row: index " + std::to_string(r) + " out of range for " + shape_str(m.shape()));
  }
  const std::size_t n = m.shape()[1];
  auto src = m.value().row(r);
  const std::size_t im = m.id();
  return m.tape().record(Tensor::vector(std::vector<double>(src.begin(), src.end())), m.requires_grad(),
                         [im, r, n](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           auto& gm = t.grad(im);
                           for (std::size_t i = 0; i < n; ++i) gm[r * n + i] += g[i];
                         });
}

Var mean_rows(Var m) {
  if (!is_matrix(m) || m.shape()[0] == 0) throw DimensionError("mean_rows: expected a non-empty matrix");
  const std::size_t rows = m.shape()[0], n = m.shape()[1];
  Tensor out({n});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < n; ++i) out[i] += m.value().at(r, i);
  for (std::size_t i = 0; i < n; ++i) out[i] /= static_cast<double>(rows);
  const std::size_t im = m.id();
  return m.tape().record(std::move(out), m.requires_grad(), [im, rows, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gm = t.grad(im);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < n; ++i) gm[r * n + i] += g[i] * inv;
  });
}

Var cross_entropy(Var logits, std::size_t target) {
  if (!is_vector(logits) || logits.size() == 0 || target >= logits.size()) {
    throw DimensionError("cross_entropy: target " + std::to_string(target) + " invalid for logits " +
                         shape_str(logits.shape()));
  }
  const auto& x = logits.value();
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  double z = 0.0;
  for (double v : x.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  const std::size_t il = logits.id();
  return logits.tape().record(Tensor::scalar(lse - x[target]), logits.requires_grad(),
                              [il, target, lse](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                const auto& xv = t.value(il);
                                auto& gl = t.grad(il);
                                for (std::size_t i = 0; i < xv.size(); ++i) {
                                  gl[i] += g * (std::exp(xv[i] - lse) - (i == target ? 1.0 : 0.0));
                                }
                              });
}

Var mean_scalars(std::span<const Var> scalars) {
  if (scalars.empty()) throw DimensionError("mean_scalars: nothing to average");
  std::vector<Var> rows(scalars.begin(), scalars.end());
  return scale(sum(stack_rows(rows)), 1.0 / static_cast<double>(scalars.size()));
}

Var embedding(Var table, std::span<const int> ids, int frozen_row) {
  if (!is_matrix(table)) throw DimensionError("embedding: table must be a matrix");
  const std::size_t vocab = table.shape()[0], width = table.shape()[1];
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out({rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw VocabularyError("embedding: token id " + std::to_string(rows[i]) + " outside vocabulary of size " +
                            std::to_string(vocab));
    }
    if (rows[i] == frozen_row) continue;
    auto src = table.value().row(static_cast<std::size_t>(rows[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), table.requires_grad(),
                             [it, rows = std::move(rows), width, frozen_row](Tape& t, std::size_t self) {
                               const auto& g = t.grad(self);
                               auto& gt = t.grad(it);
                               for (std::size_t i = 0; i < rows.size(); ++i) {
                                 if (rows[i] == frozen_row) continue;
                                 const std::size_t base = static_cast<std::size_t>(rows[i]) * width;
                                 for (std::size_t j = 0; j < width; ++j) gt[base + j] += g[i * width + j];
                               }
                             });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var lstm_layer(Var inputs, Var w_ih, Var w_hh, Var bias) {
  if (!is_matrix(inputs) || inputs.shape()[0] == 0) {
    throw DimensionError("lstm: expected a non-empty [T x d] input, got " + shape_str(inputs.shape()));
  }
  const std::size_t steps = inputs.shape()[0], din = inputs.shape()[1];
  if (!is_matrix(w_hh) || w_hh.shape()[1] != 4 * w_hh.shape()[0]) {
    throw DimensionError("lstm: recurrent weight must be [H x 4H], got " + shape_str(w_hh.shape()));
  }
  const std::size_t hid = w_hh.shape()[0], g4 = 4 * hid;
  if (!is_matrix(w_ih) || w_ih.shape()[0] != din || w_ih.shape()[1] != g4) shape_fail("lstm", inputs, w_ih);
  if (!is_vector(bias) || bias.size() != g4) shape_fail("lstm", w_hh, bias);

  // Pre-activations from the input path for all steps at once.
  std::vector<double> z(steps * g4);
  for (std::size_t t = 0; t < steps; ++t) std::copy(bias.value().data().begin(), bias.value().data().end(), z.begin() + t * g4);
  gemm_acc(inputs.value().data().data(), w_ih.value().data().data(), z.data(), steps, din, g4);

  // gates holds post-activation i, f, g, o per step; cells and tanh(c) kept for backward.
  std::vector<double> gates(steps * g4), cells(steps * hid), tcells(steps * hid);
  Tensor out({steps, hid});
  const double* whh = w_hh.value().data().data();
  for (std::size_t t = 0; t < steps; ++t) {
    double* zt = z.data() + t * g4;
    if (t > 0) gemm_acc(out.data().data() + (t - 1) * hid, whh, zt, 1, hid, g4);
    double* gt = gates.data() + t * g4;
    for (std::size_t j = 0; j < hid; ++j) {
      auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
      const double ig = sig(zt[j]);
      const double fg = sig(zt[hid + j]);
      const double cg = std::tanh(zt[2 * hid + j]);
      const double og = sig(zt[3 * hid + j]);
      gt[j] = ig;
      gt[hid + j] = fg;
      gt[2 * hid + j] = cg;
      gt[3 * hid + j] = og;
      const double cprev = t > 0 ? cells[(t - 1) * hid + j] : 0.0;
      const double c = fg * cprev + ig * cg;
      cells[t * hid + j] = c;
      tcells[t * hid + j] = std::tanh(c);
      out.at(t, j) = og * tcells[t * hid + j];
    }
  }

  const std::size_t ix = inputs.id(), iw = w_ih.id(), iu = w_hh.id(), ib = bias.id();
  return inputs.tape().record(
      std::move(out), any_grad({inputs, w_ih, w_hh, bias}),
      [=, gates = std::move(gates), cells = std::move(cells), tcells = std::move(tcells)](Tape& tp,
                                                                                        std::size_t self) {
        const auto& dh_out = tp.grad(self);
        const auto& hs = tp.value(self);
        const auto& xs = tp.value(ix);
        const double* whh_v = tp.value(iu).data().data();
        const double* wih_v = tp.value(iw).data().data();
        std::vector<double> dh_next(hid, 0.0), dc_next(hid, 0.0), dz(g4);
        double* gx = tp.requires_grad(ix) ? tp.grad(ix).data() : nullptr;
        double* gw = tp.requires_grad(iw) ? tp.grad(iw).data() : nullptr;
        double* gu = tp.requires_grad(iu) ? tp.grad(iu).data() : nullptr;
        double* gb = tp.requires_grad(ib) ? tp.grad(ib).data() : nullptr;
        for (std::size_t t = steps; t-- > 0;) {
          const double* gt = gates.data() + t * g4;
          for (std::size_t j = 0; j < hid; ++j) {
            const double ig = gt[j], fg = gt[hid + j], cg = gt[2 * hid + j], og = gt[3 * hid + j];
            const double tc = tcells[t * hid + j];
            const double cprev = t > 0 ? cells[(t - 1) * hid + j] : 0.0;
            const double dhj = dh_out[t * hid + j] + dh_next[j];
            const double dc = dhj * og * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * cg * ig * (1.0 - ig);
            dz[hid + j] = dc * cprev * fg * (1.0 - fg);
            dz[2 * hid + j] = dc * ig * (1.0 - cg * cg);
            dz[3 * hid + j] = dhj * tc * og * (1.0 - og);
            dc_next[j] = dc * fg;
          }
          if (gb) {
            for (std::size_t j = 0; j < g4; ++j) gb[j] += dz[j];
          }
          if (gw) gemm_tn_acc(xs.data().data() + t * din, dz.data(), gw, 1, din, g4);
          if (gx) gemm_nt_acc(dz.data(), wih_v, gx + t * din, 1, g4, din);
          std::fill(dh_next.begin(), dh_next.end(), 0.0);
          if (t > 0) {
            if (gu) gemm_tn_acc(hs.data().data() + (t - 1) * hid, dz.data(), gu, 1, hid, g4);
            gemm_nt_acc(dz.data(), whh_v, dh_next.data(), 1, g4, hid);
          }
        }
      });
}

Attention scaled_dot_attention(Var q, Var keys, Var values) {
  if (!is_matrix(keys) || keys.shape()[0] == 0) {
    throw DimensionError("scaled_dot_attention: need at least one key, got " + shape_str(keys.shape()));
  }
  if (!is_matrix(values) || values.shape()[0] != keys.shape()[0]) shape_fail("scaled_dot_attention", keys, values);
  if (!is_vector(q) || q.size() != keys.shape()[1]) shape_fail("scaled_dot_attention", q, keys);
  const double c = static_cast<double>(q.size());
  Var weights = softmax(scale(matvec(keys, q), 1.0 / std::sqrt(c)));
  return {vecmat(weights, values), weights};
}

}  // namespace ops
}  // namespace cmn
