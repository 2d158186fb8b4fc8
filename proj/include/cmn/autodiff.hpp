#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cmn/tensor.hpp"

namespace cmn {

class Tape;
class ParameterStore;
struct Gradients;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records tensor operations in execution order and replays them backwards to
// accumulate gradients. Nodes that do not depend on a parameter skip the
// backward closure entirely.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(const std::string& name, const Tensor& value);

  // Used by op implementations.
  Var record(Tensor value, bool requires_grad, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::vector<double>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  // Seeds d(loss)/d(loss) = 1; `loss` must hold exactly one value.
  void backward(Var loss);

  // Adds every parameter leaf's gradient into `out` (created on demand).
  void accumulate_into(Gradients& out) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> leaves_;
};

// Lazily binds named parameters from a store onto a tape so each parameter
// appears as exactly one leaf per tape.
class ParamView {
 public:
  // With trainable = false parameters are bound as constants, so nothing is
  // recorded for the backward pass.
  ParamView(Tape& tape, const ParameterStore& store, bool trainable = true)
      : tape_(&tape), store_(&store), trainable_(trainable) {}

  Var operator()(const std::string& name);
  Tape& tape() const { return *tape_; }
  const ParameterStore& store() const { return *store_; }

 private:
  Tape* tape_;
  const ParameterStore* store_;
  bool trainable_ = true;
  std::map<std::string, Var> bound_;
};

namespace ops {

Var matmul(Var a, Var b);         // [m x k] * [k x n]
Var vecmat(Var x, Var w);         // [k] * [k x n] -> [n]
Var matvec(Var a, Var x);         // [m x k] * [k] -> [m]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);            // elementwise
Var scale(Var a, double s);
Var add_rowwise(Var x, Var b);    // [m x n] + [n] on every row
Var linear(Var x, Var w, Var b);  // x [n] or [r x n]; w [n x m]; b [m]
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sum(Var a);
Var dot(Var a, Var b);
Var softmax(Var v);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var concat(Var a, Var b);
Var stack_rows(std::span<const Var> rows);
Var row(Var m, std::size_t r);
Var mean_rows(Var m);
Var cross_entropy(Var logits, std::size_t target);  // -log softmax(logits)[target]
Var mean_scalars(std::span<const Var> scalars);
Var embedding(Var table, std::span<const int> ids, int frozen_row = 0);
Var detach(Var a);

// One LSTM layer over a whole sequence with a hand-derived BPTT backward.
// Gate layout in the 4H-wide blocks: input, forget, candidate, output.
Var lstm_layer(Var inputs, Var w_ih, Var w_hh, Var bias);

struct Attention {
  Var output;
  Var weights;
};

// softmax(keys . q / sqrt(c)) mixed over value rows.
Attention scaled_dot_attention(Var q, Var keys, Var values);

}  // namespace ops

}  // namespace cmn
