#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sfkit/corpus.hpp"  // Mat<Scalar> aliases
#include "sfkit/errors.hpp"
#include "sfkit/rng.hpp"

// Dense 64-bit tensors with taped reverse-mode differentiation. Graphs are
// rebuilt per step (define-by-run); the tape is appended in forward order,
// which is already a topological order, and the backward pass replays it
// once in reverse. Every primitive checks its output for non-finite values.

namespace sfk::grad {

struct Tensor {
  std::vector<int> dims;  // logical shape; rank-1 tensors are stored 1×n
  Matd m;

  Tensor() = default;
  static Tensor vector(int n) {
    Tensor t;
    t.dims = {n};
    t.m = Matd::Zero(1, n);
    return t;
  }
  static Tensor matrix(int r, int c) {
    Tensor t;
    t.dims = {r, c};
    t.m = Matd::Zero(r, c);
    return t;
  }
  static Tensor from(Matd values) {
    Tensor t;
    t.dims = {int(values.rows()), int(values.cols())};
    t.m = std::move(values);
    return t;
  }
  int64_t size() const { return m.size(); }
};

struct Param {
  Tensor tensor;
  bool trainable = true;
};

// Named tensor collection; iteration order is the sorted name order, which
// keeps optimizer traversal and serialization deterministic.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  void set_trainable(const std::string& prefix, bool trainable);

  int64_t count(const std::string& prefix = "") const;
  int64_t count_trainable(const std::string& prefix = "") const;

  std::map<std::string, Param>& entries() { return params_; }
  const std::map<std::string, Param>& entries() const { return params_; }

 private:
  std::map<std::string, Param> params_;
};

class Graph;

// Lightweight handle to a node in a Graph.
class Value {
 public:
  Value() = default;
  Value(Graph* g, int id) : g_(g), id_(id) {}
  const Matd& val() const;
  int rows() const { return int(val().rows()); }
  int cols() const { return int(val().cols()); }
  Graph* graph() const { return g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

// Running batch-norm statistics; owned by the model's ParameterStore as
// frozen tensors and updated in place during train-mode forwards.
struct BatchNormStats {
  std::string mean_name;
  std::string var_name;
};

class Graph {
 public:
  explicit Graph(bool training = false, uint64_t dropout_seed = 0);
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }

  Value input(Matd v);
  Value constant(double v) { return input(Matd::Constant(1, 1, v)); }
  // Copies the parameter value into a leaf; gradients accumulate by name.
  Value param(ParameterStore& store, const std::string& name);

  // Runs reverse accumulation from a 1×1 output. Gradients for every node
  // reachable from the output become available afterwards.
  void backward(Value output);

  const Matd& grad_of(Value v) const;
  bool has_grad(Value v) const;
  // name → accumulated gradient, trainable parameters only.
  std::map<std::string, Matd> param_grads() const;

  // internal access for the op implementations in grad.cpp
  struct Node;
  Node& node(int id);
  const Node& cnode(int id) const;
  int add_node(Node&& n);
  Rng& dropout_rng() { return dropout_rng_; }

 private:
  std::vector<Node> nodes_;
  bool training_;
  Rng dropout_rng_;
};

// ---- primitive operations -------------------------------------------------

Value matmul(Value a, Value b);
Value transpose(Value a);
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);                   // elementwise
Value affine(Value a, double alpha, double beta);  // alpha*a + beta
inline Value scale(Value a, double c) { return affine(a, c, 0.0); }
Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value slice(Value a, int r0, int rows, int c0, int cols);
inline Value row(Value a, int r) { return slice(a, r, 1, 0, a.cols()); }
Value sum_axis(Value a, int axis);   // axis 0 → 1×C, axis 1 → R×1
Value mean_axis(Value a, int axis);
Value sum_all(Value a);              // 1×1
Value exp(Value a);
Value log(Value a);
Value sigmoid(Value a);
Value tanh(Value a);
Value relu(Value a);
Value swish(Value a);
Value clamp(Value a, double lo, double hi);
Value softmax(Value a, int axis);
Value l2_normalize_rows(Value a);
Value rowwise_add(Value a, Value rowvec);  // broadcast 1×C over rows
Value rowwise_mul(Value a, Value rowvec);
// Train mode: normalizes over rows with batch statistics and updates the
// running stats in `store`; eval mode: uses the stored running statistics.
Value batch_norm(Value x, Value gamma, Value beta, ParameterStore& store,
                 const BatchNormStats& stats, double eps = 1e-5,
                 double momentum = 0.99);
// Per-row normalization over channels with trainable per-channel scale/shift.
Value layer_norm(Value x, Value gamma, Value beta, double eps = 1e-5);
// Inverted dropout: train mode masks and rescales by 1/(1-rate); eval mode
// is the identity (no node is recorded).
Value dropout(Value x, double rate);
// Same-padded correlation along the frame axis, one kernel column per
// channel. kernel is k×C with odd k, bias 1×C.
Value depthwise_conv1d(Value x, Value kernel, Value bias);

// ---- composites -----------------------------------------------------------

// x·W + b with the bias broadcast over rows. Pointwise (kernel-1) 1-D
// convolution and binary-label embedding are this same map.
Value dense(Value x, Value w, Value b);
inline Value pointwise_conv1d(Value x, Value w, Value b) { return dense(x, w, b); }
Value dense(Graph& g, ParameterStore& store, const std::string& prefix, Value x);

// ---- optimizer and checking -----------------------------------------------

struct AdamWState {
  std::map<std::string, Matd> m;
  std::map<std::string, Matd> v;
  int64_t step = 0;
};

// Bias-corrected Adam moments followed by decoupled weight decay
// p ← p − lr·weight_decay·p. Frozen parameters are untouched.
void adamw_step(ParameterStore& params, const std::map<std::string, Matd>& grads,
                AdamWState& state, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
};

// Central-difference check of d f / d params against the analytic gradients
// the function reports. f must be deterministic in the parameters.
using GradCheckFn =
    std::function<double(ParameterStore&, std::map<std::string, Matd>*)>;
GradCheckReport finite_diff_check(const GradCheckFn& f, ParameterStore& params,
                                  double epsilon);

// Gaussian-initialized tensors for model builders. A null rng zero-fills,
// which is enough for shape/count checks.
Tensor init_matrix(int r, int c, double stddev, Rng* rng);
Tensor init_vector(int n, double value = 0.0);

}  // namespace sfk::grad
