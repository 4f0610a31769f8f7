#include "sfkit/grad.hpp"

#include <algorithm>
#include <cmath>

namespace sfk::grad {

// ---- ParameterStore ---------------------------------------------------------

Tensor& ParameterStore::add(const std::string& name, Tensor t, bool trainable) {
  auto [it, inserted] = params_.try_emplace(name, Param{std::move(t), trainable});
  if (!inserted) throw DataError("duplicate parameter name '" + name + "'");
  return it->second.tensor;
}

Param& ParameterStore::at(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParameterStore::at(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw DataError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, p] : params_)
    if (name.rfind(prefix, 0) == 0) p.trainable = trainable;
}

int64_t ParameterStore::count(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, p] : params_)
    if (name.rfind(prefix, 0) == 0) n += p.tensor.size();
  return n;
}

int64_t ParameterStore::count_trainable(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, p] : params_)
    if (p.trainable && name.rfind(prefix, 0) == 0) n += p.tensor.size();
  return n;
}

// ---- Graph nodes ------------------------------------------------------------

namespace {

enum class Op {
  kInput, kParam, kMatmul, kTranspose, kAdd, kSub, kMul, kAffine,
  kConcatRows, kConcatCols, kSlice, kSumAxis, kMeanAxis, kSumAll,
  kExp, kLog, kSigmoid, kTanh, kRelu, kSwish, kClamp, kSoftmax,
  kL2NormRows, kRowAdd, kRowMul, kBatchNorm, kLayerNorm, kDropout,
  kDepthwise,
};

}  // namespace

struct Graph::Node {
  Op op = Op::kInput;
  std::vector<int> inputs;
  Matd value;
  Matd grad;  // empty until the backward pass reaches this node
  int axis = -1;
  int r0 = 0, nr = 0, c0 = 0, nc = 0;
  double alpha = 0.0, beta = 0.0;
  Matd aux, aux2;
  std::string pname;
  bool trainable = false;
};

Graph::Graph(bool training, uint64_t dropout_seed)
    : training_(training), dropout_rng_(dropout_seed) {}

Graph::~Graph() = default;

Graph::Node& Graph::node(int id) { return nodes_[size_t(id)]; }
const Graph::Node& Graph::cnode(int id) const { return nodes_[size_t(id)]; }

int Graph::add_node(Node&& n) {
  if (!n.value.allFinite())
    throw NumericError("non-finite value produced by a graph primitive");
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

const Matd& Value::val() const { return g_->cnode(id_).value; }

Value Graph::input(Matd v) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(v);
  return Value(this, add_node(std::move(n)));
}

Value Graph::param(ParameterStore& store, const std::string& name) {
  const Param& p = store.at(name);
  Node n;
  n.op = Op::kParam;
  n.value = p.tensor.m;
  n.pname = name;
  n.trainable = p.trainable;
  return Value(this, add_node(std::move(n)));
}

namespace {

void check_same_graph(Value a, Value b) {
  if (a.graph() != b.graph())
    throw DataError("operands belong to different graphs");
}

std::string shape_str(const Matd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

// ---- forward ops ------------------------------------------------------------

Value matmul(Value a, Value b) {
  check_same_graph(a, b);
  if (a.cols() != b.rows())
    throw DataError("matmul shape mismatch: " + shape_str(a.val()) + " * " +
                    shape_str(b.val()));
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = Op::kMatmul;
  n.inputs = {a.id(), b.id()};
  n.value = a.val() * b.val();
  return Value(&g, g.add_node(std::move(n)));
}

Value transpose(Value a) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = Op::kTranspose;
  n.inputs = {a.id()};
  n.value = a.val().transpose();
  return Value(&g, g.add_node(std::move(n)));
}

namespace {

Value elementwise(Value a, Value b, Op op) {
  check_same_graph(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DataError("elementwise shape mismatch: " + shape_str(a.val()) +
                    " vs " + shape_str(b.val()));
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = op;
  n.inputs = {a.id(), b.id()};
  switch (op) {
    case Op::kAdd: n.value = a.val() + b.val(); break;
    case Op::kSub: n.value = a.val() - b.val(); break;
    case Op::kMul: n.value = a.val().cwiseProduct(b.val()); break;
    default: throw DataError("internal: bad elementwise op");
  }
  return Value(&g, g.add_node(std::move(n)));
}

}  // namespace

Value add(Value a, Value b) { return elementwise(a, b, Op::kAdd); }
Value sub(Value a, Value b) { return elementwise(a, b, Op::kSub); }
Value mul(Value a, Value b) { return elementwise(a, b, Op::kMul); }

Value affine(Value a, double alpha, double beta) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = Op::kAffine;
  n.inputs = {a.id()};
  n.alpha = alpha;
  n.beta = beta;
  n.value = (alpha * a.val()).array() + beta;
  return Value(&g, g.add_node(std::move(n)));
}

namespace {

Value concat_impl(const std::vector<Value>& parts, bool rows) {
  if (parts.empty()) throw DataError("concat of zero parts");
  Graph& g = *parts.front().graph();
  int total = 0;
  for (const Value& p : parts) {
    check_same_graph(parts.front(), p);
    if (rows ? (p.cols() != parts.front().cols())
             : (p.rows() != parts.front().rows()))
      throw DataError("concat shape mismatch");
    total += rows ? p.rows() : p.cols();
  }
  Graph::Node n;
  n.op = rows ? Op::kConcatRows : Op::kConcatCols;
  n.value = rows ? Matd(total, parts.front().cols())
                 : Matd(parts.front().rows(), total);
  int at = 0;
  for (const Value& p : parts) {
    n.inputs.push_back(p.id());
    if (rows) {
      n.value.middleRows(at, p.rows()) = p.val();
      at += p.rows();
    } else {
      n.value.middleCols(at, p.cols()) = p.val();
      at += p.cols();
    }
  }
  return Value(&g, g.add_node(std::move(n)));
}

}  // namespace

Value concat_rows(const std::vector<Value>& parts) {
  return concat_impl(parts, true);
}
Value concat_cols(const std::vector<Value>& parts) {
  return concat_impl(parts, false);
}

Value slice(Value a, int r0, int rows, int c0, int cols) {
  if (r0 < 0 || c0 < 0 || rows < 1 || cols < 1 || r0 + rows > a.rows() ||
      c0 + cols > a.cols())
    throw DataError("slice out of range for " + shape_str(a.val()));
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = Op::kSlice;
  n.inputs = {a.id()};
  n.r0 = r0; n.nr = rows; n.c0 = c0; n.nc = cols;
  n.value = a.val().block(r0, c0, rows, cols);
  return Value(&g, g.add_node(std::move(n)));
}

namespace {

Value reduce_axis(Value a, int axis, bool mean) {
  if (axis != 0 && axis != 1) throw DataError("reduce axis must be 0 or 1");
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = mean ? Op::kMeanAxis : Op::kSumAxis;
  n.inputs = {a.id()};
  n.axis = axis;
  if (axis == 0)
    n.value = a.val().colwise().sum();
  else
    n.value = a.val().rowwise().sum();
  if (mean) n.value /= double(axis == 0 ? a.rows() : a.cols());
  return Value(&g, g.add_node(std::move(n)));
}

}  // namespace

Value sum_axis(Value a, int axis) { return reduce_axis(a, axis, false); }
Value mean_axis(Value a, int axis) { return reduce_axis(a, axis, true); }

Value sum_all(Value a) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = Op::kSumAll;
  n.inputs = {a.id()};
  n.value = Matd::Constant(1, 1, a.val().sum());
  return Value(&g, g.add_node(std::move(n)));
}

namespace {

Value unary(Value a, Op op, double lo = 0.0, double hi = 0.0) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = op;
  n.inputs = {a.id()};
  const auto& x = a.val().array();
  switch (op) {
    case Op::kExp: n.value = x.exp(); break;
    case Op::kLog: n.value = x.log(); break;
    case Op::kSigmoid:
      // 1/(1+e^-x) evaluated branch-wise to avoid overflow on large |x|.
      n.value = (x >= 0).select(1.0 / (1.0 + (-x).exp()),
                                x.exp() / (1.0 + x.exp()));
      break;
    case Op::kTanh: n.value = x.tanh(); break;
    case Op::kRelu: n.value = x.max(0.0); break;
    case Op::kSwish: {
      Eigen::ArrayXXd s = (x >= 0).select(1.0 / (1.0 + (-x).exp()),
                                          x.exp() / (1.0 + x.exp()));
      n.value = x * s;
      n.aux = s.matrix();
      break;
    }
    case Op::kClamp:
      n.alpha = lo;
      n.beta = hi;
      n.value = x.max(lo).min(hi);
      break;
    default: throw DataError("internal: bad unary op");
  }
  return Value(&g, g.add_node(std::move(n)));
}

}  // namespace

Value exp(Value a) { return unary(a, Op::kExp); }
Value log(Value a) { return unary(a, Op::kLog); }
Value sigmoid(Value a) { return unary(a, Op::kSigmoid); }
Value tanh(Value a) { return unary(a, Op::kTanh); }
Value relu(Value a) { return unary(a, Op::kRelu); }
Value swish(Value a) { return unary(a, Op::kSwish); }
Value clamp(Value a, double lo, double hi) { return unary(a, Op::kClamp, lo, hi); }

Value softmax(Value a, int axis) {
  if (axis != 0 && axis != 1) throw DataError("softmax axis must be 0 or 1");
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = Op::kSoftmax;
  n.inputs = {a.id()};
  n.axis = axis;
  Matd x = a.val();
  if (axis == 1) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double m = x.row(r).maxCoeff();
      Eigen::ArrayXd e = (x.row(r).array() - m).exp();
      x.row(r) = (e / e.sum()).matrix();
    }
  } else {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double m = x.col(c).maxCoeff();
      Eigen::ArrayXd e = (x.col(c).array() - m).exp();
      x.col(c) = (e / e.sum()).matrix();
    }
  }
  n.value = std::move(x);
  return Value(&g, g.add_node(std::move(n)));
}

Value l2_normalize_rows(Value a) {
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = Op::kL2NormRows;
  n.inputs = {a.id()};
  n.value = a.val();
  n.aux = Matd(a.rows(), 1);  // row norms
  for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
    const double norm = n.value.row(r).norm();
    if (norm < 1e-30)
      throw NumericError("l2_normalize_rows: row with near-zero norm");
    n.value.row(r) /= norm;
    n.aux(r, 0) = norm;
  }
  return Value(&g, g.add_node(std::move(n)));
}

namespace {

Value rowwise(Value a, Value rowvec, Op op) {
  check_same_graph(a, rowvec);
  if (rowvec.rows() != 1 || rowvec.cols() != a.cols())
    throw DataError("rowwise broadcast needs a 1x" + std::to_string(a.cols()) +
                    " vector, got " + shape_str(rowvec.val()));
  Graph& g = *a.graph();
  Graph::Node n;
  n.op = op;
  n.inputs = {a.id(), rowvec.id()};
  if (op == Op::kRowAdd)
    n.value = a.val().rowwise() + rowvec.val().row(0);
  else
    n.value = a.val().array().rowwise() * rowvec.val().row(0).array();
  return Value(&g, g.add_node(std::move(n)));
}

}  // namespace

Value rowwise_add(Value a, Value rowvec) { return rowwise(a, rowvec, Op::kRowAdd); }
Value rowwise_mul(Value a, Value rowvec) { return rowwise(a, rowvec, Op::kRowMul); }

Value batch_norm(Value x, Value gamma, Value beta, ParameterStore& store,
                 const BatchNormStats& stats, double eps, double momentum) {
  check_same_graph(x, gamma);
  check_same_graph(x, beta);
  const int cols = x.cols();
  if (gamma.cols() != cols || beta.cols() != cols || gamma.rows() != 1 ||
      beta.rows() != 1)
    throw DataError("batch_norm scale/shift must be 1x" + std::to_string(cols));
  Graph& g = *x.graph();
  Graph::Node n;
  n.op = Op::kBatchNorm;
  n.inputs = {x.id(), gamma.id(), beta.id()};
  n.beta = eps;

  Matd mean, var;
  if (g.training()) {
    const double rows = double(x.rows());
    mean = x.val().colwise().mean();
    Matd centered = x.val().rowwise() - mean.row(0);
    var = centered.array().square().colwise().sum().matrix() / rows;
    Matd& run_mean = store.at(stats.mean_name).tensor.m;
    Matd& run_var = store.at(stats.var_name).tensor.m;
    run_mean = momentum * run_mean + (1.0 - momentum) * mean;
    run_var = momentum * run_var + (1.0 - momentum) * var;
    n.alpha = 1.0;  // train-mode flag for the backward pass
  } else {
    mean = store.at(stats.mean_name).tensor.m;
    var = store.at(stats.var_name).tensor.m;
    n.alpha = 0.0;
  }
  Matd inv_std = (var.array() + eps).rsqrt().matrix();
  Matd xhat = (x.val().rowwise() - mean.row(0)).array().rowwise() *
              inv_std.row(0).array();
  n.value = (xhat.array().rowwise() * gamma.val().row(0).array()).matrix()
                .rowwise() +
            beta.val().row(0);
  n.aux = xhat;
  n.aux2 = inv_std;
  return Value(&g, g.add_node(std::move(n)));
}

Value layer_norm(Value x, Value gamma, Value beta, double eps) {
  check_same_graph(x, gamma);
  check_same_graph(x, beta);
  const int cols = x.cols();
  if (gamma.cols() != cols || beta.cols() != cols || gamma.rows() != 1 ||
      beta.rows() != 1)
    throw DataError("layer_norm scale/shift must be 1x" + std::to_string(cols));
  Graph& g = *x.graph();
  Graph::Node n;
  n.op = Op::kLayerNorm;
  n.inputs = {x.id(), gamma.id(), beta.id()};
  n.beta = eps;
  Matd xhat(x.rows(), cols);
  Matd inv_std(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.val().row(r).mean();
    Eigen::RowVectorXd centered = x.val().row(r).array() - mean;
    const double var = centered.squaredNorm() / double(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = centered * inv;
    inv_std(r, 0) = inv;
  }
  n.value = (xhat.array().rowwise() * gamma.val().row(0).array()).matrix()
                .rowwise() +
            beta.val().row(0);
  n.aux = xhat;
  n.aux2 = inv_std;
  return Value(&g, g.add_node(std::move(n)));
}

Value dropout(Value x, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must be in [0, 1)");
  Graph& g = *x.graph();
  if (!g.training() || rate == 0.0) return x;  // identity in eval mode
  Graph::Node n;
  n.op = Op::kDropout;
  n.inputs = {x.id()};
  n.alpha = 1.0 / (1.0 - rate);
  n.aux = Matd(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      n.aux(r, c) = g.dropout_rng().next_double() < rate ? 0.0 : 1.0;
  n.value = x.val().cwiseProduct(n.aux) * n.alpha;
  return Value(&g, g.add_node(std::move(n)));
}

Value depthwise_conv1d(Value x, Value kernel, Value bias) {
  check_same_graph(x, kernel);
  check_same_graph(x, bias);
  const int frames = x.rows(), channels = x.cols();
  const int k = kernel.rows();
  if (kernel.cols() != channels)
    throw DataError("depthwise kernel must have one column per channel");
  if (k % 2 == 0) throw DataError("depthwise kernel size must be odd");
  if (bias.rows() != 1 || bias.cols() != channels)
    throw DataError("depthwise bias must be 1x" + std::to_string(channels));
  Graph& g = *x.graph();
  Graph::Node n;
  n.op = Op::kDepthwise;
  n.inputs = {x.id(), kernel.id(), bias.id()};
  const int off = (k - 1) / 2;
  Matd y = Matd::Zero(frames, channels);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < k; ++j) {
      const int s = t + j - off;
      if (s < 0 || s >= frames) continue;  // zero padding
      y.row(t).array() += kernel.val().row(j).array() * x.val().row(s).array();
    }
  }
  y.rowwise() += bias.val().row(0);
  n.value = std::move(y);
  return Value(&g, g.add_node(std::move(n)));
}

Value dense(Value x, Value w, Value b) { return rowwise_add(matmul(x, w), b); }

Value dense(Graph& g, ParameterStore& store, const std::string& prefix,
            Value x) {
  return dense(x, g.param(store, prefix + ".w"), g.param(store, prefix + ".b"));
}

// ---- backward ---------------------------------------------------------------

namespace {

void accumulate(Graph& g, int id, const Matd& grad) {
  Matd& dst = g.node(id).grad;
  if (dst.size() == 0)
    dst = grad;
  else
    dst += grad;
}

}  // namespace

void Graph::backward(Value output) {
  if (output.graph() != this) throw DataError("backward on foreign value");
  Node& out = node(output.id());
  if (out.value.rows() != 1 || out.value.cols() != 1)
    throw DataError("backward requires a 1x1 output; got " +
                    shape_str(out.value));
  out.grad = Matd::Constant(1, 1, 1.0);

  for (int id = int(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.size() == 0) continue;  // not an ancestor of the output
    const Matd& gy = n.grad;
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kMatmul: {
        const Matd& a = cnode(n.inputs[0]).value;
        const Matd& b = cnode(n.inputs[1]).value;
        accumulate(*this, n.inputs[0], gy * b.transpose());
        accumulate(*this, n.inputs[1], a.transpose() * gy);
        break;
      }
      case Op::kTranspose:
        accumulate(*this, n.inputs[0], gy.transpose());
        break;
      case Op::kAdd:
        accumulate(*this, n.inputs[0], gy);
        accumulate(*this, n.inputs[1], gy);
        break;
      case Op::kSub:
        accumulate(*this, n.inputs[0], gy);
        accumulate(*this, n.inputs[1], -gy);
        break;
      case Op::kMul:
        accumulate(*this, n.inputs[0],
                   gy.cwiseProduct(cnode(n.inputs[1]).value));
        accumulate(*this, n.inputs[1],
                   gy.cwiseProduct(cnode(n.inputs[0]).value));
        break;
      case Op::kAffine:
        accumulate(*this, n.inputs[0], n.alpha * gy);
        break;
      case Op::kConcatRows: {
        int at = 0;
        for (const int in : n.inputs) {
          const int r = int(cnode(in).value.rows());
          accumulate(*this, in, gy.middleRows(at, r));
          at += r;
        }
        break;
      }
      case Op::kConcatCols: {
        int at = 0;
        for (const int in : n.inputs) {
          const int c = int(cnode(in).value.cols());
          accumulate(*this, in, gy.middleCols(at, c));
          at += c;
        }
        break;
      }
      case Op::kSlice: {
        const Matd& a = cnode(n.inputs[0]).value;
        Matd da = Matd::Zero(a.rows(), a.cols());
        da.block(n.r0, n.c0, n.nr, n.nc) = gy;
        accumulate(*this, n.inputs[0], da);
        break;
      }
      case Op::kSumAxis:
      case Op::kMeanAxis: {
        const Matd& a = cnode(n.inputs[0]).value;
        const double denom =
            n.op == Op::kMeanAxis ? double(n.axis == 0 ? a.rows() : a.cols())
                                  : 1.0;
        Matd da(a.rows(), a.cols());
        if (n.axis == 0)
          da = (Matd::Ones(a.rows(), 1) * gy) / denom;
        else
          da = (gy * Matd::Ones(1, a.cols())) / denom;
        accumulate(*this, n.inputs[0], da);
        break;
      }
      case Op::kSumAll: {
        const Matd& a = cnode(n.inputs[0]).value;
        accumulate(*this, n.inputs[0],
                   Matd::Constant(a.rows(), a.cols(), gy(0, 0)));
        break;
      }
      case Op::kExp:
        accumulate(*this, n.inputs[0], gy.cwiseProduct(n.value));
        break;
      case Op::kLog:
        accumulate(*this, n.inputs[0],
                   gy.cwiseQuotient(cnode(n.inputs[0]).value));
        break;
      case Op::kSigmoid: {
        const Matd d = n.value.array() * (1.0 - n.value.array());
        accumulate(*this, n.inputs[0], gy.cwiseProduct(d));
        break;
      }
      case Op::kTanh: {
        const Matd d = 1.0 - n.value.array().square();
        accumulate(*this, n.inputs[0], gy.cwiseProduct(d));
        break;
      }
      case Op::kRelu: {
        const Matd& x = cnode(n.inputs[0]).value;
        const Matd d = (x.array() > 0.0).cast<double>();
        accumulate(*this, n.inputs[0], gy.cwiseProduct(d));
        break;
      }
      case Op::kSwish: {
        // d/dx x·σ(x) = σ(x)·(1 + x·(1−σ(x)))
        const Matd& x = cnode(n.inputs[0]).value;
        const auto s = n.aux.array();
        const Matd d = (s * (1.0 + x.array() * (1.0 - s))).matrix();
        accumulate(*this, n.inputs[0], gy.cwiseProduct(d));
        break;
      }
      case Op::kClamp: {
        const Matd& x = cnode(n.inputs[0]).value;
        const Matd pass =
            ((x.array() > n.alpha) && (x.array() < n.beta)).cast<double>();
        accumulate(*this, n.inputs[0], gy.cwiseProduct(pass));
        break;
      }
      case Op::kSoftmax: {
        const Matd& y = n.value;
        Matd da(y.rows(), y.cols());
        if (n.axis == 1) {
          for (Eigen::Index r = 0; r < y.rows(); ++r) {
            const double s = gy.row(r).cwiseProduct(y.row(r)).sum();
            da.row(r) = (y.row(r).array() * (gy.row(r).array() - s)).matrix();
          }
        } else {
          for (Eigen::Index c = 0; c < y.cols(); ++c) {
            const double s = gy.col(c).cwiseProduct(y.col(c)).sum();
            da.col(c) = (y.col(c).array() * (gy.col(c).array() - s)).matrix();
          }
        }
        accumulate(*this, n.inputs[0], da);
        break;
      }
      case Op::kL2NormRows: {
        const Matd& y = n.value;
        Matd da(y.rows(), y.cols());
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const double dot = gy.row(r).dot(y.row(r));
          da.row(r) = (gy.row(r) - dot * y.row(r)) / n.aux(r, 0);
        }
        accumulate(*this, n.inputs[0], da);
        break;
      }
      case Op::kRowAdd:
        accumulate(*this, n.inputs[0], gy);
        accumulate(*this, n.inputs[1], gy.colwise().sum());
        break;
      case Op::kRowMul: {
        const Matd& a = cnode(n.inputs[0]).value;
        const Matd& rv = cnode(n.inputs[1]).value;
        accumulate(*this, n.inputs[0],
                   gy.array().rowwise() * rv.row(0).array());
        accumulate(*this, n.inputs[1],
                   gy.cwiseProduct(a).colwise().sum());
        break;
      }
      case Op::kBatchNorm: {
        const Matd& xhat = n.aux;
        const Matd& inv_std = n.aux2;
        const Matd& gamma = cnode(n.inputs[1]).value;
        accumulate(*this, n.inputs[2], gy.colwise().sum());
        accumulate(*this, n.inputs[1], gy.cwiseProduct(xhat).colwise().sum());
        Matd dxhat = gy.array().rowwise() * gamma.row(0).array();
        if (n.alpha > 0.5) {  // train mode: statistics depend on x
          const double rows = double(xhat.rows());
          const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
          const Eigen::RowVectorXd sum_dx =
              dxhat.cwiseProduct(xhat).colwise().sum();
          Matd dx = rows * dxhat;
          dx.rowwise() -= sum_d;
          dx -= (xhat.array().rowwise() * sum_dx.array()).matrix();
          dx = (dx.array().rowwise() * inv_std.row(0).array()).matrix() / rows;
          accumulate(*this, n.inputs[0], dx);
        } else {
          accumulate(*this, n.inputs[0],
                     (dxhat.array().rowwise() * inv_std.row(0).array()).matrix());
        }
        break;
      }
      case Op::kLayerNorm: {
        const Matd& xhat = n.aux;
        const Matd& inv_std = n.aux2;  // per-row, R×1
        const Matd& gamma = cnode(n.inputs[1]).value;
        accumulate(*this, n.inputs[2], gy.colwise().sum());
        accumulate(*this, n.inputs[1], gy.cwiseProduct(xhat).colwise().sum());
        const Matd dxhat = gy.array().rowwise() * gamma.row(0).array();
        const double cols = double(xhat.cols());
        Matd dx(xhat.rows(), xhat.cols());
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
          const double sum_d = dxhat.row(r).sum();
          const double sum_dx = dxhat.row(r).dot(xhat.row(r));
          dx.row(r) = ((cols * dxhat.row(r).array() - sum_d -
                        xhat.row(r).array() * sum_dx) *
                       (inv_std(r, 0) / cols))
                          .matrix();
        }
        accumulate(*this, n.inputs[0], dx);
        break;
      }
      case Op::kDropout:
        accumulate(*this, n.inputs[0], gy.cwiseProduct(n.aux) * n.alpha);
        break;
      case Op::kDepthwise: {
        const Matd& x = cnode(n.inputs[0]).value;
        const Matd& kern = cnode(n.inputs[1]).value;
        const int frames = int(x.rows());
        const int k = int(kern.rows());
        const int off = (k - 1) / 2;
        Matd dx = Matd::Zero(x.rows(), x.cols());
        Matd dk = Matd::Zero(kern.rows(), kern.cols());
        for (int t = 0; t < frames; ++t) {
          for (int j = 0; j < k; ++j) {
            const int s = t + j - off;
            if (s < 0 || s >= frames) continue;
            dk.row(j).array() += gy.row(t).array() * x.row(s).array();
            dx.row(s).array() += gy.row(t).array() * kern.row(j).array();
          }
        }
        accumulate(*this, n.inputs[0], dx);
        accumulate(*this, n.inputs[1], dk);
        accumulate(*this, n.inputs[2], gy.colwise().sum());
        break;
      }
    }
  }
}

const Matd& Graph::grad_of(Value v) const {
  const Node& n = cnode(v.id());
  if (n.grad.size() == 0)
    throw DataError("no gradient recorded for this value; run backward first");
  return n.grad;
}

bool Graph::has_grad(Value v) const { return cnode(v.id()).grad.size() != 0; }

std::map<std::string, Matd> Graph::param_grads() const {
  std::map<std::string, Matd> grads;
  for (const auto& n : nodes_) {
    if (n.op != Op::kParam || !n.trainable) continue;
    if (n.grad.size() == 0) continue;
    auto [it, inserted] = grads.try_emplace(n.pname, n.grad);
    if (!inserted) it->second += n.grad;
  }
  return grads;
}

// ---- optimizer ----------------------------------------------------------------

void adamw_step(ParameterStore& params, const std::map<std::string, Matd>& grads,
                AdamWState& state, double lr, double beta1, double beta2,
                double eps, double weight_decay) {
  for (const auto& [name, g] : grads)
    if (!g.allFinite())
      throw NumericError("adamw_step: non-finite gradient for '" + name + "'");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(beta2, double(state.step));

  for (const auto& [name, g] : grads) {
    Param& p = params.at(name);
    if (!p.trainable) continue;
    Matd& value = p.tensor.m;
    if (g.rows() != value.rows() || g.cols() != value.cols())
      throw DataError("adamw_step: gradient shape mismatch for '" + name + "'");

    auto [mit, minserted] =
        state.m.try_emplace(name, Matd::Zero(value.rows(), value.cols()));
    auto [vit, vinserted] =
        state.v.try_emplace(name, Matd::Zero(value.rows(), value.cols()));
    Matd& m = mit->second;
    Matd& v = vit->second;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v.array().matrix() + (1.0 - beta2) * g.cwiseProduct(g);
    const Matd mhat = m / bc1;
    const Matd vhat = v / bc2;
    value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    if (weight_decay != 0.0) value *= (1.0 - lr * weight_decay);
  }
}

// ---- finite differences --------------------------------------------------------

GradCheckReport finite_diff_check(const GradCheckFn& f, ParameterStore& params,
                                  double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-4)
    throw ConfigError("finite_diff_check: epsilon must be in [1e-7, 1e-4]");

  std::map<std::string, Matd> analytic;
  f(params, &analytic);

  GradCheckReport report;
  for (auto& [name, p] : params.entries()) {
    if (!p.trainable) continue;
    Matd& value = p.tensor.m;
    const Matd* a = analytic.count(name) ? &analytic.at(name) : nullptr;
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) {
        const double saved = value(r, c);
        value(r, c) = saved + epsilon;
        const double fp = f(params, nullptr);
        value(r, c) = saved - epsilon;
        const double fm = f(params, nullptr);
        value(r, c) = saved;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double analytic_v = a ? (*a)(r, c) : 0.0;
        const double rel = std::abs(analytic_v - numeric) /
                           std::max(1.0, std::abs(numeric));
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_param = name + "(" + std::to_string(r) + "," +
                               std::to_string(c) + ")";
        }
      }
    }
  }
  return report;
}

// ---- initializers ---------------------------------------------------------------

Tensor init_matrix(int r, int c, double stddev, Rng* rng) {
  Tensor t = Tensor::matrix(r, c);
  if (rng)
    for (Eigen::Index i = 0; i < t.m.rows(); ++i)
      for (Eigen::Index j = 0; j < t.m.cols(); ++j)
        t.m(i, j) = rng->normal(0.0, stddev);
  return t;
}

Tensor init_vector(int n, double value) {
  Tensor t = Tensor::vector(n);
  t.m.setConstant(value);
  return t;
}

}  // namespace sfk::grad
