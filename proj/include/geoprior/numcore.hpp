#pragma once

// Dense row-major matrices, a reverse-mode tape over the handful of
// primitives the location model needs, and Adam.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geoprior/error.hpp"
#include "geoprior/rng.hpp"

namespace geoprior {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) fail(ErrorKind::Shape, "ragged matrix literal");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
      ++i;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  // A single row holding `values`.
  static Matrix row_vector(std::span<const double> values) {
    Matrix m(1, values.size());
    std::copy(values.begin(), values.end(), m.data_.begin());
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using RowMajorXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<RowMajorXd> as_eigen(Matrix& m) {
  return {m.values().data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const RowMajorXd> as_eigen(const Matrix& m) {
  return {m.values().data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow; log(1 - sigmoid(z)) == log_sigmoid(-z).
inline double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::Shape, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// output[i] = sum_j w(i, j) * input[j] + bias[i]
inline std::vector<double> affine(std::span<const double> input, const Matrix& w,
                                  std::span<const double> bias) {
  if (input.size() != w.cols()) {
    fail(ErrorKind::Shape, "affine: input length " + std::to_string(input.size()) +
                               " != weight cols " + std::to_string(w.cols()));
  }
  if (bias.size() != w.rows()) {
    fail(ErrorKind::Shape, "affine: bias length " + std::to_string(bias.size()) +
                               " != weight rows " + std::to_string(w.rows()));
  }
  std::vector<double> out(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) out[i] = dot(w.row(i), input) + bias[i];
  return out;
}

// A trainable tensor and its gradient accumulator.
struct Param {
  Matrix value;
  Matrix grad;

  Param() = default;
  explicit Param(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    grad.fill(0.0);
  }
};

// Records a forward pass over batch matrices (one example per row) and
// replays it backwards. Only the primitives used by the location model
// are supported.
class Tape {
 public:
  using NodeId = std::size_t;

  NodeId input(Matrix x) { return push(Op::Input, std::move(x), {}, {}); }

  // Y = X W^T + b, with W stored out x in and b stored 1 x out.
  NodeId affine(NodeId x, Param& w, Param& b) {
    const Matrix& xv = value(x);
    if (xv.cols() != w.value.cols()) fail(ErrorKind::Shape, "tape affine: input width mismatch");
    if (b.value.rows() != 1 || b.value.cols() != w.value.rows()) {
      fail(ErrorKind::Shape, "tape affine: bias shape mismatch");
    }
    Matrix y(xv.rows(), w.value.rows());
    auto ye = as_eigen(y);
    ye.noalias() = as_eigen(xv) * as_eigen(w.value).transpose();
    ye.rowwise() += as_eigen(b.value).row(0);
    return push(Op::Affine, std::move(y), {x}, {&w, &b});
  }

  NodeId relu(NodeId x) {
    Matrix y = value(x);
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return push(Op::Relu, std::move(y), {x}, {});
  }

  // Inverted dropout: survivors are scaled by 1 / (1 - rate).
  NodeId dropout(NodeId x, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::Config, "dropout rate must be in [0, 1)");
    const Matrix& xv = value(x);
    Matrix mask(xv.rows(), xv.cols());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& m : mask.values()) m = rng.uniform() < rate ? 0.0 : keep_scale;
    Matrix y = xv;
    for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] *= mask.values()[i];
    NodeId id = push(Op::Dropout, std::move(y), {x}, {});
    nodes_[id].aux = std::move(mask);
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    if (!value(a).same_shape(value(b))) fail(ErrorKind::Shape, "tape add: shape mismatch");
    Matrix y = value(a);
    as_eigen(y) += as_eigen(value(b));
    return push(Op::Add, std::move(y), {a, b}, {});
  }

  NodeId sigmoid(NodeId x) {
    Matrix y = value(x);
    for (double& v : y.values()) v = geoprior::sigmoid(v);
    return push(Op::Sigmoid, std::move(y), {x}, {});
  }

  NodeId log(NodeId x) {
    Matrix y = value(x);
    for (double& v : y.values()) v = std::log(v);
    return push(Op::Log, std::move(y), {x}, {});
  }

  // Sum of all entries, as a 1 x 1 node.
  NodeId sum(NodeId x) {
    CompensatedSum s;
    for (double v : value(x).values()) s.add(v);
    return push(Op::Sum, Matrix(1, 1, s.value()), {x}, {});
  }

  // Y = X M for a parameter matrix M.
  NodeId matmul(NodeId x, Param& m) {
    const Matrix& xv = value(x);
    if (xv.cols() != m.value.rows()) fail(ErrorKind::Shape, "tape matmul: inner dimension mismatch");
    Matrix y(xv.rows(), m.value.cols());
    as_eigen(y).noalias() = as_eigen(xv) * as_eigen(m.value);
    return push(Op::MatMul, std::move(y), {x}, {&m});
  }

  // Y[r, :] = M[:, columns[r]], i.e. one embedding column per row.
  NodeId gather_columns(Param& m, std::vector<std::size_t> columns) {
    Matrix y(columns.size(), m.value.rows());
    for (std::size_t r = 0; r < columns.size(); ++r) {
      if (columns[r] >= m.value.cols()) fail(ErrorKind::Lookup, "tape gather: column out of range");
      for (std::size_t d = 0; d < m.value.rows(); ++d) y(r, d) = m.value(d, columns[r]);
    }
    NodeId id = push(Op::Gather, std::move(y), {}, {&m});
    nodes_[id].indices = std::move(columns);
    return id;
  }

  // Per-row inner product of two equally shaped nodes, giving rows x 1.
  NodeId row_dot(NodeId a, NodeId b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (!av.same_shape(bv)) fail(ErrorKind::Shape, "tape row_dot: shape mismatch");
    Matrix y(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) y(r, 0) = dot(av.row(r), bv.row(r));
    return push(Op::RowDot, std::move(y), {a, b}, {});
  }

  // Scalar sum of w * (t log s(z) + (1 - t) log(1 - s(z))) over the logits z.
  // The sigmoid and log are fused so saturated logits stay finite.
  NodeId bernoulli_log_likelihood(NodeId logits, Matrix targets, Matrix weights) {
    const Matrix& z = value(logits);
    if (!z.same_shape(targets) || !z.same_shape(weights)) {
      fail(ErrorKind::Shape, "tape log-likelihood: targets/weights shape mismatch");
    }
    CompensatedSum s;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double w = weights.values()[i];
      if (w == 0.0) continue;
      const double t = targets.values()[i];
      const double zi = z.values()[i];
      s.add(w * (t * log_sigmoid(zi) + (1.0 - t) * log_sigmoid(-zi)));
    }
    NodeId id = push(Op::BernoulliLL, Matrix(1, 1, s.value()), {logits}, {});
    nodes_[id].aux = std::move(targets);
    nodes_[id].aux2 = std::move(weights);
    return id;
  }

  const Matrix& value(NodeId id) const {
    if (id >= nodes_.size()) fail(ErrorKind::Usage, "tape: unknown node");
    return nodes_[id].value;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Propagates d(output)/d(.) scaled by `seed` into every reachable
  // parameter's grad buffer. Parameter grads accumulate; node grads do not
  // outlive the call. A tape can be replayed once.
  void backward(NodeId output, double seed = 1.0) {
    if (nodes_.empty()) fail(ErrorKind::Usage, "backward called before any forward pass");
    if (consumed_) fail(ErrorKind::Usage, "backward called twice on the same tape");
    const Matrix& out = value(output);
    if (out.rows() != 1 || out.cols() != 1) fail(ErrorKind::Usage, "backward needs a scalar output");
    consumed_ = true;

    std::vector<Matrix> grads(nodes_.size());
    grads[output] = Matrix(1, 1, seed);
    for (std::size_t k = output + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (grads[k].size() == 0) continue;
      const Matrix& g = grads[k];
      switch (n.op) {
        case Op::Input:
          break;
        case Op::Affine: {
          Param& w = *n.params[0];
          Param& b = *n.params[1];
          const Matrix& x = nodes_[n.inputs[0]].value;
          ensure_grad(w);
          ensure_grad(b);
          as_eigen(w.grad).noalias() += as_eigen(g).transpose() * as_eigen(x);
          as_eigen(b.grad).row(0) += as_eigen(g).colwise().sum();
          Matrix dx(x.rows(), x.cols());
          as_eigen(dx).noalias() = as_eigen(g) * as_eigen(w.value);
          accumulate(grads, n.inputs[0], dx);
          break;
        }
        case Op::Relu: {
          const Matrix& x = nodes_[n.inputs[0]].value;
          Matrix dx = g;
          for (std::size_t i = 0; i < dx.size(); ++i) {
            if (!(x.values()[i] > 0.0)) dx.values()[i] = 0.0;
          }
          accumulate(grads, n.inputs[0], dx);
          break;
        }
        case Op::Dropout: {
          Matrix dx = g;
          for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] *= n.aux.values()[i];
          accumulate(grads, n.inputs[0], dx);
          break;
        }
        case Op::Add:
          accumulate(grads, n.inputs[0], g);
          accumulate(grads, n.inputs[1], g);
          break;
        case Op::Sigmoid: {
          Matrix dx = g;
          for (std::size_t i = 0; i < dx.size(); ++i) {
            const double s = n.value.values()[i];
            dx.values()[i] *= s * (1.0 - s);
          }
          accumulate(grads, n.inputs[0], dx);
          break;
        }
        case Op::Log: {
          const Matrix& x = nodes_[n.inputs[0]].value;
          Matrix dx = g;
          for (std::size_t i = 0; i < dx.size(); ++i) dx.values()[i] /= x.values()[i];
          accumulate(grads, n.inputs[0], dx);
          break;
        }
        case Op::Sum: {
          const Matrix& x = nodes_[n.inputs[0]].value;
          accumulate(grads, n.inputs[0], Matrix(x.rows(), x.cols(), g(0, 0)));
          break;
        }
        case Op::MatMul: {
          Param& m = *n.params[0];
          const Matrix& x = nodes_[n.inputs[0]].value;
          ensure_grad(m);
          as_eigen(m.grad).noalias() += as_eigen(x).transpose() * as_eigen(g);
          Matrix dx(x.rows(), x.cols());
          as_eigen(dx).noalias() = as_eigen(g) * as_eigen(m.value).transpose();
          accumulate(grads, n.inputs[0], dx);
          break;
        }
        case Op::Gather: {
          Param& m = *n.params[0];
          ensure_grad(m);
          for (std::size_t r = 0; r < n.indices.size(); ++r) {
            for (std::size_t d = 0; d < m.value.rows(); ++d) m.grad(d, n.indices[r]) += g(r, d);
          }
          break;
        }
        case Op::RowDot: {
          const Matrix& a = nodes_[n.inputs[0]].value;
          const Matrix& b = nodes_[n.inputs[1]].value;
          Matrix da(a.rows(), a.cols());
          Matrix db(b.rows(), b.cols());
          for (std::size_t r = 0; r < a.rows(); ++r) {
            for (std::size_t c = 0; c < a.cols(); ++c) {
              da(r, c) = g(r, 0) * b(r, c);
              db(r, c) = g(r, 0) * a(r, c);
            }
          }
          accumulate(grads, n.inputs[0], da);
          accumulate(grads, n.inputs[1], db);
          break;
        }
        case Op::BernoulliLL: {
          const Matrix& z = nodes_[n.inputs[0]].value;
          Matrix dz(z.rows(), z.cols());
          for (std::size_t i = 0; i < dz.size(); ++i) {
            const double w = n.aux2.values()[i];
            if (w == 0.0) continue;
            // d/dz [t log s + (1-t) log(1-s)] = t - s
            dz.values()[i] = g(0, 0) * w * (n.aux.values()[i] - geoprior::sigmoid(z.values()[i]));
          }
          accumulate(grads, n.inputs[0], dz);
          break;
        }
      }
    }
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  enum class Op { Input, Affine, Relu, Dropout, Add, Sigmoid, Log, Sum, MatMul, Gather, RowDot, BernoulliLL };

  struct Node {
    Op op;
    NodeId self;
    Matrix value;
    std::vector<NodeId> inputs;
    std::vector<Param*> params;
    Matrix aux;
    Matrix aux2;
    std::vector<std::size_t> indices;
  };

  NodeId push(Op op, Matrix value, std::vector<NodeId> inputs, std::vector<Param*> params) {
    if (consumed_) fail(ErrorKind::Usage, "tape already replayed; clear() before recording");
    const NodeId id = nodes_.size();
    nodes_.push_back(Node{op, id, std::move(value), std::move(inputs), std::move(params), {}, {}, {}});
    return id;
  }

  static void ensure_grad(Param& p) {
    if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows(), p.value.cols());
  }

  static void accumulate(std::vector<Matrix>& grads, NodeId id, const Matrix& g) {
    if (grads[id].size() == 0) {
      grads[id] = g;
    } else {
      as_eigen(grads[id]) += as_eigen(g);
    }
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step = 0;
};

inline AdamState make_adam_state(std::span<Param* const> params, AdamConfig config = {}) {
  AdamState state{config, {}, {}, 0};
  for (const Param* p : params) {
    state.first_moment.emplace_back(p->value.rows(), p->value.cols());
    state.second_moment.emplace_back(p->value.rows(), p->value.cols());
  }
  return state;
}

// One bias-corrected Adam update using each param's grad buffer. Gradients
// are checked before anything is modified.
inline void adam_step(std::span<Param* const> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    fail(ErrorKind::Shape, "adam: parameter count differs from optimizer state");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Param& p = *params[k];
    if (!p.grad.same_shape(p.value) || !state.first_moment[k].same_shape(p.value)) {
      fail(ErrorKind::Shape, "adam: shape mismatch for parameter " + std::to_string(k));
    }
    if (!p.grad.all_finite()) {
      fail(ErrorKind::Numeric, "adam: non-finite gradient in parameter " + std::to_string(k) +
                                   " at step " + std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k]->value.values();
    auto grad = params[k]->grad.values();
    auto m = state.first_moment[k].values();
    auto v = state.second_moment[k].values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      value[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace geoprior
