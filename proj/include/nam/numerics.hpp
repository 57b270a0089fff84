// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensor substrate with a per-step reverse-mode tape.
//
// Every learned component is expressed as a sequence of tape operations over
// row-major matrices. Parameters live in a ParamStore as named Tensors; a
// Tape borrows them for one forward/backward pass and accumulates gradients
// back into Tensor::grad().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nam::numerics {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, bool requires_grad = false);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false);
  static Tensor from_matrix(const Mat& m, bool requires_grad = false);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  // Rank-1 tensors are viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Eigen::Map<Mat> matrix();
  Eigen::Map<const Mat> matrix() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  std::span<double> grad();
  std::span<const double> grad() const;
  Eigen::Map<Mat> grad_matrix();
  void zero_grad();

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the node's output gradient and output value; pushes
  // contributions to parents through Tape::grad().
  using BackwardFn = std::function<void(Tape&, const Mat& grad, const Mat& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  // Leaf bound to a parameter; gradients flow into p.grad() iff p.requires_grad().
  Var param(Tensor& p);
  Var record(Mat value, std::initializer_list<Var> parents, BackwardFn fn, const char* op);
  Var record(Mat value, const std::vector<Var>& parents, BackwardFn fn, const char* op);

  const Mat& value(Var v) const { return nodes_[v.id_].value; }
  bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }
  // Gradient accumulator for v, zero-initialised on first access.
  Mat& grad(Var v);
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs all recorded closures.
  void backward(Var root);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var a, Var row);  // broadcast a 1xn row over every row of a
Var tanh(Var a);
Var relu(Var a);
Var softmax_rows(Var x, const BoolMat* mask = nullptr);
Var log_softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index first, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index first, Eigen::Index count);
// Row i of the result is a.row(index[i]), or zeros when index[i] < 0.
Var gather_rows(Var a, const std::vector<std::ptrdiff_t>& index);
Var sum(Var a);
Var mean_rows(Var a);
// Row (i*B.rows + j) of the result is a.row(i) + b.row(j).
Var outer_sum(Var a, Var b);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

/// Plain (non-tape) row softmax used by both the op and by inference code.
Mat softmax_rows_value(const Mat& x, const BoolMat* mask = nullptr);
Mat log_softmax_rows_value(const Mat& x);
double log_sum_exp(double a, double b);

// ---- parameters -----------------------------------------------------------

class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.contains(name); }
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  void zero_grad();
  // Marks exactly the parameters whose name starts with one of `prefixes` trainable.
  void set_trainable_prefixes(const std::vector<std::string>& prefixes);
  std::vector<std::string> trainable_names() const;
  // Stable digest of names, shapes and values.
  std::uint64_t value_hash() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

/// Versioned binary checkpoint: a named parameter table plus a metadata string.
void save_checkpoint(const std::string& path, const ParamStore& store, const std::string& metadata);
ParamStore load_checkpoint(const std::string& path, std::string* metadata = nullptr);

// ---- optimisation ---------------------------------------------------------

enum class UpdateRule { kAdam, kAdafactorLite };

struct OptimizerConfig {
  UpdateRule rule = UpdateRule::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // <= 0 disables global-norm clipping
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Updates every trainable parameter of `store` from its gradient.
  /// Returns the global gradient norm measured before clipping.
  double step(ParamStore& store);

  std::int64_t step_count() const { return step_; }
  const OptimizerConfig& config() const { return config_; }
  OptimizerConfig& config() { return config_; }
  const std::vector<double>* second_moment(const std::string& name) const;
  /// Moments and step count as tensors named "<prefix>.{m,v}.<param>" and "<prefix>.step".
  void export_state(ParamStore& out, const std::string& prefix = "opt") const;
  void import_state(const ParamStore& in, const std::string& prefix = "opt");

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };
  OptimizerConfig config_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Max over trainable coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(ParamStore& store, const std::function<Var(Tape&)>& loss, double eps = 1e-5);

}  // namespace nam::numerics
