// SPDX-License-Identifier: Apache-2.0

#include "nam/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace nam::numerics {

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) +
                     " vs " + shape_string(b.rows(), b.cols()));
  }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, bool requires_grad)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {
  set_requires_grad(requires_grad);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape product " + std::to_string(product(shape_)));
  }
  set_requires_grad(requires_grad);
}

Tensor Tensor::from_matrix(const Mat& m, bool requires_grad) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data), requires_grad);
}

std::size_t Tensor::rows() const {
  if (shape_.size() < 2) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  const std::size_t r = rows();
  return r == 0 ? 0 : data_.size() / r;
}

Eigen::Map<Mat> Tensor::matrix() {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

Eigen::Map<const Mat> Tensor::matrix() const {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), 0.0);
  } else {
    grad_.clear();
  }
}

std::span<double> Tensor::grad() {
  if (!requires_grad_) throw std::logic_error("tensor does not require grad");
  return grad_;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad_) throw std::logic_error("tensor does not require grad");
  return grad_;
}

Eigen::Map<Mat> Tensor::grad_matrix() {
  auto g = grad();
  return {g.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

// ---- Tape -----------------------------------------------------------------

const Mat& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Mat value) {
  if (!value.allFinite()) throw NumericError("constant: non-finite value");
  nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& p) {
  Mat value = p.matrix();
  if (!value.allFinite()) throw NumericError("param: non-finite value");
  Node node{std::move(value), Mat(), p.requires_grad(), nullptr};
  if (p.requires_grad()) {
    Tensor* target = &p;
    node.backward = [target](Tape&, const Mat& g, const Mat&) { target->grad_matrix() += g; };
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Mat value, std::initializer_list<Var> parents, BackwardFn fn, const char* op) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id_].needs_grad;
  if (!value.allFinite()) throw NumericError(std::string(op) + ": non-finite value");
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Mat value, const std::vector<Var>& parents, BackwardFn fn, const char* op) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id_].needs_grad;
  if (!value.allFinite()) throw NumericError(std::string(op) + ": non-finite value");
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Mat& Tape::grad(Var v) {
  Node& n = nodes_[v.id_];
  if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw std::logic_error("backward: variable from another tape");
  const Mat& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_string(rv.rows(), rv.cols()));
  }
  if (!nodes_[root.id_].needs_grad) return;
  grad(root)(0, 0) += 1.0;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
    if (!n.grad.allFinite()) throw NumericError("backward: non-finite gradient");
    n.backward(*this, n.grad, n.value);
  }
}

// ---- operations -----------------------------------------------------------

Mat softmax_rows_value(const Mat& x, const BoolMat* mask) {
  if (mask != nullptr && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw ShapeError("softmax_rows: mask " + shape_string(mask->rows(), mask->cols()) +
                     " vs logits " + shape_string(x.rows(), x.cols()));
  }
  Mat y = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask == nullptr || (*mask)(r, c)) mx = std::max(mx, x(r, c));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw std::invalid_argument("softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask == nullptr || (*mask)(r, c)) {
        const double e = std::exp(x(r, c) - mx);
        y(r, c) = e;
        z += e;
      }
    }
    y.row(r) /= z;
  }
  return y;
}

Mat log_softmax_rows_value(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return y;
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(-std::abs(a - b)));
}

Var matmul(Var a, Var b) {
  const Mat& va = a.value();
  const Mat& vb = b.value();
  if (va.cols() != vb.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_string(va.rows(), va.cols()) + " x " +
                     shape_string(vb.rows(), vb.cols()));
  }
  Mat out = va * vb;
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Mat& g, const Mat&) {
        if (t.needs_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
        if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
      },
      "matmul");
}

Var matmul_nt(Var a, Var b) {
  const Mat& va = a.value();
  const Mat& vb = b.value();
  if (va.cols() != vb.cols()) {
    throw ShapeError("matmul_nt: inner extents differ " + shape_string(va.rows(), va.cols()) +
                     " x " + shape_string(vb.rows(), vb.cols()) + "^T");
  }
  Mat out = va * vb.transpose();
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Mat& g, const Mat&) {
        if (t.needs_grad(a)) t.grad(a).noalias() += g * t.value(b);
        if (t.needs_grad(b)) t.grad(b).noalias() += g.transpose() * t.value(a);
      },
      "matmul_nt");
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Mat out = a.value() + b.value();
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Mat& g, const Mat&) {
        if (t.needs_grad(a)) t.grad(a) += g;
        if (t.needs_grad(b)) t.grad(b) += g;
      },
      "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Mat out = a.value() - b.value();
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Mat& g, const Mat&) {
        if (t.needs_grad(a)) t.grad(a) += g;
        if (t.needs_grad(b)) t.grad(b) -= g;
      },
      "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Mat out = a.value().cwiseProduct(b.value());
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Mat& g, const Mat&) {
        if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(t.value(b));
        if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(t.value(a));
      },
      "mul");
}

Var scale(Var a, double s) {
  Mat out = a.value() * s;
  return a.tape()->record(
      std::move(out), {a}, [a, s](Tape& t, const Mat& g, const Mat&) { t.grad(a) += g * s; },
      "scale");
}

Var add_row(Var a, Var row) {
  const Mat& va = a.value();
  const Mat& vr = row.value();
  if (vr.rows() != 1 || vr.cols() != va.cols()) {
    throw ShapeError("add_row: row " + shape_string(vr.rows(), vr.cols()) + " vs matrix " +
                     shape_string(va.rows(), va.cols()));
  }
  Mat out = va.rowwise() + vr.row(0);
  return a.tape()->record(
      std::move(out), {a, row},
      [a, row](Tape& t, const Mat& g, const Mat&) {
        if (t.needs_grad(a)) t.grad(a) += g;
        if (t.needs_grad(row)) t.grad(row) += g.colwise().sum();
      },
      "add_row");
}

Var tanh(Var a) {
  Mat out = a.value().array().tanh().matrix();
  return a.tape()->record(
      std::move(out), {a},
      [a](Tape& t, const Mat& g, const Mat& y) {
        t.grad(a).array() += g.array() * (1.0 - y.array().square());
      },
      "tanh");
}

Var relu(Var a) {
  Mat out = a.value().cwiseMax(0.0);
  return a.tape()->record(
      std::move(out), {a},
      [a](Tape& t, const Mat& g, const Mat& y) {
        t.grad(a).array() += (y.array() > 0.0).select(g.array(), 0.0);
      },
      "relu");
}

Var softmax_rows(Var x, const BoolMat* mask) {
  Mat y = softmax_rows_value(x.value(), mask);
  return x.tape()->record(
      std::move(y), {x},
      [x](Tape& t, const Mat& g, const Mat& y) {
        const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        t.grad(x).array() += y.array() * (g.colwise() - dot).array();
      },
      "softmax_rows");
}

Var log_softmax_rows(Var x) {
  Mat y = log_softmax_rows_value(x.value());
  return x.tape()->record(
      std::move(y), {x},
      [x](Tape& t, const Mat& g, const Mat& y) {
        const Eigen::VectorXd gsum = g.rowwise().sum();
        Mat p = y.array().exp().matrix();
        t.grad(x) += g - (p.array().colwise() * gsum.array()).matrix();
      },
      "log_softmax_rows");
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Mat& vx = x.value();
  const Eigen::Index n = vx.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: gain/bias must be [1x" + std::to_string(n) + "]");
  }
  Mat xhat(vx.rows(), n);
  Eigen::VectorXd inv_std(vx.rows());
  for (Eigen::Index r = 0; r < vx.rows(); ++r) {
    const double mean = vx.row(r).mean();
    const double var = (vx.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (vx.row(r).array() - mean) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return x.tape()->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n](
          Tape& t, const Mat& g, const Mat&) {
        if (t.needs_grad(gain)) t.grad(gain) += g.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(bias)) t.grad(bias) += g.colwise().sum();
        if (t.needs_grad(x)) {
          const Mat gx = (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
          Mat& dx = t.grad(x);
          for (Eigen::Index r = 0; r < gx.rows(); ++r) {
            const double m1 = gx.row(r).mean();
            const double m2 = gx.row(r).dot(xhat.row(r)) / static_cast<double>(n);
            dx.row(r).array() +=
                inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
        }
      },
      "layer_norm");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(p.rows(), p.cols()) +
                       " vs " + std::to_string(cols) + " columns");
    }
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape()->record(
      std::move(out), parts,
      [parts](Tape& t, const Mat& g, const Mat&) {
        Eigen::Index pos = 0;
        for (const Var& p : parts) {
          if (t.needs_grad(p)) t.grad(p) += g.middleRows(pos, p.rows());
          pos += p.rows();
        }
      },
      "concat_rows");
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(p.rows(), p.cols()) + " vs " +
                       std::to_string(rows) + " rows");
    }
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape()->record(
      std::move(out), parts,
      [parts](Tape& t, const Mat& g, const Mat&) {
        Eigen::Index pos = 0;
        for (const Var& p : parts) {
          if (t.needs_grad(p)) t.grad(p) += g.middleCols(pos, p.cols());
          pos += p.cols();
        }
      },
      "concat_cols");
}

Var slice_rows(Var a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(first) + ", +" + std::to_string(count) +
                     ") out of " + shape_string(a.rows(), a.cols()));
  }
  Mat out = a.value().middleRows(first, count);
  return a.tape()->record(
      std::move(out), {a},
      [a, first, count](Tape& t, const Mat& g, const Mat&) {
        t.grad(a).middleRows(first, count) += g;
      },
      "slice_rows");
}

Var slice_cols(Var a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(first) + ", +" + std::to_string(count) +
                     ") out of " + shape_string(a.rows(), a.cols()));
  }
  Mat out = a.value().middleCols(first, count);
  return a.tape()->record(
      std::move(out), {a},
      [a, first, count](Tape& t, const Mat& g, const Mat&) {
        t.grad(a).middleCols(first, count) += g;
      },
      "slice_cols");
}

Var gather_rows(Var a, const std::vector<std::ptrdiff_t>& index) {
  const Mat& va = a.value();
  Mat out = Mat::Zero(static_cast<Eigen::Index>(index.size()), va.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= va.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of " +
                       shape_string(va.rows(), va.cols()));
    }
    if (index[i] >= 0) out.row(static_cast<Eigen::Index>(i)) = va.row(index[i]);
  }
  return a.tape()->record(
      std::move(out), {a},
      [a, index](Tape& t, const Mat& g, const Mat&) {
        Mat& ga = t.grad(a);
        for (std::size_t i = 0; i < index.size(); ++i) {
          if (index[i] >= 0) ga.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
        }
      },
      "gather_rows");
}

Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(
      std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) { t.grad(a).array() += g(0, 0); },
      "sum");
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw ShapeError("mean_rows: empty input");
  const double n = static_cast<double>(a.rows());
  Mat out = a.value().colwise().mean();
  return a.tape()->record(
      std::move(out), {a},
      [a, n](Tape& t, const Mat& g, const Mat&) { t.grad(a).rowwise() += g.row(0) / n; },
      "mean_rows");
}

Var outer_sum(Var a, Var b) {
  const Mat& va = a.value();
  const Mat& vb = b.value();
  if (va.cols() != vb.cols()) {
    throw ShapeError("outer_sum: column mismatch " + shape_string(va.rows(), va.cols()) + " vs " +
                     shape_string(vb.rows(), vb.cols()));
  }
  const Eigen::Index na = va.rows();
  const Eigen::Index nb = vb.rows();
  Mat out(na * nb, va.cols());
  for (Eigen::Index i = 0; i < na; ++i) {
    out.middleRows(i * nb, nb) = vb.rowwise() + va.row(i);
  }
  return a.tape()->record(
      std::move(out), {a, b},
      [a, b, na, nb](Tape& t, const Mat& g, const Mat&) {
        const bool ga = t.needs_grad(a);
        const bool gb = t.needs_grad(b);
        for (Eigen::Index i = 0; i < na; ++i) {
          const auto block = g.middleRows(i * nb, nb);
          if (ga) t.grad(a).row(i) += block.colwise().sum();
          if (gb) t.grad(b) += block;
        }
      },
      "outer_sum");
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: " + shape_string(a.rows(), a.cols()) + " to " +
                     shape_string(rows, cols));
  }
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const Eigen::Index r0 = a.rows();
  const Eigen::Index c0 = a.cols();
  return a.tape()->record(
      std::move(out), {a},
      [a, r0, c0](Tape& t, const Mat& g, const Mat&) {
        t.grad(a) += Eigen::Map<const Mat>(g.data(), r0, c0);
      },
      "reshape");
}

// ---- ParamStore -----------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.insert_or_assign(name, std::move(t));
  (void)inserted;
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) {
    if (t.requires_grad()) t.zero_grad();
  }
}

void ParamStore::set_trainable_prefixes(const std::vector<std::string>& prefixes) {
  for (auto& [name, t] : params_) {
    const bool on = std::any_of(prefixes.begin(), prefixes.end(),
                                [&](const std::string& p) { return name.starts_with(p); });
    t.set_requires_grad(on);
  }
}

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params_) {
    if (t.requires_grad()) out.push_back(name);
  }
  return out;
}

std::uint64_t ParamStore::value_hash() const {
  // FNV-1a over names, shapes and raw value bits.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params_) {
    mix(name.data(), name.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t v = d;
      mix(&v, sizeof v);
    }
    mix(t.data().data(), t.size() * sizeof(double));
  }
  return h;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'N', 'A', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  if (n > (1ULL << 30)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store, const std::string& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_pod(os, kCheckpointVersion);
  write_string(os, metadata);
  write_pod<std::uint64_t>(os, store.size());
  for (const auto& [name, t] : store) {
    write_string(os, name);
    write_pod<std::uint64_t>(os, t.shape().size());
    for (std::size_t d : t.shape()) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

ParamStore load_checkpoint(const std::string& path, std::string* metadata) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[sizeof kCheckpointMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  std::string meta = read_string(is);
  if (metadata != nullptr) *metadata = std::move(meta);
  ParamStore store;
  const auto count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const auto rank = read_pod<std::uint64_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = read_pod<std::uint64_t>(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated data for '" + name + "'");
    store.add(name, std::move(t));
  }
  return store;
}

// ---- Optimizer ------------------------------------------------------------

double Optimizer::step(ParamStore& store) {
  double sq = 0.0;
  for (auto& [name, t] : store) {
    if (!t.requires_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("optimizer: non-finite gradient in '" + name + "'");
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  const double clip_scale =
      (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++step_;
  const double t = static_cast<double>(step_);
  const double lr = config_.learning_rate;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);

  for (auto& [name, p] : store) {
    if (!p.requires_grad()) continue;
    Moments& m = moments_[name];
    if (m.second.size() != p.size()) {
      m.second.assign(p.size(), 0.0);
      m.first.assign(config_.rule == UpdateRule::kAdam ? p.size() : 0, 0.0);
    }
    auto values = p.data();
    auto grads = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[i] * clip_scale;
      m.second[i] = b2 * m.second[i] + (1.0 - b2) * g * g;
      const double v_hat = m.second[i] / bc2;
      if (config_.rule == UpdateRule::kAdam) {
        m.first[i] = b1 * m.first[i] + (1.0 - b1) * g;
        const double m_hat = m.first[i] / bc1;
        values[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      } else {
        // No first moment: the raw (clipped) gradient is normalised by the
        // running RMS.
        values[i] -= lr * g / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }
  return norm;
}

const std::vector<double>* Optimizer::second_moment(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.second;
}

void Optimizer::export_state(ParamStore& out, const std::string& prefix) const {
  out.add(prefix + ".step", Tensor(std::vector<std::size_t>{1}, std::vector<double>{static_cast<double>(step_)}));
  for (const auto& [name, m] : moments_) {
    if (!m.first.empty()) out.add(prefix + ".m." + name, Tensor({m.first.size()}, m.first));
    out.add(prefix + ".v." + name, Tensor({m.second.size()}, m.second));
  }
}

void Optimizer::import_state(const ParamStore& in, const std::string& prefix) {
  moments_.clear();
  step_ = static_cast<std::int64_t>(in.get(prefix + ".step").data()[0]);
  const std::string mp = prefix + ".m.";
  const std::string vp = prefix + ".v.";
  for (const auto& [name, t] : in) {
    if (name.starts_with(vp)) {
      const auto d = t.data();
      moments_[name.substr(vp.size())].second.assign(d.begin(), d.end());
    } else if (name.starts_with(mp)) {
      const auto d = t.data();
      moments_[name.substr(mp.size())].first.assign(d.begin(), d.end());
    }
  }
}

// ---- gradient check -------------------------------------------------------

double grad_check(ParamStore& store, const std::function<Var(Tape&)>& loss, double eps) {
  store.zero_grad();
  {
    Tape tape;
    Var out = loss(tape);
    tape.backward(out);
  }
  auto evaluate = [&]() {
    Tape tape;
    return loss(tape).value()(0, 0);
  };
  double worst = 0.0;
  for (auto& [name, t] : store) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
  }
  return worst;
}

}  // namespace nam::numerics
