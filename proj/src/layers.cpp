// SPDX-License-Identifier: Apache-2.0

#include "nam/layers.hpp"

#include <cmath>

namespace nam::layers {

using numerics::Tensor;

void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                bool bias) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor w({in, out});
  for (double& v : w.data()) v = u(rng);
  store.add(prefix + ".w", std::move(w));
  if (bias) store.add(prefix + ".b", Tensor({1, out}));
}

void add_zero_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out) {
  store.add(prefix + ".w", Tensor({in, out}));
  store.add(prefix + ".b", Tensor({1, out}));
}

Var linear(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  Var y = numerics::matmul(x, tape.param(store.get(prefix + ".w")));
  const std::string b = prefix + ".b";
  if (store.contains(b)) y = numerics::add_row(y, tape.param(store.get(b)));
  return y;
}

void add_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  Tensor gain({1, dim});
  for (double& v : gain.data()) v = 1.0;
  store.add(prefix + ".gain", std::move(gain));
  store.add(prefix + ".bias", Tensor({1, dim}));
}

Var layer_norm(Tape& tape, ParamStore& store, const std::string& prefix, Var x) {
  return numerics::layer_norm(x, tape.param(store.get(prefix + ".gain")),
                              tape.param(store.get(prefix + ".bias")));
}

void add_transformer_block(ParamStore& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw std::invalid_argument(prefix + ": dim " + std::to_string(cfg.dim) +
                                " is not divisible by head count " + std::to_string(cfg.heads));
  }
  add_layer_norm(store, prefix + ".ln1", cfg.dim);
  add_linear(store, prefix + ".q", cfg.dim, cfg.dim, rng, false);
  add_linear(store, prefix + ".k", cfg.dim, cfg.dim, rng, false);
  add_linear(store, prefix + ".v", cfg.dim, cfg.dim, rng, false);
  add_linear(store, prefix + ".o", cfg.dim, cfg.dim, rng);
  add_layer_norm(store, prefix + ".ln2", cfg.dim);
  add_linear(store, prefix + ".ff1", cfg.dim, cfg.ff_dim, rng);
  add_linear(store, prefix + ".ff2", cfg.ff_dim, cfg.dim, rng);
}

Var transformer_block(Tape& tape, ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                      Var x) {
  using namespace numerics;
  const auto dh = static_cast<Eigen::Index>(cfg.dim / cfg.heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var n1 = layer_norm(tape, store, prefix + ".ln1", x);
  Var q = linear(tape, store, prefix + ".q", n1);
  Var k = linear(tape, store, prefix + ".k", n1);
  Var v = linear(tape, store, prefix + ".v", n1);
  std::vector<Var> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    Var scores = scale(matmul_nt(slice_cols(q, c0, dh), slice_cols(k, c0, dh)), inv_sqrt);
    heads.push_back(matmul(softmax_rows(scores), slice_cols(v, c0, dh)));
  }
  Var attn = heads.size() == 1 ? heads.front() : concat_cols(heads);
  Var x1 = add(x, linear(tape, store, prefix + ".o", attn));

  Var n2 = layer_norm(tape, store, prefix + ".ln2", x1);
  Var ff = linear(tape, store, prefix + ".ff2", relu(linear(tape, store, prefix + ".ff1", n2)));
  return add(x1, ff);
}

Mat sinusoidal_positions(Eigen::Index rows, Eigen::Index dim) {
  Mat pe(rows, dim);
  for (Eigen::Index p = 0; p < rows; ++p) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * rate) : std::cos(static_cast<double>(p) * rate);
    }
  }
  return pe;
}

}  // namespace nam::layers
