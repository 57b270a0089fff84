// SPDX-License-Identifier: Apache-2.0
//
// Parameter-initialising builders and tape forward passes for the layers
// shared by the audio and context encoders.

#pragma once

#include <random>
#include <string>

#include "nam/numerics.hpp"

namespace nam::layers {

using numerics::Mat;
using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;
using Rng = std::mt19937_64;

/// Glorot-uniform weight "<prefix>.w" (in x out) and zero bias "<prefix>.b".
void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                bool bias = true);
void add_zero_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out);
Var linear(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

void add_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim);
Var layer_norm(Tape& tape, ParamStore& store, const std::string& prefix, Var x);

struct BlockConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
};

/// Pre-norm block: x + Attn(LN(x)), then + FF(LN(.)). Attention is unmasked,
/// i.e. every position sees every other position of the same sequence.
void add_transformer_block(ParamStore& store, const std::string& prefix, const BlockConfig& cfg, Rng& rng);
Var transformer_block(Tape& tape, ParamStore& store, const std::string& prefix, const BlockConfig& cfg,
                      Var x);

Mat sinusoidal_positions(Eigen::Index rows, Eigen::Index dim);

}  // namespace nam::layers
