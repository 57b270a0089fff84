// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale RNN-T: self-attention audio encoder, single-cell recurrent
// prediction network, additive joint network and the exact transducer loss.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nam/corpus.hpp"
#include "nam/numerics.hpp"

namespace nam::asr {

using corpus::TokenId;
using numerics::Mat;
using numerics::ParamStore;
using numerics::RowVec;
using numerics::Tape;
using numerics::Var;

struct AsrConfig {
  std::size_t vocab_size = 0;
  std::size_t frame_dim = 16;
  std::size_t enc_dim = 64;
  std::size_t enc_layers = 2;
  std::size_t enc_heads = 4;
  std::size_t enc_ff = 128;
  std::size_t splice = 1;     // neighbouring frames concatenated on each side
  std::size_t subsample = 1;  // consecutive frames stacked per encoder step
  std::size_t pred_dim = 64;
  std::size_t joint_dim = 64;

  void validate() const;
};

inline const std::string kEncoderPrefix = "enc";
inline const std::string kPredictorPrefix = "pred";
inline const std::string kJointPrefix = "joint";

void init_params(ParamStore& store, const AsrConfig& cfg, std::mt19937_64& rng);

/// frames: T0 x frame_dim -> T x enc_dim with T = ceil(T0 / subsample).
Var encode_audio(Tape& tape, ParamStore& store, const AsrConfig& cfg, const Mat& frames);

/// Prediction-network outputs g_0..g_L for the label prefix (L+1) x pred_dim.
Var predict(Tape& tape, ParamStore& store, const AsrConfig& cfg, std::span<const TokenId> labels);

/// Log-normalised lattice, row t*(L+1)+u holds log P(. | t, u).
Var joint(Tape& tape, ParamStore& store, const AsrConfig& cfg, Var h, Var g);

struct TransducerLoss {
  double nll = 0.0;
  bool feasible = true;  // false when no alignment has nonzero probability
};

/// Forward-backward over the T x (L+1) lattice. When `grad` is given it
/// receives d(nll)/d(lattice).
TransducerLoss rnnt_loss_value(const Mat& lattice, Eigen::Index frames, std::span<const TokenId> labels,
                               Mat* grad = nullptr);

/// Tape version; throws NumericError when the loss is infeasible.
Var rnnt_loss(Var lattice, Eigen::Index frames, std::span<const TokenId> labels);

/// Plain-matrix copy of the predictor and joint used by the decoders.
struct InferenceModel {
  InferenceModel(const ParamStore& store, const AsrConfig& cfg);

  Mat token_input;  // V x p: emb * W_x + b for every token
  Mat pred_recurrent;
  Mat joint_enc;
  Mat joint_pred;
  RowVec joint_bias;
  Mat joint_out;
  RowVec joint_out_bias;
};

/// Scores transducer steps for one utterance given its (possibly biased) features.
class ModelScorer {
 public:
  struct State {
    RowVec g;
    RowVec g_proj;
  };

  ModelScorer(const InferenceModel& model, const Mat& features);

  Eigen::Index frames() const { return enc_proj_.rows(); }
  State initial() const;
  Eigen::VectorXd log_probs(Eigen::Index t, const State& s) const;
  State advance(const State& s, TokenId token) const;

 private:
  State from_hidden(RowVec g) const;
  const InferenceModel* model_;
  Mat enc_proj_;
};

}  // namespace nam::asr
