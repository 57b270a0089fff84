// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch training loops for the staged pipeline: base pretraining, then
// biasing-module training with sampled phrases and distractors.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nam/corpus.hpp"
#include "nam/model.hpp"
#include "nam/numerics.hpp"

namespace nam::training {

using corpus::Phrase;
using corpus::Utterance;
using model::ModelConfig;
using numerics::Optimizer;
using numerics::ParamStore;

struct TrainConfig {
  int epochs = 10;
  int batch = 8;
  double learning_rate = 2e-3;
  double clip_norm = 5.0;
  int patience = 3;  // epochs without dev improvement before stopping; <= 0 disables
  std::uint64_t seed = 11;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean per-token negative log-likelihood
  double dev_loss = 0.0;
  double grad_norm = 0.0;   // mean pre-clip norm
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  bool early_stopped = false;
  std::string status;
};

/// Called after every epoch; returning false stops training.
using EpochHook = std::function<bool(const EpochLog&, const ParamStore&, const Optimizer&)>;

/// Trains the base transducer (all non-biasing parameters).
TrainResult pretrain(ParamStore& store, Optimizer& opt, const ModelConfig& cfg, const std::vector<Utterance>& train,
                     const std::vector<Utterance>& dev, const TrainConfig& tc, int start_epoch = 0,
                     const EpochHook& hook = {});

struct BiasTrainConfig {
  TrainConfig train;
  double sample_prob = 0.7;
  std::size_t distractors = 4;
  corpus::NgramRange ngrams;
  corpus::MarkerPlacement marker = corpus::kDefaultMarkerPlacement;
  std::size_t pool_size = 400;
  bool freeze_encoder = true;
  bool freeze_prediction = false;
};

/// Random word n-grams drawn from `utts`, used as training distractors.
std::vector<Phrase> ngram_pool(const corpus::Vocab& vocab, const std::vector<Utterance>& utts, std::size_t count,
                               corpus::NgramRange range, std::uint64_t seed);

struct BiasExample {
  corpus::ContextSet context;
  std::vector<corpus::TokenId> labels;  // marker-annotated transcript
  bool has_positive = false;
};

/// The sampled context and target for one utterance in one epoch.
BiasExample bias_example(const corpus::Vocab& vocab, const Utterance& utt, const std::vector<Phrase>& pool,
                         const BiasTrainConfig& bc, int epoch, std::size_t index);

TrainResult train_bias(ParamStore& store, Optimizer& opt, const ModelConfig& cfg, const corpus::Vocab& vocab,
                       const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                       const BiasTrainConfig& bc, int start_epoch = 0, const EpochHook& hook = {});

/// Parameter prefixes trained in each stage.
std::vector<std::string> pretrain_prefixes();
std::vector<std::string> bias_prefixes(bool freeze_encoder, bool freeze_prediction = false);

/// Deterministic sub-seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace nam::training
