// SPDX-License-Identifier: Apache-2.0
//
// Base transducer plus an optional biasing module placed after the final
// encoder block.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nam/asr_core.hpp"
#include "nam/context_encoder.hpp"
#include "nam/corpus.hpp"
#include "nam/decoding.hpp"
#include "nam/nam_memory.hpp"
#include "nam/numerics.hpp"

namespace nam::model {

using corpus::TokenId;
using memory::BiasVariant;
using numerics::Mat;
using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;

struct ModelConfig {
  asr::AsrConfig asr;
  context::EncoderConfig context;
  memory::MhaConfig mha;
  BiasVariant variant = BiasVariant::kNone;

  /// Fills derived dimensions (vocab size, memory/input dims) and validates.
  void finalize(std::size_t vocab_size);
  /// Stable text of every field that shapes the parameter table.
  std::string describe() const;
};

void init_base(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);
void attach_bias(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);
bool has_bias_params(const ParamStore& store);

/// Biased encoder features; `h` is the unbiased encoder output.
Var biased_features(Tape& tape, ParamStore& store, const ModelConfig& cfg, Var h, const corpus::ContextSet& ctx);

/// Full-sequence transducer loss of `labels` given audio and context.
Var utterance_loss(Tape& tape, ParamStore& store, const ModelConfig& cfg, Var features,
                   std::span<const TokenId> labels);

/// Reserved ids the decoder must never emit for this variant.
std::vector<TokenId> suppressed_tokens(BiasVariant variant);

/// Encoder output followed by the biasing module, as a plain matrix.
Mat inference_features(ParamStore& store, const ModelConfig& cfg, const Mat& frames, const corpus::ContextSet& ctx);

}  // namespace nam::model
