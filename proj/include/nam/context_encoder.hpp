// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional transformer over each biasing phrase. Phrases never attend
// to each other, so the encoding of one phrase does not depend on which
// other phrases share its context set.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nam/corpus.hpp"
#include "nam/layers.hpp"
#include "nam/numerics.hpp"

namespace nam::context {

using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;

enum class PositionalEncoding { kSinusoidal, kNone };

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 128;
  PositionalEncoding positions = PositionalEncoding::kSinusoidal;

  void validate() const;
};

/// Flat (B * (U+1)) x d layout; row i*(U+1)+u holds phrase i position u,
/// where position 0 is the prepended start-of-phrase token.
struct PhraseEmbeddings {
  Var values;
  std::size_t phrases = 0;
  std::size_t positions = 0;  // U + 1
  std::vector<std::uint8_t> mask;

  bool empty() const { return phrases == 0; }
  std::size_t row(std::size_t phrase, std::size_t position) const { return phrase * positions + position; }
  bool valid(std::size_t phrase, std::size_t position) const { return mask[row(phrase, position)] != 0; }
  std::size_t length(std::size_t phrase) const;  // unpadded positions incl. start
};

inline const std::string kDefaultPrefix = "bias.ctx";

void init_params(ParamStore& store, const EncoderConfig& cfg, std::mt19937_64& rng,
                 const std::string& prefix = kDefaultPrefix);

PhraseEmbeddings encode_phrases(Tape& tape, ParamStore& store, const EncoderConfig& cfg,
                                const corpus::ContextSet& ctx, const std::string& prefix = kDefaultPrefix);

}  // namespace nam::context
