// SPDX-License-Identifier: Apache-2.0
//
// Associative key-value memory over phrase embeddings, queried by audio
// features through multi-head attention.
//
// For every phrase the memory stores one slot per token: the key is the
// embedding of the preceding position and the value is the embedding of the
// token itself, so following keys to values walks the phrase left to right.
// All phrases share one flat table, padded to B*U slots, and a final learned
// slot absorbs attention when no phrase is relevant. The retrieved context is
// projected and added to the audio features as a shift.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nam/context_encoder.hpp"
#include "nam/numerics.hpp"

namespace nam::memory {

using numerics::BoolMat;
using numerics::Mat;
using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;

enum class BiasVariant { kNam, kNamNoLeftShift, kNamSingle, kClasEncoder, kNone };

std::string_view to_string(BiasVariant v);
BiasVariant parse_variant(std::string_view name);

struct MhaConfig {
  std::size_t heads = 4;
  std::size_t head_dim = 32;
  std::size_t input_dim = 64;   // audio feature dim e
  std::size_t memory_dim = 64;  // phrase embedding dim d
  std::size_t clas_dim = 64;    // additive-attention width for the CLAS variant
  double temperature = 1.0;     // logits are divided by sqrt(head_dim) * temperature

  std::size_t hidden() const { return heads * head_dim; }
};

struct SlotOrigin {
  std::ptrdiff_t phrase = -1;  // -1 for padding and the no-bias slot
  std::ptrdiff_t key_position = -1;
  std::ptrdiff_t value_position = -1;
};

struct AssociativeMemory {
  Var keys;    // N x d
  Var values;  // N x d
  std::vector<std::uint8_t> mask;  // N, last entry is the always-on no-bias slot
  std::vector<SlotOrigin> origin;

  std::size_t slots() const { return mask.size(); }
  std::size_t real_slots() const;
};

inline const std::string kPrefix = "bias";

void init_params(ParamStore& store, const MhaConfig& cfg, BiasVariant variant, std::mt19937_64& rng,
                 const std::string& prefix = kPrefix);

AssociativeMemory build_memory(Tape& tape, ParamStore& store, const context::PhraseEmbeddings& emb,
                               BiasVariant variant, const std::string& prefix = kPrefix);

struct Retrieval {
  Var context;               // T x hidden (MHA) or T x d (CLAS)
  std::vector<Mat> weights;  // per head, T x N attention weights
};

Retrieval retrieve(Tape& tape, ParamStore& store, const MhaConfig& cfg, Var h, const AssociativeMemory& mem,
                   const std::string& prefix = kPrefix);

/// Single-head additive attention over per-phrase vectors (the CLAS-style baseline).
Retrieval retrieve_clas(Tape& tape, ParamStore& store, const MhaConfig& cfg, Var h,
                        const AssociativeMemory& mem, const std::string& prefix = kPrefix);

/// h + P(context); P starts at zero so an untrained module is an exact identity.
Var bias_features(Tape& tape, ParamStore& store, const MhaConfig& cfg, Var h, const AssociativeMemory& mem,
                  BiasVariant variant, const std::string& prefix = kPrefix);

}  // namespace nam::memory
