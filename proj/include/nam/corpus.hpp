// SPDX-License-Identifier: Apache-2.0
//
// Token inventory, synthetic acoustics and the entity benchmark.
//
// Text is tokenized per character. Acoustics are synthesized from per-token
// prototype frame sequences; letters listed as confusable pairs share one
// prototype, so the recognizer can only tell them apart from context. Entity
// names use the less frequent member of each pair far more often than the
// training text does, which is what makes them hard without biasing.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nam/numerics.hpp"

namespace nam::corpus {

using TokenId = std::int32_t;
using Rng = std::mt19937_64;
using numerics::Mat;

class TokenizeError : public std::invalid_argument {
 public:
  TokenizeError(const std::string& what, std::size_t position)
      : std::invalid_argument(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class Vocab {
 public:
  static constexpr TokenId kBlank = 0;
  static constexpr TokenId kPad = 1;
  static constexpr TokenId kStart = 2;
  static constexpr TokenId kBiasMarker = 3;
  static constexpr TokenId kFirstSymbol = 4;
  static constexpr std::string_view kMarkerText = "</bias>";

  /// `alphabet` lists every raw-text character once and must contain ' '.
  explicit Vocab(std::string alphabet);

  std::size_t size() const { return kFirstSymbol + alphabet_.size(); }
  const std::string& alphabet() const { return alphabet_; }
  TokenId space() const { return space_; }
  TokenId id(char c) const;
  char symbol(TokenId id) const;
  bool is_reserved(TokenId id) const { return id < kFirstSymbol; }

  std::vector<TokenId> tokenize(std::string_view text) const;
  /// Markers render as "</bias>"; other reserved ids are rejected.
  std::string detokenize(std::span<const TokenId> ids) const;

 private:
  std::string alphabet_;
  std::vector<TokenId> lookup_;  // indexed by unsigned char; -1 when absent
  TokenId space_ = -1;
};

std::vector<TokenId> strip_markers(std::span<const TokenId> ids);

// ---- acoustics ------------------------------------------------------------

struct AcousticConfig {
  std::size_t frame_dim = 16;
  int min_frames = 2;
  int max_frames = 4;
  // Space-separated two-letter groups sharing one prototype.
  std::string confusable_pairs = "bp dt gk mn fv sz lr cj";
  // Scale of the per-letter offset that separates pair members (0 = identical).
  double pair_distinction = 0.0;
  std::uint64_t seed = 7;
};

/// Fixed per-token prototype frame sequences, drawn once from a seeded generator.
class PrototypeTable {
 public:
  PrototypeTable(const Vocab& vocab, const AcousticConfig& config);

  const Mat& prototype(TokenId id) const;
  std::size_t frame_dim() const { return frame_dim_; }
  /// Second member of each confusable pair, by token id.
  const std::vector<std::pair<TokenId, TokenId>>& pairs() const { return pairs_; }

 private:
  std::size_t frame_dim_;
  std::vector<Mat> prototypes_;
  std::vector<std::pair<TokenId, TokenId>> pairs_;
};

/// Concatenated prototypes plus i.i.d. N(0, sigma^2) noise; deterministic in `seed`.
Mat synth_frames(const PrototypeTable& table, std::span<const TokenId> ids, double noise_sigma,
                 std::uint64_t seed);

// ---- phrases and context sets ---------------------------------------------

enum class PhraseRole { kPositive, kDistractor };

struct Phrase {
  std::vector<TokenId> ids;
  std::string text;
  PhraseRole role = PhraseRole::kDistractor;
};

class ContextSet {
 public:
  ContextSet() = default;
  explicit ContextSet(std::vector<Phrase> phrases);

  std::size_t size() const { return phrases_.size(); }
  bool empty() const { return phrases_.empty(); }
  std::size_t max_length() const { return max_length_; }
  const std::vector<Phrase>& phrases() const { return phrases_; }
  TokenId id(std::size_t phrase, std::size_t position) const;
  bool valid(std::size_t phrase, std::size_t position) const;
  std::size_t positives() const;

 private:
  std::vector<Phrase> phrases_;
  std::size_t max_length_ = 0;
  std::vector<TokenId> ids_;      // B x U, kPad where masked
  std::vector<std::uint8_t> mask_;  // B x U
};

Phrase make_phrase(const Vocab& vocab, std::string_view text, PhraseRole role);

/// Distractors are drawn without replacement from `pool`, skipping entries
/// textually equal to the positive; the result is shuffled.
ContextSet build_context_set(const std::optional<Phrase>& positive, std::span<const Phrase> pool,
                             std::size_t distractors, Rng& rng);

// ---- bias sampling --------------------------------------------------------

struct NgramRange {
  int min_words = 1;
  int max_words = 3;
};

struct BiasSample {
  std::optional<std::vector<TokenId>> phrase;
  std::vector<TokenId> annotated;
};

enum class MarkerPlacement { kAfter, kBefore };
inline constexpr MarkerPlacement kDefaultMarkerPlacement = MarkerPlacement::kAfter;

/// Inserts the bias marker next to every word-aligned occurrence of `phrase`.
std::vector<TokenId> annotate(std::span<const TokenId> transcript, std::span<const TokenId> phrase,
                              TokenId space, MarkerPlacement placement = kDefaultMarkerPlacement);

BiasSample sample_bias(std::span<const TokenId> transcript, TokenId space, double p,
                       NgramRange range, Rng& rng, MarkerPlacement placement = kDefaultMarkerPlacement);

// ---- benchmark ------------------------------------------------------------

struct Utterance {
  std::string id;
  std::string text;
  std::vector<TokenId> reference;
  Mat frames;
  std::string entity;  // empty when the utterance carries no entity
  int speaker = -1;
};

struct SpeakerData {
  int id = 0;
  std::vector<Phrase> entities;
  std::vector<Utterance> train;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
};

struct TextConfig {
  int common_words = 40;
  int common_min_letters = 2;
  int common_max_letters = 5;
  int name_min_letters = 3;
  int name_max_letters = 6;
  int min_sentence_words = 2;
  int max_sentence_words = 4;
  double rare_word_prob = 0.35;
  double train_secondary_prob = 0.3;
  double entity_secondary_prob = 0.5;
  int entity_min_words = 1;
  int entity_max_words = 2;
};

struct BenchmarkConfig {
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz ";
  AcousticConfig acoustic;
  TextConfig text;
  int speakers = 10;
  int entities_per_speaker = 5;
  int train_per_speaker = 50;
  int dev_per_speaker = 10;
  int test_per_speaker = 10;
  int pretrain_utterances = 2000;
  int pretrain_dev_utterances = 200;
  // Fresh sentences from the pretraining distribution, never seen by the base model.
  int bias_train_utterances = 2000;
  double bias_rare_word_prob = 0.8;
  double bias_secondary_prob = 0.5;
  double noise_sigma = 0.3;
  double holdout_fraction = 1.0;
  std::uint64_t seed = 1;
};

struct Benchmark {
  BenchmarkConfig config;
  Vocab vocab;
  PrototypeTable prototypes;
  std::vector<Utterance> pretrain;
  std::vector<Utterance> pretrain_dev;
  std::vector<SpeakerData> speakers;
  std::vector<Utterance> bias_train;

  std::vector<Phrase> all_entities() const;
};

Benchmark make_benchmark(const BenchmarkConfig& config);

/// Writes one directory per split/speaker with JSON-lines records and raw frame files.
void save_benchmark(const Benchmark& bench, const std::string& dir, const std::string& fingerprint);
Benchmark load_benchmark(const std::string& dir, const BenchmarkConfig& config);

/// Frame file: two little-endian uint64 {T, f} followed by T*f float64 values.
void write_frames(const std::string& path, const Mat& frames);
Mat read_frames(const std::string& path);

}  // namespace nam::corpus
