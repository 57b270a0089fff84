// SPDX-License-Identifier: Apache-2.0
//
// Scoring (WER, entity precision/recall/F1), context-policy evaluation and
// per-speaker personalization rounds.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nam/corpus.hpp"
#include "nam/decoding.hpp"
#include "nam/model.hpp"
#include "nam/numerics.hpp"

namespace nam::eval {

using corpus::Phrase;
using corpus::Utterance;
using model::ModelConfig;
using numerics::ParamStore;

/// Splits on runs of spaces after removing bias markers.
std::vector<std::string> words(std::string_view text);

struct WerResult {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_words = 0;
  bool empty_reference = false;  // the denominator was clamped to 1

  std::size_t errors() const { return substitutions + deletions + insertions; }
  double percent() const;
  WerResult& operator+=(const WerResult& o);
};

WerResult wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);

enum class MatchRule {
  kSubstring,  // verbatim substring of the marker-free text
  kWholeWord,  // the phrase's words appear as consecutive whole words
};

MatchRule parse_match_rule(std::string_view text);  // "substring" or "word"
std::string_view to_string(MatchRule rule);

bool contains_phrase(std::string_view text, std::string_view phrase, MatchRule rule = MatchRule::kSubstring);

struct EntityCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const;  // percent
  double recall() const;
  double f1() const;
  EntityCounts& operator+=(const EntityCounts& o);
};

struct EntityCase {
  std::string entity;      // the utterance's true entity
  std::string reference;   // marker-free reference text
  std::string hypothesis;  // marker-free hypothesis text
  std::vector<std::string> context;
};

EntityCounts entity_metrics(const EntityCase& c, MatchRule rule = MatchRule::kSubstring);
EntityCounts entity_metrics(const std::vector<EntityCase>& cases, MatchRule rule = MatchRule::kSubstring);

enum class PolicyKind { kPaired, kEmpty, kFixed };

struct ContextPolicy {
  PolicyKind kind = PolicyKind::kPaired;
  std::size_t distractors = 4;  // paired: positive + this many distractors
  std::size_t size = 0;         // fixed: total phrases including the positive

  static ContextPolicy parse(std::string_view text);  // "paired", "empty" or "B=<n>"
  std::string name() const;
  std::size_t phrases() const;
};

/// Deterministic context for utterance `index` under `policy`.
corpus::ContextSet policy_context(const ContextPolicy& policy, const Phrase& positive,
                                  const std::vector<Phrase>& pool, std::uint64_t seed, std::size_t index);

struct UtteranceRecord {
  std::string id;
  std::string reference;
  std::string hypothesis;  // raw decoder output, markers kept
  std::string entity;
  std::vector<std::string> context;
  double model_score = 0.0;
  double fusion_score = 0.0;
  WerResult wer;
  EntityCounts entities;
};

struct MetricsReport {
  std::string model;
  std::string policy;
  std::size_t context_size = 0;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  int round = -1;  // personalization round, -1 elsewhere
  WerResult totals;
  EntityCounts entities;
  std::vector<UtteranceRecord> records;
  std::string fingerprint;

  double wer_percent() const { return totals.percent(); }
};

struct EvalOptions {
  decoding::DecodeOptions decode;
  std::optional<double> lambda;  // shallow fusion with a boost trie over the context
  MatchRule match = MatchRule::kSubstring;
  std::uint64_t seed = 5;
};

MetricsReport evaluate(ParamStore& store, const ModelConfig& cfg, const corpus::Vocab& vocab,
                       const std::vector<Utterance>& utts, const std::vector<Phrase>& pool,
                       const ContextPolicy& policy, const EvalOptions& opts, const std::string& model_name);

/// Entity phrases of a benchmark in a stable order.
std::vector<Phrase> entity_pool(const corpus::Benchmark& bench);

struct PersonalizeConfig {
  int rounds = 5;
  int epochs = 2;
  int batch = 10;
  double learning_rate = 0.005;
  double clip_norm = 0.1;
  double divergence_factor = 10.0;
  std::vector<std::string> trainable{"joint."};
  std::uint64_t seed = 21;
};

struct RoundLog {
  int round = 0;
  MetricsReport report;
  std::optional<MetricsReport> fst_report;
  double dev_loss = 0.0;
  std::vector<std::string> updated;  // parameters whose values changed this round
};

struct PersonalizationRunLog {
  std::vector<RoundLog> rounds;
  numerics::OptimizerConfig optimizer;
  bool diverged = false;
};

/// Updates `store` in place on one speaker's data. When `fst_lambda` is set the
/// test split is also decoded with trie fusion after every round.
PersonalizationRunLog personalize(ParamStore& store, const ModelConfig& cfg, const corpus::Vocab& vocab,
                                  const corpus::SpeakerData& speaker, const std::vector<Phrase>& pool,
                                  const PersonalizeConfig& pc, const EvalOptions& opts,
                                  const std::string& model_name, std::optional<double> fst_lambda = std::nullopt);

// ---- report output --------------------------------------------------------

/// Column header of the summary CSV.
std::string csv_header();
std::string csv_row(const MetricsReport& r);
void write_json(std::ostream& os, const std::vector<MetricsReport>& reports, const std::string& config_text);

}  // namespace nam::eval
