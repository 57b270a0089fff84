// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one flat key-value table covering every stage of the
// pipeline, with canonical serialization and stage fingerprints.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nam/corpus.hpp"
#include "nam/eval.hpp"
#include "nam/model.hpp"
#include "nam/training.hpp"

namespace nam::config {

struct RunConfig {
  std::uint64_t seed = 1;  // master seed; every stage seed derives from it
  corpus::BenchmarkConfig data;
  model::ModelConfig model;
  training::TrainConfig pretrain;
  training::BiasTrainConfig bias;
  eval::EvalOptions eval;
  std::string context = "paired";
  std::vector<double> lambda_grid{0.5, 1.0, 2.0, 4.0, 8.0};
  std::vector<std::size_t> context_grid{10, 20, 30, 40, 50};
  eval::PersonalizeConfig personalize;
  double personalize_lambda = 2.0;  // fixed trie weight for the fusion baseline

  RunConfig();
};

/// Sets one key from its text form. Throws std::invalid_argument for unknown
/// keys and malformed values.
void set(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get(const RunConfig& cfg, std::string_view key);
const std::vector<std::string>& keys();

/// Parses `key = value` lines. `#` starts a comment outside quotes; values may
/// be double-quoted, with \" and \\ escapes. Keys not present keep defaults.
/// `data.alphabet` must be present.
RunConfig parse(std::string_view text);
RunConfig load(const std::string& path);

/// Every key in a fixed order, one `key = value` line each.
std::string serialize(const RunConfig& cfg);

/// Propagates the master seed and shared dimensions into the stage configs
/// and validates. Idempotent.
void resolve(RunConfig& cfg);

enum class Stage { kData, kBase, kBias, kRun };

/// 16 hex digits over the keys that feed `stage`: data keys for kData, plus
/// model and pretraining keys for kBase, plus variant and bias-training keys
/// for kBias; kRun covers everything.
std::string fingerprint(const RunConfig& cfg, Stage stage = Stage::kRun);

std::uint64_t stage_seed(const RunConfig& cfg, std::uint64_t stage);

}  // namespace nam::config
