// SPDX-License-Identifier: Apache-2.0
//
// Staged reproduction pipeline behind the command-line tool. Every stage
// reads and writes under one output directory:
//
//   <out>/data/                 benchmark (manifest.json carries the data fingerprint)
//   <out>/base/model.ckpt       pretrained transducer, loss.csv, optimizer.ckpt
//   <out>/bias-<variant>/       biased checkpoint and loss.csv
//   <out>/reports/<cmd>.csv     one summary CSV (and a JSON twin) per command

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nam/config.hpp"
#include "nam/corpus.hpp"
#include "nam/eval.hpp"
#include "nam/numerics.hpp"
#include "nam/training.hpp"

namespace nam::pipeline {

using config::RunConfig;
using eval::MetricsReport;

/// Environment variable naming the default output root.
inline constexpr const char* kOutEnv = "NAM_OUT";
std::string default_out_root();

struct Options {
  std::string out;
  bool force = false;
  bool resume = false;
  int epoch_budget = 0;         // > 0: stop pretraining after this many epochs in this call
  std::ostream* log = nullptr;  // progress lines; null silences them
};

/// Generates and saves the benchmark. A nonempty data directory is rejected
/// unless `force`.
corpus::Benchmark make_data(const RunConfig& cfg, const Options& o);

/// Loads the benchmark and checks its fingerprint against `cfg`.
corpus::Benchmark load_data(const RunConfig& cfg, const Options& o);

/// Pretrains the base model. With `resume`, continues from the last finished epoch.
training::TrainResult pretrain(const RunConfig& cfg, const Options& o);

/// Attaches the configured variant to the base checkpoint and trains it.
training::TrainResult train_bias(const RunConfig& cfg, const Options& o);

std::string checkpoint_path(const std::string& out, memory::BiasVariant variant);

/// Loads the checkpoint for `cfg.model.variant`, rejecting a fingerprint mismatch.
numerics::ParamStore load_model(const RunConfig& cfg, const Options& o);

/// Evaluates the configured variant under `cfg.context` and `cfg.eval.lambda`.
/// For a biased variant the baseline is evaluated under the same policy too.
std::vector<MetricsReport> run_eval(const RunConfig& cfg, const Options& o);

/// Fusion weight from `cfg.lambda_grid` with the lowest dev WER for the baseline.
double tune_lambda(const RunConfig& cfg, const Options& o, std::vector<MetricsReport>* trials = nullptr);

/// The configured variant and the tuned-lambda fusion baseline at every B in `cfg.context_grid`.
std::vector<MetricsReport> sweep_context(const RunConfig& cfg, const Options& o);

/// The baseline with fusion at every lambda in `cfg.lambda_grid`.
std::vector<MetricsReport> sweep_lambda(const RunConfig& cfg, const Options& o);

/// Joint-network personalization of the configured variant and of the baseline
/// with fixed-weight fusion, pooled over speakers, one row per round and model.
std::vector<MetricsReport> personalize(const RunConfig& cfg, const Options& o);

/// NAM, NAM without the left shift, NAM-single, the CLAS encoder and the baseline.
std::vector<MetricsReport> ablate(const RunConfig& cfg, const Options& o);

/// Writes <out>/reports/<name>.csv and .json.
void write_reports(const RunConfig& cfg, const Options& o, const std::string& name,
                   const std::vector<MetricsReport>& reports);

}  // namespace nam::pipeline
