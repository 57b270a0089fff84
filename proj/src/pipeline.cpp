// SPDX-License-Identifier: Apache-2.0

#include "nam/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nam/model.hpp"

namespace nam::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using memory::BiasVariant;
using numerics::ParamStore;

namespace {

fs::path root(const Options& o) { return o.out.empty() ? fs::path(default_out_root()) : fs::path(o.out); }

void say(const Options& o, const std::string& line) {
  if (o.log != nullptr) *o.log << line << std::endl;
}

std::string metadata(const RunConfig& cfg, const std::string& stage, config::Stage fp_stage, int epochs_done,
                     bool complete) {
  json m = {{"stage", stage},
            {"variant", std::string(memory::to_string(cfg.model.variant))},
            {"fingerprint", config::fingerprint(cfg, fp_stage)},
            {"epochs_done", epochs_done},
            {"complete", complete},
            {"config", config::serialize(cfg)}};
  return m.dump();
}

json read_metadata(const std::string& path, ParamStore* store) {
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint '" + path + "'");
  std::string meta;
  ParamStore s = numerics::load_checkpoint(path, &meta);
  if (store != nullptr) *store = std::move(s);
  return json::parse(meta);
}

void require_fingerprint(const json& meta, const std::string& want, const std::string& path) {
  const std::string got = meta.value("fingerprint", "");
  if (got != want) {
    throw std::runtime_error("checkpoint '" + path + "' was trained under config " + got +
                             ", the current config is " + want);
  }
}

RunConfig with_variant(RunConfig cfg, BiasVariant v) {
  cfg.model.variant = v;
  return cfg;
}

std::vector<corpus::Utterance> test_split(const corpus::Benchmark& bench) {
  std::vector<corpus::Utterance> out;
  for (const auto& s : bench.speakers) out.insert(out.end(), s.test.begin(), s.test.end());
  return out;
}

std::vector<corpus::Utterance> dev_split(const corpus::Benchmark& bench) {
  std::vector<corpus::Utterance> out;
  for (const auto& s : bench.speakers) out.insert(out.end(), s.dev.begin(), s.dev.end());
  return out;
}

MetricsReport evaluate_one(ParamStore& store, const RunConfig& cfg, const corpus::Benchmark& bench,
                           const std::vector<corpus::Utterance>& utts, const eval::ContextPolicy& policy,
                           std::optional<double> lambda, const std::string& name) {
  eval::EvalOptions opts = cfg.eval;
  opts.lambda = lambda;
  auto r = eval::evaluate(store, cfg.model, bench.vocab, utts, eval::entity_pool(bench), policy, opts, name);
  r.fingerprint = config::fingerprint(cfg);
  return r;
}

std::string model_name(BiasVariant v) { return std::string(memory::to_string(v)); }

void check_not_none(const RunConfig& cfg, const char* what) {
  if (cfg.model.variant == BiasVariant::kNone) {
    throw std::invalid_argument(std::string(what) + ": variant 'none' has no biasing module");
  }
}

void write_loss_header(const fs::path& p) {
  std::ofstream os(p, std::ios::trunc);
  os << "epoch,train_loss,dev_loss,grad_norm\n";
}

void append_loss(const fs::path& p, const training::EpochLog& log) {
  std::ofstream os(p, std::ios::app);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", log.epoch, log.train_loss, log.dev_loss, log.grad_norm);
  os << buf;
}

// Keeps the header and the rows for epochs before `epochs`.
void truncate_loss(const fs::path& p, int epochs) {
  std::ifstream is(p);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (keep.empty() || std::stoi(line.substr(0, line.find(','))) < epochs) keep.push_back(line);
  }
  is.close();
  std::ofstream os(p, std::ios::trunc);
  for (const auto& l : keep) os << l << '\n';
}

numerics::OptimizerConfig adam(const training::TrainConfig& tc) {
  numerics::OptimizerConfig oc;
  oc.rule = numerics::UpdateRule::kAdam;
  oc.learning_rate = tc.learning_rate;
  oc.clip_norm = tc.clip_norm;
  return oc;
}

void require_empty_or_force(const fs::path& dir, bool force, const std::string& what) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw std::runtime_error(what + ": '" + dir.string() + "' is not empty (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

}  // namespace

std::string default_out_root() {
  const char* env = std::getenv(kOutEnv);
  return env != nullptr && *env != '\0' ? env : "runs";
}

corpus::Benchmark make_data(const RunConfig& cfg, const Options& o) {
  const fs::path dir = root(o) / "data";
  require_empty_or_force(dir, o.force, "make-data");
  auto bench = corpus::make_benchmark(cfg.data);
  corpus::save_benchmark(bench, dir.string(), config::fingerprint(cfg, config::Stage::kData));
  std::ofstream(dir / "config.txt") << config::serialize(cfg);
  say(o, "make-data: " + std::to_string(bench.pretrain.size()) + " pretraining, " +
             std::to_string(bench.bias_train.size()) + " bias-training utterances, " +
             std::to_string(bench.speakers.size()) + " speakers -> " + dir.string());
  return bench;
}

corpus::Benchmark load_data(const RunConfig& cfg, const Options& o) {
  const fs::path dir = root(o) / "data";
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw std::runtime_error("no benchmark under '" + dir.string() + "' (run make-data first)");
  const json manifest = json::parse(ms);
  const std::string want = config::fingerprint(cfg, config::Stage::kData);
  if (manifest.value("fingerprint", "") != want) {
    throw std::runtime_error("benchmark '" + dir.string() + "' was generated under config " +
                             manifest.value("fingerprint", "") + ", the current config is " + want);
  }
  return corpus::load_benchmark(dir.string(), cfg.data);
}

training::TrainResult pretrain(const RunConfig& cfg, const Options& o) {
  const auto bench = load_data(cfg, o);
  const fs::path dir = root(o) / "base";
  const fs::path ckpt = dir / "model.ckpt";
  const fs::path opt_ckpt = dir / "optimizer.ckpt";
  const fs::path loss = dir / "loss.csv";
  const std::string fp = config::fingerprint(cfg, config::Stage::kBase);

  ParamStore store;
  numerics::Optimizer opt(adam(cfg.pretrain));
  int start = 0;
  if (o.resume && fs::exists(ckpt)) {
    const json meta = read_metadata(ckpt.string(), &store);
    require_fingerprint(meta, fp, ckpt.string());
    start = meta.value("epochs_done", 0);
    opt.import_state(numerics::load_checkpoint(opt_ckpt.string()));
    truncate_loss(loss, start);
    say(o, "pretrain: resuming after epoch " + std::to_string(start));
  } else {
    require_empty_or_force(dir, o.force, "pretrain");
    model::init_base(store, cfg.model, config::stage_seed(cfg, 6));
    write_loss_header(loss);
  }
  const auto hook = [&](const training::EpochLog& log, const ParamStore& s, const numerics::Optimizer& op) {
    append_loss(loss, log);
    ParamStore state;
    op.export_state(state);
    numerics::save_checkpoint(opt_ckpt.string(), state, "");
    numerics::save_checkpoint(ckpt.string(), s, metadata(cfg, "base", config::Stage::kBase, log.epoch + 1, false));
    char buf[160];
    std::snprintf(buf, sizeof buf, "pretrain: epoch %d train %.4f dev %.4f", log.epoch, log.train_loss, log.dev_loss);
    say(o, buf);
    return o.epoch_budget <= 0 || log.epoch + 1 - start < o.epoch_budget;
  };
  auto result = training::pretrain(store, opt, cfg.model, bench.pretrain, bench.pretrain_dev, cfg.pretrain, start, hook);
  const int done = result.epochs.empty() ? start : result.epochs.back().epoch + 1;
  const bool complete = result.early_stopped || done >= cfg.pretrain.epochs;
  numerics::save_checkpoint(ckpt.string(), store, metadata(cfg, "base", config::Stage::kBase, done, complete));
  std::ofstream(dir / "status.txt") << result.status << '\n';
  say(o, "pretrain: " + result.status);
  return result;
}

std::string checkpoint_path(const std::string& out, BiasVariant variant) {
  const fs::path r = out.empty() ? fs::path(default_out_root()) : fs::path(out);
  if (variant == BiasVariant::kNone) return (r / "base" / "model.ckpt").string();
  return (r / ("bias-" + model_name(variant)) / "model.ckpt").string();
}

training::TrainResult train_bias(const RunConfig& cfg, const Options& o) {
  check_not_none(cfg, "train-bias");
  const auto bench = load_data(cfg, o);
  const std::string base = checkpoint_path(o.out, BiasVariant::kNone);
  ParamStore store;
  const json meta = read_metadata(base, &store);
  require_fingerprint(meta, config::fingerprint(cfg, config::Stage::kBase), base);
  if (!meta.value("complete", false)) throw std::runtime_error("train-bias: base checkpoint is unfinished");

  const fs::path ckpt = checkpoint_path(o.out, cfg.model.variant);
  const fs::path dir = ckpt.parent_path();
  require_empty_or_force(dir, o.force, "train-bias");
  model::attach_bias(store, cfg.model, config::stage_seed(cfg, 7));
  const fs::path loss = dir / "loss.csv";
  write_loss_header(loss);
  numerics::Optimizer opt(adam(cfg.bias.train));
  const auto hook = [&](const training::EpochLog& log, const ParamStore&, const numerics::Optimizer&) {
    append_loss(loss, log);
    char buf[160];
    std::snprintf(buf, sizeof buf, "train-bias %s: epoch %d train %.4f dev %.4f", model_name(cfg.model.variant).c_str(),
                  log.epoch, log.train_loss, log.dev_loss);
    say(o, buf);
    return true;
  };
  auto result = training::train_bias(store, opt, cfg.model, bench.vocab, bench.bias_train, bench.pretrain_dev, cfg.bias,
                                     0, hook);
  const int done = result.epochs.empty() ? 0 : result.epochs.back().epoch + 1;
  numerics::save_checkpoint(ckpt.string(), store, metadata(cfg, "bias", config::Stage::kBias, done, true));
  std::ofstream(dir / "status.txt") << result.status << '\n';
  say(o, "train-bias: " + result.status);
  return result;
}

ParamStore load_model(const RunConfig& cfg, const Options& o) {
  const std::string path = checkpoint_path(o.out, cfg.model.variant);
  ParamStore store;
  const json meta = read_metadata(path, &store);
  const auto stage = cfg.model.variant == BiasVariant::kNone ? config::Stage::kBase : config::Stage::kBias;
  require_fingerprint(meta, config::fingerprint(cfg, stage), path);
  if (!meta.value("complete", false)) throw std::runtime_error("checkpoint '" + path + "' is unfinished");
  return store;
}

std::vector<MetricsReport> run_eval(const RunConfig& cfg, const Options& o) {
  const auto bench = load_data(cfg, o);
  const auto test = test_split(bench);
  const auto policy = eval::ContextPolicy::parse(cfg.context);
  std::vector<MetricsReport> out;
  ParamStore store = load_model(cfg, o);
  out.push_back(evaluate_one(store, cfg, bench, test, policy, cfg.eval.lambda, model_name(cfg.model.variant)));
  if (cfg.model.variant != BiasVariant::kNone) {
    const auto none = with_variant(cfg, BiasVariant::kNone);
    ParamStore base = load_model(none, o);
    out.push_back(evaluate_one(base, none, bench, test, policy, cfg.eval.lambda, model_name(BiasVariant::kNone)));
  }
  for (const auto& r : out) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "eval: %-12s %-8s WER %6.2f  F1 %6.2f", r.model.c_str(), r.policy.c_str(),
                  r.wer_percent(), r.entities.f1());
    say(o, buf);
  }
  return out;
}

double tune_lambda(const RunConfig& cfg, const Options& o, std::vector<MetricsReport>* trials) {
  if (cfg.lambda_grid.empty()) throw std::invalid_argument("tune_lambda: empty lambda grid");
  const auto none = with_variant(cfg, BiasVariant::kNone);
  const auto bench = load_data(none, o);
  const auto dev = dev_split(bench);
  ParamStore store = load_model(none, o);
  const eval::ContextPolicy policy;
  double best = cfg.lambda_grid.front();
  double best_wer = std::numeric_limits<double>::infinity();
  for (double l : cfg.lambda_grid) {
    auto r = evaluate_one(store, none, bench, dev, policy, l, "fst-dev");
    if (r.wer_percent() < best_wer) {
      best_wer = r.wer_percent();
      best = l;
    }
    if (trials != nullptr) trials->push_back(std::move(r));
  }
  return best;
}

std::vector<MetricsReport> sweep_context(const RunConfig& cfg, const Options& o) {
  check_not_none(cfg, "sweep-context");
  const double lambda = tune_lambda(cfg, o);
  say(o, "sweep-context: tuned lambda " + std::to_string(lambda));
  const auto bench = load_data(cfg, o);
  const auto test = test_split(bench);
  const auto none = with_variant(cfg, BiasVariant::kNone);
  ParamStore biased = load_model(cfg, o);
  ParamStore base = load_model(none, o);
  std::vector<MetricsReport> out;
  for (std::size_t b : cfg.context_grid) {
    eval::ContextPolicy policy;
    policy.kind = eval::PolicyKind::kFixed;
    policy.size = b;
    out.push_back(evaluate_one(biased, cfg, bench, test, policy, cfg.eval.lambda, model_name(cfg.model.variant)));
    out.push_back(evaluate_one(base, none, bench, test, policy, lambda, "fst"));
    say(o, "sweep-context: B=" + std::to_string(b) + " done");
  }
  return out;
}

std::vector<MetricsReport> sweep_lambda(const RunConfig& cfg, const Options& o) {
  const auto none = with_variant(cfg, BiasVariant::kNone);
  const auto bench = load_data(none, o);
  const auto test = test_split(bench);
  const auto policy = eval::ContextPolicy::parse(cfg.context);
  ParamStore store = load_model(none, o);
  std::vector<MetricsReport> out;
  for (double l : cfg.lambda_grid) {
    out.push_back(evaluate_one(store, none, bench, test, policy, l, "fst"));
    char buf[160];
    std::snprintf(buf, sizeof buf, "sweep-lambda: lambda %.3f WER %.2f precision %.2f", l, out.back().wer_percent(),
                  out.back().entities.precision());
    say(o, buf);
  }
  return out;
}

std::vector<MetricsReport> personalize(const RunConfig& cfg, const Options& o) {
  check_not_none(cfg, "personalize");
  const auto bench = load_data(cfg, o);
  const auto pool = eval::entity_pool(bench);
  const auto none = with_variant(cfg, BiasVariant::kNone);
  const ParamStore biased = load_model(cfg, o);
  const ParamStore base = load_model(none, o);

  // Pooled over speakers: index 0..rounds.
  std::vector<MetricsReport> model_rows;
  std::vector<MetricsReport> fst_rows;
  auto pool_into = [](std::vector<MetricsReport>& rows, std::size_t i, const MetricsReport& r) {
    if (rows.size() <= i) {
      rows.resize(i + 1);
      rows[i] = r;
      rows[i].records.clear();
      rows[i].totals = {};
      rows[i].entities = {};
    }
    rows[i].totals += r.totals;
    rows[i].entities += r.entities;
    rows[i].records.insert(rows[i].records.end(), r.records.begin(), r.records.end());
  };
  bool diverged = false;
  for (const auto& speaker : bench.speakers) {
    ParamStore s = biased;
    const auto log =
        eval::personalize(s, cfg.model, bench.vocab, speaker, pool, cfg.personalize, cfg.eval, model_name(cfg.model.variant));
    ParamStore b = base;
    const auto flog = eval::personalize(b, none.model, bench.vocab, speaker, pool, cfg.personalize, cfg.eval, model_name(BiasVariant::kNone),
                                        cfg.personalize_lambda);
    diverged = diverged || log.diverged || flog.diverged;
    for (std::size_t i = 0; i < log.rounds.size(); ++i) pool_into(model_rows, i, log.rounds[i].report);
    for (std::size_t i = 0; i < flog.rounds.size(); ++i) pool_into(fst_rows, i, *flog.rounds[i].fst_report);
    say(o, "personalize: speaker " + std::to_string(speaker.id) + " done");
  }
  if (diverged) say(o, "personalize: warning: dev loss diverged for at least one speaker");
  std::vector<MetricsReport> out;
  for (auto* rows : {&model_rows, &fst_rows}) {
    for (auto& r : *rows) {
      r.fingerprint = config::fingerprint(cfg);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<MetricsReport> ablate(const RunConfig& cfg, const Options& o) {
  const auto bench = load_data(cfg, o);
  const auto test = test_split(bench);
  const auto policy = eval::ContextPolicy::parse(cfg.context);
  std::vector<MetricsReport> out;
  for (BiasVariant v : {BiasVariant::kNam, BiasVariant::kNamNoLeftShift, BiasVariant::kNamSingle,
                        BiasVariant::kClasEncoder, BiasVariant::kNone}) {
    const auto c = with_variant(cfg, v);
    ParamStore store = load_model(c, o);
    out.push_back(evaluate_one(store, c, bench, test, policy, std::nullopt, model_name(v)));
    char buf[160];
    std::snprintf(buf, sizeof buf, "ablate: %-12s WER %6.2f F1 %6.2f", model_name(v).c_str(), out.back().wer_percent(),
                  out.back().entities.f1());
    say(o, buf);
  }
  return out;
}

void write_reports(const RunConfig& cfg, const Options& o, const std::string& name,
                   const std::vector<MetricsReport>& reports) {
  const fs::path dir = root(o) / "reports";
  fs::create_directories(dir);
  std::ofstream csv(dir / (name + ".csv"), std::ios::trunc);
  csv << eval::csv_header() << '\n';
  for (const auto& r : reports) csv << eval::csv_row(r) << '\n';
  std::ofstream js(dir / (name + ".json"), std::ios::trunc);
  eval::write_json(js, reports, config::serialize(cfg));
  if (!csv || !js) throw std::runtime_error("cannot write reports under '" + dir.string() + "'");
}

}  // namespace nam::pipeline
