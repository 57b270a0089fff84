// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: make-data, pretrain, train-bias, eval, sweep-context,
// sweep-lambda, personalize, ablate.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nam/config.hpp"
#include "nam/pipeline.hpp"

namespace {

using namespace nam;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> context;
  std::optional<std::string> lambda;
  std::string out;
  bool force = false;
  bool resume = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--variant", f.variant, "nam, nam-noshift, nam-single, clas or none");
  cmd->add_option("--context", f.context, "paired, empty or B=<n>");
  cmd->add_option("--lambda", f.lambda, "shallow-fusion weight, or 'none'");
  cmd->add_option("--out", f.out, std::string("output directory (default $") + pipeline::kOutEnv + " or ./runs)");
  cmd->add_flag("--force", f.force, "overwrite existing outputs");
  cmd->add_flag("--quiet", f.quiet, "no progress lines");
}

config::RunConfig resolve(const Flags& f) {
  config::RunConfig cfg = f.config_path.empty() ? config::RunConfig() : config::load(f.config_path);
  if (f.seed) config::set(cfg, "seed", std::to_string(*f.seed));
  if (f.variant) config::set(cfg, "variant", *f.variant);
  if (f.context) config::set(cfg, "eval.context", *f.context);
  if (f.lambda) config::set(cfg, "eval.lambda", *f.lambda);
  config::resolve(cfg);
  return cfg;
}

pipeline::Options options(const Flags& f) {
  pipeline::Options o;
  o.out = f.out.empty() ? pipeline::default_out_root() : f.out;
  o.force = f.force;
  o.resume = f.resume;
  o.log = f.quiet ? nullptr : &std::cerr;
  return o;
}

void print_table(const std::vector<eval::MetricsReport>& reports) {
  std::printf("%-12s %-8s %4s %8s %5s %8s %9s %8s %8s\n", "model", "policy", "B", "lambda", "round", "WER",
              "precision", "recall", "F1");
  for (const auto& r : reports) {
    const std::string l = r.lambda ? std::to_string(*r.lambda).substr(0, 6) : "-";
    std::printf("%-12s %-8s %4zu %8s %5d %8.2f %9.2f %8.2f %8.2f\n", r.model.c_str(), r.policy.c_str(),
                r.context_size, l.c_str(), r.round, r.wer_percent(), r.entities.precision(), r.entities.recall(),
                r.entities.f1());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural associative memory contextual biasing: desk-scale reproduction driver"};
  app.require_subcommand(1);
  Flags f;
  struct Verb {
    const char* name;
    const char* help;
  };
  const Verb verbs[] = {
      {"make-data", "generate the synthetic benchmark"},
      {"pretrain", "train the base transducer"},
      {"train-bias", "attach and train a biasing module"},
      {"eval", "evaluate one variant (and the baseline) under a context policy"},
      {"sweep-context", "vary the number of context phrases"},
      {"sweep-lambda", "vary the shallow-fusion weight"},
      {"personalize", "per-speaker joint-network fine-tuning rounds"},
      {"ablate", "evaluate every model variant"},
  };
  for (const auto& v : verbs) {
    auto* cmd = app.add_subcommand(v.name, v.help);
    add_common(cmd, f);
    if (std::string(v.name) == "pretrain") cmd->add_flag("--resume", f.resume, "continue from the last saved epoch");
  }
  auto* show = app.add_subcommand("show-config", "print the resolved configuration and its fingerprint");
  add_common(show, f);
  CLI11_PARSE(app, argc, argv);

  try {
    const std::string verb = app.get_subcommands().front()->get_name();
    const auto cfg = resolve(f);
    const auto o = options(f);
    if (verb == "show-config") {
      std::cout << config::serialize(cfg) << "# fingerprint " << config::fingerprint(cfg) << '\n';
      return 0;
    }
    if (verb == "make-data") {
      pipeline::make_data(cfg, o);
      return 0;
    }
    if (verb == "pretrain") {
      const auto r = pipeline::pretrain(cfg, o);
      return r.epochs.empty() && !f.resume ? 1 : 0;
    }
    if (verb == "train-bias") {
      pipeline::train_bias(cfg, o);
      return 0;
    }
    std::vector<eval::MetricsReport> reports;
    if (verb == "eval") reports = pipeline::run_eval(cfg, o);
    if (verb == "sweep-context") reports = pipeline::sweep_context(cfg, o);
    if (verb == "sweep-lambda") reports = pipeline::sweep_lambda(cfg, o);
    if (verb == "personalize") reports = pipeline::personalize(cfg, o);
    if (verb == "ablate") reports = pipeline::ablate(cfg, o);
    pipeline::write_reports(cfg, o, verb, reports);
    print_table(reports);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
