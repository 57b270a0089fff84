// SPDX-License-Identifier: Apache-2.0

#include "nam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <nlohmann/json.hpp>
#include <ostream>
#include <stdexcept>

#include "nam/asr_core.hpp"
#include "nam/fst_biaser.hpp"
#include "nam/training.hpp"

namespace nam::eval {

using corpus::TokenId;
using numerics::Mat;
using numerics::Tape;
using numerics::Var;

std::vector<std::string> words(std::string_view text) {
  std::string clean(text);
  const std::string marker(corpus::Vocab::kMarkerText);
  for (std::size_t pos = clean.find(marker); pos != std::string::npos; pos = clean.find(marker, pos)) {
    clean.replace(pos, marker.size(), " ");
  }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < clean.size()) {
    while (i < clean.size() && clean[i] == ' ') ++i;
    std::size_t j = i;
    while (j < clean.size() && clean[j] != ' ') ++j;
    if (j > i) out.emplace_back(clean.substr(i, j - i));
    i = j;
  }
  return out;
}

double WerResult::percent() const {
  const double denom = reference_words == 0 ? 1.0 : static_cast<double>(reference_words);
  return 100.0 * static_cast<double>(errors()) / denom;
}

WerResult& WerResult::operator+=(const WerResult& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  reference_words += o.reference_words;
  empty_reference = reference_words == 0 && (empty_reference || o.empty_reference);
  return *this;
}

WerResult wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis) {
  const std::size_t n = reference.size();
  const std::size_t m = hypothesis.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  WerResult r;
  r.reference_words = n;
  r.empty_reference = n == 0 && m > 0;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = reference[i - 1] == hypothesis[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++r.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  return r;
}

MatchRule parse_match_rule(std::string_view text) {
  if (text == "substring") return MatchRule::kSubstring;
  if (text == "word") return MatchRule::kWholeWord;
  throw std::invalid_argument("entity match rule '" + std::string(text) + "' (expected substring or word)");
}

std::string_view to_string(MatchRule rule) { return rule == MatchRule::kSubstring ? "substring" : "word"; }

namespace {
std::string join_words(const std::vector<std::string>& ws) {
  std::string out;
  for (const auto& w : ws) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}
}  // namespace

bool contains_phrase(std::string_view text, std::string_view phrase, MatchRule rule) {
  const auto tw = words(text);
  const auto pw = words(phrase);
  if (pw.empty() || pw.size() > tw.size()) return false;
  if (rule == MatchRule::kSubstring) return join_words(tw).find(join_words(pw)) != std::string::npos;
  for (std::size_t s = 0; s + pw.size() <= tw.size(); ++s) {
    if (std::equal(pw.begin(), pw.end(), tw.begin() + static_cast<std::ptrdiff_t>(s))) return true;
  }
  return false;
}

double EntityCounts::precision() const {
  return tp + fp == 0 ? 0.0 : 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double EntityCounts::recall() const {
  return tp + fn == 0 ? 0.0 : 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double EntityCounts::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

EntityCounts& EntityCounts::operator+=(const EntityCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

EntityCounts entity_metrics(const EntityCase& c, MatchRule rule) {
  EntityCounts out;
  if (contains_phrase(c.hypothesis, c.entity, rule)) {
    ++out.tp;
  } else {
    ++out.fn;
  }
  for (const auto& phrase : c.context) {
    if (contains_phrase(c.hypothesis, phrase, rule) && !contains_phrase(c.reference, phrase, rule)) ++out.fp;
  }
  return out;
}

EntityCounts entity_metrics(const std::vector<EntityCase>& cases, MatchRule rule) {
  EntityCounts out;
  for (const auto& c : cases) out += entity_metrics(c, rule);
  return out;
}

ContextPolicy ContextPolicy::parse(std::string_view text) {
  ContextPolicy p;
  if (text == "paired") return p;
  if (text == "empty") {
    p.kind = PolicyKind::kEmpty;
    return p;
  }
  if (text.starts_with("B=")) {
    const std::string num(text.substr(2));
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == num.size() && v >= 1) {
      p.kind = PolicyKind::kFixed;
      p.size = static_cast<std::size_t>(v);
      return p;
    }
  }
  throw std::invalid_argument("context policy '" + std::string(text) + "' (expected paired, empty or B=<n>)");
}

std::string ContextPolicy::name() const {
  switch (kind) {
    case PolicyKind::kPaired: return "paired";
    case PolicyKind::kEmpty: return "empty";
    case PolicyKind::kFixed: return "B=" + std::to_string(size);
  }
  return "paired";
}

std::size_t ContextPolicy::phrases() const {
  switch (kind) {
    case PolicyKind::kPaired: return distractors + 1;
    case PolicyKind::kEmpty: return 0;
    case PolicyKind::kFixed: return size;
  }
  return 0;
}

corpus::ContextSet policy_context(const ContextPolicy& policy, const Phrase& positive,
                                  const std::vector<Phrase>& pool, std::uint64_t seed, std::size_t index) {
  if (policy.kind == PolicyKind::kEmpty) return corpus::ContextSet{};
  corpus::Rng rng(training::mix_seed(seed, 404, index));
  Phrase pos = positive;
  pos.role = corpus::PhraseRole::kPositive;
  const std::size_t k = policy.kind == PolicyKind::kPaired ? policy.distractors : policy.size - 1;
  return corpus::build_context_set(pos, pool, k, rng);
}

std::vector<Phrase> entity_pool(const corpus::Benchmark& bench) { return bench.all_entities(); }

namespace {

Phrase positive_of(const corpus::Vocab& vocab, const Utterance& u) {
  if (u.entity.empty()) throw std::invalid_argument("evaluate: utterance " + u.id + " has no entity");
  return corpus::make_phrase(vocab, u.entity, corpus::PhraseRole::kPositive);
}

std::vector<std::string> context_texts(const corpus::ContextSet& ctx) {
  std::vector<std::string> out;
  for (const auto& p : ctx.phrases()) out.push_back(p.text);
  return out;
}

UtteranceRecord score_utterance(const Utterance& u, const corpus::ContextSet& ctx, std::string hypothesis,
                                double model_score, double fusion_score, MatchRule rule) {
  UtteranceRecord rec;
  rec.id = u.id;
  rec.reference = u.text;
  rec.hypothesis = std::move(hypothesis);
  rec.entity = u.entity;
  rec.context = context_texts(ctx);
  rec.model_score = model_score;
  rec.fusion_score = fusion_score;
  rec.wer = wer(words(rec.reference), words(rec.hypothesis));
  rec.entities = entity_metrics(EntityCase{rec.entity, rec.reference, rec.hypothesis, rec.context}, rule);
  return rec;
}

}  // namespace

MetricsReport evaluate(ParamStore& store, const ModelConfig& cfg, const corpus::Vocab& vocab,
                       const std::vector<Utterance>& utts, const std::vector<Phrase>& pool,
                       const ContextPolicy& policy, const EvalOptions& opts, const std::string& model_name) {
  MetricsReport report;
  report.model = model_name;
  report.policy = policy.name();
  report.context_size = policy.phrases();
  report.lambda = opts.lambda;
  report.seed = opts.seed;
  const asr::InferenceModel inference(store, cfg.asr);
  decoding::DecodeOptions dopts = opts.decode;
  dopts.suppressed = model::suppressed_tokens(cfg.variant);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const Utterance& u = utts[i];
    const corpus::ContextSet ctx = policy_context(policy, positive_of(vocab, u), pool, opts.seed, i);
    const Mat features = model::inference_features(store, cfg, u.frames, ctx);
    const asr::ModelScorer scorer(inference, features);
    std::optional<fst::BiasTrie> trie;
    if (opts.lambda) {
      trie.emplace(ctx, *opts.lambda);
      dopts.fusion = &*trie;
    } else {
      dopts.fusion = nullptr;
    }
    const auto hyps = decoding::beam_decode(scorer, dopts);
    const decoding::Hypothesis& best = hyps.front();
    UtteranceRecord rec =
        score_utterance(u, ctx, vocab.detokenize(best.tokens), best.model_score, best.fusion_score, opts.match);
    report.totals += rec.wer;
    report.entities += rec.entities;
    report.records.push_back(std::move(rec));
  }
  return report;
}

// ---- personalization ------------------------------------------------------

namespace {

struct PersonalExample {
  corpus::ContextSet context;
  std::vector<TokenId> labels;
  Mat features;  // biased encoder output, fixed while the encoder and module are frozen
  Mat pred;      // prediction-network outputs, fixed while the predictor is frozen
};

bool any_trainable_with(const ParamStore& store, const std::string& prefix) {
  for (const auto& [name, t] : store) {
    if (t.requires_grad() && name.starts_with(prefix)) return true;
  }
  return false;
}

std::vector<PersonalExample> prepare(ParamStore& store, const ModelConfig& cfg, const corpus::Vocab& vocab,
                                     const std::vector<Utterance>& utts, const std::vector<Phrase>& pool,
                                     std::uint64_t seed) {
  const ContextPolicy policy;  // positive + 4 distractors
  std::vector<PersonalExample> out;
  out.reserve(utts.size());
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const Utterance& u = utts[i];
    PersonalExample ex;
    const Phrase positive = positive_of(vocab, u);
    if (cfg.variant != model::BiasVariant::kNone) {
      ex.context = policy_context(policy, positive, pool, seed, i);
      ex.labels = corpus::annotate(u.reference, positive.ids, vocab.space());
    } else {
      ex.labels = u.reference;
    }
    ex.features = model::inference_features(store, cfg, u.frames, ex.context);
    Tape tape;
    ex.pred = asr::predict(tape, store, cfg.asr, ex.labels).value();
    out.push_back(std::move(ex));
  }
  return out;
}

Var example_loss(Tape& tape, ParamStore& store, const ModelConfig& cfg, const Utterance& u,
                 const PersonalExample& ex, bool live_features, bool live_pred) {
  Var f = live_features
              ? model::biased_features(tape, store, cfg, asr::encode_audio(tape, store, cfg.asr, u.frames), ex.context)
              : tape.constant(ex.features);
  Var g = live_pred ? asr::predict(tape, store, cfg.asr, ex.labels) : tape.constant(ex.pred);
  return asr::rnnt_loss(asr::joint(tape, store, cfg.asr, f, g), f.rows(), ex.labels);
}

std::map<std::string, std::vector<double>> snapshot(const ParamStore& store) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : store) out.emplace(name, std::vector<double>(t.data().begin(), t.data().end()));
  return out;
}

}  // namespace

PersonalizationRunLog personalize(ParamStore& store, const ModelConfig& cfg, const corpus::Vocab& vocab,
                                  const corpus::SpeakerData& speaker, const std::vector<Phrase>& pool,
                                  const PersonalizeConfig& pc, const EvalOptions& opts,
                                  const std::string& model_name, std::optional<double> fst_lambda) {
  store.set_trainable_prefixes(pc.trainable);
  for (const auto& name : store.trainable_names()) {
    if (!name.starts_with(asr::kJointPrefix + ".")) {
      throw std::invalid_argument("personalize: parameter '" + name + "' is outside the joint network");
    }
  }
  const bool live_features = any_trainable_with(store, asr::kEncoderPrefix + ".") ||
                             any_trainable_with(store, memory::kPrefix + ".");
  const bool live_pred = any_trainable_with(store, asr::kPredictorPrefix + ".");

  PersonalizationRunLog log;
  log.optimizer.rule = numerics::UpdateRule::kAdafactorLite;
  log.optimizer.learning_rate = pc.learning_rate;
  log.optimizer.clip_norm = pc.clip_norm;
  numerics::Optimizer opt(log.optimizer);

  const std::uint64_t seed = training::mix_seed(pc.seed, static_cast<std::uint64_t>(speaker.id));
  const auto train = prepare(store, cfg, vocab, speaker.train, pool, training::mix_seed(seed, 1));
  const auto dev = prepare(store, cfg, vocab, speaker.dev, pool, training::mix_seed(seed, 2));

  auto dev_loss = [&] {
    double total = 0.0;
    double tokens = 0.0;
    for (std::size_t i = 0; i < dev.size(); ++i) {
      Tape tape;
      total += example_loss(tape, store, cfg, speaker.dev[i], dev[i], live_features, live_pred).value()(0, 0);
      tokens += static_cast<double>(dev[i].labels.size() + 1);
    }
    return tokens > 0 ? total / tokens : 0.0;
  };
  auto record_round = [&](int round, std::vector<std::string> updated) {
    RoundLog r;
    r.round = round;
    r.report = evaluate(store, cfg, vocab, speaker.test, pool, ContextPolicy{}, opts, model_name);
    r.report.round = round;
    if (fst_lambda) {
      EvalOptions fo = opts;
      fo.lambda = fst_lambda;
      r.fst_report = evaluate(store, cfg, vocab, speaker.test, pool, ContextPolicy{}, fo, model_name + "+fst");
      r.fst_report->round = round;
    }
    r.dev_loss = dev_loss();
    r.updated = std::move(updated);
    if (!log.rounds.empty() && r.dev_loss > pc.divergence_factor * log.rounds.front().dev_loss) log.diverged = true;
    log.rounds.push_back(std::move(r));
  };

  record_round(0, {});
  const std::size_t batch = static_cast<std::size_t>(std::max(1, pc.batch));
  for (int round = 1; round <= pc.rounds; ++round) {
    const auto before = snapshot(store);
    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      corpus::Rng rng(training::mix_seed(seed, 3, static_cast<std::uint64_t>(round * 1000 + epoch)));
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < order.size(); b += batch) {
        const std::size_t e = std::min(order.size(), b + batch);
        store.zero_grad();
        for (std::size_t i = b; i < e; ++i) {
          Tape tape;
          const std::size_t k = order[i];
          Var loss = example_loss(tape, store, cfg, speaker.train[k], train[k], live_features, live_pred);
          tape.backward(numerics::scale(loss, 1.0 / static_cast<double>(e - b)));
        }
        opt.step(store);
      }
    }
    std::vector<std::string> updated;
    for (const auto& [name, t] : store) {
      const auto& old = before.at(name);
      if (!std::equal(old.begin(), old.end(), t.data().begin())) updated.push_back(name);
    }
    record_round(round, std::move(updated));
  }
  return log;
}

// ---- output ---------------------------------------------------------------

std::string csv_header() {
  return "model,policy,B,lambda,round,wer,precision,recall,f1,seed,sub,del,ins,ref_words,tp,fp,fn,fingerprint";
}

std::string csv_row(const MetricsReport& r) {
  char buf[512];
  const std::string lambda = r.lambda ? [&] {
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", *r.lambda);
    return std::string(b);
  }()
                                      : std::string("");
  std::snprintf(buf, sizeof buf, "%s,%s,%zu,%s,%d,%.4f,%.4f,%.4f,%.4f,%llu,%zu,%zu,%zu,%zu,%zu,%zu,%zu,%s",
                r.model.c_str(), r.policy.c_str(), r.context_size, lambda.c_str(), r.round, r.wer_percent(),
                r.entities.precision(), r.entities.recall(), r.entities.f1(),
                static_cast<unsigned long long>(r.seed), r.totals.substitutions, r.totals.deletions,
                r.totals.insertions, r.totals.reference_words, r.entities.tp, r.entities.fp, r.entities.fn,
                r.fingerprint.c_str());
  return buf;
}

void write_json(std::ostream& os, const std::vector<MetricsReport>& reports, const std::string& config_text) {
  using nlohmann::json;
  json doc;
  doc["config"] = config_text;
  json arr = json::array();
  for (const auto& r : reports) {
    json j;
    j["model"] = r.model;
    j["policy"] = r.policy;
    j["B"] = r.context_size;
    j["lambda"] = r.lambda ? json(*r.lambda) : json(nullptr);
    j["round"] = r.round;
    j["seed"] = r.seed;
    j["fingerprint"] = r.fingerprint;
    j["wer"] = r.wer_percent();
    j["substitutions"] = r.totals.substitutions;
    j["deletions"] = r.totals.deletions;
    j["insertions"] = r.totals.insertions;
    j["reference_words"] = r.totals.reference_words;
    j["tp"] = r.entities.tp;
    j["fp"] = r.entities.fp;
    j["fn"] = r.entities.fn;
    j["precision"] = r.entities.precision();
    j["recall"] = r.entities.recall();
    j["f1"] = r.entities.f1();
    json utts = json::array();
    for (const auto& u : r.records) {
      utts.push_back({{"id", u.id},
                      {"reference", u.reference},
                      {"hypothesis", u.hypothesis},
                      {"entity", u.entity},
                      {"context", u.context},
                      {"model_score", u.model_score},
                      {"fusion_score", u.fusion_score},
                      {"errors", u.wer.errors()},
                      {"reference_words", u.wer.reference_words},
                      {"tp", u.entities.tp},
                      {"fp", u.entities.fp}});
    }
    j["utterances"] = std::move(utts);
    arr.push_back(std::move(j));
  }
  doc["reports"] = std::move(arr);
  os << doc.dump(2) << '\n';
}

}  // namespace nam::eval
