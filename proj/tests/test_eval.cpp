// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "nam/eval.hpp"
#include "nam/model.hpp"
#include "oracles.hpp"

namespace {

using namespace nam;
using eval::MatchRule;

std::vector<std::string> w(std::string_view s) { return eval::words(s); }

// ---- WER --------------------------------------------------------------------

TEST(Wer, Examples) {
  EXPECT_EQ(eval::wer(w("a b c d e"), w("a b c d e")).percent(), 0.0);
  const auto r = eval::wer(w("a b c d"), w("a x c d"));
  EXPECT_EQ(r.substitutions, 1u);
  EXPECT_EQ(r.errors(), 1u);
  EXPECT_DOUBLE_EQ(r.percent(), 25.0);
  const auto del = eval::wer(w("a b c"), w("a c"));
  EXPECT_EQ(del.deletions, 1u);
  const auto ins = eval::wer(w("a c"), w("a b c"));
  EXPECT_EQ(ins.insertions, 1u);
}

TEST(Wer, MarkersAndSpacingIgnored) {
  EXPECT_EQ(w("  foo</bias>  bar "), (std::vector<std::string>{"foo", "bar"}));
  EXPECT_EQ(eval::wer(w("foo bar"), w("foo</bias> bar")).errors(), 0u);
}

TEST(Wer, EmptyReferenceIsFlagged) {
  const auto r = eval::wer({}, w("x y"));
  EXPECT_TRUE(r.empty_reference);
  EXPECT_EQ(r.insertions, 2u);
  EXPECT_DOUBLE_EQ(r.percent(), 200.0);
  EXPECT_EQ(eval::wer({}, {}).percent(), 0.0);
}

TEST(Wer, MatchesIndependentDpAndIsSymmetric) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len(0, 9), tok(0, 4);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& x : a) x = std::string(1, static_cast<char>('a' + tok(rng)));
    for (auto& x : b) x = std::string(1, static_cast<char>('a' + tok(rng)));
    const auto ab = eval::wer(a, b);
    ASSERT_EQ(ab.errors(), oracle::edit_distance(a, b));
    ASSERT_EQ(ab.errors(), eval::wer(b, a).errors());
    ASSERT_EQ(ab.reference_words, a.size());
    // Every reference word is matched, substituted or deleted.
    ASSERT_LE(ab.substitutions + ab.deletions, a.size());
    ASSERT_EQ(a.size() - ab.deletions + ab.insertions, b.size());
  }
}

TEST(Wer, Accumulates) {
  eval::WerResult t;
  t += eval::wer(w("a b"), w("a c"));
  t += eval::wer(w("x y z"), w("x y z"));
  EXPECT_EQ(t.reference_words, 5u);
  EXPECT_DOUBLE_EQ(t.percent(), 20.0);
}

// ---- entities ---------------------------------------------------------------

TEST(Entities, MatchRules) {
  EXPECT_TRUE(eval::contains_phrase("the zorba fox", "zorba"));
  EXPECT_TRUE(eval::contains_phrase("thezorbafox", "zorba", MatchRule::kSubstring));
  EXPECT_FALSE(eval::contains_phrase("thezorbafox", "zorba", MatchRule::kWholeWord));
  EXPECT_TRUE(eval::contains_phrase("a big zorba fox", "zorba fox", MatchRule::kWholeWord));
  EXPECT_TRUE(eval::contains_phrase("x zorba</bias> y", "zorba", MatchRule::kWholeWord));
  EXPECT_EQ(eval::parse_match_rule("word"), MatchRule::kWholeWord);
  EXPECT_EQ(eval::parse_match_rule(eval::to_string(MatchRule::kSubstring)), MatchRule::kSubstring);
  EXPECT_THROW((void)eval::parse_match_rule("fuzzy"), std::invalid_argument);
}

TEST(Entities, PerfectHypotheses) {
  std::vector<eval::EntityCase> cases;
  for (int i = 0; i < 5; ++i) {
    const std::string e = "name" + std::string(1, static_cast<char>('a' + i));
    cases.push_back({e, "hi " + e, "hi " + e, {e, "other"}});
  }
  const auto c = eval::entity_metrics(cases);
  EXPECT_EQ(c.precision(), 100.0);
  EXPECT_EQ(c.recall(), 100.0);
  EXPECT_EQ(c.f1(), 100.0);
}

TEST(Entities, DistractorInsertionIsFalsePositive) {
  const auto c = eval::entity_metrics(eval::EntityCase{"kol", "say kol now", "say kol zem", {"kol", "zem"}});
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  // A context phrase that is present in the reference is not a false positive.
  const auto d = eval::entity_metrics(eval::EntityCase{"kol", "say kol zem", "say kol zem", {"kol", "zem"}});
  EXPECT_EQ(d.fp, 0u);
}

TEST(Entities, TenUtteranceArithmetic) {
  std::vector<eval::EntityCase> cases;
  for (int i = 0; i < 10; ++i) {
    eval::EntityCase c{"ent", "the ent here", "the ent here", {"ent", "dis"}};
    if (i >= 6) c.hypothesis = "the end here";
    if (i < 2) c.hypothesis += " dis";
    cases.push_back(c);
  }
  const auto m = eval::entity_metrics(cases);
  EXPECT_EQ(m.tp, 6u);
  EXPECT_EQ(m.fn, 4u);
  EXPECT_EQ(m.fp, 2u);
  EXPECT_EQ(m.tp + m.fn, cases.size());
  EXPECT_DOUBLE_EQ(m.recall(), 60.0);
  EXPECT_DOUBLE_EQ(m.precision(), 75.0);
  EXPECT_NEAR(m.f1(), 2 * 60.0 * 75.0 / 135.0, 1e-12);
  EXPECT_EQ(eval::EntityCounts{}.f1(), 0.0);
}

// ---- policies ---------------------------------------------------------------

TEST(Policies, Parse) {
  EXPECT_EQ(eval::ContextPolicy::parse("paired").phrases(), 5u);
  EXPECT_EQ(eval::ContextPolicy::parse("empty").phrases(), 0u);
  const auto b = eval::ContextPolicy::parse("B=30");
  EXPECT_EQ(b.kind, eval::PolicyKind::kFixed);
  EXPECT_EQ(b.phrases(), 30u);
  EXPECT_EQ(eval::ContextPolicy::parse(b.name()).size, 30u);
  EXPECT_THROW((void)eval::ContextPolicy::parse("B=0"), std::invalid_argument);
  EXPECT_THROW((void)eval::ContextPolicy::parse("lots"), std::invalid_argument);
}

// ---- evaluation on a small model --------------------------------------------

struct Small {
  corpus::Benchmark bench;
  model::ModelConfig cfg;
  numerics::ParamStore store;
  std::vector<corpus::Phrase> pool;

  static corpus::BenchmarkConfig bench_cfg() {
    corpus::BenchmarkConfig c;
    c.speakers = 10;
    c.train_per_speaker = 10;
    c.dev_per_speaker = 2;
    c.test_per_speaker = 3;
    c.pretrain_utterances = 20;
    c.pretrain_dev_utterances = 5;
    c.seed = 9;
    return c;
  }

  explicit Small(memory::BiasVariant v) : bench(corpus::make_benchmark(bench_cfg())) {
    cfg.variant = v;
    cfg.asr.enc_dim = 16;
    cfg.asr.enc_layers = 1;
    cfg.asr.enc_heads = 2;
    cfg.asr.enc_ff = 16;
    cfg.asr.pred_dim = 16;
    cfg.asr.joint_dim = 16;
    cfg.context.dim = 16;
    cfg.context.layers = 1;
    cfg.context.heads = 2;
    cfg.context.ff_dim = 16;
    cfg.mha.heads = 2;
    cfg.mha.head_dim = 8;
    cfg.finalize(bench.vocab.size());
    model::init_base(store, cfg, 3);
    if (v != memory::BiasVariant::kNone) model::attach_bias(store, cfg, 4);
    pool = eval::entity_pool(bench);
  }

  std::vector<corpus::Utterance> test() const {
    std::vector<corpus::Utterance> out;
    for (int s = 0; s < 2; ++s) {
      for (const auto& u : bench.speakers[static_cast<std::size_t>(s)].test) out.push_back(u);
    }
    return out;
  }
};

TEST(Evaluate, DeterministicAndReadOnly) {
  Small m(memory::BiasVariant::kNam);
  const auto before = m.store.value_hash();
  eval::EvalOptions o;
  const auto utts = m.test();
  const auto a = eval::evaluate(m.store, m.cfg, m.bench.vocab, utts, m.pool, eval::ContextPolicy{}, o, "nam");
  const auto b = eval::evaluate(m.store, m.cfg, m.bench.vocab, utts, m.pool, eval::ContextPolicy{}, o, "nam");
  EXPECT_EQ(m.store.value_hash(), before);
  ASSERT_EQ(a.records.size(), utts.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].hypothesis, b.records[i].hypothesis);
    EXPECT_EQ(a.records[i].model_score, b.records[i].model_score);
    EXPECT_EQ(a.records[i].context, b.records[i].context);
    EXPECT_EQ(a.records[i].context.size(), 5u);
  }
  EXPECT_EQ(a.entities.tp + a.entities.fn, utts.size());
  EXPECT_EQ(a.context_size, 5u);
  EXPECT_EQ(eval::csv_row(a), eval::csv_row(b));
}

TEST(Evaluate, FreshBiasModuleLeavesFeaturesUntouchedOnEmptyContext) {
  // The baseline also suppresses the marker token, so compare features rather than decodes.
  Small nam(memory::BiasVariant::kNam);
  for (const auto& u : nam.test()) {
    numerics::Tape tape;
    const auto h = asr::encode_audio(tape, nam.store, nam.cfg.asr, u.frames);
    const auto b = model::biased_features(tape, nam.store, nam.cfg, h, corpus::ContextSet());
    EXPECT_EQ(h.value(), b.value());
  }
}

TEST(Evaluate, SweepSizesAndFusion) {
  Small m(memory::BiasVariant::kNone);
  const auto utts = m.test();
  eval::EvalOptions o;
  std::vector<eval::MetricsReport> reports;
  for (int b : {10, 20, 30, 40, 50}) {
    reports.push_back(eval::evaluate(m.store, m.cfg, m.bench.vocab, utts, m.pool,
                                     eval::ContextPolicy::parse("B=" + std::to_string(b)), o, "none"));
    for (const auto& r : reports.back().records) EXPECT_EQ(r.context.size(), static_cast<std::size_t>(b));
  }
  EXPECT_EQ(reports.size(), 5u);

  o.lambda = 0.0;
  const auto z = eval::evaluate(m.store, m.cfg, m.bench.vocab, utts, m.pool, eval::ContextPolicy{}, o, "fst");
  o.lambda.reset();
  const auto p = eval::evaluate(m.store, m.cfg, m.bench.vocab, utts, m.pool, eval::ContextPolicy{}, o, "none");
  for (std::size_t i = 0; i < utts.size(); ++i) EXPECT_EQ(z.records[i].hypothesis, p.records[i].hypothesis);
}

TEST(Evaluate, CsvHeaderMatchesRow) {
  Small m(memory::BiasVariant::kNone);
  eval::EvalOptions o;
  o.lambda = 2.0;
  const auto r = eval::evaluate(m.store, m.cfg, m.bench.vocab, m.test(), m.pool, eval::ContextPolicy{}, o, "fst");
  auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(count(eval::csv_header()), count(eval::csv_row(r)));
  std::ostringstream js;
  eval::write_json(js, {r}, "alphabet=\"ab\"");
  EXPECT_NE(js.str().find("\"utterances\""), std::string::npos);
}

// ---- personalization --------------------------------------------------------

std::set<std::string> joint_names(const numerics::ParamStore& s) {
  std::set<std::string> out;
  for (const auto& n : s.names()) {
    if (n.rfind("joint.", 0) == 0) out.insert(n);
  }
  return out;
}

TEST(Personalize, DefaultsProduceSixEntriesAndTouchOnlyJoint) {
  Small m(memory::BiasVariant::kNam);
  const auto before = m.store;
  eval::PersonalizeConfig pc;
  const auto log = eval::personalize(m.store, m.cfg, m.bench.vocab, m.bench.speakers[0], m.pool, pc, {}, "nam");
  ASSERT_EQ(log.rounds.size(), 6u);
  EXPECT_EQ(log.rounds[0].round, 0);
  EXPECT_TRUE(log.rounds[0].updated.empty());
  const auto joint = joint_names(m.store);
  for (std::size_t r = 1; r < log.rounds.size(); ++r) {
    EXPECT_EQ(log.rounds[r].report.round, static_cast<int>(r));
    const std::set<std::string> updated(log.rounds[r].updated.begin(), log.rounds[r].updated.end());
    EXPECT_EQ(updated, joint) << "round " << r;
  }
  for (const auto& n : m.store.names()) {
    const bool same = before.get(n).matrix() == m.store.get(n).matrix();
    EXPECT_EQ(same, !joint.contains(n)) << n;
  }
  EXPECT_EQ(log.optimizer.rule, numerics::UpdateRule::kAdafactorLite);
  EXPECT_DOUBLE_EQ(log.optimizer.learning_rate, 0.005);
  EXPECT_DOUBLE_EQ(log.optimizer.clip_norm, 0.1);
}

TEST(Personalize, NullUpdatesKeepMetricsConstant) {
  for (const bool frozen : {false, true}) {
    Small m(memory::BiasVariant::kNone);
    eval::PersonalizeConfig pc;
    pc.rounds = 3;
    pc.epochs = 1;
    if (frozen) {
      pc.trainable.clear();
    } else {
      pc.learning_rate = 0.0;
    }
    const auto log = eval::personalize(m.store, m.cfg, m.bench.vocab, m.bench.speakers[1], m.pool, pc, {}, "none");
    ASSERT_EQ(log.rounds.size(), 4u);
    for (const auto& r : log.rounds) {
      for (std::size_t i = 0; i < r.report.records.size(); ++i) {
        EXPECT_EQ(r.report.records[i].hypothesis, log.rounds[0].report.records[i].hypothesis);
      }
      EXPECT_EQ(r.report.wer_percent(), log.rounds[0].report.wer_percent());
      EXPECT_EQ(r.dev_loss, log.rounds[0].dev_loss);
      EXPECT_TRUE(r.updated.empty());
    }
    EXPECT_FALSE(log.diverged);
  }
}

TEST(Personalize, FstReportsFollowEachRound) {
  Small m(memory::BiasVariant::kNone);
  eval::PersonalizeConfig pc;
  pc.rounds = 1;
  pc.epochs = 1;
  const auto log =
      eval::personalize(m.store, m.cfg, m.bench.vocab, m.bench.speakers[2], m.pool, pc, {}, "none", 2.0);
  ASSERT_EQ(log.rounds.size(), 2u);
  for (const auto& r : log.rounds) {
    ASSERT_TRUE(r.fst_report.has_value());
    EXPECT_EQ(r.fst_report->lambda, 2.0);
  }
}

}  // namespace
