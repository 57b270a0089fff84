// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "nam/fst_biaser.hpp"
#include "oracles.hpp"

namespace {

using namespace nam;
using corpus::TokenId;
using corpus::Vocab;
using fst::BiasTrie;

const Vocab& vocab() {
  static const Vocab v("abcdefghijklmnopqrstuvwxyz ");
  return v;
}

std::vector<TokenId> ids(std::string_view s) { return vocab().tokenize(s); }

std::vector<std::vector<TokenId>> phrases(std::initializer_list<const char*> texts) {
  std::vector<std::vector<TokenId>> out;
  for (const char* t : texts) out.push_back(ids(t));
  return out;
}

std::vector<double> deltas(const BiasTrie& trie, std::string_view text) {
  std::vector<double> out;
  auto c = trie.start();
  for (TokenId t : ids(text)) {
    auto [next, d] = trie.step(c, t);
    out.push_back(d);
    c = next;
  }
  return out;
}

TEST(BiasTrie, PrefixSharing) {
  const auto ps = phrases({"ab", "ac"});
  const BiasTrie trie(ps, 1.0);
  ASSERT_EQ(trie.size(), 4u);
  const auto& root = trie.nodes()[BiasTrie::kRoot];
  ASSERT_EQ(root.children.size(), 1u);
  const auto& a = trie.nodes()[static_cast<std::size_t>(root.children.at(vocab().id('a')))];
  EXPECT_EQ(a.children.size(), 2u);
  EXPECT_EQ(a.depth, 1u);
  EXPECT_FALSE(a.terminal);
  for (auto [tok, child] : a.children) {
    const auto& n = trie.nodes()[static_cast<std::size_t>(child)];
    EXPECT_EQ(n.depth, 2u);
    EXPECT_TRUE(n.terminal);
    EXPECT_EQ(n.token, tok);
  }
}

TEST(BiasTrie, EmptyContextScoresNothing) {
  const BiasTrie trie(corpus::ContextSet(), 3.0);
  EXPECT_EQ(trie.size(), 1u);
  for (double d : deltas(trie, "hello world")) EXPECT_EQ(d, 0.0);
}

TEST(BiasTrie, DuplicatePhrasesCollapse) {
  const BiasTrie once(phrases({"abc"}), 1.0);
  const BiasTrie twice(phrases({"abc", "abc"}), 1.0);
  EXPECT_EQ(once.size(), twice.size());
  EXPECT_EQ(once.fused_score(ids("xabcx")), twice.fused_score(ids("xabcx")));
}

TEST(BiasTrie, FullMatchAndDeadEnd) {
  const double l = 0.75;
  const BiasTrie trie(phrases({"abc"}), l);
  EXPECT_EQ(deltas(trie, "abc"), (std::vector<double>{l, l, l}));
  EXPECT_EQ(trie.fused_score(ids("abc")), 3 * l);
  const auto dead = deltas(trie, "abx");
  EXPECT_EQ(dead, (std::vector<double>{l, l, -2 * l}));
  EXPECT_EQ(trie.fused_score(ids("abx")), 0.0);
  EXPECT_EQ(trie.fused_score({}), 0.0);
}

TEST(BiasTrie, OverlappingPhrases) {
  const double l = 1.0;
  const BiasTrie trie(phrases({"ab", "bc"}), l);
  // "ab" completes and keeps 2; "b" is then the active suffix, so "c" completes "bc".
  const auto ps = phrases({"ab", "bc"});
  std::vector<std::vector<int>> as_int;
  for (const auto& p : ps) as_int.emplace_back(p.begin(), p.end());
  const auto t = ids("abc");
  EXPECT_DOUBLE_EQ(trie.fused_score(t), oracle::boost_total(as_int, l, {t.begin(), t.end()}));
  EXPECT_DOUBLE_EQ(trie.fused_score(t), 4.0);
}

TEST(BiasTrie, MatchesBruteForceOracle) {
  std::mt19937_64 rng(21);
  // A small alphabet makes overlaps and partial matches frequent.
  const std::vector<TokenId> letters = ids("abcd");
  std::uniform_int_distribution<std::size_t> pick(0, letters.size() - 1);
  std::uniform_int_distribution<int> plen(1, 4), slen(0, 14), nph(0, 5);
  std::normal_distribution<double> lam(0.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::vector<TokenId>> ps(static_cast<std::size_t>(nph(rng)));
    for (auto& p : ps) {
      p.resize(static_cast<std::size_t>(plen(rng)));
      for (auto& t : p) t = letters[pick(rng)];
    }
    std::vector<TokenId> seq(static_cast<std::size_t>(slen(rng)));
    for (auto& t : seq) t = letters[pick(rng)];
    const double l = lam(rng);
    const BiasTrie trie(ps, l);
    std::vector<std::vector<int>> ps_int;
    for (const auto& p : ps) ps_int.emplace_back(p.begin(), p.end());
    const double want = oracle::boost_total(ps_int, l, {seq.begin(), seq.end()});
    ASSERT_NEAR(trie.fused_score(seq), want, 1e-9) << "trial " << trial;

    // The running total is always lambda times the depth of the active node
    // plus the completed phrases so far; check the sum of steps agrees.
    double acc = 0.0;
    auto c = trie.start();
    for (TokenId t : seq) {
      auto [n, d] = trie.step(c, t);
      acc += d;
      c = n;
      ASSERT_NEAR(c.accumulated, l * static_cast<double>(trie.nodes()[static_cast<std::size_t>(c.node)].depth), 1e-9);
    }
    ASSERT_NEAR(acc, trie.fused_score(seq), 1e-9);
  }
}

TEST(BiasTrie, MarkerAndBlankBypass) {
  const BiasTrie trie(phrases({"ab"}), 1.0);
  auto c = trie.start();
  auto [c1, d1] = trie.step(c, vocab().id('a'));
  auto [c2, d2] = trie.step(c1, Vocab::kBiasMarker);
  EXPECT_EQ(d2, 0.0);
  EXPECT_EQ(c2.node, c1.node);
  auto [c3, d3] = trie.step(c1, Vocab::kBlank);
  EXPECT_EQ(d3, 0.0);
  EXPECT_EQ(c3.node, c1.node);
  std::vector<TokenId> with_marker = ids("ab");
  with_marker.push_back(Vocab::kBiasMarker);
  EXPECT_EQ(trie.fused_score(with_marker), 2.0);
  (void)d1;
}

TEST(BiasTrie, StepIsDeterministic) {
  const BiasTrie trie(phrases({"abc", "bcd", "cab"}), 1.5);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> letter(0, 3);
  for (int i = 0; i < 200; ++i) {
    const auto node = static_cast<std::int64_t>(std::uniform_int_distribution<std::size_t>(0, trie.size() - 1)(rng));
    const fst::FusionCursor c{node, 1.5 * static_cast<double>(trie.nodes()[static_cast<std::size_t>(node)].depth)};
    const TokenId t = vocab().id(static_cast<char>('a' + letter(rng)));
    const auto a = trie.step(c, t);
    const auto b = trie.step(c, t);
    EXPECT_EQ(a.first.node, b.first.node);
    EXPECT_EQ(a.second, b.second);
  }
}

TEST(BiasTrie, RejectsNonFiniteLambda) {
  EXPECT_THROW(BiasTrie(phrases({"a"}), std::numeric_limits<double>::infinity()), std::invalid_argument);
  EXPECT_NO_THROW(BiasTrie(phrases({"a"}), -2.0));
}

TEST(BiasTrie, DumpHasOneLinePerNode) {
  const BiasTrie trie(phrases({"ab", "ac"}), 1.0);
  std::ostringstream os;
  trie.dump(os);
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    std::istringstream fields(line);
    long id, parent, token, terminal;
    ASSERT_TRUE(fields >> id >> parent >> token >> terminal) << line;
    EXPECT_EQ(static_cast<std::size_t>(id), n);
    ++n;
  }
  EXPECT_EQ(n, trie.size());
}

/// Table-driven scorer: log-probs are a deterministic function of (t, prefix).
struct TableScorer {
  using State = std::vector<TokenId>;
  int T = 5;
  int V = 8;
  std::uint64_t seed = 0;
  Eigen::Index frames() const { return T; }
  State initial() const { return {}; }
  State advance(const State& s, TokenId k) const {
    State n = s;
    n.push_back(k);
    return n;
  }
  Eigen::VectorXd log_probs(Eigen::Index t, const State& s) const {
    std::uint64_t h = seed * 7919u + static_cast<std::uint64_t>(t);
    for (TokenId k : s) h = h * 131u + static_cast<std::uint64_t>(k);
    std::mt19937_64 rng(h);
    std::normal_distribution<double> nd(0.0, 2.0);
    Eigen::VectorXd v(V);
    for (int k = 0; k < V; ++k) v(k) = nd(rng);
    return v.array() - std::log(v.array().exp().sum());
  }
};

TEST(BiasTrie, ZeroLambdaLeavesDecodingUnchanged) {
  const BiasTrie trie(std::vector<std::vector<TokenId>>{{4, 5}, {5, 6, 7}}, 0.0);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const TableScorer s{5, 8, seed};
    decoding::DecodeOptions plain;
    plain.suppressed = {1, 2, 3};
    decoding::DecodeOptions fused = plain;
    fused.fusion = &trie;
    const auto a = decoding::beam_decode(s, plain);
    const auto b = decoding::beam_decode(s, fused);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].tokens, b[i].tokens);
      EXPECT_EQ(a[i].model_score, b[i].model_score);
    }
  }
}

TEST(BiasTrie, FusionScoreOfDecodedHypothesisMatchesWholeSequence) {
  const BiasTrie trie(std::vector<std::vector<TokenId>>{{4, 5}, {5, 6, 7}, {6}}, 1.3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const TableScorer s{5, 8, seed};
    decoding::DecodeOptions o;
    o.fusion = &trie;
    o.suppressed = {1, 2, 3};
    for (const auto& h : decoding::beam_decode(s, o)) {
      EXPECT_NEAR(h.fusion_score, trie.fused_score(h.tokens), 1e-9);
    }
    const auto g = decoding::greedy_decode(s, o);
    EXPECT_NEAR(g.fusion_score, trie.fused_score(g.tokens), 1e-9);
  }
}

TEST(BiasTrie, LargeLambdaPullsPhraseIntoOutput) {
  const std::vector<TokenId> target{6, 7};
  const BiasTrie trie(std::vector<std::vector<TokenId>>{target}, 25.0);
  const TableScorer s{4, 8, 77};
  decoding::DecodeOptions o;
  o.fusion = &trie;
  o.suppressed = {1, 2, 3};
  const auto h = decoding::beam_decode(s, o).front();
  EXPECT_NE(std::search(h.tokens.begin(), h.tokens.end(), target.begin(), target.end()), h.tokens.end());
}

}  // namespace
