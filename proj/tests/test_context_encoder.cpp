// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "nam/context_encoder.hpp"

namespace {

using namespace nam;
using numerics::Mat;
using corpus::ContextSet;
using corpus::Phrase;
using corpus::PhraseRole;

const corpus::Vocab& vocab() {
  static const corpus::Vocab v("abcdefghijklmnopqrstuvwxyz ");
  return v;
}

Phrase phrase(std::string_view s) { return corpus::make_phrase(vocab(), s, PhraseRole::kDistractor); }

context::EncoderConfig small_cfg() {
  context::EncoderConfig c;
  c.vocab_size = vocab().size();
  c.dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.ff_dim = 16;
  return c;
}

struct Fixture {
  numerics::ParamStore store;
  context::EncoderConfig cfg = small_cfg();
  explicit Fixture(std::uint64_t seed = 3) {
    std::mt19937_64 rng(seed);
    context::init_params(store, cfg, rng);
  }
  Mat encode(const ContextSet& ctx) {
    numerics::Tape tape;
    context::PhraseEmbeddings e = context::encode_phrases(tape, store, cfg, ctx);
    return e.empty() ? Mat() : Mat(e.values.value());
  }
};

TEST(ContextEncoder, ShapeIncludesStartToken) {
  Fixture f;
  numerics::Tape tape;
  const auto e = context::encode_phrases(tape, f.store, f.cfg, ContextSet({phrase("abc")}));
  EXPECT_EQ(e.phrases, 1u);
  EXPECT_EQ(e.positions, 4u);
  EXPECT_EQ(e.values.value().rows(), 4);
  EXPECT_EQ(e.values.value().cols(), 8);
  EXPECT_EQ(e.length(0), 4u);
}

TEST(ContextEncoder, EmptyContextSet) {
  Fixture f;
  numerics::Tape tape;
  const auto e = context::encode_phrases(tape, f.store, f.cfg, ContextSet());
  EXPECT_TRUE(e.empty());
  EXPECT_EQ(e.phrases, 0u);
}

TEST(ContextEncoder, PaddedPositionsAreExactlyZero) {
  Fixture f;
  numerics::Tape tape;
  const ContextSet ctx({phrase("a"), phrase("hello world")});
  const auto e = context::encode_phrases(tape, f.store, f.cfg, ctx);
  const Mat& v = e.values.value();
  for (std::size_t i = 0; i < e.phrases; ++i) {
    for (std::size_t u = 0; u < e.positions; ++u) {
      const auto row = static_cast<Eigen::Index>(e.row(i, u));
      if (e.valid(i, u)) {
        EXPECT_GT(v.row(row).norm(), 0.0);
      } else {
        EXPECT_TRUE((v.row(row).array() == 0.0).all()) << "phrase " << i << " pos " << u;
      }
    }
  }
  EXPECT_EQ(e.length(0), 2u);
  EXPECT_EQ(e.length(1), 12u);
}

TEST(ContextEncoder, PermutingPhrasesPermutesRows) {
  Fixture f;
  const std::vector<Phrase> ps{phrase("cat"), phrase("dog house"), phrase("x"), phrase("zebra")};
  const Mat a = f.encode(ContextSet(ps));
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Phrase> shuffled;
  for (std::size_t p : perm) shuffled.push_back(ps[p]);
  const Mat b = f.encode(ContextSet(shuffled));
  const Eigen::Index U = a.rows() / 4;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_LT((b.middleRows(static_cast<Eigen::Index>(i) * U, U) -
               a.middleRows(static_cast<Eigen::Index>(perm[i]) * U, U))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
  }
}

TEST(ContextEncoder, ShorterCompanionLeavesPhraseBitIdentical) {
  Fixture f;
  // The second phrase is shorter, so its trailing cells are padding.
  const Mat alone = f.encode(ContextSet({phrase("river stone")}));
  const Mat pair = f.encode(ContextSet({phrase("river stone"), phrase("q")}));
  ASSERT_EQ(pair.rows(), 2 * alone.rows());
  EXPECT_EQ(pair.topRows(alone.rows()), alone);
}

TEST(ContextEncoder, BatchEqualsIndividualEncodings) {
  Fixture f;
  const std::vector<Phrase> ps{phrase("ab"), phrase("quick brown"), phrase("fox"), phrase("lazy dog z")};
  const Mat batch = f.encode(ContextSet(ps));
  const Eigen::Index U = batch.rows() / static_cast<Eigen::Index>(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Mat one = f.encode(ContextSet({ps[i]}));
    const Mat rows = batch.middleRows(static_cast<Eigen::Index>(i) * U, one.rows());
    EXPECT_LT((rows - one).cwiseAbs().maxCoeff(), 1e-10);
    // Everything beyond the phrase's own length is padding.
    const Eigen::Index rest = U - one.rows();
    if (rest > 0) {
      EXPECT_TRUE((batch.middleRows(static_cast<Eigen::Index>(i) * U + one.rows(), rest).array() == 0.0).all());
    }
  }
}

TEST(ContextEncoder, PassesGradientCheck) {
  Fixture f(9);
  f.store.set_trainable_prefixes({""});
  const ContextSet ctx({phrase("abc"), phrase("de")});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Mat w(ctx.size() * (ctx.max_length() + 1), f.cfg.dim);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
  const double err = numerics::grad_check(f.store, [&](numerics::Tape& t) {
    const auto e = context::encode_phrases(t, f.store, f.cfg, ctx);
    return numerics::sum(numerics::mul(e.values, t.constant(w)));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(ContextEncoder, RejectsBadConfig) {
  context::EncoderConfig c = small_cfg();
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_cfg();
  c.layers = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
