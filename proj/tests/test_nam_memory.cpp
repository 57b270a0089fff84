// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/QR>
#include <cmath>
#include <numeric>
#include <random>

#include "nam/nam_memory.hpp"

namespace {

using namespace nam;
using corpus::ContextSet;
using corpus::PhraseRole;
using memory::BiasVariant;
using numerics::Mat;
using numerics::ParamStore;
using numerics::Tape;
using numerics::Var;

const corpus::Vocab& vocab() {
  static const corpus::Vocab v("abcdefghijklmnopqrstuvwxyz ");
  return v;
}

ContextSet context(std::initializer_list<const char*> texts) {
  std::vector<corpus::Phrase> ps;
  for (const char* t : texts) ps.push_back(corpus::make_phrase(vocab(), t, PhraseRole::kDistractor));
  return ContextSet(std::move(ps));
}

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

struct Bench {
  ParamStore store;
  context::EncoderConfig enc;
  memory::MhaConfig mha;
  BiasVariant variant;

  explicit Bench(BiasVariant v, std::uint64_t seed = 4) : variant(v) {
    enc.vocab_size = vocab().size();
    enc.dim = 8;
    enc.layers = 1;
    enc.heads = 2;
    enc.ff_dim = 16;
    mha.heads = 2;
    mha.head_dim = 4;
    mha.input_dim = 6;
    mha.memory_dim = 8;
    mha.clas_dim = 5;
    std::mt19937_64 rng(seed);
    context::init_params(store, enc, rng);
    memory::init_params(store, mha, variant, rng);
  }

  void randomize_projection(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (const char* n : {"bias.proj.w", "bias.proj.b"}) {
      auto m = store.get(n).matrix();
      m = random_mat(m.rows(), m.cols(), rng) * 0.3;
    }
  }
};

TEST(Memory, NamLayoutFollowsLeftShift) {
  Bench s(BiasVariant::kNam);
  Tape tape;
  const auto emb = context::encode_phrases(tape, s.store, s.enc, context({"abc"}));
  const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kNam);
  ASSERT_EQ(mem.slots(), 4u);
  EXPECT_EQ(mem.real_slots(), 3u);
  const Mat& x = emb.values.value();
  for (Eigen::Index l = 0; l < 3; ++l) {
    EXPECT_EQ(mem.keys.value().row(l), x.row(l));
    EXPECT_EQ(mem.values.value().row(l), x.row(l + 1));
    EXPECT_EQ(mem.origin[static_cast<std::size_t>(l)].key_position, l);
    EXPECT_EQ(mem.origin[static_cast<std::size_t>(l)].value_position, l + 1);
  }
  EXPECT_EQ(mem.keys.value().row(3), s.store.get("bias.mem.nobias_key").matrix().row(0));
  EXPECT_EQ(mem.values.value().row(3), s.store.get("bias.mem.nobias_value").matrix().row(0));
  EXPECT_EQ(mem.mask, (std::vector<std::uint8_t>{1, 1, 1, 1}));
}

TEST(Memory, PaddedSlotsAreMaskedAndNoBiasAlwaysOn) {
  Bench s(BiasVariant::kNam);
  Tape tape;
  const auto emb = context::encode_phrases(tape, s.store, s.enc, context({"a", "hello", "xy"}));
  const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kNam);
  ASSERT_EQ(mem.slots(), 3u * 5u + 1u);
  EXPECT_EQ(mem.real_slots(), 1u + 5u + 2u);
  EXPECT_EQ(std::accumulate(mem.mask.begin(), mem.mask.end(), 0), 9);
  EXPECT_EQ(mem.mask.back(), 1);

  std::mt19937_64 rng(2);
  const Mat h = random_mat(7, s.mha.input_dim, rng);
  const auto r = memory::retrieve(tape, s.store, s.mha, tape.constant(h), mem);
  ASSERT_EQ(r.weights.size(), s.mha.heads);
  for (const Mat& w : r.weights) {
    for (std::size_t l = 0; l < mem.slots(); ++l) {
      if (mem.mask[l] == 0) EXPECT_TRUE((w.col(static_cast<Eigen::Index>(l)).array() == 0.0).all());
    }
    EXPECT_LT((w.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  }
}

TEST(Memory, EmptyContextIsSingleNoBiasSlot) {
  for (BiasVariant v : {BiasVariant::kNam, BiasVariant::kNamNoLeftShift, BiasVariant::kNamSingle,
                        BiasVariant::kClasEncoder}) {
    Bench s(v);
    s.randomize_projection(3);
    Tape tape;
    const auto emb = context::encode_phrases(tape, s.store, s.enc, ContextSet());
    const auto mem = memory::build_memory(tape, s.store, emb, v);
    ASSERT_EQ(mem.slots(), 1u);
    EXPECT_EQ(mem.mask, std::vector<std::uint8_t>{1});
    std::mt19937_64 rng(5);
    const Mat h = random_mat(4, s.mha.input_dim, rng);
    const auto r = v == BiasVariant::kClasEncoder ? memory::retrieve_clas(tape, s.store, s.mha, tape.constant(h), mem)
                                                  : memory::retrieve(tape, s.store, s.mha, tape.constant(h), mem);
    for (const Mat& w : r.weights) EXPECT_TRUE((w.array() == 1.0).all());

    // Closed form: every frame receives the projected no-bias value.
    Mat ctx_row;
    if (v == BiasVariant::kClasEncoder) {
      ctx_row = s.store.get("bias.clas.nobias").matrix();
    } else {
      ctx_row = s.store.get("bias.mem.nobias_value").matrix() * s.store.get("bias.mha.v.w").matrix();
    }
    const Mat shift = ctx_row * s.store.get("bias.proj.w").matrix() + s.store.get("bias.proj.b").matrix();
    const Mat out = memory::bias_features(tape, s.store, s.mha, tape.constant(h), mem, v).value();
    for (Eigen::Index t = 0; t < h.rows(); ++t) {
      EXPECT_LT((out.row(t) - h.row(t) - shift.row(0)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Memory, VariantLayouts) {
  {
    Bench s(BiasVariant::kNamNoLeftShift);
    Tape tape;
    const auto emb = context::encode_phrases(tape, s.store, s.enc, context({"abc", "de"}));
    const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kNamNoLeftShift);
    for (std::size_t l = 0; l + 1 < mem.slots(); ++l) {
      const auto row = static_cast<Eigen::Index>(l);
      if (mem.mask[l] == 0) continue;
      EXPECT_EQ(mem.keys.value().row(row), mem.values.value().row(row));
      EXPECT_EQ(mem.origin[l].key_position, mem.origin[l].value_position);
    }
  }
  {
    Bench s(BiasVariant::kNamSingle);
    Tape tape;
    const ContextSet ctx = context({"abc", "de", "fghij", "k", "lm"});
    const auto emb = context::encode_phrases(tape, s.store, s.enc, ctx);
    const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kNamSingle);
    ASSERT_EQ(mem.slots(), 6u);
    const Mat& x = emb.values.value();
    for (std::size_t i = 0; i < 5; ++i) {
      Mat mean = Mat::Zero(1, x.cols());
      for (std::size_t u = 0; u < emb.length(i); ++u) mean += x.row(static_cast<Eigen::Index>(emb.row(i, u)));
      mean /= static_cast<double>(emb.length(i));
      const auto row = static_cast<Eigen::Index>(i);
      EXPECT_LT((mem.keys.value().row(row) - mean).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_EQ(mem.keys.value().row(row), mem.values.value().row(row));
    }
  }
}

TEST(Memory, IdenticalKeysGiveUniformWeights) {
  Bench s(BiasVariant::kNam);
  Tape tape;
  memory::AssociativeMemory mem;
  std::mt19937_64 rng(6);
  const Mat key = random_mat(1, s.mha.memory_dim, rng);
  mem.keys = tape.constant(key.replicate(5, 1));
  mem.values = tape.constant(random_mat(5, s.mha.memory_dim, rng));
  mem.mask = {1, 0, 1, 1, 1};
  mem.origin.assign(5, memory::SlotOrigin{});
  const auto r = memory::retrieve(tape, s.store, s.mha, tape.constant(random_mat(3, s.mha.input_dim, rng)), mem);
  for (const Mat& w : r.weights) {
    for (Eigen::Index t = 0; t < w.rows(); ++t) {
      EXPECT_EQ(w(t, 1), 0.0);
      for (Eigen::Index l : {0, 2, 3, 4}) EXPECT_NEAR(w(t, l), 0.25, 1e-14);
    }
  }
}

TEST(Memory, SlotPermutationInvariance) {
  Bench s(BiasVariant::kNam);
  s.randomize_projection(8);
  Tape tape;
  const auto emb = context::encode_phrases(tape, s.store, s.enc, context({"quick", "ab", "xyz"}));
  const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kNam);
  std::mt19937_64 rng(9);
  const Mat h = random_mat(6, s.mha.input_dim, rng);
  const Mat base = memory::bias_features(tape, s.store, s.mha, tape.constant(h), mem, BiasVariant::kNam).value();

  std::vector<Eigen::Index> perm(mem.slots());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    memory::AssociativeMemory p;
    Mat k(mem.keys.value().rows(), mem.keys.value().cols());
    Mat v(k.rows(), k.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      k.row(static_cast<Eigen::Index>(i)) = mem.keys.value().row(perm[i]);
      v.row(static_cast<Eigen::Index>(i)) = mem.values.value().row(perm[i]);
      p.mask.push_back(mem.mask[static_cast<std::size_t>(perm[i])]);
      p.origin.push_back(mem.origin[static_cast<std::size_t>(perm[i])]);
    }
    p.keys = tape.constant(k);
    p.values = tape.constant(v);
    const Mat out = memory::bias_features(tape, s.store, s.mha, tape.constant(h), p, BiasVariant::kNam).value();
    EXPECT_LT((out - base).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Memory, ChainRecoversSuccessorFromPredecessor) {
  // Ten phrases of ten tokens: 100 transitions. Embeddings are replaced by
  // orthonormal vectors, projections are identities, and logits are sharpened
  // by 100, so querying with a slot's key must return that slot's value.
  const std::size_t d = 128;
  ParamStore store;
  memory::MhaConfig mha;
  mha.heads = 1;
  mha.head_dim = d;
  mha.input_dim = d;
  mha.memory_dim = d;
  mha.temperature = 1.0 / (100.0 * std::sqrt(static_cast<double>(d)));
  std::mt19937_64 rng(10);
  memory::init_params(store, mha, BiasVariant::kNam, rng);
  for (const char* n : {"bias.mha.q.w", "bias.mha.k.w", "bias.mha.v.w"}) store.get(n).matrix().setIdentity();

  const Eigen::HouseholderQR<Mat> qr(random_mat(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d), rng));
  const Mat basis = qr.householderQ() * Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));

  const std::size_t phrases = 10;
  const std::size_t positions = 11;
  Tape tape;
  context::PhraseEmbeddings emb;
  emb.phrases = phrases;
  emb.positions = positions;
  emb.mask.assign(phrases * positions, 1);
  Mat x(static_cast<Eigen::Index>(phrases * positions), static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) = basis.row(r);
  emb.values = tape.constant(x);
  store.get("bias.mem.nobias_key").matrix() = basis.row(static_cast<Eigen::Index>(phrases * positions));
  store.get("bias.mem.nobias_value").matrix() = basis.row(static_cast<Eigen::Index>(phrases * positions) + 1);

  const auto mem = memory::build_memory(tape, store, emb, BiasVariant::kNam);
  ASSERT_EQ(mem.real_slots(), 100u);
  const Mat& keys = mem.keys.value();
  const auto r = memory::retrieve(tape, store, mha, tape.constant(keys), mem);
  const Mat& out = r.context.value();
  for (Eigen::Index l = 0; l < keys.rows(); ++l) {
    ASSERT_LT((out.row(l) - mem.values.value().row(l)).cwiseAbs().maxCoeff(), 1e-6) << "slot " << l;
  }
}

TEST(Memory, ZeroProjectionIsExactIdentity) {
  for (BiasVariant v : {BiasVariant::kNam, BiasVariant::kNamNoLeftShift, BiasVariant::kNamSingle,
                        BiasVariant::kClasEncoder}) {
    Bench s(v);
    Tape tape;
    const auto emb = context::encode_phrases(tape, s.store, s.enc, context({"abc", "de", "q"}));
    const auto mem = memory::build_memory(tape, s.store, emb, v);
    std::mt19937_64 rng(11);
    const Mat h = random_mat(9, s.mha.input_dim, rng);
    const Mat out = memory::bias_features(tape, s.store, s.mha, tape.constant(h), mem, v).value();
    EXPECT_EQ(out, h);
  }
}

TEST(Memory, OutputShapeMatchesInput) {
  Bench s(BiasVariant::kNam);
  s.randomize_projection(1);
  std::mt19937_64 rng(12);
  for (const ContextSet& ctx : {ContextSet(), context({"a"}), context({"abcdefgh", "ij", "k l m"})}) {
    Tape tape;
    const auto emb = context::encode_phrases(tape, s.store, s.enc, ctx);
    const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kNam);
    const Mat h = random_mat(5, s.mha.input_dim, rng);
    const Mat out = memory::bias_features(tape, s.store, s.mha, tape.constant(h), mem, BiasVariant::kNam).value();
    EXPECT_EQ(out.rows(), 5);
    EXPECT_EQ(out.cols(), static_cast<Eigen::Index>(s.mha.input_dim));
  }
}

TEST(Memory, ClasScoresMatchDirectFormula) {
  Bench s(BiasVariant::kClasEncoder);
  Tape tape;
  const auto emb = context::encode_phrases(tape, s.store, s.enc, context({"abc", "de"}));
  const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kClasEncoder);
  ASSERT_EQ(mem.slots(), 3u);
  std::mt19937_64 rng(13);
  const Mat h = random_mat(2, s.mha.input_dim, rng);
  const auto r = memory::retrieve_clas(tape, s.store, s.mha, tape.constant(h), mem);
  const Mat Wh = s.store.get("bias.clas.h.w").matrix();
  const Mat bh = s.store.get("bias.clas.h.b").matrix();
  const Mat Wz = s.store.get("bias.clas.z.w").matrix();
  const Mat w = s.store.get("bias.clas.w.w").matrix();
  const Mat& z = mem.keys.value();
  for (Eigen::Index t = 0; t < 2; ++t) {
    std::vector<double> sc;
    for (Eigen::Index i = 0; i < 3; ++i) {
      const Mat pre = h.row(t) * Wh + bh + z.row(i) * Wz;
      sc.push_back((pre.array().tanh().matrix() * w)(0, 0));
    }
    const double mx = *std::max_element(sc.begin(), sc.end());
    double zsum = 0;
    for (double v : sc) zsum += std::exp(v - mx);
    for (Eigen::Index i = 0; i < 3; ++i) {
      EXPECT_NEAR(r.weights[0](t, i), std::exp(sc[static_cast<std::size_t>(i)] - mx) / zsum, 1e-12);
    }
  }
}

TEST(Memory, ClasIdenticalPhrasesGetEqualWeight) {
  Bench s(BiasVariant::kClasEncoder);
  Tape tape;
  const auto emb = context::encode_phrases(tape, s.store, s.enc, context({"same", "same", "same"}));
  const auto mem = memory::build_memory(tape, s.store, emb, BiasVariant::kClasEncoder);
  std::mt19937_64 rng(14);
  const auto r = memory::retrieve_clas(tape, s.store, s.mha, tape.constant(random_mat(4, s.mha.input_dim, rng)), mem);
  for (Eigen::Index t = 0; t < 4; ++t) {
    EXPECT_NEAR(r.weights[0](t, 0), r.weights[0](t, 1), 1e-14);
    EXPECT_NEAR(r.weights[0](t, 1), r.weights[0](t, 2), 1e-14);
  }
}

class MemoryGradient : public ::testing::TestWithParam<BiasVariant> {};

TEST_P(MemoryGradient, CompositePassesGradientCheck) {
  Bench s(GetParam(), 15);
  s.randomize_projection(16);
  std::mt19937_64 rng(17);
  s.store.add("h", numerics::Tensor::from_matrix(random_mat(3, s.mha.input_dim, rng)));
  s.store.set_trainable_prefixes({""});
  const ContextSet ctx = context({"abc", "de"});
  const Mat w = random_mat(3, s.mha.input_dim, rng);
  const double err = numerics::grad_check(s.store, [&](Tape& t) {
    const auto emb = context::encode_phrases(t, s.store, s.enc, ctx);
    const auto mem = memory::build_memory(t, s.store, emb, GetParam());
    Var out = memory::bias_features(t, s.store, s.mha, t.param(s.store.get("h")), mem, GetParam());
    return numerics::sum(numerics::mul(numerics::tanh(out), t.constant(w)));
  });
  EXPECT_LT(err, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Variants, MemoryGradient,
                         ::testing::Values(BiasVariant::kNam, BiasVariant::kNamNoLeftShift, BiasVariant::kNamSingle,
                                           BiasVariant::kClasEncoder),
                         [](const auto& info) {
                           std::string n(memory::to_string(info.param));
                           std::erase(n, '-');
                           return n;
                         });

TEST(Memory, VariantNamesRoundTrip) {
  for (BiasVariant v : {BiasVariant::kNam, BiasVariant::kNamNoLeftShift, BiasVariant::kNamSingle,
                        BiasVariant::kClasEncoder, BiasVariant::kNone}) {
    EXPECT_EQ(memory::parse_variant(memory::to_string(v)), v);
  }
  EXPECT_THROW((void)memory::parse_variant("attention"), std::invalid_argument);
}

}  // namespace
