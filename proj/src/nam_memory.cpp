// SPDX-License-Identifier: Apache-2.0

#include "nam/nam_memory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nam/layers.hpp"

namespace nam::memory {

using numerics::Tensor;

std::string_view to_string(BiasVariant v) {
  switch (v) {
    case BiasVariant::kNam: return "nam";
    case BiasVariant::kNamNoLeftShift: return "nam-noshift";
    case BiasVariant::kNamSingle: return "nam-single";
    case BiasVariant::kClasEncoder: return "clas";
    case BiasVariant::kNone: return "none";
  }
  return "none";
}

BiasVariant parse_variant(std::string_view name) {
  for (BiasVariant v : {BiasVariant::kNam, BiasVariant::kNamNoLeftShift, BiasVariant::kNamSingle,
                        BiasVariant::kClasEncoder, BiasVariant::kNone}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown bias variant '" + std::string(name) +
                              "' (expected nam, nam-noshift, nam-single, clas or none)");
}

std::size_t AssociativeMemory::real_slots() const {
  return static_cast<std::size_t>(
      std::count_if(origin.begin(), origin.end(), [](const SlotOrigin& o) { return o.phrase >= 0; }));
}

namespace {

Tensor random_row(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Tensor t({1, dim});
  for (double& v : t.data()) v = normal(rng);
  return t;
}

// Masked mean over the unpadded positions of each phrase, one row per phrase.
Var phrase_means(const context::PhraseEmbeddings& emb) {
  std::vector<Var> rows;
  rows.reserve(emb.phrases);
  for (std::size_t i = 0; i < emb.phrases; ++i) {
    std::vector<std::ptrdiff_t> idx;
    for (std::size_t u = 0; u < emb.positions; ++u) {
      if (emb.valid(i, u)) idx.push_back(static_cast<std::ptrdiff_t>(emb.row(i, u)));
    }
    rows.push_back(numerics::mean_rows(numerics::gather_rows(emb.values, idx)));
  }
  return rows.size() == 1 ? rows.front() : numerics::concat_rows(rows);
}

BoolMat broadcast_mask(const std::vector<std::uint8_t>& mask, Eigen::Index rows) {
  BoolMat m(rows, static_cast<Eigen::Index>(mask.size()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) m.col(c).setConstant(mask[static_cast<std::size_t>(c)] != 0);
  return m;
}

}  // namespace

void init_params(ParamStore& store, const MhaConfig& cfg, BiasVariant variant, std::mt19937_64& rng,
                 const std::string& prefix) {
  switch (variant) {
    case BiasVariant::kNone:
      return;
    case BiasVariant::kClasEncoder:
      layers::add_linear(store, prefix + ".clas.h", cfg.input_dim, cfg.clas_dim, rng);
      layers::add_linear(store, prefix + ".clas.z", cfg.memory_dim, cfg.clas_dim, rng, false);
      layers::add_linear(store, prefix + ".clas.w", cfg.clas_dim, 1, rng, false);
      store.add(prefix + ".clas.nobias", random_row(cfg.memory_dim, rng));
      layers::add_zero_linear(store, prefix + ".proj", cfg.memory_dim, cfg.input_dim);
      return;
    default:
      break;
  }
  store.add(prefix + ".mem.nobias_key", random_row(cfg.memory_dim, rng));
  store.add(prefix + ".mem.nobias_value", random_row(cfg.memory_dim, rng));
  layers::add_linear(store, prefix + ".mha.q", cfg.input_dim, cfg.hidden(), rng, false);
  layers::add_linear(store, prefix + ".mha.k", cfg.memory_dim, cfg.hidden(), rng, false);
  layers::add_linear(store, prefix + ".mha.v", cfg.memory_dim, cfg.hidden(), rng, false);
  layers::add_zero_linear(store, prefix + ".proj", cfg.hidden(), cfg.input_dim);
}

AssociativeMemory build_memory(Tape& tape, ParamStore& store, const context::PhraseEmbeddings& emb,
                               BiasVariant variant, const std::string& prefix) {
  if (variant == BiasVariant::kNone) throw std::invalid_argument("build_memory: variant none has no memory");
  AssociativeMemory mem;
  const bool pooled = variant == BiasVariant::kNamSingle || variant == BiasVariant::kClasEncoder;
  Var no_key;
  Var no_value;
  if (variant == BiasVariant::kClasEncoder) {
    no_key = tape.param(store.get(prefix + ".clas.nobias"));
    no_value = no_key;
  } else {
    no_key = tape.param(store.get(prefix + ".mem.nobias_key"));
    no_value = tape.param(store.get(prefix + ".mem.nobias_value"));
  }

  if (emb.empty()) {
    mem.keys = no_key;
    mem.values = no_value;
    mem.mask = {1};
    mem.origin = {SlotOrigin{}};
    return mem;
  }

  if (pooled) {
    Var means = phrase_means(emb);
    mem.keys = numerics::concat_rows({means, no_key});
    mem.values = variant == BiasVariant::kClasEncoder ? mem.keys : numerics::concat_rows({means, no_value});
    mem.mask.assign(emb.phrases + 1, 1);
    for (std::size_t i = 0; i < emb.phrases; ++i) {
      mem.origin.push_back(SlotOrigin{static_cast<std::ptrdiff_t>(i), -1, -1});
    }
    mem.origin.push_back(SlotOrigin{});
    return mem;
  }

  // One slot per real token: U = positions - 1 slots per phrase, padded.
  const std::size_t per_phrase = emb.positions - 1;
  const std::size_t n_real = emb.phrases * per_phrase;
  std::vector<std::ptrdiff_t> key_rows(n_real, -1);
  std::vector<std::ptrdiff_t> value_rows(n_real, -1);
  mem.mask.assign(n_real + 1, 0);
  mem.origin.assign(n_real + 1, SlotOrigin{});
  const bool shift = variant == BiasVariant::kNam;
  for (std::size_t i = 0; i < emb.phrases; ++i) {
    for (std::size_t u = 1; u < emb.positions; ++u) {
      if (!emb.valid(i, u)) continue;
      const std::size_t slot = i * per_phrase + (u - 1);
      const std::size_t key_pos = shift ? u - 1 : u;
      key_rows[slot] = static_cast<std::ptrdiff_t>(emb.row(i, key_pos));
      value_rows[slot] = static_cast<std::ptrdiff_t>(emb.row(i, u));
      mem.mask[slot] = 1;
      mem.origin[slot] = SlotOrigin{static_cast<std::ptrdiff_t>(i), static_cast<std::ptrdiff_t>(key_pos),
                                    static_cast<std::ptrdiff_t>(u)};
    }
  }
  mem.mask.back() = 1;
  mem.keys = numerics::concat_rows({numerics::gather_rows(emb.values, key_rows), no_key});
  mem.values = numerics::concat_rows({numerics::gather_rows(emb.values, value_rows), no_value});
  return mem;
}

Retrieval retrieve(Tape& tape, ParamStore& store, const MhaConfig& cfg, Var h, const AssociativeMemory& mem,
                   const std::string& prefix) {
  using namespace numerics;
  if (mem.slots() == 0) throw std::invalid_argument("retrieve: empty memory");
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim);
  const double s = 1.0 / (std::sqrt(static_cast<double>(dh)) * cfg.temperature);
  Var q = layers::linear(tape, store, prefix + ".mha.q", h);
  Var k = layers::linear(tape, store, prefix + ".mha.k", mem.keys);
  Var v = layers::linear(tape, store, prefix + ".mha.v", mem.values);
  const BoolMat mask = broadcast_mask(mem.mask, h.rows());
  Retrieval out;
  std::vector<Var> heads;
  for (std::size_t a = 0; a < cfg.heads; ++a) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(a) * dh;
    Var logits = scale(matmul_nt(slice_cols(q, c0, dh), slice_cols(k, c0, dh)), s);
    Var w = softmax_rows(logits, &mask);
    out.weights.push_back(w.value());
    heads.push_back(matmul(w, slice_cols(v, c0, dh)));
  }
  out.context = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return out;
}

Retrieval retrieve_clas(Tape& tape, ParamStore& store, const MhaConfig& cfg, Var h,
                        const AssociativeMemory& mem, const std::string& prefix) {
  using namespace numerics;
  (void)cfg;
  const Eigen::Index frames = h.rows();
  const auto n = static_cast<Eigen::Index>(mem.slots());
  Var hp = layers::linear(tape, store, prefix + ".clas.h", h);           // T x a
  Var zp = layers::linear(tape, store, prefix + ".clas.z", mem.keys);    // N x a
  Var scores = layers::linear(tape, store, prefix + ".clas.w", tanh(outer_sum(hp, zp)));  // (T*N) x 1
  const BoolMat mask = broadcast_mask(mem.mask, frames);
  Var w = softmax_rows(reshape(scores, frames, n), &mask);
  Retrieval out;
  out.weights.push_back(w.value());
  out.context = matmul(w, mem.values);
  return out;
}

Var bias_features(Tape& tape, ParamStore& store, const MhaConfig& cfg, Var h, const AssociativeMemory& mem,
                  BiasVariant variant, const std::string& prefix) {
  if (variant == BiasVariant::kNone) return h;
  const Retrieval r = variant == BiasVariant::kClasEncoder ? retrieve_clas(tape, store, cfg, h, mem, prefix)
                                                           : retrieve(tape, store, cfg, h, mem, prefix);
  return numerics::add(h, layers::linear(tape, store, prefix + ".proj", r.context));
}

}  // namespace nam::memory
