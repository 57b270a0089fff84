// SPDX-License-Identifier: Apache-2.0

#include "nam/context_encoder.hpp"

#include <cmath>

namespace nam::context {

using numerics::Mat;
using numerics::Tensor;

void EncoderConfig::validate() const {
  if (vocab_size == 0) throw std::invalid_argument("context encoder: vocab size is zero");
  if (layers < 1) throw std::invalid_argument("context encoder: needs at least one layer");
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("context encoder: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

std::size_t PhraseEmbeddings::length(std::size_t phrase) const {
  std::size_t n = 0;
  for (std::size_t u = 0; u < positions; ++u) n += valid(phrase, u) ? 1 : 0;
  return n;
}

void init_params(ParamStore& store, const EncoderConfig& cfg, std::mt19937_64& rng, const std::string& prefix) {
  cfg.validate();
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  Tensor emb({cfg.vocab_size, cfg.dim});
  for (double& v : emb.data()) v = normal(rng);
  store.add(prefix + ".emb", std::move(emb));
  const layers::BlockConfig block{cfg.dim, cfg.heads, cfg.ff_dim};
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    layers::add_transformer_block(store, prefix + ".block" + std::to_string(l), block, rng);
  }
  layers::add_layer_norm(store, prefix + ".ln", cfg.dim);
}

PhraseEmbeddings encode_phrases(Tape& tape, ParamStore& store, const EncoderConfig& cfg,
                                const corpus::ContextSet& ctx, const std::string& prefix) {
  PhraseEmbeddings out;
  out.phrases = ctx.size();
  if (ctx.empty()) return out;
  out.positions = ctx.max_length() + 1;
  out.mask.assign(out.phrases * out.positions, 0);

  const layers::BlockConfig block{cfg.dim, cfg.heads, cfg.ff_dim};
  Var emb = tape.param(store.get(prefix + ".emb"));
  std::vector<Var> encoded;
  std::vector<std::ptrdiff_t> layout(out.phrases * out.positions, -1);
  std::ptrdiff_t flat = 0;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const auto& ids = ctx.phrases()[i].ids;
    std::vector<std::ptrdiff_t> seq{corpus::Vocab::kStart};
    for (corpus::TokenId t : ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
        throw std::out_of_range("context encoder: token id " + std::to_string(t) + " outside vocab");
      }
      seq.push_back(t);
    }
    const auto n = static_cast<Eigen::Index>(seq.size());
    Var x = numerics::gather_rows(emb, seq);
    if (cfg.positions == PositionalEncoding::kSinusoidal) {
      x = numerics::add(x, tape.constant(layers::sinusoidal_positions(n, static_cast<Eigen::Index>(cfg.dim))));
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      x = layers::transformer_block(tape, store, prefix + ".block" + std::to_string(l), block, x);
    }
    encoded.push_back(layers::layer_norm(tape, store, prefix + ".ln", x));
    for (Eigen::Index u = 0; u < n; ++u) {
      const std::size_t r = out.row(i, static_cast<std::size_t>(u));
      layout[r] = flat++;
      out.mask[r] = 1;
    }
  }
  Var stacked = encoded.size() == 1 ? encoded.front() : numerics::concat_rows(encoded);
  out.values = numerics::gather_rows(stacked, layout);
  return out;
}

}  // namespace nam::context
