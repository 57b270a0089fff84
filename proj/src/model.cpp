// SPDX-License-Identifier: Apache-2.0

#include "nam/model.hpp"

#include <sstream>

namespace nam::model {

void ModelConfig::finalize(std::size_t vocab_size) {
  asr.vocab_size = vocab_size;
  context.vocab_size = vocab_size;
  mha.input_dim = asr.enc_dim;
  mha.memory_dim = context.dim;
  asr.validate();
  context.validate();
  if (mha.heads == 0 || mha.head_dim == 0) throw std::invalid_argument("mha: heads and head_dim must be positive");
  if (!(mha.temperature > 0.0)) throw std::invalid_argument("mha: temperature must be positive");
}

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os << "vocab=" << asr.vocab_size << ";frame_dim=" << asr.frame_dim << ";enc_dim=" << asr.enc_dim
     << ";enc_layers=" << asr.enc_layers << ";enc_heads=" << asr.enc_heads << ";enc_ff=" << asr.enc_ff
     << ";splice=" << asr.splice << ";subsample=" << asr.subsample << ";pred_dim=" << asr.pred_dim
     << ";joint_dim=" << asr.joint_dim << ";ctx_dim=" << context.dim << ";ctx_layers=" << context.layers
     << ";ctx_heads=" << context.heads << ";ctx_ff=" << context.ff_dim << ";mha_heads=" << mha.heads
     << ";mha_head_dim=" << mha.head_dim << ";clas_dim=" << mha.clas_dim << ";variant=" << to_string(variant);
  return os.str();
}

void init_base(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  asr::init_params(store, cfg.asr, rng);
}

void attach_bias(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.variant == BiasVariant::kNone) return;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  context::init_params(store, cfg.context, rng);
  memory::init_params(store, cfg.mha, cfg.variant, rng);
}

bool has_bias_params(const ParamStore& store) {
  for (const auto& [name, _] : store) {
    if (name.starts_with(memory::kPrefix + ".")) return true;
  }
  return false;
}

Var biased_features(Tape& tape, ParamStore& store, const ModelConfig& cfg, Var h, const corpus::ContextSet& ctx) {
  if (cfg.variant == BiasVariant::kNone) return h;
  const context::PhraseEmbeddings emb = context::encode_phrases(tape, store, cfg.context, ctx);
  const memory::AssociativeMemory mem = memory::build_memory(tape, store, emb, cfg.variant);
  return memory::bias_features(tape, store, cfg.mha, h, mem, cfg.variant);
}

Var utterance_loss(Tape& tape, ParamStore& store, const ModelConfig& cfg, Var features,
                   std::span<const TokenId> labels) {
  Var g = asr::predict(tape, store, cfg.asr, labels);
  Var lattice = asr::joint(tape, store, cfg.asr, features, g);
  return asr::rnnt_loss(lattice, features.rows(), labels);
}

std::vector<TokenId> suppressed_tokens(BiasVariant variant) {
  std::vector<TokenId> out{corpus::Vocab::kPad, corpus::Vocab::kStart};
  if (variant == BiasVariant::kNone) out.push_back(corpus::Vocab::kBiasMarker);
  return out;
}

Mat inference_features(ParamStore& store, const ModelConfig& cfg, const Mat& frames, const corpus::ContextSet& ctx) {
  Tape tape;
  Var h = asr::encode_audio(tape, store, cfg.asr, frames);
  return biased_features(tape, store, cfg, h, ctx).value();
}

}  // namespace nam::model
