// SPDX-License-Identifier: Apache-2.0

#include "nam/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace nam::training {

using corpus::TokenId;
using numerics::Mat;
using numerics::Tape;
using numerics::Var;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto sm = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return sm(sm(seed ^ sm(a)) ^ sm(b + 0x632be59bd9b4e019ULL));
}

std::vector<std::string> pretrain_prefixes() {
  return {asr::kEncoderPrefix + ".", asr::kPredictorPrefix + ".", asr::kJointPrefix + "."};
}

std::vector<std::string> bias_prefixes(bool freeze_encoder, bool freeze_prediction) {
  std::vector<std::string> out{memory::kPrefix + ".", asr::kJointPrefix + "."};
  if (!freeze_prediction) out.push_back(asr::kPredictorPrefix + ".");
  if (!freeze_encoder) out.push_back(asr::kEncoderPrefix + ".");
  return out;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  corpus::Rng rng(mix_seed(seed, 101, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Runs one epoch of mini-batch updates; `loss_of(tape, index, epoch)` returns
// the summed negative log-likelihood of one utterance and its token count.
template <class LossFn>
std::pair<double, double> run_epoch(ParamStore& store, Optimizer& opt, std::size_t n, const TrainConfig& tc,
                                    int epoch, LossFn&& loss_of) {
  const auto order = epoch_order(n, tc.seed, epoch);
  double total = 0.0;
  double tokens = 0.0;
  double norm_sum = 0.0;
  std::size_t steps = 0;
  const std::size_t batch = static_cast<std::size_t>(std::max(1, tc.batch));
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    store.zero_grad();
    for (std::size_t i = b; i < e; ++i) {
      Tape tape;
      auto [loss, count] = loss_of(tape, order[i], epoch);
      total += loss.value()(0, 0);
      tokens += count;
      tape.backward(numerics::scale(loss, 1.0 / static_cast<double>(e - b)));
    }
    norm_sum += opt.step(store);
    ++steps;
  }
  return {tokens > 0 ? total / tokens : 0.0, steps > 0 ? norm_sum / static_cast<double>(steps) : 0.0};
}

bool improved_recently(const std::vector<EpochLog>& logs, int patience) {
  if (patience <= 0 || static_cast<int>(logs.size()) <= patience) return true;
  double best_before = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + static_cast<std::size_t>(patience) < logs.size(); ++i) {
    best_before = std::min(best_before, logs[i].dev_loss);
  }
  for (std::size_t i = logs.size() - static_cast<std::size_t>(patience); i < logs.size(); ++i) {
    if (logs[i].dev_loss < best_before) return true;
  }
  return false;
}

template <class EpochFn, class DevFn>
TrainResult train_loop(ParamStore& store, Optimizer& opt, const TrainConfig& tc, int start_epoch,
                       const EpochHook& hook, EpochFn&& epoch_fn, DevFn&& dev_fn) {
  TrainResult result;
  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    std::tie(log.train_loss, log.grad_norm) = epoch_fn(epoch);
    log.dev_loss = dev_fn();
    result.epochs.push_back(log);
    if (hook && !hook(log, store, opt)) {
      result.status = "stopped by hook";
      return result;
    }
    if (!improved_recently(result.epochs, tc.patience)) {
      result.early_stopped = true;
      result.status = "early stop: dev loss did not improve for " + std::to_string(tc.patience) + " epochs";
      return result;
    }
  }
  result.status = "completed";
  return result;
}

}  // namespace

TrainResult pretrain(ParamStore& store, Optimizer& opt, const ModelConfig& cfg, const std::vector<Utterance>& train,
                     const std::vector<Utterance>& dev, const TrainConfig& tc, int start_epoch,
                     const EpochHook& hook) {
  if (model::has_bias_params(store)) throw std::invalid_argument("pretrain: store already holds biasing parameters");
  store.set_trainable_prefixes(pretrain_prefixes());
  auto utt_loss = [&](Tape& tape, const Utterance& u) {
    Var h = asr::encode_audio(tape, store, cfg.asr, u.frames);
    Var loss = model::utterance_loss(tape, store, cfg, h, u.reference);
    return std::pair<Var, double>{loss, static_cast<double>(u.reference.size() + 1)};
  };
  auto dev_fn = [&] {
    double total = 0.0;
    double tokens = 0.0;
    for (const auto& u : dev) {
      Tape tape;
      auto [loss, count] = utt_loss(tape, u);
      total += loss.value()(0, 0);
      tokens += count;
    }
    return tokens > 0 ? total / tokens : 0.0;
  };
  auto epoch_fn = [&](int epoch) {
    return run_epoch(store, opt, train.size(), tc, epoch,
                     [&](Tape& tape, std::size_t i, int) { return utt_loss(tape, train[i]); });
  };
  return train_loop(store, opt, tc, start_epoch, hook, epoch_fn, dev_fn);
}

std::vector<Phrase> ngram_pool(const corpus::Vocab& vocab, const std::vector<Utterance>& utts, std::size_t count,
                               corpus::NgramRange range, std::uint64_t seed) {
  std::vector<Phrase> pool;
  if (utts.empty()) return pool;
  corpus::Rng rng(mix_seed(seed, 202));
  std::uniform_int_distribution<std::size_t> pick(0, utts.size() - 1);
  for (std::size_t guard = 0; pool.size() < count && guard < count * 20; ++guard) {
    const auto& u = utts[pick(rng)];
    corpus::BiasSample s = corpus::sample_bias(u.reference, vocab.space(), 1.0, range, rng);
    if (!s.phrase) continue;
    const std::string text = vocab.detokenize(*s.phrase);
    if (std::any_of(pool.begin(), pool.end(), [&](const Phrase& p) { return p.text == text; })) continue;
    pool.push_back(Phrase{*s.phrase, text, corpus::PhraseRole::kDistractor});
  }
  return pool;
}

BiasExample bias_example(const corpus::Vocab& vocab, const Utterance& utt, const std::vector<Phrase>& pool,
                         const BiasTrainConfig& bc, int epoch, std::size_t index) {
  corpus::Rng rng(mix_seed(bc.train.seed, 303 + static_cast<std::uint64_t>(epoch), index));
  corpus::BiasSample s = corpus::sample_bias(utt.reference, vocab.space(), bc.sample_prob, bc.ngrams, rng, bc.marker);
  std::optional<Phrase> positive;
  if (s.phrase) positive = Phrase{*s.phrase, vocab.detokenize(*s.phrase), corpus::PhraseRole::kPositive};
  BiasExample ex;
  ex.has_positive = positive.has_value();
  ex.context = corpus::build_context_set(positive, pool, bc.distractors, rng);
  ex.labels = std::move(s.annotated);
  return ex;
}

TrainResult train_bias(ParamStore& store, Optimizer& opt, const ModelConfig& cfg, const corpus::Vocab& vocab,
                       const std::vector<Utterance>& train, const std::vector<Utterance>& dev,
                       const BiasTrainConfig& bc, int start_epoch, const EpochHook& hook) {
  if (cfg.variant == model::BiasVariant::kNone) throw std::invalid_argument("train_bias: variant none has nothing to train");
  if (!model::has_bias_params(store)) throw std::invalid_argument("train_bias: biasing module not attached");
  store.set_trainable_prefixes(bias_prefixes(bc.freeze_encoder, bc.freeze_prediction));
  const std::vector<Phrase> pool = ngram_pool(vocab, train, bc.pool_size, bc.ngrams, bc.train.seed);

  // With a frozen encoder its outputs never change, so compute them once.
  std::vector<Mat> train_h;
  std::vector<Mat> dev_h;
  if (bc.freeze_encoder) {
    auto cache = [&](const std::vector<Utterance>& utts, std::vector<Mat>& out) {
      out.reserve(utts.size());
      for (const auto& u : utts) {
        Tape tape;
        out.push_back(asr::encode_audio(tape, store, cfg.asr, u.frames).value());
      }
    };
    cache(train, train_h);
    cache(dev, dev_h);
  }
  auto utt_loss = [&](Tape& tape, const Utterance& u, const Mat* cached, const BiasExample& ex) {
    Var h = cached != nullptr ? tape.constant(*cached) : asr::encode_audio(tape, store, cfg.asr, u.frames);
    Var f = model::biased_features(tape, store, cfg, h, ex.context);
    Var loss = model::utterance_loss(tape, store, cfg, f, ex.labels);
    return std::pair<Var, double>{loss, static_cast<double>(ex.labels.size() + 1)};
  };
  auto dev_fn = [&] {
    double total = 0.0;
    double tokens = 0.0;
    for (std::size_t i = 0; i < dev.size(); ++i) {
      // Dev contexts are fixed across epochs so losses are comparable.
      const BiasExample ex = bias_example(vocab, dev[i], pool, bc, -1, i);
      Tape tape;
      auto [loss, count] = utt_loss(tape, dev[i], bc.freeze_encoder ? &dev_h[i] : nullptr, ex);
      total += loss.value()(0, 0);
      tokens += count;
    }
    return tokens > 0 ? total / tokens : 0.0;
  };
  auto epoch_fn = [&](int epoch) {
    return run_epoch(store, opt, train.size(), bc.train, epoch, [&](Tape& tape, std::size_t i, int ep) {
      const BiasExample ex = bias_example(vocab, train[i], pool, bc, ep, i);
      return utt_loss(tape, train[i], bc.freeze_encoder ? &train_h[i] : nullptr, ex);
    });
  };
  return train_loop(store, opt, bc.train, start_epoch, hook, epoch_fn, dev_fn);
}

}  // namespace nam::training
