// SPDX-License-Identifier: Apache-2.0

#include "nam/asr_core.hpp"

#include <cmath>
#include <limits>

#include "nam/layers.hpp"

namespace nam::asr {

using numerics::log_sum_exp;
using numerics::Tensor;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void AsrConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("asr: vocab too small");
  if (subsample < 1) throw std::invalid_argument("asr: subsample must be >= 1");
  if (enc_heads == 0 || enc_dim % enc_heads != 0) {
    throw std::invalid_argument("asr: enc_dim " + std::to_string(enc_dim) + " not divisible by enc_heads " +
                                std::to_string(enc_heads));
  }
}

void init_params(ParamStore& store, const AsrConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t in = cfg.frame_dim * cfg.subsample * (2 * cfg.splice + 1);
  layers::add_linear(store, kEncoderPrefix + ".in", in, cfg.enc_dim, rng);
  const layers::BlockConfig block{cfg.enc_dim, cfg.enc_heads, cfg.enc_ff};
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    layers::add_transformer_block(store, kEncoderPrefix + ".block" + std::to_string(l), block, rng);
  }
  layers::add_layer_norm(store, kEncoderPrefix + ".ln", cfg.enc_dim);

  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.pred_dim)));
  Tensor emb({cfg.vocab_size, cfg.pred_dim});
  for (double& v : emb.data()) v = normal(rng);
  store.add(kPredictorPrefix + ".emb", std::move(emb));
  layers::add_linear(store, kPredictorPrefix + ".x", cfg.pred_dim, cfg.pred_dim, rng);
  layers::add_linear(store, kPredictorPrefix + ".h", cfg.pred_dim, cfg.pred_dim, rng, false);

  layers::add_linear(store, kJointPrefix + ".enc", cfg.enc_dim, cfg.joint_dim, rng, false);
  layers::add_linear(store, kJointPrefix + ".pred", cfg.pred_dim, cfg.joint_dim, rng);
  layers::add_linear(store, kJointPrefix + ".out", cfg.joint_dim, cfg.vocab_size, rng);
}

Var encode_audio(Tape& tape, ParamStore& store, const AsrConfig& cfg, const Mat& frames) {
  if (frames.rows() == 0) throw std::invalid_argument("encode_audio: empty input");
  if (static_cast<std::size_t>(frames.cols()) != cfg.frame_dim) {
    throw numerics::ShapeError("encode_audio: frame dim " + std::to_string(frames.cols()) + ", expected " +
                               std::to_string(cfg.frame_dim));
  }
  const auto f = frames.cols();
  const auto s = static_cast<Eigen::Index>(cfg.subsample);
  const Eigen::Index steps = (frames.rows() + s - 1) / s;
  Mat stacked = Mat::Zero(steps, f * s);
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    stacked.block(r / s, (r % s) * f, 1, f) = frames.row(r);
  }
  const auto c = static_cast<Eigen::Index>(cfg.splice);
  const Eigen::Index w = stacked.cols();
  Mat spliced = Mat::Zero(steps, w * (2 * c + 1));
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index o = -c; o <= c; ++o) {
      const Eigen::Index src = t + o;
      if (src >= 0 && src < steps) spliced.block(t, (o + c) * w, 1, w) = stacked.row(src);
    }
  }
  Var x = layers::linear(tape, store, kEncoderPrefix + ".in", tape.constant(std::move(spliced)));
  x = numerics::add(x, tape.constant(layers::sinusoidal_positions(steps, static_cast<Eigen::Index>(cfg.enc_dim))));
  const layers::BlockConfig block{cfg.enc_dim, cfg.enc_heads, cfg.enc_ff};
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    x = layers::transformer_block(tape, store, kEncoderPrefix + ".block" + std::to_string(l), block, x);
  }
  return layers::layer_norm(tape, store, kEncoderPrefix + ".ln", x);
}

Var predict(Tape& tape, ParamStore& store, const AsrConfig& cfg, std::span<const TokenId> labels) {
  std::vector<std::ptrdiff_t> inputs{corpus::Vocab::kBlank};
  for (TokenId t : labels) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw std::out_of_range("predict: label " + std::to_string(t) + " outside vocab");
    }
    inputs.push_back(t);
  }
  Var emb = tape.param(store.get(kPredictorPrefix + ".emb"));
  Var xw = layers::linear(tape, store, kPredictorPrefix + ".x", numerics::gather_rows(emb, inputs));
  Var wh = tape.param(store.get(kPredictorPrefix + ".h.w"));
  std::vector<Var> states;
  states.reserve(inputs.size());
  Var g = numerics::tanh(numerics::slice_rows(xw, 0, 1));
  states.push_back(g);
  for (Eigen::Index u = 1; u < static_cast<Eigen::Index>(inputs.size()); ++u) {
    g = numerics::tanh(numerics::add(numerics::slice_rows(xw, u, 1), numerics::matmul(g, wh)));
    states.push_back(g);
  }
  return states.size() == 1 ? states.front() : numerics::concat_rows(states);
}

Var joint(Tape& tape, ParamStore& store, const AsrConfig& cfg, Var h, Var g) {
  (void)cfg;
  Var he = layers::linear(tape, store, kJointPrefix + ".enc", h);
  Var gp = layers::linear(tape, store, kJointPrefix + ".pred", g);
  Var z = numerics::tanh(numerics::outer_sum(he, gp));
  return numerics::log_softmax_rows(layers::linear(tape, store, kJointPrefix + ".out", z));
}

TransducerLoss rnnt_loss_value(const Mat& lattice, Eigen::Index frames, std::span<const TokenId> labels,
                               Mat* grad) {
  const auto L = static_cast<Eigen::Index>(labels.size());
  const Eigen::Index U = L + 1;
  if (frames <= 0 || lattice.rows() != frames * U) {
    throw numerics::ShapeError("rnnt_loss: lattice " + numerics::shape_string(lattice.rows(), lattice.cols()) +
                               " does not match T=" + std::to_string(frames) + ", L=" + std::to_string(L));
  }
  for (TokenId y : labels) {
    if (y <= 0 || y >= lattice.cols()) throw std::out_of_range("rnnt_loss: label outside lattice vocab");
  }
  auto lp = [&](Eigen::Index t, Eigen::Index u, Eigen::Index k) { return lattice(t * U + u, k); };
  auto label = [&](Eigen::Index u) { return static_cast<Eigen::Index>(labels[static_cast<std::size_t>(u)]); };

  Mat alpha = Mat::Constant(frames, U, kNegInf);
  alpha(0, 0) = 0.0;
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index u = 0; u < U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = alpha(t - 1, u) + lp(t - 1, u, 0);
      if (u > 0) a = log_sum_exp(a, alpha(t, u - 1) + lp(t, u - 1, label(u - 1)));
      alpha(t, u) = a;
    }
  }
  const double log_p = alpha(frames - 1, L) + lp(frames - 1, L, 0);
  TransducerLoss out;
  if (!std::isfinite(log_p)) {
    out.nll = std::numeric_limits<double>::infinity();
    out.feasible = false;
    if (grad != nullptr) *grad = Mat::Zero(lattice.rows(), lattice.cols());
    return out;
  }
  out.nll = -log_p;
  if (grad == nullptr) return out;

  Mat beta = Mat::Constant(frames, U, kNegInf);
  beta(frames - 1, L) = lp(frames - 1, L, 0);
  for (Eigen::Index t = frames; t-- > 0;) {
    for (Eigen::Index u = U; u-- > 0;) {
      if (t == frames - 1 && u == L) continue;
      double b = kNegInf;
      if (t < frames - 1) b = beta(t + 1, u) + lp(t, u, 0);
      if (u < L) b = log_sum_exp(b, beta(t, u + 1) + lp(t, u, label(u)));
      beta(t, u) = b;
    }
  }
  *grad = Mat::Zero(lattice.rows(), lattice.cols());
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index u = 0; u < U; ++u) {
      const double a = alpha(t, u);
      if (a == kNegInf) continue;
      if (t < frames - 1) {
        (*grad)(t * U + u, 0) = -std::exp(a + lp(t, u, 0) + beta(t + 1, u) - log_p);
      } else if (u == L) {
        (*grad)(t * U + u, 0) = -std::exp(a + lp(t, u, 0) - log_p);
      }
      if (u < L) {
        (*grad)(t * U + u, label(u)) = -std::exp(a + lp(t, u, label(u)) + beta(t, u + 1) - log_p);
      }
    }
  }
  return out;
}

Var rnnt_loss(Var lattice, Eigen::Index frames, std::span<const TokenId> labels) {
  Mat g;
  const TransducerLoss loss = rnnt_loss_value(lattice.value(), frames, labels, &g);
  if (!loss.feasible) throw numerics::NumericError("rnnt_loss: no feasible alignment");
  Mat out(1, 1);
  out(0, 0) = loss.nll;
  return lattice.tape()->record(
      std::move(out), {lattice},
      [lattice, g = std::move(g)](Tape& t, const Mat& og, const Mat&) { t.grad(lattice) += og(0, 0) * g; },
      "rnnt_loss");
}

// ---- inference ------------------------------------------------------------

InferenceModel::InferenceModel(const ParamStore& store, const AsrConfig& cfg) {
  (void)cfg;
  const Mat emb = store.get(kPredictorPrefix + ".emb").matrix();
  token_input = emb * store.get(kPredictorPrefix + ".x.w").matrix();
  token_input.rowwise() += store.get(kPredictorPrefix + ".x.b").matrix().row(0);
  pred_recurrent = store.get(kPredictorPrefix + ".h.w").matrix();
  joint_enc = store.get(kJointPrefix + ".enc.w").matrix();
  joint_pred = store.get(kJointPrefix + ".pred.w").matrix();
  joint_bias = store.get(kJointPrefix + ".pred.b").matrix().row(0);
  joint_out = store.get(kJointPrefix + ".out.w").matrix();
  joint_out_bias = store.get(kJointPrefix + ".out.b").matrix().row(0);
}

ModelScorer::ModelScorer(const InferenceModel& model, const Mat& features)
    : model_(&model), enc_proj_(features * model.joint_enc) {}

ModelScorer::State ModelScorer::from_hidden(RowVec g) const {
  State s;
  s.g_proj = g * model_->joint_pred + model_->joint_bias;
  s.g = std::move(g);
  return s;
}

ModelScorer::State ModelScorer::initial() const {
  RowVec g = model_->token_input.row(corpus::Vocab::kBlank).array().tanh().matrix();
  return from_hidden(std::move(g));
}

Eigen::VectorXd ModelScorer::log_probs(Eigen::Index t, const State& s) const {
  const RowVec z = (enc_proj_.row(t) + s.g_proj).array().tanh().matrix();
  RowVec logits = z * model_->joint_out + model_->joint_out_bias;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix().transpose();
}

ModelScorer::State ModelScorer::advance(const State& s, TokenId token) const {
  RowVec pre = model_->token_input.row(token) + s.g * model_->pred_recurrent;
  return from_hidden(pre.array().tanh().matrix());
}

}  // namespace nam::asr
