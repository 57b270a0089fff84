// SPDX-License-Identifier: Apache-2.0
//
// Greedy and time-synchronous beam decoding for transducers, generic over
// any scorer that exposes per-frame token log-probabilities.
//
// Each frame allows at most `max_symbols_per_frame` label emissions; after
// that a blank is forced (and scored) to move to the next frame. Candidates
// are ranked by total score, then by token sequence so that ties resolve
// towards the shorter prefix and the lower token id. With beam 1 this
// reproduces greedy decoding exactly.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nam/corpus.hpp"

namespace nam::decoding {

using corpus::TokenId;

template <class S>
concept TransducerScorer = requires(const S& s, const typename S::State& st, Eigen::Index t, TokenId k) {
  typename S::State;
  { s.frames() } -> std::convertible_to<Eigen::Index>;
  { s.initial() } -> std::convertible_to<typename S::State>;
  { s.log_probs(t, st) } -> std::convertible_to<Eigen::VectorXd>;
  { s.advance(st, k) } -> std::convertible_to<typename S::State>;
};

/// Position inside an external scorer (e.g. a phrase trie) plus its running total.
struct FusionCursor {
  std::int64_t node = 0;
  double accumulated = 0.0;
};

/// Shallow-fusion hook consulted once per emitted label.
class FusionScorer {
 public:
  virtual ~FusionScorer() = default;
  virtual FusionCursor start() const = 0;
  /// Returns the cursor after `token` and the score delta of that step.
  virtual std::pair<FusionCursor, double> step(const FusionCursor& cursor, TokenId token) const = 0;
};

struct DecodeOptions {
  std::size_t beam = 4;
  int max_symbols_per_frame = 3;
  std::vector<TokenId> suppressed;  // never emitted (e.g. pad and start ids)
  const FusionScorer* fusion = nullptr;
  double fusion_weight = 1.0;
};

struct Hypothesis {
  std::vector<TokenId> tokens;
  double model_score = 0.0;
  double fusion_score = 0.0;
  FusionCursor cursor;

  double score() const { return model_score + fusion_score; }
};

namespace detail {

inline bool better(double sa, const std::vector<TokenId>& ta, double sb, const std::vector<TokenId>& tb) {
  if (sa != sb) return sa > sb;
  return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
}

inline bool better(const Hypothesis& a, const Hypothesis& b) {
  return better(a.score(), a.tokens, b.score(), b.tokens);
}

inline bool is_suppressed(const DecodeOptions& opts, TokenId k) {
  return std::find(opts.suppressed.begin(), opts.suppressed.end(), k) != opts.suppressed.end();
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline std::pair<FusionCursor, double> fuse(const DecodeOptions& opts, const FusionCursor& c, TokenId k) {
  if (opts.fusion == nullptr || k == corpus::Vocab::kBiasMarker) return {c, 0.0};
  auto [next, delta] = opts.fusion->step(c, k);
  return {next, opts.fusion_weight * delta};
}

inline void validate(const DecodeOptions& opts) {
  if (opts.beam == 0) throw std::invalid_argument("decode: beam must be >= 1");
  if (opts.max_symbols_per_frame < 1) throw std::invalid_argument("decode: max_symbols_per_frame must be >= 1");
}

}  // namespace detail

template <TransducerScorer S>
Hypothesis greedy_decode(const S& scorer, const DecodeOptions& opts = {}) {
  detail::validate(opts);
  Hypothesis hyp;
  if (opts.fusion != nullptr) hyp.cursor = opts.fusion->start();
  auto state = scorer.initial();
  for (Eigen::Index t = 0; t < scorer.frames(); ++t) {
    for (int emitted = 0;; ++emitted) {
      const Eigen::VectorXd lp = scorer.log_probs(t, state);
      if (emitted == opts.max_symbols_per_frame) {
        hyp.model_score += lp(corpus::Vocab::kBlank);
        break;
      }
      // Rank by fused score so that beam 1 and greedy agree under fusion.
      TokenId best = corpus::Vocab::kBlank;
      double best_total = lp(corpus::Vocab::kBlank);
      std::pair<FusionCursor, double> best_fuse{hyp.cursor, 0.0};
      for (Eigen::Index k = 1; k < lp.size(); ++k) {
        const auto tok = static_cast<TokenId>(k);
        if (detail::is_suppressed(opts, tok)) continue;
        auto f = detail::fuse(opts, hyp.cursor, tok);
        const double total = lp(k) + f.second;
        if (total > best_total) {
          best = tok;
          best_total = total;
          best_fuse = f;
        }
      }
      hyp.model_score += lp(best);
      if (best == corpus::Vocab::kBlank) break;
      hyp.fusion_score += best_fuse.second;
      hyp.cursor = best_fuse.first;
      hyp.tokens.push_back(best);
      state = scorer.advance(state, best);
    }
  }
  return hyp;
}

/// Returns up to `beam` hypotheses, best first.
template <TransducerScorer S>
std::vector<Hypothesis> beam_decode(const S& scorer, const DecodeOptions& opts = {}) {
  using State = typename S::State;
  detail::validate(opts);
  struct Live {
    Hypothesis hyp;
    State state;
  };
  struct Candidate {
    std::size_t parent;
    TokenId token;
    double model_score;
    double fusion_score;
    FusionCursor cursor;
    std::vector<TokenId> tokens;
    double score() const { return model_score + fusion_score; }
  };

  std::vector<Live> beam;
  {
    Live init{Hypothesis{}, scorer.initial()};
    if (opts.fusion != nullptr) init.hyp.cursor = opts.fusion->start();
    beam.push_back(std::move(init));
  }

  for (Eigen::Index t = 0; t < scorer.frames(); ++t) {
    std::map<std::vector<TokenId>, Live> done;  // hypotheses that have consumed frame t
    std::vector<Live> active = std::move(beam);
    for (int round = 0; !active.empty(); ++round) {
      std::vector<Candidate> cands;
      for (std::size_t i = 0; i < active.size(); ++i) {
        const Live& a = active[i];
        const Eigen::VectorXd lp = scorer.log_probs(t, a.state);
        Live b = a;
        b.hyp.model_score += lp(corpus::Vocab::kBlank);
        auto it = done.find(b.hyp.tokens);
        if (it == done.end()) {
          done.emplace(b.hyp.tokens, std::move(b));
        } else {
          it->second.hyp.model_score = detail::log_add(it->second.hyp.model_score, b.hyp.model_score);
        }
        if (round == opts.max_symbols_per_frame) continue;
        for (Eigen::Index k = 1; k < lp.size(); ++k) {
          const auto tok = static_cast<TokenId>(k);
          if (detail::is_suppressed(opts, tok)) continue;
          auto [cursor, delta] = detail::fuse(opts, a.hyp.cursor, tok);
          Candidate c{i, tok, a.hyp.model_score + lp(k), a.hyp.fusion_score + delta, cursor, a.hyp.tokens};
          c.tokens.push_back(tok);
          cands.push_back(std::move(c));
        }
      }

      // Prune the union of finished and still-expanding hypotheses to the beam.
      std::vector<std::pair<double, const std::vector<TokenId>*>> ranked;
      ranked.reserve(done.size() + cands.size());
      for (const auto& [tokens, live] : done) ranked.emplace_back(live.hyp.score(), &tokens);
      for (const auto& c : cands) ranked.emplace_back(c.score(), &c.tokens);
      if (ranked.size() > opts.beam) {
        std::nth_element(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(opts.beam) - 1, ranked.end(),
                         [](const auto& a, const auto& b) { return detail::better(a.first, *a.second, b.first, *b.second); });
        const double cut_score = ranked[opts.beam - 1].first;
        const std::vector<TokenId> cut_tokens = *ranked[opts.beam - 1].second;
        auto keep = [&](double s, const std::vector<TokenId>& tk) {
          return !detail::better(cut_score, cut_tokens, s, tk);
        };
        for (auto it = done.begin(); it != done.end();) {
          it = keep(it->second.hyp.score(), it->first) ? std::next(it) : done.erase(it);
        }
        std::erase_if(cands, [&](const Candidate& c) { return !keep(c.score(), c.tokens); });
      }

      std::vector<Live> next;
      next.reserve(cands.size());
      for (auto& c : cands) {
        const Live& parent = active[c.parent];
        Live l{Hypothesis{std::move(c.tokens), c.model_score, c.fusion_score, c.cursor},
               scorer.advance(parent.state, c.token)};
        next.push_back(std::move(l));
      }
      active = std::move(next);
    }
    beam.clear();
    for (auto& [tokens, live] : done) beam.push_back(std::move(live));
    std::sort(beam.begin(), beam.end(), [](const Live& a, const Live& b) { return detail::better(a.hyp, b.hyp); });
  }

  std::vector<Hypothesis> out;
  out.reserve(beam.size());
  for (auto& l : beam) out.push_back(std::move(l.hyp));
  return out;
}

}  // namespace nam::decoding
