// SPDX-License-Identifier: Apache-2.0
//
// Token-level boost trie for shallow fusion. Every token that extends a
// partial phrase match earns a boost of lambda. When the match breaks, the
// partial boost is withdrawn and the longest suffix of the history that is
// still a phrase prefix is re-credited. Completing a phrase keeps its boost.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "nam/corpus.hpp"
#include "nam/decoding.hpp"

namespace nam::fst {

using corpus::TokenId;
using decoding::FusionCursor;

class BiasTrie final : public decoding::FusionScorer {
 public:
  struct Node {
    std::int64_t parent = -1;
    TokenId token = -1;
    std::size_t depth = 0;
    bool terminal = false;
    std::map<TokenId, std::int64_t> children;
    std::int64_t failure = 0;  // longest proper suffix that is also a prefix
  };

  static constexpr std::int64_t kRoot = 0;

  BiasTrie(std::span<const std::vector<TokenId>> phrases, double lambda);
  BiasTrie(const corpus::ContextSet& ctx, double lambda);

  double lambda() const { return lambda_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  FusionCursor start() const override { return FusionCursor{kRoot, 0.0}; }
  std::pair<FusionCursor, double> step(const FusionCursor& cursor, TokenId token) const override;

  /// Sum of step deltas over a whole token sequence (marker tokens skipped).
  double fused_score(std::span<const TokenId> tokens) const;

  /// One line per node: "id parent token terminal".
  void dump(std::ostream& os) const;

 private:
  std::int64_t transition(std::int64_t node, TokenId token) const;
  void link_failures();

  std::vector<Node> nodes_;
  double lambda_;
};

}  // namespace nam::fst
