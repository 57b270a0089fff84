// SPDX-License-Identifier: Apache-2.0

#include "nam/fst_biaser.hpp"

#include <cmath>
#include <deque>
#include <ostream>
#include <stdexcept>

namespace nam::fst {

BiasTrie::BiasTrie(std::span<const std::vector<TokenId>> phrases, double lambda) : lambda_(lambda) {
  if (!std::isfinite(lambda)) throw std::invalid_argument("BiasTrie: lambda must be finite");
  nodes_.emplace_back();
  for (const auto& phrase : phrases) {
    if (phrase.empty()) continue;
    std::int64_t cur = kRoot;
    for (TokenId t : phrase) {
      auto it = nodes_[static_cast<std::size_t>(cur)].children.find(t);
      if (it != nodes_[static_cast<std::size_t>(cur)].children.end()) {
        cur = it->second;
        continue;
      }
      Node n;
      n.parent = cur;
      n.token = t;
      n.depth = nodes_[static_cast<std::size_t>(cur)].depth + 1;
      const auto id = static_cast<std::int64_t>(nodes_.size());
      nodes_.push_back(std::move(n));
      nodes_[static_cast<std::size_t>(cur)].children.emplace(t, id);
      cur = id;
    }
    nodes_[static_cast<std::size_t>(cur)].terminal = true;
  }
  link_failures();
}

namespace {
std::vector<std::vector<TokenId>> phrase_ids(const corpus::ContextSet& ctx) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(ctx.size());
  for (const auto& p : ctx.phrases()) out.push_back(p.ids);
  return out;
}
}  // namespace

BiasTrie::BiasTrie(const corpus::ContextSet& ctx, double lambda)
    : BiasTrie(std::span<const std::vector<TokenId>>(phrase_ids(ctx)), lambda) {}

void BiasTrie::link_failures() {
  std::deque<std::int64_t> queue;
  for (const auto& [tok, child] : nodes_[kRoot].children) {
    nodes_[static_cast<std::size_t>(child)].failure = kRoot;
    queue.push_back(child);
  }
  while (!queue.empty()) {
    const std::int64_t cur = queue.front();
    queue.pop_front();
    for (const auto& [tok, child] : nodes_[static_cast<std::size_t>(cur)].children) {
      nodes_[static_cast<std::size_t>(child)].failure =
          transition(nodes_[static_cast<std::size_t>(cur)].failure, tok);
      queue.push_back(child);
    }
  }
}

// Longest suffix of path(node)+token that is a trie path.
std::int64_t BiasTrie::transition(std::int64_t node, TokenId token) const {
  while (true) {
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    auto it = n.children.find(token);
    if (it != n.children.end()) return it->second;
    if (node == kRoot) return kRoot;
    node = n.failure;
  }
}

std::pair<FusionCursor, double> BiasTrie::step(const FusionCursor& cursor, TokenId token) const {
  if (token == corpus::Vocab::kBlank || token == corpus::Vocab::kBiasMarker) return {cursor, 0.0};
  if (cursor.node < 0 || static_cast<std::size_t>(cursor.node) >= nodes_.size()) {
    throw std::out_of_range("BiasTrie::step: cursor node out of range");
  }
  std::int64_t next = transition(cursor.node, token);
  double delta = lambda_ * static_cast<double>(nodes_[static_cast<std::size_t>(next)].depth) - cursor.accumulated;
  if (nodes_[static_cast<std::size_t>(next)].terminal) {
    next = nodes_[static_cast<std::size_t>(next)].failure;
    delta += lambda_ * static_cast<double>(nodes_[static_cast<std::size_t>(next)].depth);
  }
  const double acc = lambda_ * static_cast<double>(nodes_[static_cast<std::size_t>(next)].depth);
  return {FusionCursor{next, acc}, delta};
}

double BiasTrie::fused_score(std::span<const TokenId> tokens) const {
  FusionCursor c = start();
  double total = 0.0;
  for (TokenId t : tokens) {
    auto [n, d] = step(c, t);
    c = n;
    total += d;
  }
  return total;
}

void BiasTrie::dump(std::ostream& os) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    os << i << ' ' << n.parent << ' ' << n.token << ' ' << (n.terminal ? 1 : 0) << '\n';
  }
}

}  // namespace nam::fst
