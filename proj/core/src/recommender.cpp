#include "kerl/recommender.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "kerl/errors.hpp"

namespace kerl {

GateParams GateParams::create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_star,
                              nn::ParamGroup group, Rng& rng) {
  return GateParams{store.create(name + ".weight", nn::xavier_uniform(1, 2 * d_star, rng), group),
                    store.create(name + ".bias", ad::Matrix::Zero(1, 1), group)};
}

Fusion fuse(const ad::Var& entity_view, const ad::Var& context_view, const GateParams& gate) {
  if (entity_view.rows() != context_view.rows() || entity_view.cols() != context_view.cols()) {
    throw ShapeMismatch("fuse: user views differ in shape");
  }
  if (gate.weight.cols() != 2 * entity_view.cols()) {
    throw ShapeMismatch("fuse: gate expects width " + std::to_string(gate.weight.cols() / 2));
  }
  const std::vector<ad::Var> parts{entity_view, context_view};
  ad::Var logit = ad::matmul_nt(ad::concat_cols(parts), gate.weight);  // B x 1
  ad::Var ones = ad::constant(ad::Matrix::Ones(entity_view.rows(), 1));
  ad::Var beta = ad::sigmoid(ad::add(logit, ad::matmul(ones, gate.bias)));
  ad::Var preference = ad::add(ad::mul_col(entity_view, beta), ad::mul_col(context_view, ad::one_minus(beta)));
  return {preference, beta};
}

ad::Var item_logits(const ad::Var& preference, const ad::Var& entities, std::span<const EntityId> items) {
  if (items.empty()) throw ShapeMismatch("item_logits: empty catalog");
  return ad::matmul_nt(preference, ad::gather_rows(entities, items));
}

ad::Var score_items(const ad::Var& preference, const ad::Var& entities, std::span<const EntityId> items) {
  return ad::softmax_rows(item_logits(preference, entities, items));
}

namespace {

/// Picks log-probabilities of every (example, target) pair, weighted so the
/// sum is the batch mean of per-example target means.
ad::Var target_nll(const ad::Var& log_probs, std::span<const std::vector<EntityId>> targets,
                   std::span<const EntityId> items) {
  if (static_cast<std::size_t>(log_probs.rows()) != targets.size()) {
    throw ShapeMismatch("rec_loss: " + std::to_string(log_probs.rows()) + " rows for " +
                        std::to_string(targets.size()) + " target sets");
  }
  std::unordered_map<EntityId, std::int64_t> column;
  for (std::size_t i = 0; i < items.size(); ++i) column.emplace(items[i], static_cast<std::int64_t>(i));

  std::vector<std::int64_t> rows;
  std::vector<std::int64_t> cols;
  std::vector<double> weights;
  const double b = static_cast<double>(targets.size());
  for (std::size_t e = 0; e < targets.size(); ++e) {
    if (targets[e].empty()) throw ShapeMismatch("rec_loss: example " + std::to_string(e) + " has no targets");
    for (EntityId t : targets[e]) {
      auto it = column.find(t);
      if (it == column.end()) throw TargetNotInCatalog(t);
      rows.push_back(static_cast<std::int64_t>(e));
      cols.push_back(it->second);
      weights.push_back(-1.0 / (b * static_cast<double>(targets[e].size())));
    }
  }
  ad::Var picked = ad::pick(ad::gather_rows(log_probs, rows), cols);
  ad::Matrix w = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  return ad::sum(ad::mul(picked, ad::constant(std::move(w))));
}

}  // namespace

ad::Var rec_loss(const ad::Var& probabilities, std::span<const std::vector<EntityId>> targets,
                 std::span<const EntityId> items) {
  return target_nll(ad::log(probabilities), targets, items);
}

ad::Var rec_loss_from_logits(const ad::Var& logits, std::span<const std::vector<EntityId>> targets,
                             std::span<const EntityId> items) {
  return target_nll(ad::log_softmax_rows(logits), targets, items);
}

std::vector<EntityId> rank_items(const Eigen::RowVectorXd& scores, std::span<const EntityId> items) {
  if (static_cast<std::size_t>(scores.size()) != items.size()) throw ShapeMismatch("rank_items: size mismatch");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores(static_cast<Eigen::Index>(a)) != scores(static_cast<Eigen::Index>(b))) {
      return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
    }
    return items[a] < items[b];
  });
  std::vector<EntityId> ranked;
  ranked.reserve(items.size());
  for (std::size_t i : order) ranked.push_back(items[i]);
  return ranked;
}

double recall_at_k(std::span<const std::vector<EntityId>> ranked_lists,
                   std::span<const std::vector<EntityId>> target_sets, std::size_t k) {
  if (k < 1) throw ConfigError("recall_at_k: k must be at least 1");
  if (ranked_lists.size() != target_sets.size()) throw ShapeMismatch("recall_at_k: list count mismatch");
  std::size_t hits = 0;
  std::size_t pairs = 0;
  for (std::size_t e = 0; e < ranked_lists.size(); ++e) {
    const auto& ranked = ranked_lists[e];
    const auto top_end = ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranked.size()));
    for (EntityId t : target_sets[e]) {
      ++pairs;
      if (std::find(ranked.begin(), top_end, t) != top_end) ++hits;
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(pairs);
}

}  // namespace kerl
