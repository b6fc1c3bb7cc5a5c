#pragma once

#include <span>
#include <vector>

#include "kerl/ad.hpp"
#include "kerl/kg_store.hpp"
#include "kerl/nn.hpp"

namespace kerl {

/// W_gate (1 x 2d) and a scalar bias.
struct GateParams {
  ad::Var weight;
  ad::Var bias;

  static GateParams create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_star,
                           nn::ParamGroup group, Rng& rng);
};

struct Fusion {
  ad::Var preference;  // u_P, B x d
  ad::Var beta;        // B x 1
};

/// beta = sigmoid(W_gate [u_E ; u_C] + b), u_P = beta u_E + (1 - beta) u_C,
/// row-wise over a batch.
Fusion fuse(const ad::Var& entity_view, const ad::Var& context_view, const GateParams& gate);

/// u_P . H_i for every catalog item, B x N.
ad::Var item_logits(const ad::Var& preference, const ad::Var& entities, std::span<const EntityId> items);
/// Softmax of item_logits.
ad::Var score_items(const ad::Var& preference, const ad::Var& entities, std::span<const EntityId> items);

/// Mean over examples of the mean over targets of -log P(target), from a
/// B x N probability matrix. Throws TargetNotInCatalog.
ad::Var rec_loss(const ad::Var& probabilities, std::span<const std::vector<EntityId>> targets,
                 std::span<const EntityId> items);
/// Same objective from logits, via log-softmax.
ad::Var rec_loss_from_logits(const ad::Var& logits, std::span<const std::vector<EntityId>> targets,
                             std::span<const EntityId> items);

/// Items by descending score; equal scores fall back to ascending id.
std::vector<EntityId> rank_items(const Eigen::RowVectorXd& scores, std::span<const EntityId> items);

/// Mean over (example, target) pairs of [target in the first k of its list].
/// Returns 0 when there are no pairs.
double recall_at_k(std::span<const std::vector<EntityId>> ranked_lists,
                   std::span<const std::vector<EntityId>> target_sets, std::size_t k);

}  // namespace kerl
