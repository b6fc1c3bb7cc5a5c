#include "kerl/graph_encoder.hpp"

#include <string>

#include "kerl/errors.hpp"

namespace kerl {

RgcnLayerParams RgcnLayerParams::create(nn::ParameterStore& store, const std::string& name,
                                        std::size_t num_relations, Eigen::Index d_in, Eigen::Index d_out,
                                        nn::ParamGroup group, Rng& rng) {
  RgcnLayerParams p;
  for (std::size_t r = 0; r < num_relations; ++r) {
    p.relation_weights.push_back(
        store.create(name + ".relation." + std::to_string(r), nn::xavier_uniform(d_in, d_out, rng), group));
  }
  p.self_weight = store.create(name + ".self", nn::xavier_uniform(d_in, d_out, rng), group);
  return p;
}

RelationAdjacency::RelationAdjacency(const KnowledgeGraph& kg) : num_entities_(kg.num_entities()) {
  const auto n = static_cast<Eigen::Index>(kg.num_entities());
  for (std::size_t r = 0; r < kg.num_relations(); ++r) {
    std::vector<Eigen::Triplet<double>> entries;
    for (EntityId e = 0; e < n; ++e) {
      const auto& nbrs = kg.in_neighbors(e, static_cast<RelationId>(r));
      if (nbrs.empty()) continue;
      const double z = 1.0 / static_cast<double>(nbrs.size());
      for (EntityId src : nbrs) entries.emplace_back(e, src, z);
    }
    ad::SparseMatrix m(n, n);
    m.setFromTriplets(entries.begin(), entries.end());
    per_relation_.push_back(std::move(m));
  }
}

ad::Var rgcn_forward(const RelationAdjacency& adjacency, const ad::Var& h, const RgcnLayerParams& layer) {
  if (static_cast<std::size_t>(h.rows()) != adjacency.num_entities()) {
    throw ShapeMismatch("rgcn_forward: " + std::to_string(h.rows()) + " rows for " +
                        std::to_string(adjacency.num_entities()) + " entities");
  }
  if (layer.relation_weights.size() != adjacency.num_relations()) {
    throw ShapeMismatch("rgcn_forward: layer has " + std::to_string(layer.relation_weights.size()) +
                        " relation weights for " + std::to_string(adjacency.num_relations()) + " relations");
  }
  if (layer.self_weight.rows() != h.cols()) {
    throw ShapeMismatch("rgcn_forward: input width " + std::to_string(h.cols()) + " vs weight rows " +
                        std::to_string(layer.self_weight.rows()));
  }
  ad::Var acc = ad::matmul(h, layer.self_weight);
  for (std::size_t r = 0; r < adjacency.num_relations(); ++r) {
    if (adjacency.relation(r).nonZeros() == 0) continue;
    acc = ad::add(acc, ad::matmul(ad::spmm(adjacency.relation(r), h), layer.relation_weights[r]));
  }
  return ad::relu(acc);
}

ad::Var rgcn_forward(const KnowledgeGraph& kg, const ad::Var& h, const RgcnLayerParams& layer) {
  return rgcn_forward(RelationAdjacency(kg), h, layer);
}

ad::Var aggregate_layers(std::span<const ad::Var> layer_outputs) {
  if (layer_outputs.empty()) throw ShapeMismatch("aggregate_layers: no layers");
  if (layer_outputs.size() == 1) return layer_outputs.front();
  return ad::concat_cols(layer_outputs);
}

double transe_score(const Eigen::RowVectorXd& head, const Eigen::RowVectorXd& relation,
                    const Eigen::RowVectorXd& tail, int p) {
  if (head.size() != relation.size() || head.size() != tail.size()) {
    throw ShapeMismatch("transe_score: dims " + std::to_string(head.size()) + "/" +
                        std::to_string(relation.size()) + "/" + std::to_string(tail.size()));
  }
  const Eigen::RowVectorXd diff = head + relation - tail;
  if (p == 1) return diff.cwiseAbs().sum();
  if (p == 2) return diff.norm();
  throw ShapeMismatch("transe_score: p must be 1 or 2");
}

ad::Var transe_distances(const ad::Var& entities, const ad::Var& relations, std::span<const Triple> triples,
                         int p) {
  if (entities.cols() != relations.cols()) {
    throw ShapeMismatch("transe: entity dim " + std::to_string(entities.cols()) + " vs relation dim " +
                        std::to_string(relations.cols()));
  }
  std::vector<std::int64_t> heads, rels, tails;
  heads.reserve(triples.size());
  rels.reserve(triples.size());
  tails.reserve(triples.size());
  for (const Triple& t : triples) {
    heads.push_back(t.head);
    rels.push_back(t.relation);
    tails.push_back(t.tail);
  }
  ad::Var diff = ad::sub(ad::add(ad::gather_rows(entities, heads), ad::gather_rows(relations, rels)),
                         ad::gather_rows(entities, tails));
  return ad::row_norm(diff, p);
}

ad::Var margin_loss(const ad::Var& d_pos, const ad::Var& d_neg, double margin) {
  if (d_pos.cols() != 1 || d_neg.rows() != d_pos.rows() || d_neg.cols() < 1) {
    throw ShapeMismatch("margin_loss: need B x 1 positives and B x k negatives");
  }
  const double k = static_cast<double>(d_neg.cols());
  const double b = static_cast<double>(d_pos.rows());
  ad::Var pos_term = ad::sum(ad::log_sigmoid(ad::add_scalar(ad::scale(d_pos, -1.0), margin)));
  ad::Var neg_term = ad::sum(ad::log_sigmoid(ad::add_scalar(d_neg, -margin)));
  return ad::scale(ad::add(pos_term, ad::scale(neg_term, 1.0 / k)), -1.0 / b);
}

ad::Var ke_loss(const KnowledgeGraph& kg, const ad::Var& entities, const ad::Var& relations,
                std::span<const Triple> batch, const KEConfig& cfg, std::uint64_t seed) {
  if (batch.empty()) throw ShapeMismatch("ke_loss: empty batch");
  if (cfg.k_neg < 1) throw ConfigError("k_neg must be at least 1");
  std::vector<Triple> negatives;
  negatives.reserve(batch.size() * cfg.k_neg);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto neg = corrupt_triple(kg, batch[i], cfg.k_neg, derive_seed(seed, i), cfg.filtered);
    negatives.insert(negatives.end(), neg.begin(), neg.end());
  }
  ad::Var d_pos = transe_distances(entities, relations, batch, cfg.p_norm);
  // Row i*k + j holds negative j of positive i; regroup into B x k.
  ad::Var d_neg_flat = transe_distances(entities, relations, negatives, cfg.p_norm);
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto k = static_cast<Eigen::Index>(cfg.k_neg);
  std::vector<ad::Var> columns;
  columns.reserve(cfg.k_neg);
  for (Eigen::Index j = 0; j < k; ++j) {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) rows[static_cast<std::size_t>(i)] = i * k + j;
    columns.push_back(ad::gather_rows(d_neg_flat, rows));
  }
  ad::Var d_neg = ad::concat_cols(columns);
  return margin_loss(d_pos, d_neg, cfg.margin);
}

double filtered_hits_at_1(const KnowledgeGraph& kg, const ad::Matrix& entities, const ad::Matrix& relations,
                          std::span<const Triple> triples, int p) {
  if (triples.empty()) return 0.0;
  const auto n = static_cast<EntityId>(kg.num_entities());
  auto dist = [&](EntityId h, RelationId r, EntityId t) {
    return transe_score(entities.row(h), relations.row(r), entities.row(t), p);
  };
  std::size_t hits = 0;
  for (const Triple& t : triples) {
    const double truth = dist(t.head, t.relation, t.tail);
    bool tail_hit = true;
    bool head_hit = true;
    for (EntityId e = 0; e < n; ++e) {
      if (e != t.tail && !kg.contains({t.head, t.relation, e}) && dist(t.head, t.relation, e) <= truth) {
        tail_hit = false;
      }
      if (e != t.head && !kg.contains({e, t.relation, t.tail}) && dist(e, t.relation, t.tail) <= truth) {
        head_hit = false;
      }
    }
    hits += static_cast<std::size_t>(tail_hit) + static_cast<std::size_t>(head_hit);
  }
  return static_cast<double>(hits) / static_cast<double>(2 * triples.size());
}

}  // namespace kerl
