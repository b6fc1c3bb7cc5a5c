#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kerl/ad.hpp"
#include "kerl/kg_store.hpp"
#include "kerl/nn.hpp"

namespace kerl {

/// W_r for each relation plus the self-loop W_e, all d_in x d_out.
struct RgcnLayerParams {
  std::vector<ad::Var> relation_weights;
  ad::Var self_weight;

  static RgcnLayerParams create(nn::ParameterStore& store, const std::string& name, std::size_t num_relations,
                                Eigen::Index d_in, Eigen::Index d_out, nn::ParamGroup group, Rng& rng);
};

/// Per-relation in-neighbor matrices with rows normalized by |E_e^r|.
class RelationAdjacency {
 public:
  RelationAdjacency() = default;
  explicit RelationAdjacency(const KnowledgeGraph& kg);

  std::size_t num_relations() const { return per_relation_.size(); }
  std::size_t num_entities() const { return num_entities_; }
  const ad::SparseMatrix& relation(std::size_t r) const { return per_relation_.at(r); }

 private:
  std::vector<ad::SparseMatrix> per_relation_;
  std::size_t num_entities_ = 0;
};

/// relu( sum_r sum_{e' in E_e^r} W_r h_e' / |E_e^r| + W_e h_e ) for every row.
ad::Var rgcn_forward(const RelationAdjacency& adjacency, const ad::Var& h, const RgcnLayerParams& layer);
ad::Var rgcn_forward(const KnowledgeGraph& kg, const ad::Var& h, const RgcnLayerParams& layer);

/// Row-wise concatenation h^(0) || ... || h^(L).
ad::Var aggregate_layers(std::span<const ad::Var> layer_outputs);

/// || e_h + r - e_t ||_p for p in {1, 2}.
double transe_score(const Eigen::RowVectorXd& head, const Eigen::RowVectorXd& relation,
                    const Eigen::RowVectorXd& tail, int p);

struct KEConfig {
  double margin = 1.0;
  std::size_t k_neg = 8;
  int p_norm = 2;
  std::size_t layers = 2;
  bool filtered = true;
};

/// Distances of a triple list under the current embeddings, shape B x 1.
ad::Var transe_distances(const ad::Var& entities, const ad::Var& relations, std::span<const Triple> triples, int p);

/// Mean over positives of
///   -log sigmoid(margin - d_pos) - (1/k) sum_i log sigmoid(d_neg_i - margin)
/// with d_pos B x 1 and d_neg B x k.
ad::Var margin_loss(const ad::Var& d_pos, const ad::Var& d_neg, double margin);

/// The knowledge-embedding objective over a batch of positive triples.
/// Negatives are drawn with corrupt_triple; the stream for batch position i
/// is seeded from (seed, i).
ad::Var ke_loss(const KnowledgeGraph& kg, const ad::Var& entities, const ad::Var& relations,
                std::span<const Triple> batch, const KEConfig& cfg, std::uint64_t seed);

/// Filtered Hits@1 over `triples`, predicting both the tail and the head.
/// A prediction counts when no other candidate outside the graph is at
/// distance less than or equal to the true one.
double filtered_hits_at_1(const KnowledgeGraph& kg, const ad::Matrix& entities, const ad::Matrix& relations,
                          std::span<const Triple> triples, int p);

}  // namespace kerl
