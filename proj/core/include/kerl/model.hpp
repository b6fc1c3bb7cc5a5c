#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kerl/ad.hpp"
#include "kerl/config.hpp"
#include "kerl/dialogue_corpus.hpp"
#include "kerl/generator.hpp"
#include "kerl/graph_encoder.hpp"
#include "kerl/kg_store.hpp"
#include "kerl/nn.hpp"
#include "kerl/recommender.hpp"
#include "kerl/text_encoder.hpp"
#include "kerl/user_model.hpp"

namespace kerl {

/// Training progress recorded in checkpoints; later stages require earlier ones.
enum class Stage { Init, Pretrained, RecConverged, GenConverged };
const char* to_string(Stage s);
Stage parse_stage(std::string_view s);

using ExampleRefs = std::vector<const TrainingExample*>;
ExampleRefs refs(std::span<const TrainingExample> examples);

struct Recommendation {
  std::vector<EntityId> items;  // best first
  std::vector<double> scores;   // softmax probabilities, same order
  double beta = 0.5;
};

/// All parameters of the pipeline plus the frozen inputs they are evaluated
/// against. Parameter names start with "kg.", "rec." or "gen." according to
/// their group.
class KerlModel {
 public:
  KerlModel(Config cfg, std::shared_ptr<const KnowledgeGraph> kg, TokenEmbeddingTable table, Vocab vocab);

  /// Reserved tokens, then response tokens of the examples, then entity
  /// description tokens.
  static Vocab build_vocab(const KnowledgeGraph& kg, std::span<const TrainingExample> examples);

  const Config& config() const { return cfg_; }
  /// Swaps in new training or service settings. Throws ConfigError when a
  /// structural key differs from the one the model was built with.
  void retune(const Config& cfg);
  const KnowledgeGraph& kg() const { return *kg_; }
  std::shared_ptr<const KnowledgeGraph> kg_ptr() const { return kg_; }
  const TokenEmbeddingTable& tokens() const { return table_; }
  const DescriptionCache& descriptions() const { return cache_; }
  const Vocab& vocab() const { return vocab_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  Stage stage() const { return stage_; }
  void set_stage(Stage s) { stage_ = s; }

  /// Layer-0 entity vectors: pooled descriptions, or the free embedding table
  /// when descriptions are disabled. n x d_0.
  ad::Var base_entities() const;
  /// H = h^(0) || ... || h^(L), n x d_star.
  ad::Var entity_matrix() const;
  /// H as a constant, for evaluation.
  ad::Var frozen_entities() const { return ad::constant(entity_matrix().value()); }
  const ad::Var& relation_matrix() const { return relations_; }

  ad::Var ke_loss(const ad::Var& entities, std::span<const Triple> batch, std::uint64_t seed) const;
  /// u_E, 1 x d_star.
  ad::Var entity_view(std::span<const EntityId> seq, const ad::Var& entities) const;
  /// u_C, 1 x d_star.
  ad::Var context_view(std::span<const Utterance> context) const;
  /// Contrastive loss over the examples whose views are both non-degenerate.
  /// Returns a zero constant when fewer than two remain.
  ad::Var cl_loss(const ExampleRefs& batch, const ad::Var& entities) const;
  Fusion user_preference(const ExampleRefs& batch, const ad::Var& entities) const;
  ad::Var rec_loss(const ExampleRefs& batch, const ad::Var& entities) const;
  /// Full ranking of all items for one turn.
  Recommendation recommend(std::span<const Utterance> context, std::span<const EntityId> seq,
                           const ad::Var& entities) const;

  /// Response token ids (no [BOS]/[EOS]), truncated to fit max_gen_len.
  std::vector<int> response_ids(const TrainingExample& ex) const;
  /// T x |V| distribution for every position of `prefix`.
  ad::Var response_distribution(std::span<const Utterance> context, std::span<const EntityId> seq,
                                std::span<const int> prefix, const ad::Var& entities) const;
  ad::Var gen_loss(const ExampleRefs& batch, const ad::Var& entities) const;
  GeneratedResponse generate(std::span<const Utterance> context, std::span<const EntityId> seq,
                             std::span<const EntityId> recommendations, const ad::Var& entities,
                             std::size_t max_len) const;

  /// Rounds every parameter to the nearest 32-bit float, the checkpoint
  /// payload precision, so a saved model evaluates identically once reloaded.
  void round_to_storage();

  /// The history transformer (blocks and positions) trains at the encoder
  /// rate during train_rec; every other parameter at the head rate.
  bool is_encoder_param(const std::string& name) const;

 private:
  Config cfg_;
  std::shared_ptr<const KnowledgeGraph> kg_;
  TokenEmbeddingTable table_;
  DescriptionCache cache_;
  RelationAdjacency adjacency_;
  Vocab vocab_;
  Stage stage_ = Stage::Init;
  nn::ParameterStore store_;

  ad::Var free_entities_;
  AttentionPoolParams desc_pool_;
  DescFFNParams desc_ffn_;
  std::vector<RgcnLayerParams> rgcn_;
  ad::Var relations_;

  ad::Var positions_;
  EntityAttnParams entity_attn_;
  HistoryEncoderParams history_;
  GateParams gate_;

  ContextEncoder gen_context_;
  DecoderParams decoder_;
  CopyParams copy_;
};

}  // namespace kerl
