#pragma once

#include <span>
#include <string>
#include <vector>

#include "kerl/ad.hpp"
#include "kerl/dialogue_corpus.hpp"
#include "kerl/nn.hpp"
#include "kerl/text_encoder.hpp"

namespace kerl {

inline constexpr std::string_view kSeekerTag = "[SEEKER]";
inline constexpr std::string_view kRecommenderTag = "[RECOMMENDER]";

/// W_p (d_a x d_star) and b_e (d_a x 1) of the entity self-attention.
struct EntityAttnParams {
  ad::Var projection;
  ad::Var query;

  static EntityAttnParams create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_attn,
                                 Eigen::Index d_star, nn::ParamGroup group, Rng& rng);
};

/// H_p: gathered entity rows, plus the learned position rows when use_pe.
/// Throws SequenceTooLong when seq exceeds the positional table.
ad::Var positioned_entities(std::span<const EntityId> seq, const ad::Var& entities, const ad::Var& positions,
                            bool use_pe);

/// u_E = H_p^T softmax(tanh(H_p W_p^T) b_e), shape 1 x d_star. The empty
/// sequence maps to zeros.
ad::Var encode_entities(std::span<const EntityId> seq, const ad::Var& entities, const ad::Var& positions,
                        const EntityAttnParams& attn, bool use_pe);

/// Token-level transformer encoder over frozen token vectors plus learned
/// positions.
struct ContextEncoder {
  ad::Var positions;  // max_len x d_tok
  std::vector<nn::EncoderBlock> blocks;

  static ContextEncoder create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_tok,
                               std::size_t num_blocks, int heads, Eigen::Index d_ff, std::size_t max_len,
                               nn::ParamGroup group, Rng& rng);
  std::size_t max_len() const { return static_cast<std::size_t>(positions.rows()); }
  /// One output row per token; tokens must not exceed max_len.
  ad::Var operator()(std::span<const std::string> tokens, const TokenEmbeddingTable& table) const;
};

/// History encoder: context encoder, attention pooling, projection to d_star.
struct HistoryEncoderParams {
  ContextEncoder encoder;
  AttentionPoolParams pool;
  nn::Linear projection;

  static HistoryEncoderParams create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_tok,
                                     Eigen::Index d_star, std::size_t num_blocks, int heads, Eigen::Index d_ff,
                                     std::size_t max_len, nn::ParamGroup group, Rng& rng);
};

/// Speaker tag, then the utterance's tokens, for each utterance in order;
/// only the last max_len tokens are kept.
std::vector<std::string> history_tokens(std::span<const Utterance> context, std::size_t max_len);

/// F^C for the context. Throws EmptyContext.
ad::Var encode_context(std::span<const Utterance> context, const TokenEmbeddingTable& table,
                       const ContextEncoder& encoder);

/// u_C, shape 1 x d_star. Throws EmptyContext.
ad::Var encode_history(std::span<const Utterance> context, const TokenEmbeddingTable& table,
                       const HistoryEncoderParams& params);

struct ContrastiveConfig {
  double tau = 0.07;
};

/// Symmetric InfoNCE over cosine similarities. Row i of each matrix is the
/// positive of row i of the other; all B columns enter each denominator.
/// Throws DegenerateVector for rows with norm below 1e-12.
ad::Var contrastive_loss(const ad::Var& context_views, const ad::Var& entity_views, const ContrastiveConfig& cfg);

}  // namespace kerl
