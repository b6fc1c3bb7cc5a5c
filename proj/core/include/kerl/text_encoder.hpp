#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kerl/ad.hpp"
#include "kerl/kg_store.hpp"
#include "kerl/nn.hpp"

namespace kerl {

/// Maximum number of description tokens fed to the entity text encoder.
inline constexpr std::size_t kMaxDescriptionTokens = 40;
inline constexpr std::size_t kUnlimitedTokens = std::numeric_limits<std::size_t>::max();

/// Lowercases and splits on whitespace; every ASCII punctuation character is
/// a token of its own. Bracketed upper-case markers such as "[ITEM]" survive
/// verbatim. Keeps at most `max_tokens`.
std::vector<std::string> tokenize(std::string_view text, std::size_t max_tokens = kMaxDescriptionTokens);

/// Frozen token vectors. Either file-backed (closed vocabulary with a zero UNK
/// row at index 0) or builtin, where each token's vector is derived from a
/// hash of the token and the seed, so the vocabulary is open.
class TokenEmbeddingTable {
 public:
  static TokenEmbeddingTable from_file(const std::filesystem::path& path);
  static TokenEmbeddingTable builtin(std::uint64_t seed, std::size_t dim);

  std::size_t dim() const { return dim_; }
  bool is_builtin() const { return builtin_; }
  std::uint64_t seed() const { return seed_; }
  /// Rows including UNK; 0 for builtin tables.
  std::size_t size() const { return builtin_ ? 0 : static_cast<std::size_t>(vectors_.rows()); }
  bool contains(const std::string& token) const { return builtin_ || index_.count(token) != 0; }

  Eigen::RowVectorXd lookup(const std::string& token) const;
  ad::Matrix embed(std::span<const std::string> tokens) const;

 private:
  bool builtin_ = false;
  std::uint64_t seed_ = 0;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Eigen::Index> index_;
  ad::Matrix vectors_;
};

/// V_w, v_w, q_w of the additive attention pooling.
struct AttentionPoolParams {
  ad::Var projection;  // d x d
  ad::Var bias;        // 1 x d
  ad::Var query;       // d x 1

  static AttentionPoolParams create(nn::ParameterStore& store, const std::string& name, Eigen::Index dim,
                                    nn::ParamGroup group, Rng& rng);
  /// q^T tanh(V w_i + v) per row of `tokens`, shape k x 1.
  ad::Var scores(const ad::Var& tokens) const;
};

struct PoolResult {
  ad::Var weights;  // k x 1, sums to one
  ad::Var pooled;   // 1 x d
};

/// Throws EmptySequence for k = 0.
PoolResult attention_pool(const ad::Var& tokens, const AttentionPoolParams& params);

/// Two linear maps with tanh between, d_tok -> d_ff -> d_0.
using DescFFNParams = nn::FeedForward;
DescFFNParams make_desc_ffn(nn::ParameterStore& store, const std::string& name, Eigen::Index d_tok,
                            Eigen::Index d_ff, Eigen::Index d_0, nn::ParamGroup group, Rng& rng);

/// h_e^d for one entity, 1 x d_0. Empty descriptions map to zeros.
ad::Var describe_entity(const Entity& entity, const TokenEmbeddingTable& table, const AttentionPoolParams& pool,
                        const DescFFNParams& ffn);

/// Truncated description tokens and their frozen vectors for every entity,
/// stacked into one matrix with segment offsets.
class DescriptionCache {
 public:
  DescriptionCache() = default;
  DescriptionCache(const KnowledgeGraph& kg, const TokenEmbeddingTable& table);

  std::size_t num_entities() const { return tokens_.size(); }
  const std::vector<std::string>& tokens(EntityId e) const { return tokens_.at(static_cast<std::size_t>(e)); }
  /// Frozen vectors of entity e's description tokens, one row each.
  ad::Matrix vectors(EntityId e) const;
  const ad::Matrix& stacked() const { return stacked_; }
  const std::vector<std::int64_t>& offsets() const { return offsets_; }
  /// 1 where the entity has at least one description token.
  const ad::Matrix& mask() const { return mask_; }

 private:
  std::vector<std::vector<std::string>> tokens_;
  ad::Matrix stacked_;
  std::vector<std::int64_t> offsets_;
  ad::Matrix mask_;
};

/// h^d for all entities at once, n x d_0; rows of empty descriptions are zero.
ad::Var describe_all(const DescriptionCache& cache, const AttentionPoolParams& pool, const DescFFNParams& ffn);

}  // namespace kerl
