#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kerl/ad.hpp"
#include "kerl/kg_store.hpp"
#include "kerl/nn.hpp"
#include "kerl/text_encoder.hpp"

namespace kerl {

/// Response vocabulary. Ids 0..6 are reserved in the order
/// [PAD] [BOS] [EOS] [UNK] [ITEM] [SEEKER] [RECOMMENDER].
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kItem = 4;
  static constexpr int kSeeker = 5;
  static constexpr int kRecommender = 6;
  static constexpr int kReserved = 7;

  Vocab();
  /// Restores a saved token list; the reserved prefix must match.
  explicit Vocab(std::vector<std::string> tokens);
  /// Reserved tokens, then every new token in order of first appearance.
  static Vocab build(std::span<const std::vector<std::string>> token_lists);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<int> encode(std::span<const std::string> tokens) const;

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Self-attention (causal), context cross-attention, knowledge cross-attention
/// and FFN, each wrapped in a residual connection and layer norm.
struct DecoderBlock {
  nn::MultiHeadAttention self_attn;
  nn::LayerNorm self_norm;
  nn::MultiHeadAttention context_attn;
  nn::LayerNorm context_norm;
  nn::MultiHeadAttention kg_attn;
  nn::LayerNorm kg_norm;
  nn::FeedForward ffn;
  nn::LayerNorm ffn_norm;
};

struct DecoderParams {
  ad::Var token_embedding;  // |V| x d_model
  ad::Var positions;        // max_len x d_model
  std::vector<DecoderBlock> blocks;
  nn::Linear output;  // d_model -> |V|

  static DecoderParams create(nn::ParameterStore& store, const std::string& name, std::size_t vocab_size,
                              Eigen::Index d_model, Eigen::Index d_context, Eigen::Index d_kg, std::size_t num_blocks,
                              int heads, Eigen::Index d_ff, std::size_t max_len, nn::ParamGroup group, Rng& rng);
  std::size_t max_len() const { return static_cast<std::size_t>(positions.rows()); }
};

/// One decoder layer: Y^{l-1} -> Y^l. A zero-row `kg_memory` turns the
/// knowledge cross-attention into a pass-through.
ad::Var decode_step(const ad::Var& prev, const ad::Var& context, const ad::Var& kg_memory, const DecoderBlock& block);

/// Embeds the prefix ids and runs every block; one state row per prefix token.
ad::Var decode(std::span<const int> prefix, const ad::Var& context, const ad::Var& kg_memory,
               const DecoderParams& params);

/// Bilinear copy scorer plus the copy gate.
struct CopyParams {
  ad::Var gate_weight;  // d_model x 1
  ad::Var gate_bias;    // 1 x 1
  ad::Var bilinear;     // d_model x d_tok

  static CopyParams create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_model,
                           Eigen::Index d_tok, nn::ParamGroup group, Rng& rng);
};

/// Description tokens of the in-context entities (each distinct entity once,
/// in order of first mention), with their vocabulary slots.
struct CopySource {
  ad::Matrix vectors;         // J x d_tok, frozen
  std::vector<int> vocab_ids; // J
  bool empty() const { return vocab_ids.empty(); }
};

CopySource make_copy_source(std::span<const EntityId> entities, const DescriptionCache& cache, const Vocab& vocab);

/// (1 - lambda) Pr1 + lambda Pr2 per state row, where Pr1 is the softmax of
/// the output projection, Pr2 the softmax over copy-source tokens scattered
/// into the vocabulary, and lambda the copy gate. An empty source forces
/// lambda = 0. Shape T x |V|.
ad::Var output_distribution(const ad::Var& states, const CopySource& source, const CopyParams& copy,
                            const nn::Linear& projection);

/// Mean over tokens of -log p(gold).
ad::Var sequence_nll(const ad::Var& distribution, std::span<const int> gold);

/// Greedy decoding from [BOS]. `next` returns the distribution for the last
/// position of the given prefix. Ties resolve to the lowest id. Emits at
/// most max_len tokens; [EOS] stops and is not included.
using NextTokenFn = std::function<Eigen::RowVectorXd(std::span<const int> prefix)>;
std::vector<int> greedy_decode(const NextTokenFn& next, std::size_t max_len);

struct GeneratedResponse {
  std::string text;
  std::vector<std::string> tokens;  // before placeholder filling
  std::vector<EntityId> filled_items;
  bool unfilled_placeholder = false;
};

/// Joins tokens with single spaces, replacing each [ITEM] with the next
/// recommended item (names deduplicated, rank order). When recommendations run
/// out the literal [ITEM] stays and the response is flagged.
GeneratedResponse render_response(std::span<const int> ids, const Vocab& vocab,
                                  std::span<const EntityId> recommendations, const KnowledgeGraph& kg);

/// Unique n-grams across all responses divided by the number of responses.
/// Responses are split on whitespace. Zero responses give 0.
double distinct_n(std::span<const std::string> responses, std::size_t n);

/// Fraction of responses with at least one filled item; 0 for none.
double item_ratio(std::span<const GeneratedResponse> responses);

}  // namespace kerl
