#include "kerl/user_model.hpp"

#include <numeric>

#include "kerl/errors.hpp"

namespace kerl {

EntityAttnParams EntityAttnParams::create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_attn,
                                          Eigen::Index d_star, nn::ParamGroup group, Rng& rng) {
  return EntityAttnParams{store.create(name + ".proj", nn::xavier_uniform(d_attn, d_star, rng), group),
                          store.create(name + ".query", nn::xavier_uniform(d_attn, 1, rng), group)};
}

ad::Var positioned_entities(std::span<const EntityId> seq, const ad::Var& entities, const ad::Var& positions,
                            bool use_pe) {
  if (seq.size() > static_cast<std::size_t>(positions.rows())) {
    throw SequenceTooLong(seq.size(), static_cast<std::size_t>(positions.rows()));
  }
  ad::Var rows = ad::gather_rows(entities, seq);
  if (!use_pe) return rows;
  return ad::add(rows, ad::slice_rows(positions, 0, static_cast<Eigen::Index>(seq.size())));
}

ad::Var encode_entities(std::span<const EntityId> seq, const ad::Var& entities, const ad::Var& positions,
                        const EntityAttnParams& attn, bool use_pe) {
  if (seq.empty()) return ad::constant(ad::Matrix::Zero(1, entities.cols()));
  ad::Var hp = positioned_entities(seq, entities, positions, use_pe);
  ad::Var scores = ad::matmul(ad::tanh(ad::matmul_nt(hp, attn.projection)), attn.query);
  ad::Var alpha = ad::softmax_rows(ad::transpose(scores));  // 1 x len
  return ad::matmul(alpha, hp);
}

ContextEncoder ContextEncoder::create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_tok,
                                      std::size_t num_blocks, int heads, Eigen::Index d_ff, std::size_t max_len,
                                      nn::ParamGroup group, Rng& rng) {
  ContextEncoder e;
  ad::Matrix pos(static_cast<Eigen::Index>(max_len), d_tok);
  for (Eigen::Index i = 0; i < pos.rows(); ++i) {
    for (Eigen::Index j = 0; j < pos.cols(); ++j) pos(i, j) = 0.02 * rng.normal();
  }
  e.positions = store.create(name + ".positions", std::move(pos), group);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    e.blocks.push_back(nn::EncoderBlock::create(store, name + ".block" + std::to_string(b), d_tok, heads, d_ff,
                                                group, rng));
  }
  return e;
}

ad::Var ContextEncoder::operator()(std::span<const std::string> tokens, const TokenEmbeddingTable& table) const {
  if (tokens.empty()) throw EmptyContext();
  if (tokens.size() > max_len()) throw SequenceTooLong(tokens.size(), max_len());
  ad::Var x = ad::add(ad::constant(table.embed(tokens)),
                      ad::slice_rows(positions, 0, static_cast<Eigen::Index>(tokens.size())));
  for (const auto& block : blocks) x = block(x);
  return x;
}

HistoryEncoderParams HistoryEncoderParams::create(nn::ParameterStore& store, const std::string& name,
                                                  Eigen::Index d_tok, Eigen::Index d_star, std::size_t num_blocks,
                                                  int heads, Eigen::Index d_ff, std::size_t max_len,
                                                  nn::ParamGroup group, Rng& rng) {
  HistoryEncoderParams p;
  p.encoder = ContextEncoder::create(store, name, d_tok, num_blocks, heads, d_ff, max_len, group, rng);
  p.pool = AttentionPoolParams::create(store, name + ".pool", d_tok, group, rng);
  p.projection = nn::Linear::create(store, name + ".projection", d_tok, d_star, group, rng);
  return p;
}

std::vector<std::string> history_tokens(std::span<const Utterance> context, std::size_t max_len) {
  std::vector<std::string> tokens;
  for (const Utterance& u : context) {
    tokens.emplace_back(u.speaker == Speaker::Seeker ? kSeekerTag : kRecommenderTag);
    auto words = tokenize(u.text, kUnlimitedTokens);
    tokens.insert(tokens.end(), std::make_move_iterator(words.begin()), std::make_move_iterator(words.end()));
  }
  if (tokens.size() > max_len) tokens.erase(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(max_len));
  return tokens;
}

ad::Var encode_context(std::span<const Utterance> context, const TokenEmbeddingTable& table,
                       const ContextEncoder& encoder) {
  if (context.empty()) throw EmptyContext();
  return encoder(history_tokens(context, encoder.max_len()), table);
}

ad::Var encode_history(std::span<const Utterance> context, const TokenEmbeddingTable& table,
                       const HistoryEncoderParams& params) {
  ad::Var words = encode_context(context, table, params.encoder);
  return params.projection(attention_pool(words, params.pool).pooled);
}

ad::Var contrastive_loss(const ad::Var& context_views, const ad::Var& entity_views, const ContrastiveConfig& cfg) {
  if (context_views.rows() != entity_views.rows() || context_views.cols() != entity_views.cols()) {
    throw ShapeMismatch("contrastive_loss: view matrices differ in shape");
  }
  if (context_views.rows() < 2) throw ShapeMismatch("contrastive_loss needs a batch of at least 2");
  if (!(cfg.tau > 0)) throw ConfigError("temperature must be positive");
  for (const ad::Var* v : {&context_views, &entity_views}) {
    for (Eigen::Index i = 0; i < v->rows(); ++i) {
      if (v->value().row(i).norm() < 1e-12) throw DegenerateVector(static_cast<std::size_t>(i));
    }
  }
  const auto b = context_views.rows();
  std::vector<std::int64_t> diagonal(static_cast<std::size_t>(b));
  std::iota(diagonal.begin(), diagonal.end(), 0);

  ad::Var logits = ad::scale(ad::matmul_nt(ad::row_normalize(context_views), ad::row_normalize(entity_views)),
                             1.0 / cfg.tau);
  ad::Var forward = ad::sum(ad::pick(ad::log_softmax_rows(logits), diagonal));
  ad::Var backward = ad::sum(ad::pick(ad::log_softmax_rows(ad::transpose(logits)), diagonal));
  return ad::scale(ad::add(forward, backward), -0.5 / static_cast<double>(b));
}

}  // namespace kerl
