#include "kerl/generator.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_set>

#include "kerl/dialogue_corpus.hpp"
#include "kerl/errors.hpp"

namespace kerl {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens{"[PAD]", "[BOS]", "[EOS]", "[UNK]",
                                               "[ITEM]", "[SEEKER]", "[RECOMMENDER]"};
  return tokens;
}

}  // namespace

Vocab::Vocab() {
  for (const auto& t : reserved_tokens()) add(t);
}

Vocab::Vocab(std::vector<std::string> tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw CheckpointError("vocabulary does not start with the reserved tokens");
  }
  for (const auto& t : tokens) {
    if (index_.count(t) != 0) throw CheckpointError("duplicate vocabulary token " + t);
    add(t);
  }
}

Vocab Vocab::build(std::span<const std::vector<std::string>> token_lists) {
  Vocab v;
  for (const auto& list : token_lists) {
    for (const auto& t : list) {
      if (!v.contains(t)) v.add(t);
    }
  }
  return v;
}

void Vocab::add(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

DecoderParams DecoderParams::create(nn::ParameterStore& store, const std::string& name, std::size_t vocab_size,
                                    Eigen::Index d_model, Eigen::Index d_context, Eigen::Index d_kg,
                                    std::size_t num_blocks, int heads, Eigen::Index d_ff, std::size_t max_len,
                                    nn::ParamGroup group, Rng& rng) {
  if (num_blocks < 1) throw ConfigError("decoder needs at least one block");
  DecoderParams p;
  p.token_embedding =
      store.create(name + ".token_embedding", nn::xavier_uniform(static_cast<Eigen::Index>(vocab_size), d_model, rng), group);
  ad::Matrix pos(static_cast<Eigen::Index>(max_len), d_model);
  for (Eigen::Index i = 0; i < pos.rows(); ++i) {
    for (Eigen::Index j = 0; j < pos.cols(); ++j) pos(i, j) = 0.02 * rng.normal();
  }
  p.positions = store.create(name + ".positions", std::move(pos), group);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    const std::string bn = name + ".block" + std::to_string(b);
    DecoderBlock blk;
    blk.self_attn = nn::MultiHeadAttention::create(store, bn + ".self_attn", d_model, d_model, heads, group, rng);
    blk.self_norm = nn::LayerNorm::create(store, bn + ".self_norm", d_model, group);
    blk.context_attn =
        nn::MultiHeadAttention::create(store, bn + ".context_attn", d_model, d_context, heads, group, rng);
    blk.context_norm = nn::LayerNorm::create(store, bn + ".context_norm", d_model, group);
    blk.kg_attn = nn::MultiHeadAttention::create(store, bn + ".kg_attn", d_model, d_kg, heads, group, rng);
    blk.kg_norm = nn::LayerNorm::create(store, bn + ".kg_norm", d_model, group);
    blk.ffn = nn::FeedForward::create(store, bn + ".ffn", d_model, d_ff, d_model, nn::Activation::Relu, group, rng);
    blk.ffn_norm = nn::LayerNorm::create(store, bn + ".ffn_norm", d_model, group);
    p.blocks.push_back(std::move(blk));
  }
  p.output = nn::Linear::create(store, name + ".output", d_model, static_cast<Eigen::Index>(vocab_size), group, rng);
  return p;
}

ad::Var decode_step(const ad::Var& prev, const ad::Var& context, const ad::Var& kg_memory, const DecoderBlock& block) {
  ad::Var a0 = block.self_norm(ad::add(prev, block.self_attn(prev, prev, true)));
  ad::Var a1 = block.context_norm(ad::add(a0, block.context_attn(a0, context)));
  ad::Var a2 = kg_memory.rows() == 0 ? a1 : block.kg_norm(ad::add(a1, block.kg_attn(a1, kg_memory)));
  return block.ffn_norm(ad::add(a2, block.ffn(a2)));
}

ad::Var decode(std::span<const int> prefix, const ad::Var& context, const ad::Var& kg_memory,
               const DecoderParams& params) {
  if (prefix.empty()) throw ShapeMismatch("decode: empty prefix");
  if (prefix.size() > params.max_len()) throw SequenceTooLong(prefix.size(), params.max_len());
  std::vector<std::int64_t> ids(prefix.begin(), prefix.end());
  ad::Var y = ad::add(ad::gather_rows(params.token_embedding, ids),
                      ad::slice_rows(params.positions, 0, static_cast<Eigen::Index>(prefix.size())));
  for (const auto& block : params.blocks) y = decode_step(y, context, kg_memory, block);
  return y;
}

CopyParams CopyParams::create(nn::ParameterStore& store, const std::string& name, Eigen::Index d_model,
                              Eigen::Index d_tok, nn::ParamGroup group, Rng& rng) {
  return CopyParams{store.create(name + ".gate_weight", nn::xavier_uniform(d_model, 1, rng), group),
                    store.create(name + ".gate_bias", ad::Matrix::Zero(1, 1), group),
                    store.create(name + ".bilinear", nn::xavier_uniform(d_model, d_tok, rng), group)};
}

CopySource make_copy_source(std::span<const EntityId> entities, const DescriptionCache& cache, const Vocab& vocab) {
  CopySource src;
  std::vector<EntityId> distinct;
  std::unordered_set<EntityId> seen;
  std::size_t rows = 0;
  for (EntityId e : entities) {
    if (seen.insert(e).second) {
      distinct.push_back(e);
      rows += cache.tokens(e).size();
    }
  }
  const auto width = cache.stacked().cols();
  src.vectors.resize(static_cast<Eigen::Index>(rows), width);
  Eigen::Index at = 0;
  for (EntityId e : distinct) {
    const ad::Matrix v = cache.vectors(e);
    if (v.rows() > 0) src.vectors.middleRows(at, v.rows()) = v;
    at += v.rows();
    for (const auto& tok : cache.tokens(e)) src.vocab_ids.push_back(vocab.id(tok));
  }
  return src;
}

ad::Var output_distribution(const ad::Var& states, const CopySource& source, const CopyParams& copy,
                            const nn::Linear& projection) {
  ad::Var generative = ad::softmax_rows(projection(states));
  if (source.empty()) return generative;

  const auto vocab_size = projection.out_dim();
  ad::SparseMatrix scatter(static_cast<Eigen::Index>(source.vocab_ids.size()), vocab_size);
  std::vector<Eigen::Triplet<double>> entries;
  for (std::size_t j = 0; j < source.vocab_ids.size(); ++j) {
    entries.emplace_back(static_cast<Eigen::Index>(j), source.vocab_ids[j], 1.0);
  }
  scatter.setFromTriplets(entries.begin(), entries.end());

  ad::Var copy_scores = ad::matmul_nt(ad::matmul(states, copy.bilinear), ad::constant(source.vectors));
  ad::Var copy_probs = ad::softmax_rows(copy_scores);  // T x J
  // (P S) = (S^T P^T)^T with S constant.
  ad::Var scattered = ad::transpose(ad::spmm(ad::SparseMatrix(scatter.transpose()), ad::transpose(copy_probs)));
  ad::Var ones = ad::constant(ad::Matrix::Ones(states.rows(), 1));
  ad::Var lambda = ad::sigmoid(ad::add(ad::matmul(states, copy.gate_weight), ad::matmul(ones, copy.gate_bias)));
  return ad::add(ad::mul_col(generative, ad::one_minus(lambda)), ad::mul_col(scattered, lambda));
}

ad::Var sequence_nll(const ad::Var& distribution, std::span<const int> gold) {
  if (static_cast<std::size_t>(distribution.rows()) != gold.size()) {
    throw ShapeMismatch("sequence_nll: " + std::to_string(distribution.rows()) + " rows for " +
                        std::to_string(gold.size()) + " gold tokens");
  }
  if (gold.empty()) throw EmptyResponse();
  std::vector<std::int64_t> cols(gold.begin(), gold.end());
  return ad::scale(ad::sum(ad::log(ad::pick(distribution, cols))), -1.0 / static_cast<double>(gold.size()));
}

std::vector<int> greedy_decode(const NextTokenFn& next, std::size_t max_len) {
  std::vector<int> prefix{Vocab::kBos};
  std::vector<int> out;
  while (out.size() < max_len) {
    const Eigen::RowVectorXd p = next(prefix);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < p.size(); ++i) {
      if (p(i) > p(best)) best = i;
    }
    const int tok = static_cast<int>(best);
    if (tok == Vocab::kEos) break;
    out.push_back(tok);
    prefix.push_back(tok);
  }
  return out;
}

GeneratedResponse render_response(std::span<const int> ids, const Vocab& vocab,
                                  std::span<const EntityId> recommendations, const KnowledgeGraph& kg) {
  GeneratedResponse r;
  std::vector<EntityId> queue;
  std::set<std::string> names;
  for (EntityId e : recommendations) {
    if (names.insert(kg.entity(e).name).second) queue.push_back(e);
  }
  std::size_t next = 0;
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    r.tokens.push_back(tok);
    if (!out.empty()) out.push_back(' ');
    if (id == Vocab::kItem) {
      if (next < queue.size()) {
        out += kg.entity(queue[next]).name;
        r.filled_items.push_back(queue[next++]);
      } else {
        out += tok;
        r.unfilled_placeholder = true;
      }
    } else {
      out += tok;
    }
  }
  r.text = std::move(out);
  return r;
}

double distinct_n(std::span<const std::string> responses, std::size_t n) {
  if (n < 1) throw ConfigError("distinct_n: n must be at least 1");
  if (responses.empty()) return 0.0;
  std::set<std::vector<std::string>> grams;
  for (const auto& resp : responses) {
    std::istringstream in(resp);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    for (std::size_t i = 0; i + n <= words.size(); ++i) grams.emplace(words.begin() + i, words.begin() + i + n);
  }
  return static_cast<double>(grams.size()) / static_cast<double>(responses.size());
}

double item_ratio(std::span<const GeneratedResponse> responses) {
  if (responses.empty()) return 0.0;
  const auto with_items = std::count_if(responses.begin(), responses.end(),
                                        [](const GeneratedResponse& r) { return !r.filled_items.empty(); });
  return static_cast<double>(with_items) / static_cast<double>(responses.size());
}

}  // namespace kerl
