#include "kerl/text_encoder.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "kerl/errors.hpp"
#include "kerl/rng.hpp"

namespace kerl {

namespace {

bool is_marker_char(char c) { return (c >= 'A' && c <= 'Z') || c == '_'; }

/// Length of a "[UPPER]" marker starting at text[i], or 0.
std::size_t marker_length(std::string_view text, std::size_t i) {
  if (text[i] != '[') return 0;
  std::size_t j = i + 1;
  while (j < text.size() && is_marker_char(text[j])) ++j;
  if (j == i + 1 || j >= text.size() || text[j] != ']') return 0;
  return j - i + 1;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, std::size_t max_tokens) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty() && out.size() < max_tokens) out.push_back(word);
    word.clear();
  };
  for (std::size_t i = 0; i < text.size() && out.size() < max_tokens; ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::size_t m = marker_length(text, i); m != 0) {
      flush();
      if (out.size() < max_tokens) out.emplace_back(text.substr(i, m));
      i += m - 1;
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      if (out.size() < max_tokens) out.emplace_back(1, static_cast<char>(c));
    } else {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

TokenEmbeddingTable TokenEmbeddingTable::from_file(const std::filesystem::path& path) {
  const std::string src = path.string();
  std::ifstream in(path);
  if (!in) throw MalformedRecord(src, 0, "cannot open token table");
  std::string line;
  if (!std::getline(in, line)) throw MalformedRecord(src, 1, "missing header");
  std::istringstream header(line);
  long long vocab = -1;
  long long dim = -1;
  if (!(header >> vocab >> dim) || vocab < 0 || dim <= 0) {
    throw MalformedRecord(src, 1, "header must be '<vocab size> <dim>'");
  }

  TokenEmbeddingTable t;
  t.dim_ = static_cast<std::size_t>(dim);
  t.vectors_ = ad::Matrix::Zero(vocab + 1, dim);  // row 0 is UNK
  for (long long r = 0; r < vocab; ++r) {
    const std::size_t lineno = static_cast<std::size_t>(r) + 2;
    if (!std::getline(in, line)) throw MalformedRecord(src, lineno, "expected " + std::to_string(vocab) + " rows");
    std::istringstream row(line);
    std::string token;
    if (!(row >> token)) throw MalformedRecord(src, lineno, "missing token");
    for (long long j = 0; j < dim; ++j) {
      double v = 0;
      if (!(row >> v)) throw MalformedRecord(src, lineno, "expected " + std::to_string(dim) + " floats");
      t.vectors_(r + 1, j) = v;
    }
    std::string extra;
    if (row >> extra) throw MalformedRecord(src, lineno, "trailing fields");
    if (!t.index_.emplace(token, r + 1).second) throw MalformedRecord(src, lineno, "duplicate token " + token);
  }
  return t;
}

TokenEmbeddingTable TokenEmbeddingTable::builtin(std::uint64_t seed, std::size_t dim) {
  TokenEmbeddingTable t;
  t.builtin_ = true;
  t.seed_ = seed;
  t.dim_ = dim;
  return t;
}

Eigen::RowVectorXd TokenEmbeddingTable::lookup(const std::string& token) const {
  if (builtin_) {
    Eigen::RowVectorXd v(static_cast<Eigen::Index>(dim_));
    std::uint64_t state = derive_seed(seed_, fnv1a(token));
    for (std::size_t j = 0; j < dim_; ++j) {
      state = mix64(state);
      const double u = static_cast<double>(state >> 11) * 0x1.0p-53;
      v(static_cast<Eigen::Index>(j)) = -0.1 + 0.2 * u;
    }
    return v;
  }
  auto it = index_.find(token);
  return vectors_.row(it == index_.end() ? 0 : it->second);
}

ad::Matrix TokenEmbeddingTable::embed(std::span<const std::string> tokens) const {
  ad::Matrix m(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(dim_));
  for (std::size_t i = 0; i < tokens.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = lookup(tokens[i]);
  return m;
}

AttentionPoolParams AttentionPoolParams::create(nn::ParameterStore& store, const std::string& name,
                                                Eigen::Index dim, nn::ParamGroup group, Rng& rng) {
  AttentionPoolParams p;
  p.projection = store.create(name + ".proj", nn::xavier_uniform(dim, dim, rng), group);
  p.bias = store.create(name + ".bias", ad::Matrix::Zero(1, dim), group);
  p.query = store.create(name + ".query", nn::xavier_uniform(dim, 1, rng), group);
  return p;
}

ad::Var AttentionPoolParams::scores(const ad::Var& tokens) const {
  // Rows are w_i^T, so (V w_i)^T = w_i^T V^T.
  return ad::matmul(ad::tanh(ad::add_row(ad::matmul_nt(tokens, projection), bias)), query);
}

PoolResult attention_pool(const ad::Var& tokens, const AttentionPoolParams& params) {
  if (tokens.rows() == 0) throw EmptySequence();
  if (tokens.cols() != params.projection.cols()) {
    throw ShapeMismatch("attention_pool: token width " + std::to_string(tokens.cols()) + " vs params " +
                        std::to_string(params.projection.cols()));
  }
  ad::Var weights = ad::transpose(ad::softmax_rows(ad::transpose(params.scores(tokens))));
  ad::Var pooled = ad::matmul(ad::transpose(weights), tokens);
  return {weights, pooled};
}

DescFFNParams make_desc_ffn(nn::ParameterStore& store, const std::string& name, Eigen::Index d_tok,
                            Eigen::Index d_ff, Eigen::Index d_0, nn::ParamGroup group, Rng& rng) {
  return nn::FeedForward::create(store, name, d_tok, d_ff, d_0, nn::Activation::Tanh, group, rng);
}

ad::Var describe_entity(const Entity& entity, const TokenEmbeddingTable& table, const AttentionPoolParams& pool,
                        const DescFFNParams& ffn) {
  const auto tokens = tokenize(entity.description);
  if (tokens.empty()) return ad::constant(ad::Matrix::Zero(1, ffn.output.out_dim()));
  ad::Var words = ad::constant(table.embed(tokens));
  return ffn(attention_pool(words, pool).pooled);
}

DescriptionCache::DescriptionCache(const KnowledgeGraph& kg, const TokenEmbeddingTable& table) {
  const auto n = kg.num_entities();
  tokens_.reserve(n);
  offsets_.assign(1, 0);
  mask_ = ad::Matrix::Zero(static_cast<Eigen::Index>(n), 1);
  std::size_t total = 0;
  for (const Entity& e : kg.entities()) {
    tokens_.push_back(tokenize(e.description));
    total += tokens_.back().size();
    offsets_.push_back(static_cast<std::int64_t>(total));
    if (!tokens_.back().empty()) mask_(e.id, 0) = 1.0;
  }
  stacked_.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(table.dim()));
  Eigen::Index row = 0;
  for (const auto& toks : tokens_) {
    for (const auto& tok : toks) stacked_.row(row++) = table.lookup(tok);
  }
}

ad::Matrix DescriptionCache::vectors(EntityId e) const {
  const auto i = static_cast<std::size_t>(e);
  return stacked_.middleRows(offsets_.at(i), offsets_.at(i + 1) - offsets_.at(i));
}

ad::Var describe_all(const DescriptionCache& cache, const AttentionPoolParams& pool, const DescFFNParams& ffn) {
  const auto n = static_cast<Eigen::Index>(cache.num_entities());
  if (cache.stacked().rows() == 0) return ad::constant(ad::Matrix::Zero(n, ffn.output.out_dim()));
  ad::Var words = ad::constant(cache.stacked());
  ad::Var weights = ad::segment_softmax(pool.scores(words), cache.offsets());
  ad::Var pooled = ad::segment_pool(weights, words, cache.offsets());
  return ad::mul_col(ffn(pooled), ad::constant(cache.mask()));
}

}  // namespace kerl
