#include "kerl/nn.hpp"

#include <cmath>
#include <limits>
#include <string_view>

#include "kerl/errors.hpp"

namespace kerl::nn {

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::Graph: return "graph";
    case ParamGroup::Rec: return "rec";
    case ParamGroup::Gen: return "gen";
  }
  return "?";
}

Var ParameterStore::create(const std::string& name, Matrix init, ParamGroup group) {
  if (entries_.count(name) != 0) throw ConfigError("duplicate parameter name " + name);
  Var v = ad::parameter(std::move(init));
  entries_.emplace(name, Entry{v, group});
  return v;
}

const Var& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter " + name);
  return it->second.var;
}

std::vector<std::string> ParameterStore::names(ParamGroup group) const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) {
    if (e.group == group) out.push_back(name);
  }
  return out;
}

void ParameterStore::set_trainable(ParamGroup group, bool on) {
  for (auto& [name, e] : entries_) {
    if (e.group == group) e.var.set_requires_grad(on);
  }
}

void ParameterStore::set_all_trainable(bool on) {
  for (auto& [name, e] : entries_) e.var.set_requires_grad(on);
}

void ParameterStore::zero_grad() {
  for (auto& [name, e] : entries_) e.var.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += static_cast<std::size_t>(e.var.value().size());
  return n;
}

std::uint64_t ParameterStore::hash(ParamGroup group) const {
  std::uint64_t h = fnv1a("");
  for (const auto& [name, e] : entries_) {
    if (e.group != group) continue;
    h = fnv1a(name, h);
    const Matrix& m = e.var.value();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size()), h);
  }
  return h;
}

Matrix xavier_uniform(ad::Index rows, ad::Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  // Fill row by row so the draw order does not depend on storage order.
  for (ad::Index i = 0; i < rows; ++i) {
    for (ad::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Relu: return ad::relu(x);
    case Activation::Identity: return x;
  }
  return x;
}

Linear Linear::create(ParameterStore& store, const std::string& name, ad::Index in, ad::Index out,
                      ParamGroup group, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = store.create(name + ".weight", xavier_uniform(in, out, rng), group);
  if (with_bias) l.bias = store.create(name + ".bias", Matrix::Zero(1, out), group);
  return l;
}

Var Linear::operator()(const Var& x) const {
  Var y = ad::matmul(x, weight);
  return bias.defined() ? ad::add_row(y, bias) : y;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, ad::Index dim, ParamGroup group) {
  return LayerNorm{store.create(name + ".gamma", Matrix::Ones(1, dim), group),
                   store.create(name + ".beta", Matrix::Zero(1, dim), group)};
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, ad::Index in,
                                ad::Index hidden_dim, ad::Index out, Activation act, ParamGroup group,
                                Rng& rng) {
  FeedForward f;
  f.hidden = Linear::create(store, name + ".hidden", in, hidden_dim, group, rng);
  f.output = Linear::create(store, name + ".output", hidden_dim, out, group, rng);
  f.activation = act;
  return f;
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name,
                                              ad::Index model_dim, ad::Index memory_dim, int heads,
                                              ParamGroup group, Rng& rng) {
  if (heads < 1 || model_dim % heads != 0) {
    throw ConfigError(name + ": model dim " + std::to_string(model_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention m;
  m.query = Linear::create(store, name + ".query", model_dim, model_dim, group, rng);
  m.key = Linear::create(store, name + ".key", memory_dim, model_dim, group, rng);
  m.value = Linear::create(store, name + ".value", memory_dim, model_dim, group, rng);
  m.out = Linear::create(store, name + ".out", model_dim, model_dim, group, rng);
  m.heads = heads;
  return m;
}

Var MultiHeadAttention::operator()(const Var& queries, const Var& memory, bool causal) const {
  if (causal && queries.rows() != memory.rows()) {
    throw ShapeMismatch("causal attention needs equal query and memory lengths");
  }
  const Var q = query(queries);
  const Var k = key(memory);
  const Var v = value(memory);
  const ad::Index head_dim = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var mask;
  if (causal) {
    Matrix m = Matrix::Zero(queries.rows(), memory.rows());
    for (ad::Index i = 0; i < m.rows(); ++i) {
      for (ad::Index j = i + 1; j < m.cols(); ++j) m(i, j) = -std::numeric_limits<double>::infinity();
    }
    mask = ad::constant(std::move(m));
  }

  std::vector<Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const ad::Index start = h * head_dim;
    Var scores = ad::scale(ad::matmul_nt(ad::slice_cols(q, start, head_dim), ad::slice_cols(k, start, head_dim)),
                           inv_sqrt);
    if (causal) scores = ad::add(scores, mask);
    outputs.push_back(ad::matmul(ad::softmax_rows(scores), ad::slice_cols(v, start, head_dim)));
  }
  Var joined = heads == 1 ? outputs.front() : ad::concat_cols(outputs);
  return out(joined);
}

EncoderBlock EncoderBlock::create(ParameterStore& store, const std::string& name, ad::Index dim, int heads,
                                  ad::Index ffn_dim, ParamGroup group, Rng& rng) {
  EncoderBlock b;
  b.attention = MultiHeadAttention::create(store, name + ".attn", dim, dim, heads, group, rng);
  b.attention_norm = LayerNorm::create(store, name + ".attn_norm", dim, group);
  b.ffn = FeedForward::create(store, name + ".ffn", dim, ffn_dim, dim, Activation::Relu, group, rng);
  b.ffn_norm = LayerNorm::create(store, name + ".ffn_norm", dim, group);
  return b;
}

Var EncoderBlock::operator()(const Var& x) const {
  Var h = attention_norm(ad::add(x, attention(x, x)));
  return ffn_norm(ad::add(h, ffn(h)));
}

}  // namespace kerl::nn
