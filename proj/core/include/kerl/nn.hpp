#pragma once

#include <map>
#include <string>
#include <vector>

#include "kerl/ad.hpp"
#include "kerl/rng.hpp"

namespace kerl::nn {

using ad::Matrix;
using ad::Var;

/// Parameter groups trained by separate stages: graph encoding, recommendation,
/// and conversation.
enum class ParamGroup { Graph, Rec, Gen };

const char* to_string(ParamGroup group);

/// Named, grouped trainable tensors. Iteration order is lexicographic by name,
/// which fixes checkpoint layout and optimizer traversal.
class ParameterStore {
 public:
  struct Entry {
    Var var;
    ParamGroup group;
  };

  Var create(const std::string& name, Matrix init, ParamGroup group);

  const Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::vector<std::string> names(ParamGroup group) const;

  /// Toggles requires_grad for a whole group.
  void set_trainable(ParamGroup group, bool on);
  void set_all_trainable(bool on);
  void zero_grad();

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  /// FNV hash of the raw value bytes of one group.
  std::uint64_t hash(ParamGroup group) const;

 private:
  std::map<std::string, Entry> entries_;
};

Matrix xavier_uniform(ad::Index rows, ad::Index cols, Rng& rng);

enum class Activation { Tanh, Relu, Identity };
Var activate(const Var& x, Activation act);

/// Row convention: y = x W + b with W in (in x out), b in (1 x out).
struct Linear {
  Var weight;
  Var bias;

  static Linear create(ParameterStore& store, const std::string& name, ad::Index in, ad::Index out,
                       ParamGroup group, Rng& rng, bool with_bias = true);
  Var operator()(const Var& x) const;
  ad::Index in_dim() const { return weight.rows(); }
  ad::Index out_dim() const { return weight.cols(); }
};

struct LayerNorm {
  Var gamma;
  Var beta;

  static LayerNorm create(ParameterStore& store, const std::string& name, ad::Index dim, ParamGroup group);
  Var operator()(const Var& x) const { return ad::layer_norm_rows(x, gamma, beta); }
};

/// Two linear maps with an activation between.
struct FeedForward {
  Linear hidden;
  Linear output;
  Activation activation = Activation::Relu;

  static FeedForward create(ParameterStore& store, const std::string& name, ad::Index in, ad::Index hidden_dim,
                            ad::Index out, Activation act, ParamGroup group, Rng& rng);
  Var operator()(const Var& x) const { return output(activate(hidden(x), activation)); }
};

/// Scaled dot-product multi-head attention. Query width and memory width may
/// differ; output has the query width.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear out;
  int heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name, ad::Index model_dim,
                                   ad::Index memory_dim, int heads, ParamGroup group, Rng& rng);
  /// Causal masking requires memory == queries in length and position.
  Var operator()(const Var& queries, const Var& memory, bool causal = false) const;
};

/// Post-norm transformer encoder block.
struct EncoderBlock {
  MultiHeadAttention attention;
  LayerNorm attention_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;

  static EncoderBlock create(ParameterStore& store, const std::string& name, ad::Index dim, int heads,
                             ad::Index ffn_dim, ParamGroup group, Rng& rng);
  Var operator()(const Var& x) const;
};

}  // namespace kerl::nn
