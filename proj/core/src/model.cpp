#include "kerl/model.hpp"

#include <algorithm>

#include "kerl/errors.hpp"

namespace kerl {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::Init: return "init";
    case Stage::Pretrained: return "pretrained";
    case Stage::RecConverged: return "rec_converged";
    case Stage::GenConverged: return "gen_converged";
  }
  return "init";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : {Stage::Init, Stage::Pretrained, Stage::RecConverged, Stage::GenConverged}) {
    if (s == to_string(st)) return st;
  }
  throw CheckpointError("unknown stage marker '" + std::string(s) + "'");
}

ExampleRefs refs(std::span<const TrainingExample> examples) {
  ExampleRefs out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(&ex);
  return out;
}

KerlModel::KerlModel(Config cfg, std::shared_ptr<const KnowledgeGraph> kg, TokenEmbeddingTable table, Vocab vocab)
    : cfg_(std::move(cfg)), kg_(std::move(kg)), table_(std::move(table)), vocab_(std::move(vocab)) {
  cfg_.validate();
  if (!kg_) throw ConfigError("model needs a knowledge graph");
  if (table_.dim() != cfg_.d_tok) {
    throw ConfigError("token table width " + std::to_string(table_.dim()) + " differs from d_tok " +
                      std::to_string(cfg_.d_tok));
  }
  cache_ = DescriptionCache(*kg_, table_);
  adjacency_ = RelationAdjacency(*kg_);

  using nn::ParamGroup;
  const auto d_tok = static_cast<Eigen::Index>(cfg_.d_tok);
  const auto d_0 = static_cast<Eigen::Index>(cfg_.d_0);
  const auto d_star = static_cast<Eigen::Index>(cfg_.d_star());
  const auto n = static_cast<Eigen::Index>(kg_->num_entities());
  Rng rng(derive_seed(cfg_.seed, kInitStream));

  if (cfg_.use_descriptions) {
    desc_pool_ = AttentionPoolParams::create(store_, "kg.desc.pool", d_tok, ParamGroup::Graph, rng);
    desc_ffn_ = make_desc_ffn(store_, "kg.desc.ffn", d_tok, static_cast<Eigen::Index>(cfg_.d_ff), d_0,
                              ParamGroup::Graph, rng);
  } else {
    free_entities_ = store_.create("kg.entity_embedding", nn::xavier_uniform(n, d_0, rng), ParamGroup::Graph);
  }
  for (std::size_t l = 0; l < cfg_.rgcn_layers; ++l) {
    rgcn_.push_back(RgcnLayerParams::create(store_, "kg.rgcn.layer" + std::to_string(l), kg_->num_relations(), d_0,
                                            d_0, ParamGroup::Graph, rng));
  }
  relations_ = store_.create("kg.relations",
                             nn::xavier_uniform(static_cast<Eigen::Index>(kg_->num_relations()), d_star, rng),
                             ParamGroup::Graph);

  ad::Matrix pos(static_cast<Eigen::Index>(cfg_.cap_P), d_star);
  for (Eigen::Index i = 0; i < pos.rows(); ++i) {
    for (Eigen::Index j = 0; j < pos.cols(); ++j) pos(i, j) = 0.02 * rng.normal();
  }
  positions_ = store_.create("rec.positions", std::move(pos), ParamGroup::Rec);
  entity_attn_ = EntityAttnParams::create(store_, "rec.entity_attn", static_cast<Eigen::Index>(cfg_.d_attn), d_star,
                                          ParamGroup::Rec, rng);
  history_ = HistoryEncoderParams::create(store_, "rec.history", d_tok, d_star, cfg_.hist_blocks, cfg_.heads,
                                          static_cast<Eigen::Index>(cfg_.d_ff), cfg_.max_ctx_len, ParamGroup::Rec, rng);
  gate_ = GateParams::create(store_, "rec.gate", d_star, ParamGroup::Rec, rng);

  gen_context_ = ContextEncoder::create(store_, "gen.context", d_tok, cfg_.hist_blocks, cfg_.heads,
                                        static_cast<Eigen::Index>(cfg_.d_ff), cfg_.max_ctx_len, ParamGroup::Gen, rng);
  decoder_ = DecoderParams::create(store_, "gen.decoder", vocab_.size(), static_cast<Eigen::Index>(cfg_.gen_d_model),
                                   d_tok, d_star, cfg_.gen_blocks, cfg_.gen_heads,
                                   static_cast<Eigen::Index>(cfg_.gen_d_ff), cfg_.max_gen_len, ParamGroup::Gen, rng);
  copy_ = CopyParams::create(store_, "gen.copy", static_cast<Eigen::Index>(cfg_.gen_d_model), d_tok, ParamGroup::Gen,
                             rng);
  round_to_storage();
}

Vocab KerlModel::build_vocab(const KnowledgeGraph& kg, std::span<const TrainingExample> examples) {
  std::vector<std::vector<std::string>> lists;
  lists.reserve(examples.size() + kg.num_entities());
  for (const auto& ex : examples) lists.push_back(tokenize(ex.response, kUnlimitedTokens));
  for (const auto& e : kg.entities()) lists.push_back(tokenize(e.description));
  return Vocab::build(lists);
}

ad::Var KerlModel::base_entities() const {
  if (!cfg_.use_descriptions) return free_entities_;
  return describe_all(cache_, desc_pool_, desc_ffn_);
}

ad::Var KerlModel::entity_matrix() const {
  std::vector<ad::Var> layers{base_entities()};
  for (const auto& layer : rgcn_) layers.push_back(rgcn_forward(adjacency_, layers.back(), layer));
  return aggregate_layers(layers);
}

ad::Var KerlModel::ke_loss(const ad::Var& entities, std::span<const Triple> batch, std::uint64_t seed) const {
  KEConfig ke{cfg_.margin, cfg_.k_neg, cfg_.p_norm, cfg_.rgcn_layers, cfg_.filtered};
  return kerl::ke_loss(*kg_, entities, relations_, batch, ke, seed);
}

ad::Var KerlModel::entity_view(std::span<const EntityId> seq, const ad::Var& entities) const {
  return encode_entities(seq, entities, positions_, entity_attn_, cfg_.use_pe);
}

ad::Var KerlModel::context_view(std::span<const Utterance> context) const {
  return encode_history(context, table_, history_);
}

ad::Var KerlModel::cl_loss(const ExampleRefs& batch, const ad::Var& entities) const {
  std::vector<ad::Var> contexts;
  std::vector<ad::Var> views;
  for (const TrainingExample* ex : batch) {
    if (ex->entity_seq.empty() || ex->context.empty()) continue;
    ad::Var ue = entity_view(ex->entity_seq, entities);
    if (ue.value().norm() < 1e-12) continue;
    ad::Var uc = context_view(ex->context);
    if (uc.value().norm() < 1e-12) continue;
    views.push_back(ue);
    contexts.push_back(uc);
  }
  if (views.size() < 2) return ad::scalar_constant(0.0);
  return contrastive_loss(ad::concat_rows(contexts), ad::concat_rows(views), ContrastiveConfig{cfg_.tau});
}

Fusion KerlModel::user_preference(const ExampleRefs& batch, const ad::Var& entities) const {
  if (batch.empty()) throw ShapeMismatch("user_preference: empty batch");
  std::vector<ad::Var> ue;
  std::vector<ad::Var> uc;
  for (const TrainingExample* ex : batch) {
    ue.push_back(entity_view(ex->entity_seq, entities));
    uc.push_back(context_view(ex->context));
  }
  return fuse(ad::concat_rows(ue), ad::concat_rows(uc), gate_);
}

ad::Var KerlModel::rec_loss(const ExampleRefs& batch, const ad::Var& entities) const {
  Fusion f = user_preference(batch, entities);
  std::vector<std::vector<EntityId>> targets;
  targets.reserve(batch.size());
  for (const TrainingExample* ex : batch) targets.push_back(ex->targets);
  return rec_loss_from_logits(item_logits(f.preference, entities, kg_->item_ids()), targets, kg_->item_ids());
}

Recommendation KerlModel::recommend(std::span<const Utterance> context, std::span<const EntityId> seq,
                                    const ad::Var& entities) const {
  Fusion f = fuse(entity_view(seq, entities), context_view(context), gate_);
  const ad::Matrix probs = score_items(f.preference, entities, kg_->item_ids()).value();
  const Eigen::RowVectorXd row = probs.row(0);
  Recommendation r;
  r.items = rank_items(row, kg_->item_ids());
  const auto& items = kg_->item_ids();
  for (EntityId e : r.items) {
    const auto idx = std::lower_bound(items.begin(), items.end(), e) - items.begin();
    r.scores.push_back(row(idx));
  }
  r.beta = f.beta.value()(0, 0);
  return r;
}

std::vector<int> KerlModel::response_ids(const TrainingExample& ex) const {
  const auto words = tokenize(ex.response, kUnlimitedTokens);
  std::vector<int> ids = vocab_.encode(words);
  if (ids.size() > cfg_.max_gen_len - 1) ids.resize(cfg_.max_gen_len - 1);
  return ids;
}

ad::Var KerlModel::response_distribution(std::span<const Utterance> context, std::span<const EntityId> seq,
                                         std::span<const int> prefix, const ad::Var& entities) const {
  ad::Var x = encode_context(context, table_, gen_context_);
  ad::Var hp = seq.empty() ? ad::constant(ad::Matrix(0, entities.cols()))
                           : positioned_entities(seq, entities, positions_, cfg_.use_pe);
  ad::Var states = decode(prefix, x, hp, decoder_);
  const CopySource source = cfg_.use_copy ? make_copy_source(seq, cache_, vocab_) : CopySource{};
  return output_distribution(states, source, copy_, decoder_.output);
}

ad::Var KerlModel::gen_loss(const ExampleRefs& batch, const ad::Var& entities) const {
  if (batch.empty()) throw ShapeMismatch("gen_loss: empty batch");
  std::vector<ad::Var> losses;
  for (const TrainingExample* ex : batch) {
    const std::vector<int> ids = response_ids(*ex);
    if (ids.empty()) throw EmptyResponse();
    std::vector<int> input{Vocab::kBos};
    input.insert(input.end(), ids.begin(), ids.end());
    std::vector<int> gold = ids;
    gold.push_back(Vocab::kEos);
    losses.push_back(sequence_nll(response_distribution(ex->context, ex->entity_seq, input, entities), gold));
  }
  return ad::mean(ad::concat_rows(losses));
}

GeneratedResponse KerlModel::generate(std::span<const Utterance> context, std::span<const EntityId> seq,
                                      std::span<const EntityId> recommendations, const ad::Var& entities,
                                      std::size_t max_len) const {
  // Context and knowledge memories do not depend on the prefix; encode once.
  const ad::Var x = ad::constant(encode_context(context, table_, gen_context_).value());
  const ad::Var hp = seq.empty() ? ad::constant(ad::Matrix(0, entities.cols()))
                                 : ad::constant(positioned_entities(seq, entities, positions_, cfg_.use_pe).value());
  const CopySource source = cfg_.use_copy ? make_copy_source(seq, cache_, vocab_) : CopySource{};
  auto next = [&](std::span<const int> prefix) -> Eigen::RowVectorXd {
    const ad::Var dist = output_distribution(decode(prefix, x, hp, decoder_), source, copy_, decoder_.output);
    return dist.value().bottomRows(1);
  };
  const auto ids = greedy_decode(next, std::min(max_len, cfg_.max_gen_len - 1));
  return render_response(ids, vocab_, recommendations, *kg_);
}

void KerlModel::retune(const Config& cfg) {
  cfg.validate();
  const auto before = cfg_.to_map();
  for (const auto& [key, value] : cfg.to_map()) {
    if (Config::is_structural(key) && before.at(key) != value) {
      throw ConfigError("'" + key + "' is fixed by the checkpoint (" + before.at(key) + "), got " + value);
    }
  }
  cfg_ = cfg;
}

void KerlModel::round_to_storage() {
  for (const auto& [name, entry] : store_.entries()) {
    ad::Var v = entry.var;
    v.mutable_value() = v.value().cast<float>().cast<double>();
  }
}

bool KerlModel::is_encoder_param(const std::string& name) const {
  return name.rfind("rec.history.block", 0) == 0 || name == "rec.history.positions";
}

}  // namespace kerl
