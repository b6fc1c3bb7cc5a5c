#include "kerl/trainer.hpp"

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "kerl/dataset.hpp"
#include "kerl/errors.hpp"
#include "kerl/optim.hpp"
#include "kerl/rng.hpp"

namespace kerl {

namespace {

enum Stream : std::uint64_t { kPretrain = 11, kRec = 12, kGen = 13, kNegatives = 14 };

using Snapshot = std::map<std::string, ad::Matrix>;

Snapshot snapshot(const nn::ParameterStore& store, std::initializer_list<nn::ParamGroup> groups) {
  Snapshot s;
  for (const auto& [name, e] : store.entries()) {
    for (auto g : groups) {
      if (e.group == g) s.emplace(name, e.var.value());
    }
  }
  return s;
}

void restore(nn::ParameterStore& store, const Snapshot& s) {
  for (const auto& [name, value] : s) {
    ad::Var v = store.at(name);
    v.mutable_value() = value;
  }
}

void check_finite(const ad::Var& loss, const std::string& where) {
  if (!std::isfinite(loss.scalar())) throw NonFiniteLoss(where);
}

template <typename T>
std::vector<std::vector<T>> batches_of(std::vector<T> items, std::size_t size, Rng& rng) {
  rng.shuffle(items.begin(), items.end());
  std::vector<std::vector<T>> out;
  for (std::size_t i = 0; i < items.size(); i += size) {
    out.emplace_back(items.begin() + static_cast<std::ptrdiff_t>(i),
                     items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), i + size)));
  }
  return out;
}

bool step_cap_reached(std::size_t step, std::size_t cap) { return cap != 0 && step >= cap; }

/// Cycles through shuffled contrastive examples across steps.
class ClCycler {
 public:
  ClCycler(const std::vector<TrainingExample>& pool, std::size_t batch, Rng& rng) : batch_(batch), rng_(rng) {
    for (const auto& ex : pool) {
      if (!ex.entity_seq.empty() && !ex.context.empty()) pool_.push_back(&ex);
    }
  }
  ExampleRefs next() {
    ExampleRefs out;
    if (pool_.size() < 2) return out;
    while (out.size() < std::min(batch_, pool_.size())) {
      if (at_ == 0) rng_.shuffle(pool_.begin(), pool_.end());
      out.push_back(pool_[at_]);
      at_ = (at_ + 1) % pool_.size();
    }
    return out;
  }

 private:
  ExampleRefs pool_;
  std::size_t batch_;
  Rng& rng_;
  std::size_t at_ = 0;
};

}  // namespace

void TrainingLog::record(std::string_view stage, std::size_t step, double loss, double lr) {
  entries_.push_back({std::string(stage), step, loss, lr});
  if (sink_ != nullptr) {
    *sink_ << nlohmann::json{{"stage", stage}, {"step", step}, {"loss", loss}, {"lr", lr}}.dump() << "\n";
  }
}

EarlyStopper::EarlyStopper(std::size_t patience, bool higher_is_better)
    : patience_(patience),
      higher_(higher_is_better),
      best_(higher_is_better ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

bool EarlyStopper::update(double metric) {
  last_improved_ = higher_ ? metric > best_ : metric < best_;
  if (last_improved_) {
    best_ = metric;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

ExampleSplit split_examples(std::span<const Conversation> conversations, const KnowledgeGraph& kg, std::size_t cap,
                            double val_fraction, bool include_chitchat) {
  ExampleSplit s;
  for (const Conversation& c : conversations) {
    auto& dst = in_validation_split(c.id, val_fraction) ? s.validation : s.train;
    for (auto& ex : build_examples(c, kg, cap, include_chitchat)) {
      if (ex.context.empty()) continue;
      if (include_chitchat && tokenize(ex.response, kUnlimitedTokens).empty()) continue;
      dst.push_back(std::move(ex));
    }
  }
  return s;
}

StageReport pretrain(KerlModel& model, std::span<const Conversation> conversations, const TrainOptions& opts) {
  const Config& cfg = model.config();
  auto& store = model.params();
  store.set_all_trainable(false);
  store.set_trainable(nn::ParamGroup::Graph, true);
  store.set_trainable(nn::ParamGroup::Rec, true);

  Adam adam;
  for (const auto& [name, e] : store.entries()) {
    if (e.group != nn::ParamGroup::Gen) adam.add(name, e.var, cfg.lr_pretrain);
  }
  Rng rng(derive_seed(cfg.seed, kPretrain));
  const ExampleSplit split = split_examples(conversations, model.kg(), cfg.cap_P, cfg.val_fraction, false);
  ClCycler cl(split.train, cfg.batch_rec, rng);
  const std::vector<Triple> triples = model.kg().triples();

  StageReport report;
  bool capped = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs_pretrain && !capped; ++epoch) {
    for (const auto& batch : batches_of(triples, cfg.batch_ke, rng)) {
      if (step_cap_reached(report.steps, cfg.max_steps_pretrain)) {
        capped = true;
        break;
      }
      ad::Var h = model.entity_matrix();
      ad::Var loss = ad::scale(model.ke_loss(h, batch, derive_seed(cfg.seed, kNegatives, report.steps)), cfg.w_ke);
      if (cfg.w_cl > 0) {
        const ExampleRefs cl_batch = cl.next();
        if (!cl_batch.empty()) loss = ad::add(loss, ad::scale(model.cl_loss(cl_batch, h), cfg.w_cl));
      }
      check_finite(loss, "pretrain step " + std::to_string(report.steps));
      adam.zero_grad();
      loss.backward();
      adam.step();
      report.losses.push_back(loss.scalar());
      if (opts.log != nullptr) opts.log->record("pretrain", report.steps, loss.scalar(), cfg.lr_pretrain);
      ++report.steps;
    }
    if (!capped) ++report.epochs;
  }
  store.set_all_trainable(true);
  model.round_to_storage();
  if (model.stage() < Stage::Pretrained) model.set_stage(Stage::Pretrained);
  return report;
}

double evaluate_recall(const KerlModel& model, std::span<const TrainingExample> examples, std::size_t k) {
  if (examples.empty()) return 0.0;
  const ad::Var h = model.frozen_entities();
  std::vector<std::vector<EntityId>> ranked;
  std::vector<std::vector<EntityId>> targets;
  for (const auto& ex : examples) {
    ranked.push_back(model.recommend(ex.context, ex.entity_seq, h).items);
    targets.push_back(ex.targets);
  }
  return recall_at_k(ranked, targets, k);
}

RecReport evaluate_rec(const KerlModel& model, std::span<const TrainingExample> examples) {
  RecReport r;
  r.n_examples = examples.size();
  if (examples.empty()) return r;
  const ad::Var h = model.frozen_entities();
  std::vector<std::vector<EntityId>> ranked;
  std::vector<std::vector<EntityId>> targets;
  for (const auto& ex : examples) {
    ranked.push_back(model.recommend(ex.context, ex.entity_seq, h).items);
    targets.push_back(ex.targets);
  }
  r.recall_at_1 = recall_at_k(ranked, targets, 1);
  r.recall_at_10 = recall_at_k(ranked, targets, 10);
  r.recall_at_50 = recall_at_k(ranked, targets, 50);
  return r;
}

StageReport train_rec(KerlModel& model, std::span<const Conversation> conversations, const TrainOptions& opts) {
  if (!opts.skip_pretrain && model.stage() < Stage::Pretrained) {
    throw StageError("train-rec needs a pretrained checkpoint (stage is " + std::string(to_string(model.stage())) +
                     ")");
  }
  const Config& cfg = model.config();
  auto& store = model.params();
  store.set_all_trainable(false);
  store.set_trainable(nn::ParamGroup::Graph, true);
  store.set_trainable(nn::ParamGroup::Rec, true);

  Adam adam;
  for (const auto& [name, e] : store.entries()) {
    if (e.group == nn::ParamGroup::Gen) continue;
    adam.add(name, e.var, model.is_encoder_param(name) ? cfg.lr_rec_encoder : cfg.lr_rec_heads);
  }
  Rng rng(derive_seed(cfg.seed, kRec));
  const ExampleSplit split = split_examples(conversations, model.kg(), cfg.cap_P, cfg.val_fraction, false);
  if (split.train.empty()) throw NoExamples("no recommendation turns in the training split");
  const auto& eval_set = split.validation.empty() ? split.train : split.validation;
  ClCycler cl(split.train, cfg.batch_rec, rng);
  const std::vector<Triple> triples = model.kg().triples();

  StageReport report;
  EarlyStopper stopper(cfg.patience, true);
  Snapshot best = snapshot(store, {nn::ParamGroup::Graph, nn::ParamGroup::Rec});
  bool capped = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs_rec && !capped; ++epoch) {
    for (const auto& batch : batches_of(refs(split.train), cfg.batch_rec, rng)) {
      if (step_cap_reached(report.steps, cfg.max_steps_rec)) {
        capped = true;
        break;
      }
      ad::Var h = model.entity_matrix();
      ad::Var loss = model.rec_loss(batch, h);
      if (cfg.joint_rec_weight > 0) {
        std::vector<Triple> ke_batch;
        for (std::size_t i = 0; i < std::min(cfg.batch_ke, triples.size()); ++i) {
          ke_batch.push_back(triples[rng.below(triples.size())]);
        }
        ad::Var aux = ad::scale(model.ke_loss(h, ke_batch, derive_seed(cfg.seed, kNegatives, report.steps)), cfg.w_ke);
        const ExampleRefs cl_batch = cl.next();
        if (!cl_batch.empty()) aux = ad::add(aux, ad::scale(model.cl_loss(cl_batch, h), cfg.w_cl));
        loss = ad::add(loss, ad::scale(aux, cfg.joint_rec_weight));
      }
      check_finite(loss, "train-rec step " + std::to_string(report.steps));
      adam.zero_grad();
      loss.backward();
      adam.step();
      report.losses.push_back(loss.scalar());
      if (opts.log != nullptr) opts.log->record("rec", report.steps, loss.scalar(), cfg.lr_rec_heads);
      ++report.steps;
    }
    ++report.epochs;
    const bool stop = stopper.update(evaluate_recall(model, eval_set, cfg.eval_k));
    if (stopper.last_improved()) best = snapshot(store, {nn::ParamGroup::Graph, nn::ParamGroup::Rec});
    if (stop) {
      report.early_stopped = true;
      break;
    }
  }
  restore(store, best);
  report.best_metric = stopper.best();
  store.set_all_trainable(true);
  model.round_to_storage();
  if (model.stage() < Stage::RecConverged) model.set_stage(Stage::RecConverged);
  return report;
}

double evaluate_gen_loss(const KerlModel& model, std::span<const TrainingExample> examples) {
  if (examples.empty()) return 0.0;
  const ad::Var h = model.frozen_entities();
  double total = 0.0;
  for (const auto& ex : examples) {
    const ExampleRefs one{&ex};
    total += model.gen_loss(one, h).scalar();
  }
  return total / static_cast<double>(examples.size());
}

StageReport train_gen(KerlModel& model, std::span<const Conversation> conversations, const TrainOptions& opts) {
  if (model.stage() < Stage::RecConverged) {
    throw StageError("train-gen needs a checkpoint marked rec_converged (stage is " +
                     std::string(to_string(model.stage())) + ")");
  }
  const Config& cfg = model.config();
  auto& store = model.params();
  store.set_all_trainable(false);
  store.set_trainable(nn::ParamGroup::Gen, true);

  Adam adam;
  for (const auto& [name, e] : store.entries()) {
    if (e.group == nn::ParamGroup::Gen) adam.add(name, e.var, cfg.lr_gen);
  }
  Rng rng(derive_seed(cfg.seed, kGen));
  const ExampleSplit split = split_examples(conversations, model.kg(), cfg.cap_P, cfg.val_fraction, true);
  if (split.train.empty()) throw NoExamples("no responses in the training split");
  const auto& eval_set = split.validation.empty() ? split.train : split.validation;
  // Θ_G and Θ_R are frozen, so H is a constant for the whole stage.
  const ad::Var h = model.frozen_entities();

  StageReport report;
  EarlyStopper stopper(cfg.patience, false);
  Snapshot best = snapshot(store, {nn::ParamGroup::Gen});
  bool capped = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs_gen && !capped; ++epoch) {
    for (const auto& batch : batches_of(refs(split.train), cfg.batch_gen, rng)) {
      if (step_cap_reached(report.steps, cfg.max_steps_gen)) {
        capped = true;
        break;
      }
      ad::Var loss = model.gen_loss(batch, h);
      check_finite(loss, "train-gen step " + std::to_string(report.steps));
      adam.zero_grad();
      loss.backward();
      adam.step();
      report.losses.push_back(loss.scalar());
      if (opts.log != nullptr) opts.log->record("gen", report.steps, loss.scalar(), cfg.lr_gen);
      ++report.steps;
    }
    ++report.epochs;
    const bool stop = stopper.update(evaluate_gen_loss(model, eval_set));
    if (stopper.last_improved()) best = snapshot(store, {nn::ParamGroup::Gen});
    if (stop) {
      report.early_stopped = true;
      break;
    }
  }
  restore(store, best);
  report.best_metric = stopper.best();
  store.set_all_trainable(true);
  model.round_to_storage();
  model.set_stage(Stage::GenConverged);
  return report;
}

GenReport evaluate_gen(const KerlModel& model, std::span<const TrainingExample> examples) {
  GenReport r;
  const ad::Var h = model.frozen_entities();
  std::vector<std::string> texts;
  for (const auto& ex : examples) {
    Recommendation rec = model.recommend(ex.context, ex.entity_seq, h);
    if (rec.items.size() > model.config().top_k) rec.items.resize(model.config().top_k);
    r.responses.push_back(model.generate(ex.context, ex.entity_seq, rec.items, h, model.config().max_gen_len));
    texts.push_back(r.responses.back().text);
  }
  r.n_responses = r.responses.size();
  r.dist2 = distinct_n(texts, 2);
  r.dist3 = distinct_n(texts, 3);
  r.dist4 = distinct_n(texts, 4);
  r.item_ratio = item_ratio(r.responses);
  return r;
}

}  // namespace kerl
