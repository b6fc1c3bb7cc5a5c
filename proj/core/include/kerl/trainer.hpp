#pragma once

#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kerl/dialogue_corpus.hpp"
#include "kerl/generator.hpp"
#include "kerl/model.hpp"

namespace kerl {

struct LogEntry {
  std::string stage;
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

/// Per-step loss trace. When a sink is attached every entry is also written
/// as one JSON line {stage, step, loss, lr}.
class TrainingLog {
 public:
  TrainingLog() = default;
  explicit TrainingLog(std::ostream& sink) : sink_(&sink) {}

  void record(std::string_view stage, std::size_t step, double loss, double lr);
  const std::vector<LogEntry>& entries() const { return entries_; }

 private:
  std::ostream* sink_ = nullptr;
  std::vector<LogEntry> entries_;
};

/// Patience counter over evaluation results; only strict improvement resets it.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, bool higher_is_better);

  /// Records one evaluation; true when `patience` evaluations in a row failed
  /// to improve on the best.
  bool update(double metric);
  bool last_improved() const { return last_improved_; }
  double best() const { return best_; }
  std::size_t stale() const { return stale_; }

 private:
  std::size_t patience_;
  bool higher_;
  double best_;
  std::size_t stale_ = 0;
  bool last_improved_ = false;
};

struct StageReport {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  std::vector<double> losses;  // one per step
  double best_metric = std::numeric_limits<double>::quiet_NaN();
  bool early_stopped = false;
};

struct TrainOptions {
  TrainingLog* log = nullptr;
  /// Lets train_rec run on a model that was never pretrained.
  bool skip_pretrain = false;
};

struct ExampleSplit {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> validation;
};

/// Builds examples and splits them by conversation id. Examples with an empty
/// context are dropped (no history to encode); with include_chitchat, examples
/// whose response tokenizes to nothing are dropped as well.
ExampleSplit split_examples(std::span<const Conversation> conversations, const KnowledgeGraph& kg, std::size_t cap,
                            double val_fraction, bool include_chitchat);

/// Minimizes w_ke L_KE + w_cl L_CL over Θ_G and Θ_R.
StageReport pretrain(KerlModel& model, std::span<const Conversation> conversations, const TrainOptions& opts = {});
/// Minimizes L_rec over Θ_G and Θ_R with early stopping on validation
/// Recall@eval_k (training recall when the validation split is empty). The
/// best evaluated parameters are kept.
StageReport train_rec(KerlModel& model, std::span<const Conversation> conversations, const TrainOptions& opts = {});
/// Minimizes L_gen over Θ_C with Θ_G and Θ_R frozen; early stopping on
/// validation loss (training loss when the validation split is empty).
StageReport train_gen(KerlModel& model, std::span<const Conversation> conversations, const TrainOptions& opts = {});

struct RecReport {
  double recall_at_1 = 0.0;
  double recall_at_10 = 0.0;
  double recall_at_50 = 0.0;
  std::size_t n_examples = 0;
};
RecReport evaluate_rec(const KerlModel& model, std::span<const TrainingExample> examples);
/// Recall@k of the model's rankings over the examples.
double evaluate_recall(const KerlModel& model, std::span<const TrainingExample> examples, std::size_t k);

struct GenReport {
  double dist2 = 0.0;
  double dist3 = 0.0;
  double dist4 = 0.0;
  double item_ratio = 0.0;
  std::size_t n_responses = 0;
  std::vector<GeneratedResponse> responses;
};
/// Generates a reply for each example, filling placeholders from the
/// model's own top_k recommendations.
GenReport evaluate_gen(const KerlModel& model, std::span<const TrainingExample> examples);
/// Mean teacher-forced loss, no gradient.
double evaluate_gen_loss(const KerlModel& model, std::span<const TrainingExample> examples);

}  // namespace kerl
