#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "kerl/errors.hpp"
#include "kerl/trainer.hpp"

namespace {

namespace nn = kerl::nn;
using kerl::Stage;
using testing_support::make_toy_model;
using testing_support::trained_toy_model;

std::map<std::string, kerl::ad::Matrix> values(const kerl::KerlModel& m) {
  std::map<std::string, kerl::ad::Matrix> out;
  for (const auto& [name, e] : m.params().entries()) out.emplace(name, e.var.value());
  return out;
}

kerl::Config quick_config() {
  kerl::Config cfg = kerl::toy::tiny_config();
  cfg.epochs_pretrain = 2;
  cfg.epochs_rec = 2;
  cfg.epochs_gen = 2;
  return cfg;
}

TEST(Pretrain, ZeroEpochsChangeNothing) {
  kerl::Config cfg = quick_config();
  cfg.epochs_pretrain = 0;
  cfg.epochs_rec = 0;
  auto toy = make_toy_model(cfg);
  const auto before = values(*toy.model);
  const auto r = kerl::pretrain(*toy.model, toy.data.train);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_EQ(values(*toy.model), before);
  kerl::train_rec(*toy.model, toy.data.train);
  EXPECT_EQ(values(*toy.model), before);
}

TEST(Pretrain, KnowledgeLossTrendsDownOverTwoHundredSteps) {
  kerl::Config cfg = kerl::toy::tiny_config();
  cfg.batch_ke = 8;
  cfg.epochs_pretrain = 1000;
  cfg.max_steps_pretrain = 200;
  cfg.w_cl = 0;
  cfg.lr_pretrain = 1e-2;
  const auto data = kerl::toy::kge_graph(3);
  kerl::KerlModel model(cfg, data.kg, kerl::TokenEmbeddingTable::builtin(cfg.token_seed, cfg.d_tok),
                        kerl::KerlModel::build_vocab(*data.kg, {}));
  kerl::TrainingLog log;
  kerl::TrainOptions opts;
  opts.log = &log;
  const auto r = kerl::pretrain(model, data.train, opts);
  ASSERT_EQ(r.steps, 200u);
  ASSERT_EQ(log.entries().size(), 200u);
  std::vector<double> window_means;
  for (std::size_t w = 0; w < 4; ++w) {
    const auto first = r.losses.begin() + static_cast<std::ptrdiff_t>(50 * w);
    window_means.push_back(std::accumulate(first, first + 50, 0.0) / 50.0);
  }
  for (std::size_t w = 1; w < window_means.size(); ++w) {
    EXPECT_LT(window_means[w], window_means[w - 1]) << "window " << w;
  }
  EXPECT_LT(r.losses.back(), r.losses.front());
}

TEST(Pretrain, SameSeedSameParameters) {
  auto a = trained_toy_model(Stage::Pretrained, 5);
  auto b = trained_toy_model(Stage::Pretrained, 5);
  auto c = trained_toy_model(Stage::Pretrained, 6);
  for (auto g : {nn::ParamGroup::Graph, nn::ParamGroup::Rec}) {
    EXPECT_EQ(a.model->params().hash(g), b.model->params().hash(g));
    EXPECT_NE(a.model->params().hash(g), c.model->params().hash(g));
  }
}

TEST(Stages, InactiveGroupsStayFrozen) {
  auto toy = make_toy_model(quick_config());
  auto& p = toy.model->params();
  const auto gen0 = p.hash(nn::ParamGroup::Gen);
  const auto graph0 = p.hash(nn::ParamGroup::Graph);
  kerl::pretrain(*toy.model, toy.data.train);
  EXPECT_EQ(p.hash(nn::ParamGroup::Gen), gen0);
  EXPECT_NE(p.hash(nn::ParamGroup::Graph), graph0);
  EXPECT_EQ(toy.model->stage(), Stage::Pretrained);

  kerl::train_rec(*toy.model, toy.data.train);
  EXPECT_EQ(p.hash(nn::ParamGroup::Gen), gen0);
  EXPECT_EQ(toy.model->stage(), Stage::RecConverged);

  const auto graph1 = p.hash(nn::ParamGroup::Graph);
  const auto rec1 = p.hash(nn::ParamGroup::Rec);
  kerl::train_gen(*toy.model, toy.data.train);
  EXPECT_EQ(p.hash(nn::ParamGroup::Graph), graph1);
  EXPECT_EQ(p.hash(nn::ParamGroup::Rec), rec1);
  EXPECT_NE(p.hash(nn::ParamGroup::Gen), gen0);
  EXPECT_EQ(toy.model->stage(), Stage::GenConverged);
}

TEST(Stages, OutOfOrderTrainingIsRefused) {
  auto toy = make_toy_model(quick_config());
  EXPECT_THROW(kerl::train_gen(*toy.model, toy.data.train), kerl::StageError);
  EXPECT_THROW(kerl::train_rec(*toy.model, toy.data.train), kerl::StageError);
  kerl::TrainOptions skip;
  skip.skip_pretrain = true;
  EXPECT_NO_THROW(kerl::train_rec(*toy.model, toy.data.train, skip));
  EXPECT_EQ(toy.model->stage(), Stage::RecConverged);
}

TEST(Stages, CorpusWithoutRecommendationsHasNoExamples) {
  const kerl::Config cfg = quick_config();
  const auto data = kerl::toy::kge_graph(2);
  kerl::KerlModel model(cfg, data.kg, kerl::TokenEmbeddingTable::builtin(cfg.token_seed, cfg.d_tok),
                        kerl::KerlModel::build_vocab(*data.kg, {}));
  kerl::pretrain(model, data.train);
  EXPECT_THROW(kerl::train_rec(model, data.train), kerl::NoExamples);
}

TEST(EarlyStopper, IdenticalEvaluationsStopAfterPatiencePlusOne) {
  for (std::size_t patience : {1u, 3u, 5u}) {
    for (bool higher : {true, false}) {
      kerl::EarlyStopper s(patience, higher);
      std::size_t evals = 0;
      while (!s.update(0.25)) {
        ++evals;
        ASSERT_LT(evals, 100u);
      }
      EXPECT_EQ(evals + 1, patience + 1);
    }
  }
}

TEST(EarlyStopper, StrictImprovementResets) {
  kerl::EarlyStopper s(2, true);
  EXPECT_FALSE(s.update(0.1));
  EXPECT_FALSE(s.update(0.1));
  EXPECT_FALSE(s.update(0.2));
  EXPECT_TRUE(s.last_improved());
  EXPECT_FALSE(s.update(0.15));
  EXPECT_TRUE(s.update(0.2));
  EXPECT_DOUBLE_EQ(s.best(), 0.2);
  EXPECT_THROW(kerl::EarlyStopper(0, true), kerl::ConfigError);
}

TEST(TrainingLog, WritesOneJsonLinePerStep) {
  std::ostringstream sink;
  kerl::TrainingLog log(sink);
  log.record("rec", 0, 1.5, 0.001);
  log.record("rec", 1, 1.25, 0.001);
  std::istringstream lines(sink.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("stage"), "rec");
    EXPECT_EQ(j.at("step"), n);
    EXPECT_DOUBLE_EQ(j.at("lr").get<double>(), 0.001);
    ++n;
  }
  EXPECT_EQ(n, 2u);
  EXPECT_DOUBLE_EQ(log.entries()[1].loss, 1.25);
}

TEST(SplitExamples, ConversationsDoNotStraddleSplits) {
  const auto data = kerl::toy::rec_corpus(4);
  const auto s = kerl::split_examples(data.train, *data.kg, 50, 0.3, false);
  EXPECT_FALSE(s.train.empty());
  EXPECT_FALSE(s.validation.empty());
  std::set<std::int64_t> train_ids;
  for (const auto& ex : s.train) train_ids.insert(ex.conversation_id);
  for (const auto& ex : s.validation) {
    EXPECT_EQ(train_ids.count(ex.conversation_id), 0u);
    EXPECT_TRUE(kerl::in_validation_split(ex.conversation_id, 0.3));
  }
  const auto all = kerl::split_examples(data.train, *data.kg, 50, 0.0, false);
  EXPECT_TRUE(all.validation.empty());
  EXPECT_EQ(all.train.size(), s.train.size() + s.validation.size());
}

class GenerationTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { toy_ = new testing_support::ToyModel(trained_toy_model(Stage::GenConverged)); }
  static void TearDownTestSuite() {
    delete toy_;
    toy_ = nullptr;
  }
  static testing_support::ToyModel* toy_;
};

testing_support::ToyModel* GenerationTest::toy_ = nullptr;

TEST_F(GenerationTest, GreedyDecodingIsDeterministic) {
  const auto& m = *toy_->model;
  const auto examples = kerl::build_all_examples(toy_->data.train, m.kg(), m.config().cap_P, true);
  const auto h = m.frozen_entities();
  for (const auto& ex : examples) {
    if (ex.context.empty()) continue;
    const auto rec = m.recommend(ex.context, ex.entity_seq, h);
    const auto a = m.generate(ex.context, ex.entity_seq, rec.items, h, m.config().max_gen_len);
    const auto b = m.generate(ex.context, ex.entity_seq, rec.items, h, m.config().max_gen_len);
    EXPECT_EQ(a.text, b.text);
    EXPECT_EQ(a.tokens, b.tokens);
  }
  auto again = trained_toy_model(Stage::GenConverged);
  const auto usable = kerl::split_examples(toy_->data.train, m.kg(), m.config().cap_P, 0.0, true).train;
  const auto ra = kerl::evaluate_gen(m, usable);
  const auto rb = kerl::evaluate_gen(*again.model, usable);
  EXPECT_EQ(ra.n_responses, usable.size());
  ASSERT_EQ(ra.responses.size(), rb.responses.size());
  for (std::size_t i = 0; i < ra.responses.size(); ++i) EXPECT_EQ(ra.responses[i].text, rb.responses[i].text);
}

TEST_F(GenerationTest, TeacherForcedRowsIgnoreLaterTokens) {
  const auto& m = *toy_->model;
  const auto examples = kerl::build_all_examples(toy_->data.train, m.kg(), m.config().cap_P, true);
  const auto h = m.frozen_entities();
  kerl::Rng rng(77);
  std::size_t checked = 0;
  for (const auto& ex : examples) {
    if (ex.context.empty()) continue;
    std::vector<int> prefix{kerl::Vocab::kBos};
    for (int id : m.response_ids(ex)) prefix.push_back(id);
    if (prefix.size() < 3) continue;
    const auto base = m.response_distribution(ex.context, ex.entity_seq, prefix, h).value();
    for (std::size_t t = 1; t < prefix.size(); ++t) {
      auto changed = prefix;
      for (std::size_t j = t; j < changed.size(); ++j) {
        changed[j] = 4 + static_cast<int>(rng.below(m.vocab().size() - 4));
      }
      const auto dist = m.response_distribution(ex.context, ex.entity_seq, changed, h).value();
      const auto rows = static_cast<Eigen::Index>(t);
      EXPECT_LT((dist.topRows(rows) - base.topRows(rows)).cwiseAbs().maxCoeff(), 1e-12) << "t=" << t;
    }
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

}  // namespace
