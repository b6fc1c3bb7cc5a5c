#include <gtest/gtest.h>

#include "helpers.hpp"
#include "kerl/errors.hpp"
#include "kerl/grad_check.hpp"

namespace {

namespace ad = kerl::ad;
using ad::Matrix;
using testing_support::random_matrix;

TEST(GradCheck, QuadraticProbeIsExact) {
  kerl::Rng rng(90);
  ad::Var x = ad::parameter(random_matrix(3, 2, rng));
  // f = sum(x * x), gradient 2x; central differences are exact on quadratics
  // up to rounding.
  const auto r = kerl::grad_check([&] { return ad::sum(ad::mul(x, x)); }, {{"x", x}}, 1e-9);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, CorruptedGradientIsCaught) {
  kerl::Rng rng(91);
  ad::Var x = ad::parameter(random_matrix(4, 3, rng));
  const kerl::LossFn f = [&] { return ad::sum(ad::tanh(ad::mul(x, x))); };
  x.zero_grad();
  f().backward();
  std::map<std::string, Matrix> analytic{{"x", x.grad()}};
  EXPECT_TRUE(kerl::compare_gradients(f, {{"x", x}}, analytic, 1e-6).passed);
  analytic["x"] *= 1.1;
  const auto r = kerl::compare_gradients(f, {{"x", x}}, analytic, 1e-4);
  EXPECT_FALSE(r.passed);
  // ||0.1 g|| / (||1.1 g|| + ||g||) = 0.1 / 2.1.
  EXPECT_NEAR(r.max_rel_error, 0.1 / 2.1, 1e-6);
}

TEST(GradCheck, VanishingGradientUsesTheFloor) {
  ad::Var x = ad::parameter(Matrix::Zero(2, 2));
  // d/dx sum(x^3) = 0 at the origin; the 1e-4 floor keeps noise from failing it.
  const auto r = kerl::grad_check([&] { return ad::sum(ad::mul(x, ad::mul(x, x))); }, {{"x", x}}, 1e-4);
  EXPECT_TRUE(r.passed);
}

TEST(GradCheck, ModelObjectivesPass) {
  for (const char* name : {"ke", "cl", "rec", "gen"}) {
    const auto r = kerl::run_grad_check(name, 1, 1e-4);
    EXPECT_TRUE(r.passed) << name << " " << r.max_rel_error;
    EXPECT_FALSE(r.tensors.empty()) << name;
  }
  EXPECT_THROW(kerl::run_grad_check("nope", 1), kerl::ConfigError);
}

TEST(GradCheck, RecommendationLossEndToEndOnFiveEntities) {
  // Every parameter on the path from descriptions to L_rec.
  kerl::Config cfg = kerl::toy::tiny_config();
  cfg.d_tok = 4;
  cfg.d_ff = 4;
  cfg.d_0 = 3;
  cfg.d_attn = 3;
  cfg.heads = 1;
  cfg.rgcn_layers = 1;
  std::vector<kerl::Entity> es{{0, "red", true, "a red film"},
                               {1, "blue", true, "a blue film"},
                               {2, "green", true, "green"},
                               {3, "ann", false, "a director"},
                               {4, "bob", false, ""}};
  auto kg = std::make_shared<const kerl::KnowledgeGraph>(
      kerl::KnowledgeGraph::build(es, {"by"}, {{0, 0, 3}, {1, 0, 3}, {2, 0, 4}}));
  const kerl::EntityLinker linker(*kg);
  std::vector<kerl::Conversation> convs(2);
  convs[0].id = 1;
  convs[0].utterances = {linker.link(kerl::Speaker::Seeker, "a film by @3 please"),
                         linker.link(kerl::Speaker::Recommender, "try @1")};
  convs[1].id = 2;
  convs[1].utterances = {linker.link(kerl::Speaker::Seeker, "i liked @2 and @4"),
                         linker.link(kerl::Speaker::Recommender, "maybe @0")};
  const auto examples = kerl::build_all_examples(convs, *kg, cfg.cap_P);
  ASSERT_EQ(examples.size(), 2u);
  kerl::KerlModel model(cfg, kg, kerl::TokenEmbeddingTable::builtin(3, cfg.d_tok),
                        kerl::KerlModel::build_vocab(*kg, examples));
  kerl::NamedParams params;
  for (const auto& [name, e] : model.params().entries()) {
    if (e.group != kerl::nn::ParamGroup::Gen) params.emplace_back(name, e.var);
  }
  const auto batch = kerl::refs(examples);
  const auto r = kerl::grad_check([&] { return model.rec_loss(batch, model.entity_matrix()); }, params, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  for (const auto& t : r.tensors) EXPECT_LT(t.rel_error, 1e-4) << t.name;
}

}  // namespace
