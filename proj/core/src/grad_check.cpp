#include "kerl/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "kerl/dataset.hpp"
#include "kerl/errors.hpp"
#include "kerl/model.hpp"
#include "kerl/toy_data.hpp"
#include "kerl/trainer.hpp"

namespace kerl {

namespace {
// Some gradients vanish by symmetry (a key bias under softmax shift
// invariance), where a pure ratio compares rounding noise with rounding
// noise. Below this norm the error is judged on absolute terms instead.
constexpr double kNormFloor = 1e-4;
}  // namespace

GradCheckReport compare_gradients(const LossFn& loss, const NamedParams& params,
                                  const std::map<std::string, ad::Matrix>& analytic, double tolerance, double step) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (const auto& [name, p] : params) {
    ad::Var v = p;
    ad::Matrix numeric(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double orig = v.value()(i, j);
        v.mutable_value()(i, j) = orig + step;
        const double up = loss().scalar();
        v.mutable_value()(i, j) = orig - step;
        const double down = loss().scalar();
        v.mutable_value()(i, j) = orig;
        numeric(i, j) = (up - down) / (2.0 * step);
      }
    }
    const ad::Matrix& a = analytic.at(name);
    const double denom = std::max(a.norm() + numeric.norm(), kNormFloor);
    const double err = (a - numeric).norm() / denom;
    report.tensors.push_back({name, err});
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  report.passed = std::all_of(report.tensors.begin(), report.tensors.end(),
                              [&](const TensorError& t) { return t.rel_error < tolerance; });
  return report;
}

GradCheckReport grad_check(const LossFn& loss, const NamedParams& params, double tolerance, double step) {
  for (const auto& [name, p] : params) {
    ad::Var v = p;
    v.zero_grad();
  }
  loss().backward();
  std::map<std::string, ad::Matrix> analytic;
  for (const auto& [name, p] : params) analytic.emplace(name, p.grad());
  return compare_gradients(loss, params, analytic, tolerance, step);
}

GradCheckReport run_grad_check(const std::string& loss_name, std::uint64_t seed, double tolerance) {
  const toy::ToyData data = toy::grad_instance(seed);
  Config cfg = toy::tiny_config();
  cfg.seed = seed;
  const auto examples = build_all_examples(data.train, *data.kg, cfg.cap_P, false);
  const auto gen_examples = build_all_examples(data.train, *data.kg, cfg.cap_P, true);
  KerlModel model(cfg, data.kg, TokenEmbeddingTable::builtin(cfg.token_seed, cfg.d_tok),
                  KerlModel::build_vocab(*data.kg, gen_examples));
  auto& store = model.params();

  NamedParams params;
  auto collect = [&](std::initializer_list<nn::ParamGroup> groups) {
    store.set_all_trainable(false);
    for (auto g : groups) store.set_trainable(g, true);
    for (const auto& [name, e] : store.entries()) {
      if (e.var.requires_grad()) params.emplace_back(name, e.var);
    }
  };

  LossFn loss;
  const ExampleRefs batch = refs(examples);
  const ExampleRefs gen_batch = refs(gen_examples);
  if (loss_name == "ke") {
    collect({nn::ParamGroup::Graph});
    loss = [&] { return model.ke_loss(model.entity_matrix(), model.kg().triples(), seed); };
  } else if (loss_name == "cl") {
    collect({nn::ParamGroup::Graph, nn::ParamGroup::Rec});
    loss = [&] { return model.cl_loss(batch, model.entity_matrix()); };
  } else if (loss_name == "rec") {
    collect({nn::ParamGroup::Graph, nn::ParamGroup::Rec});
    loss = [&] { return model.rec_loss(batch, model.entity_matrix()); };
  } else if (loss_name == "gen") {
    collect({nn::ParamGroup::Gen});
    loss = [&] { return model.gen_loss(gen_batch, model.entity_matrix()); };
  } else {
    throw ConfigError("unknown loss '" + loss_name + "' (expected ke, cl, rec or gen)");
  }
  GradCheckReport report = grad_check(loss, params, tolerance);
  report.loss_name = loss_name;
  return report;
}

}  // namespace kerl
