#include <benchmark/benchmark.h>

#include <memory>

#include "kerl/dataset.hpp"
#include "kerl/model.hpp"
#include "kerl/service.hpp"
#include "kerl/toy_data.hpp"
#include "kerl/trainer.hpp"

namespace {

/// Default dimensions on the 30-item recommendation corpus.
struct Fixture {
  kerl::toy::ToyData data = kerl::toy::rec_corpus(1);
  kerl::Config cfg;
  std::vector<kerl::TrainingExample> examples;
  std::vector<kerl::TrainingExample> rec_examples;
  std::shared_ptr<kerl::KerlModel> model;

  Fixture() {
    examples = kerl::build_all_examples(data.train, *data.kg, cfg.cap_P, true);
    rec_examples = kerl::split_examples(data.train, *data.kg, cfg.cap_P, 0.0, false).train;
    model = std::make_shared<kerl::KerlModel>(cfg, data.kg,
                                              kerl::TokenEmbeddingTable::builtin(cfg.token_seed, cfg.d_tok),
                                              kerl::KerlModel::build_vocab(*data.kg, examples));
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_EntityMatrix(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(f.model->entity_matrix().value().data());
  state.SetLabel(std::to_string(f.data.kg->num_entities()) + " entities");
}
BENCHMARK(BM_EntityMatrix)->Unit(benchmark::kMicrosecond);

void BM_EntityMatrixBackward(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    f.model->params().zero_grad();
    kerl::ad::sum(f.model->entity_matrix()).backward();
  }
}
BENCHMARK(BM_EntityMatrixBackward)->Unit(benchmark::kMicrosecond);

void BM_Recommend(benchmark::State& state) {
  auto& f = fixture();
  const auto h = f.model->frozen_entities();
  const auto& ex = f.rec_examples.back();
  for (auto _ : state) benchmark::DoNotOptimize(f.model->recommend(ex.context, ex.entity_seq, h).items.data());
}
BENCHMARK(BM_Recommend)->Unit(benchmark::kMicrosecond);

void BM_RecLossStep(benchmark::State& state) {
  auto& f = fixture();
  const auto batch =
      kerl::refs(std::span(f.rec_examples).first(std::min<std::size_t>(16, f.rec_examples.size())));
  for (auto _ : state) {
    f.model->params().zero_grad();
    f.model->rec_loss(batch, f.model->entity_matrix()).backward();
  }
}
BENCHMARK(BM_RecLossStep)->Unit(benchmark::kMillisecond);

void BM_ServiceTurn(benchmark::State& state) {
  auto& f = fixture();
  f.model->set_stage(kerl::Stage::RecConverged);
  kerl::ChatService service({});
  service.load(f.model);
  for (auto _ : state) {
    state.PauseTiming();
    const std::string id = service.create_session();
    state.ResumeTiming();
    benchmark::DoNotOptimize(service.message(id, "something like @3 by @31 please"));
    state.PauseTiming();
    service.end_session(id);
    state.ResumeTiming();
  }
  f.model->params().set_all_trainable(true);
}
BENCHMARK(BM_ServiceTurn)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
