#pragma once

#include <memory>

#include "helpers.hpp"
#include "kerl/checkpoint.hpp"
#include "kerl/service.hpp"

namespace service_testing {

/// Trained once per process; training is the slow part.
inline const testing_support::ToyModel& rec_model() {
  static const auto t = testing_support::trained_toy_model(kerl::Stage::RecConverged);
  return t;
}

inline const testing_support::ToyModel& gen_model() {
  static const auto t = testing_support::trained_toy_model(kerl::Stage::GenConverged);
  return t;
}

/// Independent copy through the checkpoint format, so each service owns its model.
inline std::shared_ptr<kerl::KerlModel> copy_of(const testing_support::ToyModel& t) {
  const auto& cfg = t.model->config();
  return kerl::deserialize(kerl::serialize(*t.model), t.data.kg,
                           kerl::TokenEmbeddingTable::builtin(cfg.token_seed, cfg.d_tok));
}

}  // namespace service_testing
