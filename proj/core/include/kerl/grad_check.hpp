#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kerl/ad.hpp"

namespace kerl {

struct TensorError {
  std::string name;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::string loss_name;
  std::vector<TensorError> tensors;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

using NamedParams = std::vector<std::pair<std::string, ad::Var>>;
using LossFn = std::function<ad::Var()>;

/// Central differences over every entry of every parameter, compared with
/// `analytic`. Per tensor the error is ||a - n|| / max(||a|| + ||n||, 1e-4);
/// the floor keeps gradients that vanish by symmetry from comparing noise to
/// noise. Passes iff every tensor is below tolerance.
GradCheckReport compare_gradients(const LossFn& loss, const NamedParams& params,
                                  const std::map<std::string, ad::Matrix>& analytic, double tolerance,
                                  double step = 1e-5);

/// Backpropagates `loss` once for the analytic gradients, then calls
/// compare_gradients.
GradCheckReport grad_check(const LossFn& loss, const NamedParams& params, double tolerance, double step = 1e-5);

/// Seeded small instances of the four training objectives: "ke", "cl", "rec"
/// and "gen". Throws ConfigError for other names.
GradCheckReport run_grad_check(const std::string& loss_name, std::uint64_t seed, double tolerance = 1e-4);

}  // namespace kerl
