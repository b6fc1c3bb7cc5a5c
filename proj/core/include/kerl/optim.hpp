#pragma once

#include <map>
#include <string>
#include <vector>

#include "kerl/nn.hpp"

namespace kerl {

/// Adam over a fixed list of named parameters, each with its own learning
/// rate. Parameters whose gradient is absent at a step are left untouched and
/// their moments are not advanced.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opts) : opts_(opts) {}

  void add(const std::string& name, ad::Var param, double lr);
  void step();
  void zero_grad();
  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot {
    std::string name;
    ad::Var param;
    double lr;
    ad::Matrix m;
    ad::Matrix v;
    long steps = 0;
  };
  Options opts_;
  std::vector<Slot> slots_;
};

}  // namespace kerl
