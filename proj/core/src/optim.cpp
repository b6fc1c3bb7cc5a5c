#include "kerl/optim.hpp"

#include <cmath>

namespace kerl {

void Adam::add(const std::string& name, ad::Var param, double lr) {
  Slot s;
  s.name = name;
  s.m = ad::Matrix::Zero(param.rows(), param.cols());
  s.v = ad::Matrix::Zero(param.rows(), param.cols());
  s.param = std::move(param);
  s.lr = lr;
  slots_.push_back(std::move(s));
}

void Adam::step() {
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    const ad::Matrix g = s.param.grad();
    ++s.steps;
    s.m = opts_.beta1 * s.m + (1.0 - opts_.beta1) * g;
    s.v = opts_.beta2 * s.v + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(s.steps));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(s.steps));
    ad::Matrix& w = s.param.mutable_value();
    w.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + opts_.eps);
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

}  // namespace kerl
