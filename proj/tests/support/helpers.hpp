#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <unistd.h>

#include "kerl/ad.hpp"
#include "kerl/dataset.hpp"
#include "kerl/model.hpp"
#include "kerl/rng.hpp"
#include "kerl/toy_data.hpp"
#include "kerl/trainer.hpp"

namespace testing_support {

/// Directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("kerl_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, kerl::Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
  }
  return m;
}

/// Central-difference gradient of a scalar function of `x`.
inline Eigen::MatrixXd numeric_grad(const std::function<double()>& f, Eigen::MatrixXd& x, double h = 1e-6) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = f();
      x(i, j) = keep - h;
      const double down = f();
      x(i, j) = keep;
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double denom = std::max(a.norm() + b.norm(), 1e-12);
  return (a - b).norm() / denom;
}

/// Model on the tiny config, built over the ten-dialogue generation corpus.
struct ToyModel {
  kerl::toy::ToyData data;
  std::shared_ptr<kerl::KerlModel> model;
};

inline ToyModel make_toy_model(kerl::Config cfg = kerl::toy::tiny_config(), std::uint64_t data_seed = 1) {
  ToyModel t;
  t.data = kerl::toy::gen_corpus(data_seed);
  const auto examples = kerl::build_all_examples(t.data.train, *t.data.kg, cfg.cap_P, true);
  auto table = kerl::TokenEmbeddingTable::builtin(cfg.token_seed, cfg.d_tok);
  auto vocab = kerl::KerlModel::build_vocab(*t.data.kg, examples);
  t.model = std::make_shared<kerl::KerlModel>(cfg, t.data.kg, std::move(table), std::move(vocab));
  return t;
}

/// Tiny model trained through `stage` with few epochs, fast enough for unit tests.
inline ToyModel trained_toy_model(kerl::Stage stage, std::uint64_t seed = 42) {
  kerl::Config cfg = kerl::toy::tiny_config();
  cfg.seed = seed;
  cfg.epochs_pretrain = 2;
  cfg.epochs_rec = 3;
  cfg.epochs_gen = 3;
  cfg.val_fraction = 0;
  ToyModel t = make_toy_model(cfg);
  if (stage >= kerl::Stage::Pretrained) kerl::pretrain(*t.model, t.data.train);
  if (stage >= kerl::Stage::RecConverged) kerl::train_rec(*t.model, t.data.train);
  if (stage >= kerl::Stage::GenConverged) kerl::train_gen(*t.model, t.data.train);
  return t;
}

}  // namespace testing_support
