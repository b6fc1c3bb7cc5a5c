#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace kerl {

/// Every tunable knob. Read from a flat `key = value` text file; unknown keys
/// are rejected so typos do not silently fall back to defaults.
struct Config {
  // Text and graph encoders.
  std::size_t d_tok = 32;
  std::size_t d_ff = 64;
  std::size_t d_0 = 32;
  std::size_t rgcn_layers = 2;
  bool use_descriptions = true;
  std::string token_table = "builtin";  // "builtin" or a path relative to the data dir
  std::uint64_t token_seed = 7;
  std::string irreflexive;  // comma-separated relation names

  // Knowledge embedding.
  double margin = 1.0;
  std::size_t k_neg = 8;
  int p_norm = 2;
  bool filtered = true;

  // User model.
  std::size_t d_attn = 32;
  std::size_t cap_P = 50;
  std::size_t max_ctx_len = 256;
  std::size_t hist_blocks = 2;
  int heads = 2;
  bool use_pe = true;
  double tau = 0.07;

  // Generator.
  std::size_t gen_d_model = 32;
  std::size_t gen_d_ff = 64;
  std::size_t gen_blocks = 2;
  int gen_heads = 2;
  std::size_t max_gen_len = 48;
  bool use_copy = true;

  // Training.
  std::uint64_t seed = 1;
  double lr_pretrain = 1e-3;
  double lr_rec_encoder = 1e-3;
  double lr_rec_heads = 3e-3;
  double lr_gen = 1e-4;
  std::size_t batch_ke = 64;
  std::size_t batch_rec = 16;
  std::size_t batch_gen = 16;
  std::size_t epochs_pretrain = 5;
  std::size_t epochs_rec = 50;
  std::size_t epochs_gen = 50;
  std::size_t max_steps_pretrain = 0;  // 0 = no cap
  std::size_t max_steps_rec = 0;
  std::size_t max_steps_gen = 0;
  std::size_t patience = 3;
  std::size_t eval_k = 1;
  double val_fraction = 0.1;
  double w_ke = 1.0;
  double w_cl = 1.0;
  double joint_rec_weight = 0.0;

  // Service.
  std::size_t top_k = 10;
  double session_ttl_seconds = 3600.0;
  int port = 8080;

  /// Parses `key = value` lines; '#' starts a comment. Throws ConfigError.
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);
  static Config from_map(const std::map<std::string, std::string>& kv);
  /// The assignments of a config file without defaults filled in, for
  /// layering over another config. Keys are checked, values are not.
  static std::map<std::string, std::string> parse_assignments(std::string_view text);
  static std::map<std::string, std::string> load_assignments(const std::filesystem::path& path);

  /// Keys that fix parameter shapes, frozen inputs or the architecture
  /// variant. A trained model keeps the values it was built with.
  static bool is_structural(const std::string& key);

  /// Applies one assignment. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Every key with its canonical value text.
  std::map<std::string, std::string> to_map() const;
  /// Sorted `key=value` lines.
  std::string canonical() const;
  std::uint64_t hash() const;
  /// Throws ConfigError when a constraint is violated.
  void validate() const;

  std::size_t d_star() const { return d_0 * (rgcn_layers + 1); }
  std::set<std::string> irreflexive_relations() const;
};

}  // namespace kerl
