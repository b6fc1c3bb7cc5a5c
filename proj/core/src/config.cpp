#include "kerl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "kerl/errors.hpp"
#include "kerl/rng.hpp"

namespace kerl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad value for " + key + ": '" + text + "' (expected true or false)");
}

struct Field {
  std::function<void(Config&, const std::string&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename T>
Field field(T Config::*member) {
  Field f;
  f.set = [member](Config& c, const std::string& k, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool(k, v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      c.*member = v;
    } else {
      c.*member = parse_number<T>(k, v);
    }
  };
  f.get = [member](const Config& c) -> std::string {
    if constexpr (std::is_same_v<T, bool>) {
      return c.*member ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table{
      {"d_tok", field(&Config::d_tok)},
      {"d_ff", field(&Config::d_ff)},
      {"d_0", field(&Config::d_0)},
      {"rgcn_layers", field(&Config::rgcn_layers)},
      {"use_descriptions", field(&Config::use_descriptions)},
      {"token_table", field(&Config::token_table)},
      {"token_seed", field(&Config::token_seed)},
      {"irreflexive", field(&Config::irreflexive)},
      {"margin", field(&Config::margin)},
      {"k_neg", field(&Config::k_neg)},
      {"p_norm", field(&Config::p_norm)},
      {"filtered", field(&Config::filtered)},
      {"d_attn", field(&Config::d_attn)},
      {"cap_P", field(&Config::cap_P)},
      {"max_ctx_len", field(&Config::max_ctx_len)},
      {"hist_blocks", field(&Config::hist_blocks)},
      {"heads", field(&Config::heads)},
      {"use_pe", field(&Config::use_pe)},
      {"tau", field(&Config::tau)},
      {"gen_d_model", field(&Config::gen_d_model)},
      {"gen_d_ff", field(&Config::gen_d_ff)},
      {"gen_blocks", field(&Config::gen_blocks)},
      {"gen_heads", field(&Config::gen_heads)},
      {"max_gen_len", field(&Config::max_gen_len)},
      {"use_copy", field(&Config::use_copy)},
      {"seed", field(&Config::seed)},
      {"lr_pretrain", field(&Config::lr_pretrain)},
      {"lr_rec_encoder", field(&Config::lr_rec_encoder)},
      {"lr_rec_heads", field(&Config::lr_rec_heads)},
      {"lr_gen", field(&Config::lr_gen)},
      {"batch_ke", field(&Config::batch_ke)},
      {"batch_rec", field(&Config::batch_rec)},
      {"batch_gen", field(&Config::batch_gen)},
      {"epochs_pretrain", field(&Config::epochs_pretrain)},
      {"epochs_rec", field(&Config::epochs_rec)},
      {"epochs_gen", field(&Config::epochs_gen)},
      {"max_steps_pretrain", field(&Config::max_steps_pretrain)},
      {"max_steps_rec", field(&Config::max_steps_rec)},
      {"max_steps_gen", field(&Config::max_steps_gen)},
      {"patience", field(&Config::patience)},
      {"eval_k", field(&Config::eval_k)},
      {"val_fraction", field(&Config::val_fraction)},
      {"w_ke", field(&Config::w_ke)},
      {"w_cl", field(&Config::w_cl)},
      {"joint_rec_weight", field(&Config::joint_rec_weight)},
      {"top_k", field(&Config::top_k)},
      {"session_ttl_seconds", field(&Config::session_ttl_seconds)},
      {"port", field(&Config::port)},
  };
  return table;
}

}  // namespace

void Config::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

std::map<std::string, std::string> Config::parse_assignments(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (fields().count(key) == 0) throw ConfigError("unknown config key '" + key + "'");
    out[key] = trim(body.substr(eq + 1));
  }
  return out;
}

Config Config::parse(std::string_view text) {
  Config c;
  for (const auto& [key, value] : parse_assignments(text)) c.set(key, value);
  c.validate();
  return c;
}

namespace {
std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

Config Config::load(const std::filesystem::path& path) { return parse(read_text(path)); }

std::map<std::string, std::string> Config::load_assignments(const std::filesystem::path& path) {
  return parse_assignments(read_text(path));
}

bool Config::is_structural(const std::string& key) {
  static const std::set<std::string> keys{
      "d_tok",       "d_ff",      "d_0",         "rgcn_layers", "use_descriptions", "token_table",
      "token_seed",  "irreflexive", "d_attn",    "cap_P",       "max_ctx_len",      "hist_blocks",
      "heads",       "use_pe",    "gen_d_model", "gen_d_ff",    "gen_blocks",       "gen_heads",
      "max_gen_len", "use_copy"};
  return keys.count(key) != 0;
}

Config Config::from_map(const std::map<std::string, std::string>& kv) {
  Config c;
  for (const auto& [k, v] : kv) c.set(k, v);
  c.validate();
  return c;
}

std::map<std::string, std::string> Config::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out.emplace(k, f.get(*this));
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t Config::hash() const { return fnv1a(canonical()); }

void Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(d_tok >= 1 && d_ff >= 1 && d_0 >= 1 && d_attn >= 1, "dimensions must be positive");
  require(rgcn_layers >= 1, "rgcn_layers must be at least 1");
  require(margin > 0, "margin must be positive");
  require(k_neg >= 1, "k_neg must be at least 1");
  require(p_norm == 1 || p_norm == 2, "p_norm must be 1 or 2");
  require(cap_P >= 1 && max_ctx_len >= 1, "sequence caps must be positive");
  require(heads >= 1 && d_tok % static_cast<std::size_t>(heads) == 0, "heads must divide d_tok");
  require(gen_heads >= 1 && gen_d_model % static_cast<std::size_t>(gen_heads) == 0, "gen_heads must divide gen_d_model");
  require(gen_blocks >= 1, "decoder needs at least one block");
  require(max_gen_len >= 2, "max_gen_len must be at least 2");
  require(tau > 0, "tau must be positive");
  require(lr_pretrain > 0 && lr_rec_encoder > 0 && lr_rec_heads > 0 && lr_gen > 0, "learning rates must be positive");
  require(batch_ke >= 1 && batch_rec >= 1 && batch_gen >= 1, "batch sizes must be positive");
  require(patience >= 1, "patience must be at least 1");
  require(eval_k >= 1 && top_k >= 1, "k must be at least 1");
  require(val_fraction >= 0 && val_fraction < 1, "val_fraction must lie in [0, 1)");
  require(w_ke >= 0 && w_cl >= 0 && joint_rec_weight >= 0, "loss weights must be non-negative");
  require(session_ttl_seconds > 0, "session_ttl_seconds must be positive");
  require(port > 0 && port < 65536, "port out of range");
}

std::set<std::string> Config::irreflexive_relations() const {
  std::set<std::string> out;
  std::stringstream ss(irreflexive);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.insert(item);
  }
  return out;
}

}  // namespace kerl
