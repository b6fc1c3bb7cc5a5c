#include "cli.hpp"

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <thread>

#include "http_server.hpp"
#include "kerl/checkpoint.hpp"
#include "kerl/dataset.hpp"
#include "kerl/errors.hpp"
#include "kerl/grad_check.hpp"
#include "kerl/model.hpp"
#include "kerl/service.hpp"
#include "kerl/toy_data.hpp"
#include "kerl/trainer.hpp"

namespace kerl::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::string data_dir;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;  // key=value overrides
  std::string log;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (key = value lines)");
  cmd->add_option("--data-dir", c.data_dir, "Directory with entities.jsonl, triples.tsv, corpus.jsonl");
  cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint to start from");
  cmd->add_option("--seed", c.seed, "Overrides the config seed");
  cmd->add_option("--set", c.sets, "Extra key=value config overrides")->take_all();
}

/// Checkpoint config (or defaults), then the config file, then --set, then
/// --seed.
Config layered_config(const Common& c, const Config& base) {
  auto kv = base.to_map();
  if (!c.config.empty()) {
    for (const auto& [k, v] : Config::load_assignments(c.config)) kv[k] = v;
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  Config cfg = Config::from_map(kv);
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

struct Loaded {
  Dataset data;
  std::shared_ptr<KerlModel> model;
};

/// Loads the data directory and either the checkpoint or a fresh model.
Loaded load(const Common& c, bool need_checkpoint) {
  require(c.data_dir, "--data-dir");
  if (need_checkpoint) require(c.checkpoint, "--checkpoint");
  Loaded l;
  if (!c.checkpoint.empty()) {
    const CheckpointHeader header = read_checkpoint_header(c.checkpoint);
    const Config cfg = layered_config(c, header.config);
    l.data = load_dataset(c.data_dir, header.config);
    l.model = std::shared_ptr<KerlModel>(
        load_checkpoint(c.checkpoint, l.data.kg, make_token_table(header.config, c.data_dir)).release());
    l.model->retune(cfg);
  } else {
    const Config cfg = layered_config(c, Config{});
    l.data = load_dataset(c.data_dir, cfg);
    const auto examples = build_all_examples(l.data.conversations, *l.data.kg, cfg.cap_P, true);
    l.model = std::make_shared<KerlModel>(cfg, l.data.kg, make_token_table(cfg, c.data_dir),
                                          KerlModel::build_vocab(*l.data.kg, examples));
  }
  return l;
}

json report_json(const StageReport& r, const KerlModel& m) {
  json j{{"stage", to_string(m.stage())},
         {"steps", r.steps},
         {"epochs", r.epochs},
         {"early_stopped", r.early_stopped}};
  j["final_loss"] = r.losses.empty() ? json(nullptr) : json(r.losses.back());
  j["best_metric"] = std::isnan(r.best_metric) ? json(nullptr) : json(r.best_metric);
  return j;
}

enum class Stage3 { Kge, Rec, Gen };

int train(const Common& c, Stage3 which, bool skip_pretrain, std::ostream& out) {
  require(c.out, "--out");
  Loaded l = load(c, which == Stage3::Gen || (which == Stage3::Rec && !skip_pretrain));
  std::ofstream log_file;
  std::optional<TrainingLog> log;
  if (!c.log.empty()) {
    log_file.open(c.log);
    if (!log_file) throw ConfigError("cannot write log " + c.log);
    log.emplace(log_file);
  }
  TrainOptions opts;
  opts.log = log ? &*log : nullptr;
  opts.skip_pretrain = skip_pretrain;
  StageReport r;
  switch (which) {
    case Stage3::Kge: r = pretrain(*l.model, l.data.conversations, opts); break;
    case Stage3::Rec: r = train_rec(*l.model, l.data.conversations, opts); break;
    case Stage3::Gen: r = train_gen(*l.model, l.data.conversations, opts); break;
  }
  save_checkpoint(*l.model, c.out);
  out << report_json(r, *l.model).dump() << "\n";
  return kOk;
}

std::vector<TrainingExample> pick_split(const Loaded& l, const std::string& split, bool chitchat) {
  const Config& cfg = l.model->config();
  if (split == "all") {
    return split_examples(l.data.conversations, l.model->kg(), cfg.cap_P, 0.0, chitchat).train;
  }
  ExampleSplit s = split_examples(l.data.conversations, l.model->kg(), cfg.cap_P, cfg.val_fraction, chitchat);
  return split == "train" ? std::move(s.train) : std::move(s.validation);
}

int eval_rec(const Common& c, const std::string& split, std::ostream& out) {
  Loaded l = load(c, true);
  const RecReport r = evaluate_rec(*l.model, pick_split(l, split, false));
  out << json{{"recall@1", r.recall_at_1},
              {"recall@10", r.recall_at_10},
              {"recall@50", r.recall_at_50},
              {"n_examples", r.n_examples}}
             .dump()
      << "\n";
  return kOk;
}

int eval_gen(const Common& c, const std::string& split, std::size_t samples, std::ostream& out) {
  Loaded l = load(c, true);
  if (l.model->stage() < Stage::GenConverged) {
    throw StageError(std::string("eval-gen needs a generation-trained checkpoint, got stage '") +
                     to_string(l.model->stage()) + "'");
  }
  const GenReport r = evaluate_gen(*l.model, pick_split(l, split, true));
  json j{{"dist2", r.dist2},
         {"dist3", r.dist3},
         {"dist4", r.dist4},
         {"item_ratio", r.item_ratio},
         {"n_responses", r.n_responses}};
  if (samples > 0) {
    json list = json::array();
    for (std::size_t i = 0; i < std::min(samples, r.responses.size()); ++i) list.push_back(r.responses[i].text);
    j["samples"] = list;
  }
  out << j.dump() << "\n";
  return kOk;
}

int grad_check_cmd(const Common& c, const std::string& loss, double tolerance, std::ostream& out) {
  const std::uint64_t seed = c.seed.value_or(1);
  std::vector<std::string> names;
  if (loss == "all") {
    names = {"ke", "cl", "rec", "gen"};
  } else {
    names = {loss};
  }
  bool ok = true;
  for (const auto& name : names) {
    const GradCheckReport r = run_grad_check(name, seed, tolerance);
    json tensors = json::object();
    for (const auto& t : r.tensors) tensors[t.name] = t.rel_error;
    out << json{{"loss", r.loss_name},
                {"max_rel_error", r.max_rel_error},
                {"tolerance", r.tolerance},
                {"passed", r.passed},
                {"tensors", tensors}}
               .dump()
        << "\n";
    ok = ok && r.passed;
  }
  return ok ? kOk : kNumeric;
}

ChatService::Options service_options(const Config& cfg, const fs::path& data_dir) {
  ChatService::Options o;
  o.top_k = cfg.top_k;
  o.ttl = std::chrono::seconds(static_cast<long long>(cfg.session_ttl_seconds));
  if (fs::exists(data_dir / "names.json")) {
    // The graph is reloaded by the caller; only the mapping is kept here.
    Dataset d = load_dataset(data_dir, cfg);
    o.dictionary = load_name_dictionary(data_dir / "names.json", *d.kg);
  }
  return o;
}

HttpFrontend* g_frontend = nullptr;

extern "C" void on_signal(int) {
  if (g_frontend != nullptr) g_frontend->stop();
}

int serve(const Common& c, std::optional<int> port_flag, const std::string& host, std::ostream& out,
          std::ostream& err) {
  require(c.data_dir, "--data-dir");
  require(c.checkpoint, "--checkpoint");
  const CheckpointHeader header = read_checkpoint_header(c.checkpoint);
  const Config cfg = layered_config(c, header.config);
  int port = port_flag.value_or(cfg.port);
  if (const char* env = std::getenv("KERL_PORT"); env != nullptr && *env != '\0') {
    try {
      port = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("KERL_PORT is not a port number: ") + env);
    }
  }

  ChatService service(service_options(header.config, c.data_dir));
  HttpFrontend frontend(service, &err);
  const int bound = frontend.bind(host, port);
  if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  out << "listening on " << host << ":" << bound << "\n" << std::flush;

  // Requests get 503 until the checkpoint has loaded.
  std::optional<int> load_failure;
  std::thread loader([&] {
    try {
      Loaded l = load(c, true);
      service.load(l.model);
      err << "model ready (stage " << to_string(l.model->stage()) << ")\n" << std::flush;
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      load_failure = e.category() == Error::Category::Usage ? kUsage
                     : e.category() == Error::Category::Data ? kData
                                                             : kNumeric;
      frontend.stop();
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      load_failure = kData;
      frontend.stop();
    }
  });
  g_frontend = &frontend;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  frontend.listen();
  g_frontend = nullptr;
  loader.join();
  return load_failure.value_or(kOk);
}

int chat(const Common& c, std::istream& in, std::ostream& out) {
  Loaded l = load(c, true);
  ChatService service(service_options(l.model->config(), c.data_dir));
  service.load(l.model);
  std::string session = service.create_session();
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line == "/quit") break;
    if (line == "/reset") {
      service.end_session(session);
      session = service.create_session();
      out << "(new session)\n";
      continue;
    }
    try {
      const MessageResponse r = service.message(session, line);
      out << r.response_text << "\n";
      for (std::size_t i = 0; i < std::min<std::size_t>(3, r.recommendations.size()); ++i) {
        const auto& s = r.recommendations[i];
        char score[32];
        std::snprintf(score, sizeof score, "%.3f", s.score);
        out << "  " << (i + 1) << ". " << s.name << " (" << score << ")\n";
      }
    } catch (const DanglingReference& e) {
      out << "(" << e.what() << ")\n";
    }
    out << std::flush;
  }
  return kOk;
}

int make_toy(const std::string& corpus, std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  require(out_dir, "--out");
  toy::ToyData d;
  if (corpus == "rec") {
    d = toy::rec_corpus(seed);
  } else if (corpus == "gen") {
    d = toy::gen_corpus(seed);
  } else if (corpus == "ablation") {
    d = toy::ablation_corpus(seed);
  } else {
    d = toy::kge_graph(seed);
  }
  fs::create_directories(out_dir);
  write_dataset(out_dir, *d.kg, d.train);
  out << json{{"entities", d.kg->num_entities()},
              {"triples", d.kg->triples().size()},
              {"conversations", d.train.size()}}
             .dump()
      << "\n";
  return kOk;
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case Error::Category::Usage: return kUsage;
    case Error::Category::Data: return kData;
    case Error::Category::Numeric: return kNumeric;
  }
  return kData;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-enhanced conversational recommender", "kerl"};
  app.require_subcommand(1);

  Common common;
  bool skip_pretrain = false;
  std::string split = "all";
  std::size_t samples = 0;
  std::string loss = "all";
  double tolerance = 1e-4;
  std::optional<int> port;
  std::string host = "127.0.0.1";
  std::string corpus = "rec";

  auto* kge = app.add_subcommand("train-kge", "Pretrain entity and user encoders (knowledge + contrastive losses)");
  auto* rec = app.add_subcommand("train-rec", "Train the recommender");
  auto* gen = app.add_subcommand("train-gen", "Train the response generator");
  for (auto* cmd : {kge, rec, gen}) {
    add_common(cmd, common);
    cmd->add_option("--out", common.out, "Checkpoint to write")->required();
    cmd->add_option("--log", common.log, "Write per-step JSON lines here");
  }
  rec->add_flag("--skip-pretrain", skip_pretrain, "Start from a fresh model instead of a pretrained checkpoint");

  auto* erec = app.add_subcommand("eval-rec", "Recall@1/10/50 as JSON");
  auto* egen = app.add_subcommand("eval-gen", "Distinct-n and item ratio as JSON");
  for (auto* cmd : {erec, egen}) {
    add_common(cmd, common);
    cmd->add_option("--split", split, "Examples to score")->check(CLI::IsMember({"all", "train", "validation"}));
  }
  egen->add_option("--samples", samples, "Include this many generated replies");

  auto* gc = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
  add_common(gc, common);
  gc->add_option("--loss", loss, "Objective")->check(CLI::IsMember({"all", "ke", "cl", "rec", "gen"}));
  gc->add_option("--tolerance", tolerance, "Maximum relative error");

  auto* srv = app.add_subcommand("serve", "HTTP/JSON service (KERL_PORT overrides --port)");
  add_common(srv, common);
  srv->add_option("--port", port, "Port to listen on");
  srv->add_option("--host", host, "Address to bind");

  auto* cht = app.add_subcommand("chat", "Terminal chat; /reset starts over, /quit exits");
  add_common(cht, common);

  auto* toy_cmd = app.add_subcommand("make-toy", "Write a synthetic data directory");
  toy_cmd->add_option("--corpus", corpus, "Which corpus")->check(CLI::IsMember({"rec", "gen", "ablation", "kge"}));
  toy_cmd->add_option("--seed", common.seed, "Generator seed");
  toy_cmd->add_option("--out", common.out, "Directory to write")->required();

  if (!args.empty() && !args[0].starts_with("-") && app.get_subcommand_no_throw(args[0]) == nullptr) {
    err << "error: unknown subcommand '" << args[0] << "'\n" << app.help();
    return kUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  try {
    if (kge->parsed()) return train(common, Stage3::Kge, false, out);
    if (rec->parsed()) return train(common, Stage3::Rec, skip_pretrain, out);
    if (gen->parsed()) return train(common, Stage3::Gen, false, out);
    if (erec->parsed()) return eval_rec(common, split, out);
    if (egen->parsed()) return eval_gen(common, split, samples, out);
    if (gc->parsed()) return grad_check_cmd(common, loss, tolerance, out);
    if (srv->parsed()) return serve(common, port, host, out, err);
    if (cht->parsed()) return chat(common, in, out);
    if (toy_cmd->parsed()) return make_toy(corpus, common.seed.value_or(1), common.out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace kerl::cli
