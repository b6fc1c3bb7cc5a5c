#include "kerl/service.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <set>

namespace kerl {

namespace {

using json = nlohmann::json;

constexpr std::size_t kTemplateItems = 3;

HttpResponse reply(int status, const json& body) {
  HttpResponse r;
  r.status = status;
  r.body = body.dump();
  r.headers = {{"Content-Type", "application/json"},
               {"Access-Control-Allow-Origin", "*"},
               {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
               {"Access-Control-Allow-Headers", "Content-Type"}};
  return r;
}

HttpResponse error(int status, const std::string& message) { return reply(status, json{{"error", message}}); }

HttpResponse no_content() {
  HttpResponse r = reply(204, json());
  r.body.clear();
  return r;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string to_json(const MessageResponse& r) {
  json recs = json::array();
  for (const auto& s : r.recommendations) recs.push_back({{"item_id", s.item_id}, {"name", s.name}, {"score", s.score}});
  json linked = json::array();
  for (const auto& e : r.linked_entities) linked.push_back({{"entity_id", e.entity_id}, {"name", e.name}});
  return json{{"response_text", r.response_text},
              {"recommendations", recs},
              {"linked_entities", linked},
              {"gate_beta", r.gate_beta}}
      .dump();
}

ChatService::ChatService(Options opts) : opts_(std::move(opts)), id_source_(std::random_device{}()) {
  if (!opts_.clock) opts_.clock = [] { return std::chrono::steady_clock::now(); };
}

void ChatService::load(std::shared_ptr<KerlModel> model) {
  if (model->stage() < Stage::RecConverged) {
    throw StageError(std::string("serving needs a model past recommendation training, checkpoint is at stage '") +
                     to_string(model->stage()) + "'");
  }
  model->params().set_all_trainable(false);
  auto linker = std::make_shared<const EntityLinker>(model->kg(), opts_.dictionary);
  ad::Var h = model->frozen_entities();
  std::lock_guard lock(model_mutex_);
  model_ = std::move(model);
  linker_ = std::move(linker);
  entities_ = std::move(h);
}

bool ChatService::ready() const {
  std::lock_guard lock(model_mutex_);
  return model_ != nullptr;
}

std::chrono::steady_clock::time_point ChatService::now() const { return opts_.clock(); }

void ChatService::evict_expired_locked(std::chrono::steady_clock::time_point t) {
  std::erase_if(sessions_, [&](const auto& kv) { return t - kv.second->last_used > opts_.ttl; });
}

std::string ChatService::create_session() {
  std::lock_guard lock(sessions_mutex_);
  const auto t = now();
  evict_expired_locked(t);
  std::string id;
  do {
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_source_()),
                  static_cast<unsigned long long>(id_source_()));
    id = buf;
  } while (sessions_.count(id) != 0);
  auto s = std::make_shared<Session>();
  s->created = t;
  s->last_used = t;
  sessions_.emplace(id, std::move(s));
  return id;
}

bool ChatService::end_session(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  evict_expired_locked(now());
  return sessions_.erase(id) != 0;
}

std::size_t ChatService::session_count() {
  std::lock_guard lock(sessions_mutex_);
  evict_expired_locked(now());
  return sessions_.size();
}

std::shared_ptr<ChatService::Session> ChatService::find_session(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  const auto t = now();
  evict_expired_locked(t);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw UnknownSession(id);
  it->second->last_used = t;
  return it->second;
}

MessageResponse ChatService::message(const std::string& session_id, std::string_view text) {
  std::shared_ptr<const KerlModel> model;
  std::shared_ptr<const EntityLinker> linker;
  ad::Var h;
  {
    std::lock_guard lock(model_mutex_);
    model = model_;
    linker = linker_;
    h = entities_;
  }
  if (!model) throw StageError("model is still loading");
  auto session = find_session(session_id);
  std::lock_guard lock(session->mutex);

  // Link before touching the history so a bad marker leaves it unchanged.
  Utterance user = linker->link(Speaker::Seeker, text);
  std::vector<Utterance> history = session->history;
  history.push_back(std::move(user));

  const Config& cfg = model->config();
  const auto seq = mention_sequence(history, cfg.cap_P);
  const Recommendation rec = model->recommend(history, seq, h);

  MessageResponse out;
  out.gate_beta = rec.beta;
  const std::size_t k = std::min(opts_.top_k, rec.items.size());
  for (std::size_t i = 0; i < k; ++i) {
    out.recommendations.push_back({rec.items[i], model->kg().entity(rec.items[i]).name, rec.scores[i]});
  }
  std::set<EntityId> seen;
  for (EntityId e : seq) {
    if (seen.insert(e).second) out.linked_entities.push_back({e, model->kg().entity(e).name});
  }

  // The reply joins the history with its items as markers, so they count as
  // mentions on later turns.
  const std::vector<EntityId> top(rec.items.begin(), rec.items.begin() + static_cast<std::ptrdiff_t>(k));
  std::string raw;
  if (model->stage() >= Stage::GenConverged) {
    const GeneratedResponse g = model->generate(history, seq, top, h, cfg.max_gen_len);
    std::vector<std::string> markers;
    for (EntityId e : g.filled_items) markers.push_back("@" + std::to_string(e));
    raw = fill_placeholders(join(g.tokens, " "), markers);
    out.response_text = g.text;
  } else {
    std::vector<std::string> names;
    std::vector<std::string> markers;
    for (std::size_t i = 0; i < std::min(kTemplateItems, top.size()); ++i) {
      names.push_back(model->kg().entity(top[i]).name);
      markers.push_back("@" + std::to_string(top[i]));
    }
    out.response_text = "You might like: " + join(names, ", ");
    raw = "You might like: " + join(markers, " , ");
  }
  history.push_back(linker->link(Speaker::Recommender, raw));
  session->history = std::move(history);
  return out;
}

HttpResponse ChatService::entity_card(std::string_view id_text) const {
  std::int64_t id = 0;
  const auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
  if (ec != std::errc() || ptr != id_text.data() + id_text.size()) {
    return error(400, "entity id must be an integer");
  }
  std::shared_ptr<const KerlModel> model;
  {
    std::lock_guard lock(model_mutex_);
    model = model_;
  }
  const KnowledgeGraph& kg = model->kg();
  if (!kg.has_entity(id)) return error(404, "unknown entity " + std::to_string(id));
  const Entity& e = kg.entity(id);
  json neighbors = json::array();
  for (const Neighbor& n : kg.neighbors(id)) {
    neighbors.push_back({{"entity_id", n.entity},
                         {"name", kg.entity(n.entity).name},
                         {"relation", kg.relations()[static_cast<std::size_t>(n.relation)]},
                         {"direction", n.outgoing ? "out" : "in"}});
  }
  return reply(200, json{{"entity_id", e.id},
                         {"name", e.name},
                         {"is_item", e.is_item},
                         {"description", e.description},
                         {"neighbors", neighbors}});
}

HttpResponse ChatService::handle(std::string_view method, std::string_view path, std::string_view body) {
  try {
    if (method == "OPTIONS") return no_content();
    if (path == "/healthz") {
      if (method != "GET") return error(405, "method not allowed");
      return reply(200, json{{"status", ready() ? "ok" : "loading"}});
    }
    constexpr std::string_view kSession = "/api/session";
    constexpr std::string_view kEntity = "/api/entity/";
    const bool known = path == kSession || path == "/api/message" || path.starts_with(std::string(kSession) + "/") ||
                       path.starts_with(kEntity);
    if (!known) return error(404, "no route for " + std::string(path));
    if (!ready()) return error(503, "model is loading");

    if (path == kSession) {
      if (method != "POST") return error(405, "method not allowed");
      return reply(200, json{{"session_id", create_session()}});
    }
    if (path.starts_with(std::string(kSession) + "/")) {
      if (method != "DELETE") return error(405, "method not allowed");
      const std::string id(path.substr(kSession.size() + 1));
      if (!end_session(id)) return error(404, "unknown session '" + id + "'");
      return no_content();
    }
    if (path.starts_with(kEntity)) {
      if (method != "GET") return error(405, "method not allowed");
      return entity_card(path.substr(kEntity.size()));
    }
    // /api/message
    if (method != "POST") return error(405, "method not allowed");
    const json req = json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object()) return error(400, "body must be a JSON object");
    if (!req.contains("session_id") || !req["session_id"].is_string()) {
      return error(400, "session_id must be a string");
    }
    if (!req.contains("text") || !req["text"].is_string()) return error(400, "text must be a string");
    const std::string text = req["text"].get<std::string>();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return error(400, "text is empty");
    return reply(200, json::parse(to_json(message(req["session_id"].get<std::string>(), text))));
  } catch (const UnknownSession& e) {
    return error(404, e.what());
  } catch (const DanglingReference& e) {
    return error(400, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

}  // namespace kerl
