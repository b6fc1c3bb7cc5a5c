#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kerl/dialogue_corpus.hpp"
#include "kerl/errors.hpp"
#include "kerl/model.hpp"

namespace kerl {

class UnknownSession : public Error {
 public:
  explicit UnknownSession(const std::string& id) : Error(Category::Usage, "unknown session '" + id + "'") {}
};

struct ScoredItem {
  EntityId item_id = 0;
  std::string name;
  double score = 0.0;
};

struct LinkedEntity {
  EntityId entity_id = 0;
  std::string name;
};

struct MessageResponse {
  std::string response_text;
  std::vector<ScoredItem> recommendations;  // score descending
  std::vector<LinkedEntity> linked_entities;
  double gate_beta = 0.5;
};

std::string to_json(const MessageResponse& r);

struct HttpResponse {
  int status = 200;
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
};

/// Conversational loop over a loaded model. Sessions keep only their
/// utterance history; the entity sequence is re-derived from it each turn, so
/// replaying a transcript reproduces every response.
class ChatService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  struct Options {
    std::size_t top_k = 10;
    std::chrono::seconds ttl{3600};
    Clock clock;  // steady_clock::now when empty
    std::map<std::string, EntityId> dictionary;
  };

  explicit ChatService(Options opts);

  /// Throws StageError unless the model has finished recommendation
  /// training. Without a trained generator, replies use a fixed template.
  void load(std::shared_ptr<KerlModel> model);
  bool ready() const;

  std::string create_session();
  /// False when the session did not exist.
  bool end_session(const std::string& id);
  /// Throws UnknownSession, or DanglingReference for bad "@<id>" markers.
  MessageResponse message(const std::string& session_id, std::string_view text);
  std::size_t session_count();

  /// Routes one request. Never throws.
  HttpResponse handle(std::string_view method, std::string_view path, std::string_view body);

 private:
  struct Session {
    std::mutex mutex;
    std::vector<Utterance> history;
    std::chrono::steady_clock::time_point created;
    std::chrono::steady_clock::time_point last_used;
  };

  std::chrono::steady_clock::time_point now() const;
  void evict_expired_locked(std::chrono::steady_clock::time_point t);
  std::shared_ptr<Session> find_session(const std::string& id);
  HttpResponse entity_card(std::string_view id_text) const;

  Options opts_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const KerlModel> model_;
  std::shared_ptr<const EntityLinker> linker_;
  ad::Var entities_;

  std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_source_;
};

}  // namespace kerl
