#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kerl/kg_store.hpp"

namespace kerl {

inline constexpr std::string_view kItemPlaceholder = "[ITEM]";

enum class Speaker { Seeker, Recommender };

const char* to_string(Speaker s);
Speaker parse_speaker(std::string_view s);

struct Mention {
  EntityId entity = 0;
  std::size_t offset = 0;  // byte offset into Utterance::text
  std::size_t length = 0;
};

struct Utterance {
  Speaker speaker = Speaker::Seeker;
  std::string raw;                // as written, "@<id>" markers intact
  std::string text;               // markers replaced by entity names
  std::vector<Mention> mentions;  // strictly increasing offsets
};

struct Conversation {
  std::int64_t id = 0;
  std::vector<Utterance> utterances;
};

/// Links "@<id>" markers and dictionary names (case-insensitive, longest match
/// first, whole words only) to entity ids.
class EntityLinker {
 public:
  explicit EntityLinker(const KnowledgeGraph& kg, const std::map<std::string, EntityId>& dictionary = {});

  /// Throws DanglingReference for markers naming unknown ids.
  Utterance link(Speaker speaker, std::string_view raw) const;

 private:
  const KnowledgeGraph* kg_;
  std::map<std::string, EntityId> names_;  // normalized (lower-case) keys
  std::size_t longest_name_ = 0;
};

/// {name: entity_id} JSON object.
std::map<std::string, EntityId> load_name_dictionary(const std::filesystem::path& path, const KnowledgeGraph& kg);

/// One conversation per JSON line: {"id": int, "messages": [{"speaker", "text"}]}.
std::vector<Conversation> load_corpus(const std::filesystem::path& path, const KnowledgeGraph& kg,
                                      const EntityLinker& linker);
std::vector<Conversation> load_corpus(const std::filesystem::path& path, const KnowledgeGraph& kg);

struct TrainingExample {
  std::int64_t conversation_id = 0;
  std::size_t turn = 0;                // index of the recommender utterance
  std::vector<Utterance> context;      // utterances before `turn`
  std::vector<EntityId> entity_seq;    // chronological mentions, last `cap`
  std::vector<EntityId> targets;       // sorted, unique item ids
  std::string response;                // gold reply with items as [ITEM]
  std::vector<EntityId> response_items;  // items in placeholder order
};

/// Ordered entity mentions across utterances, both speakers, duplicates kept.
std::vector<EntityId> mention_sequence(std::span<const Utterance> utterances, std::size_t cap);

/// One example per recommender utterance that mentions an item. With
/// include_chitchat, recommender turns without items are emitted too (empty
/// targets); those serve response generation only.
std::vector<TrainingExample> build_examples(const Conversation& conv, const KnowledgeGraph& kg, std::size_t cap,
                                            bool include_chitchat = false);

/// Replaces [ITEM] markers in order with the given names; leftovers stay.
std::string fill_placeholders(std::string_view response, std::span<const std::string> names);

}  // namespace kerl
