#include "kerl/dialogue_corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "kerl/errors.hpp"

namespace kerl {

namespace {

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

const char* to_string(Speaker s) { return s == Speaker::Seeker ? "seeker" : "recommender"; }

Speaker parse_speaker(std::string_view s) {
  if (s == "seeker") return Speaker::Seeker;
  if (s == "recommender") return Speaker::Recommender;
  throw ConfigError("unknown speaker '" + std::string(s) + "'");
}

EntityLinker::EntityLinker(const KnowledgeGraph& kg, const std::map<std::string, EntityId>& dictionary) : kg_(&kg) {
  for (const auto& [name, id] : dictionary) {
    if (!kg.has_entity(id)) throw DanglingReference(id, "name dictionary entry '" + name + "'");
    std::string key = lower(name);
    if (key.empty()) continue;
    if (!names_.emplace(key, id).second) {
      throw MalformedRecord("name dictionary", 0, "names collide after normalization: '" + key + "'");
    }
    longest_name_ = std::max(longest_name_, key.size());
  }
}

Utterance EntityLinker::link(Speaker speaker, std::string_view raw) const {
  Utterance u;
  u.speaker = speaker;
  u.raw = std::string(raw);

  // Pass 1: substitute markers.
  std::vector<Mention> marked;
  for (std::size_t i = 0; i < raw.size();) {
    if (raw[i] == '@' && i + 1 < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i + 1]))) {
      std::size_t j = i + 1;
      while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
      const std::string digits(raw.substr(i + 1, j - i - 1));
      EntityId id = -1;
      try {
        id = std::stoll(digits);
      } catch (const std::exception&) {
        throw DanglingReference(digits, "entity marker out of range");
      }
      if (!kg_->has_entity(id)) throw DanglingReference(id, "entity marker");
      const std::string& name = kg_->entity(id).name;
      marked.push_back({id, u.text.size(), name.size()});
      u.text += name;
      i = j;
    } else {
      u.text.push_back(raw[i++]);
    }
  }

  // Pass 2: dictionary names over the uncovered text.
  std::vector<Mention> found;
  if (!names_.empty()) {
    const std::string low = lower(u.text);
    std::size_t next_mark = 0;
    for (std::size_t i = 0; i < low.size();) {
      while (next_mark < marked.size() && marked[next_mark].offset + marked[next_mark].length <= i) ++next_mark;
      if (next_mark < marked.size() && marked[next_mark].offset <= i) {
        i = marked[next_mark].offset + marked[next_mark].length;
        continue;
      }
      if (i > 0 && is_word_char(low[i - 1])) {
        ++i;
        continue;
      }
      const std::size_t limit = next_mark < marked.size() ? marked[next_mark].offset : low.size();
      std::size_t best_len = 0;
      EntityId best_id = -1;
      for (std::size_t len = std::min(longest_name_, limit - i); len > 0; --len) {
        if (i + len < low.size() && is_word_char(low[i + len])) continue;
        auto it = names_.find(low.substr(i, len));
        if (it != names_.end()) {
          best_len = len;
          best_id = it->second;
          break;
        }
      }
      if (best_len > 0) {
        found.push_back({best_id, i, best_len});
        i += best_len;
      } else {
        ++i;
      }
    }
  }

  u.mentions = std::move(marked);
  u.mentions.insert(u.mentions.end(), found.begin(), found.end());
  std::sort(u.mentions.begin(), u.mentions.end(),
            [](const Mention& a, const Mention& b) { return a.offset < b.offset; });
  return u;
}

std::map<std::string, EntityId> load_name_dictionary(const std::filesystem::path& path, const KnowledgeGraph& kg) {
  std::ifstream in(path);
  if (!in) throw MalformedRecord(path.string(), 0, "cannot open name dictionary");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw MalformedRecord(path.string(), 0, ex.what());
  }
  if (!j.is_object()) throw MalformedRecord(path.string(), 0, "expected {name: entity_id}");
  std::map<std::string, EntityId> out;
  for (const auto& [name, id] : j.items()) {
    if (!id.is_number_integer()) throw MalformedRecord(path.string(), 0, "id for '" + name + "' is not an integer");
    const auto eid = id.get<EntityId>();
    if (!kg.has_entity(eid)) throw DanglingReference(eid, "name dictionary");
    out.emplace(name, eid);
  }
  return out;
}

std::vector<Conversation> load_corpus(const std::filesystem::path& path, const KnowledgeGraph& /*kg*/,
                                      const EntityLinker& linker) {
  const std::string src = path.string();
  std::ifstream in(path);
  if (!in) throw MalformedRecord(src, 0, "cannot open corpus");
  std::vector<Conversation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedRecord(src, lineno, ex.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_integer() || !j.contains("messages") ||
        !j["messages"].is_array()) {
      throw MalformedRecord(src, lineno, "conversation needs integer 'id' and array 'messages'");
    }
    Conversation c;
    c.id = j["id"].get<std::int64_t>();
    for (const auto& m : j["messages"]) {
      if (!m.is_object() || !m.contains("speaker") || !m["speaker"].is_string() || !m.contains("text") ||
          !m["text"].is_string()) {
        throw MalformedRecord(src, lineno, "message needs string 'speaker' and 'text'");
      }
      const auto spk = m["speaker"].get<std::string>();
      if (spk != "seeker" && spk != "recommender") throw MalformedRecord(src, lineno, "unknown speaker '" + spk + "'");
      c.utterances.push_back(linker.link(parse_speaker(spk), m["text"].get<std::string>()));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Conversation> load_corpus(const std::filesystem::path& path, const KnowledgeGraph& kg) {
  return load_corpus(path, kg, EntityLinker(kg));
}

std::vector<EntityId> mention_sequence(std::span<const Utterance> utterances, std::size_t cap) {
  std::vector<EntityId> seq;
  for (const Utterance& u : utterances) {
    for (const Mention& m : u.mentions) seq.push_back(m.entity);
  }
  if (seq.size() > cap) seq.erase(seq.begin(), seq.end() - static_cast<std::ptrdiff_t>(cap));
  return seq;
}

std::vector<TrainingExample> build_examples(const Conversation& conv, const KnowledgeGraph& kg, std::size_t cap,
                                            bool include_chitchat) {
  if (cap < 1) throw ConfigError("entity sequence cap must be at least 1");
  std::vector<TrainingExample> out;
  for (std::size_t m = 0; m < conv.utterances.size(); ++m) {
    const Utterance& u = conv.utterances[m];
    if (u.speaker != Speaker::Recommender) continue;
    std::vector<EntityId> items;
    for (const Mention& men : u.mentions) {
      if (kg.entity(men.entity).is_item) items.push_back(men.entity);
    }
    if (items.empty() && !include_chitchat) continue;

    TrainingExample ex;
    ex.conversation_id = conv.id;
    ex.turn = m;
    ex.context.assign(conv.utterances.begin(), conv.utterances.begin() + static_cast<std::ptrdiff_t>(m));
    ex.entity_seq = mention_sequence(ex.context, cap);
    ex.targets = items;
    std::sort(ex.targets.begin(), ex.targets.end());
    ex.targets.erase(std::unique(ex.targets.begin(), ex.targets.end()), ex.targets.end());
    ex.response_items = items;

    std::size_t at = 0;
    for (const Mention& men : u.mentions) {
      if (!kg.entity(men.entity).is_item) continue;
      ex.response.append(u.text, at, men.offset - at);
      ex.response.append(kItemPlaceholder);
      at = men.offset + men.length;
    }
    ex.response.append(u.text, at);
    out.push_back(std::move(ex));
  }
  return out;
}

std::string fill_placeholders(std::string_view response, std::span<const std::string> names) {
  std::string out;
  std::size_t next = 0;
  std::size_t at = 0;
  while (true) {
    const std::size_t pos = response.find(kItemPlaceholder, at);
    if (pos == std::string_view::npos || next >= names.size()) break;
    out.append(response.substr(at, pos - at));
    out.append(names[next++]);
    at = pos + kItemPlaceholder.size();
  }
  out.append(response.substr(at));
  return out;
}

}  // namespace kerl
