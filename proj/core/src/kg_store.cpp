#include "kerl/kg_store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kerl/errors.hpp"
#include "kerl/rng.hpp"

namespace kerl {

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

bool is_blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

std::int64_t parse_id(const std::string& field, const std::string& source, std::size_t line) {
  std::int64_t v = 0;
  const char* b = field.data();
  const char* e = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw MalformedRecord(source, line, "expected integer id, got '" + field + "'");
  return v;
}

}  // namespace

KnowledgeGraph KnowledgeGraph::build(std::vector<Entity> entities, std::vector<std::string> relations,
                                     std::vector<Triple> triples, const std::set<std::string>& irreflexive) {
  if (entities.empty()) throw EmptyGraph();
  KnowledgeGraph kg;
  std::sort(entities.begin(), entities.end(), [](const Entity& a, const Entity& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].id != static_cast<EntityId>(i)) {
      throw MalformedRecord("entities", i + 1, "entity ids must be dense and unique (0..n-1)");
    }
    if (entities[i].name.empty()) throw MalformedRecord("entities", i + 1, "entity name is empty");
  }
  kg.entities_ = std::move(entities);
  kg.relations_ = std::move(relations);

  const auto n = kg.entities_.size();
  const auto nr = kg.relations_.size();
  kg.in_adjacency_.assign(n, std::vector<std::vector<EntityId>>(nr));
  kg.out_adjacency_.assign(n, {});
  for (const Triple& t : triples) {
    if (!kg.has_entity(t.head)) throw DanglingReference(t.head, "triple head");
    if (!kg.has_entity(t.tail)) throw DanglingReference(t.tail, "triple tail");
    if (t.relation < 0 || static_cast<std::size_t>(t.relation) >= nr) throw DanglingReference(t.relation, "relation");
    if (t.head == t.tail && irreflexive.count(kg.relations_[t.relation]) != 0) {
      throw MalformedRecord("triples", 0, "self-loop on irreflexive relation " + kg.relations_[t.relation]);
    }
    if (!kg.triple_set_.insert(t).second) continue;
    kg.triples_.push_back(t);
    kg.in_adjacency_[t.tail][t.relation].push_back(t.head);
    kg.out_adjacency_[t.head].emplace_back(t.relation, t.tail);
  }
  for (const Entity& e : kg.entities_) {
    if (e.is_item) kg.item_ids_.push_back(e.id);
  }
  if (kg.item_ids_.empty()) throw MalformedRecord("entities", 0, "graph declares no item entities");
  return kg;
}

const Entity& KnowledgeGraph::entity(EntityId id) const {
  if (!has_entity(id)) throw DanglingReference(id, "entity lookup");
  return entities_[static_cast<std::size_t>(id)];
}

RelationId KnowledgeGraph::find_relation(const std::string& name) const {
  auto it = std::find(relations_.begin(), relations_.end(), name);
  return it == relations_.end() ? -1 : static_cast<RelationId>(it - relations_.begin());
}

const std::vector<EntityId>& KnowledgeGraph::in_neighbors(EntityId e, RelationId r) const {
  return in_adjacency_.at(static_cast<std::size_t>(e)).at(static_cast<std::size_t>(r));
}

std::vector<Neighbor> KnowledgeGraph::neighbors(EntityId e) const {
  std::vector<Neighbor> out;
  for (const auto& [r, t] : out_adjacency_.at(static_cast<std::size_t>(e))) out.push_back({t, r, true});
  for (std::size_t r = 0; r < relations_.size(); ++r) {
    for (EntityId h : in_neighbors(e, static_cast<RelationId>(r))) out.push_back({h, static_cast<RelationId>(r), false});
  }
  return out;
}

KnowledgeGraph load_graph(const std::filesystem::path& entities_path, const std::filesystem::path& triples_path,
                          const std::set<std::string>& irreflexive) {
  const std::string esrc = entities_path.string();
  std::ifstream ein(entities_path);
  if (!ein) throw MalformedRecord(esrc, 0, "cannot open file");

  std::vector<Entity> entities;
  std::set<EntityId> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ein, line)) {
    ++lineno;
    line = strip_cr(line);
    if (is_blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedRecord(esrc, lineno, ex.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_integer() || !j.contains("name") ||
        !j["name"].is_string()) {
      throw MalformedRecord(esrc, lineno, "entity needs integer 'id' and string 'name'");
    }
    Entity e;
    e.id = j["id"].get<EntityId>();
    e.name = j["name"].get<std::string>();
    if (j.contains("is_item")) {
      if (!j["is_item"].is_boolean()) throw MalformedRecord(esrc, lineno, "'is_item' must be boolean");
      e.is_item = j["is_item"].get<bool>();
    }
    if (j.contains("description")) {
      if (!j["description"].is_string()) throw MalformedRecord(esrc, lineno, "'description' must be a string");
      e.description = j["description"].get<std::string>();
    }
    if (e.name.empty()) throw MalformedRecord(esrc, lineno, "entity name is empty");
    if (!seen.insert(e.id).second) throw MalformedRecord(esrc, lineno, "duplicate entity id " + std::to_string(e.id));
    entities.push_back(std::move(e));
  }
  if (entities.empty()) throw EmptyGraph();
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (seen.count(static_cast<EntityId>(i)) == 0) {
      throw MalformedRecord(esrc, 0, "entity ids are not dense: missing " + std::to_string(i));
    }
  }

  const std::string tsrc = triples_path.string();
  std::ifstream tin(triples_path);
  if (!tin) throw MalformedRecord(tsrc, 0, "cannot open file");
  std::vector<std::string> relations;
  std::unordered_map<std::string, RelationId> relation_index;
  std::vector<Triple> triples;
  lineno = 0;
  while (std::getline(tin, line)) {
    ++lineno;
    line = strip_cr(line);
    if (is_blank(line)) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3 || fields[1].empty()) {
      throw MalformedRecord(tsrc, lineno, "expected head_id<TAB>relation<TAB>tail_id");
    }
    Triple t;
    t.head = parse_id(fields[0], tsrc, lineno);
    t.tail = parse_id(fields[2], tsrc, lineno);
    if (seen.count(t.head) == 0) throw DanglingReference(t.head, tsrc + ":" + std::to_string(lineno));
    if (seen.count(t.tail) == 0) throw DanglingReference(t.tail, tsrc + ":" + std::to_string(lineno));
    auto [it, inserted] = relation_index.emplace(fields[1], static_cast<RelationId>(relations.size()));
    if (inserted) relations.push_back(fields[1]);
    t.relation = it->second;
    triples.push_back(t);
  }
  return KnowledgeGraph::build(std::move(entities), std::move(relations), std::move(triples), irreflexive);
}

std::vector<Triple> corrupt_triple(const KnowledgeGraph& kg, const Triple& t, std::size_t k, std::uint64_t seed,
                                   bool filtered) {
  std::vector<Triple> out;
  if (k == 0) return out;
  const auto n = static_cast<std::uint64_t>(kg.num_entities());
  if (n < 2) throw ExhaustedCandidates("cannot corrupt a triple in a single-entity graph");
  out.reserve(k);
  Rng rng(seed);

  auto draw = [&]() {
    Triple c = t;
    const bool replace_head = rng.coin();
    const EntityId original = replace_head ? t.head : t.tail;
    // Uniform over the n-1 entities that differ from the one being replaced.
    auto pick = static_cast<EntityId>(rng.below(n - 1));
    if (pick >= original) ++pick;
    (replace_head ? c.head : c.tail) = pick;
    return c;
  };

  if (!filtered) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(draw());
    return out;
  }

  std::set<Triple> chosen;
  const std::uint64_t budget = 4 * n;
  for (std::uint64_t attempt = 0; attempt < budget && out.size() < k; ++attempt) {
    Triple c = draw();
    if (kg.contains(c) || !chosen.insert(c).second) continue;
    out.push_back(c);
  }
  if (out.size() < k) {
    throw ExhaustedCandidates("found only " + std::to_string(out.size()) + " of " + std::to_string(k) +
                              " filtered corruptions for (" + std::to_string(t.head) + ", " +
                              std::to_string(t.relation) + ", " + std::to_string(t.tail) + ")");
  }
  return out;
}

}  // namespace kerl
