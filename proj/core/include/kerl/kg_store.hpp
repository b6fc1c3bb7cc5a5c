#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace kerl {

using EntityId = std::int64_t;
using RelationId = std::int64_t;

struct Entity {
  EntityId id = 0;
  std::string name;
  bool is_item = false;
  std::string description;
};

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
};

/// One hop from an entity, in either direction.
struct Neighbor {
  EntityId entity;
  RelationId relation;
  bool outgoing;  // true: (self, r, entity); false: (entity, r, self)
};

/// Immutable, validated knowledge graph. Entities are indexed by their dense
/// id; relations by order of first appearance in the triples file.
class KnowledgeGraph {
 public:
  /// Validates and indexes. Duplicate triples collapse to one; relations named
  /// in `irreflexive` reject self-loops.
  static KnowledgeGraph build(std::vector<Entity> entities, std::vector<std::string> relations,
                              std::vector<Triple> triples, const std::set<std::string>& irreflexive = {});

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }

  const std::vector<Entity>& entities() const { return entities_; }
  const Entity& entity(EntityId id) const;
  bool has_entity(EntityId id) const { return id >= 0 && static_cast<std::size_t>(id) < entities_.size(); }

  const std::vector<std::string>& relations() const { return relations_; }
  /// -1 when absent.
  RelationId find_relation(const std::string& name) const;

  /// Deduplicated, in order of first appearance.
  const std::vector<Triple>& triples() const { return triples_; }
  bool contains(const Triple& t) const { return triple_set_.count(t) != 0; }

  /// E_e^r: entities e' with a stored triple (e', r, e), in file order.
  const std::vector<EntityId>& in_neighbors(EntityId e, RelationId r) const;
  std::vector<Neighbor> neighbors(EntityId e) const;

  /// Sorted ascending.
  const std::vector<EntityId>& item_ids() const { return item_ids_; }

 private:
  std::vector<Entity> entities_;
  std::vector<std::string> relations_;
  std::vector<Triple> triples_;
  std::set<Triple> triple_set_;
  std::vector<std::vector<std::vector<EntityId>>> in_adjacency_;  // [entity][relation]
  std::vector<std::vector<std::pair<RelationId, EntityId>>> out_adjacency_;
  std::vector<EntityId> item_ids_;
};

/// Reads the JSON Lines entity file and the tab-separated triple file.
/// Throws MalformedRecord, DanglingReference, or EmptyGraph.
KnowledgeGraph load_graph(const std::filesystem::path& entities_path, const std::filesystem::path& triples_path,
                          const std::set<std::string>& irreflexive = {});

/// Draws k negatives for `t` by replacing the head or the tail (fair coin per
/// sample) with a uniformly chosen different entity. In filtered mode the
/// negatives are distinct and never members of the graph; ExhaustedCandidates
/// is raised when k of them are not found within 4 * num_entities draws.
std::vector<Triple> corrupt_triple(const KnowledgeGraph& kg, const Triple& t, std::size_t k, std::uint64_t seed,
                                   bool filtered = true);

}  // namespace kerl
