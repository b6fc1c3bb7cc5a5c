#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "kerl/config.hpp"
#include "kerl/dialogue_corpus.hpp"
#include "kerl/kg_store.hpp"

namespace kerl::toy {

/// Synthetic graph plus conversations. `heldout` is empty unless the corpus
/// has a separate evaluation part.
struct ToyData {
  std::shared_ptr<const KnowledgeGraph> kg;
  std::vector<Conversation> train;
  std::vector<Conversation> heldout;
};

/// 20 entities, 3 relations, no conversations. Each relation is a fixed
/// offset along a seeded permutation of the entities, so a translation model
/// can fit every triple.
ToyData kge_graph(std::uint64_t seed);

/// 30 items, each the only one with its (genre, director) pair, and 50
/// dialogues in which the seeker names a genre and a director before the
/// recommender names the matching item.
ToyData rec_corpus(std::uint64_t seed);

/// 40 items whose description is a unique random keyword, also the whole
/// description of one "theme" entity; no triple connects a theme to its item. Dialogues
/// for the first 30 items go to `train`, the rest to `heldout`.
ToyData ablation_corpus(std::uint64_t seed);

/// Ten dialogues with ten distinct recommender replies.
ToyData gen_corpus(std::uint64_t seed);

/// Six entities, two relations and three short dialogues, sized for finite
/// differences.
ToyData grad_instance(std::uint64_t seed);

/// Small dimensions that keep finite differences cheap.
Config tiny_config();

}  // namespace kerl::toy
