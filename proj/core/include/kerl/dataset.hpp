#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "kerl/config.hpp"
#include "kerl/dialogue_corpus.hpp"
#include "kerl/kg_store.hpp"
#include "kerl/text_encoder.hpp"

namespace kerl {

/// A data directory holds entities.jsonl, triples.tsv and corpus.jsonl, plus
/// optional names.json (name dictionary) and a token table file.
struct Dataset {
  std::shared_ptr<const KnowledgeGraph> kg;
  std::vector<Conversation> conversations;
};

Dataset load_dataset(const std::filesystem::path& dir, const Config& cfg);
/// Builtin table seeded from the config, or the file named by token_table,
/// resolved against the data directory.
TokenEmbeddingTable make_token_table(const Config& cfg, const std::filesystem::path& data_dir);

/// Writes the three files load_dataset expects. Utterances are written in
/// their raw form, so markers survive.
void write_dataset(const std::filesystem::path& dir, const KnowledgeGraph& kg,
                   std::span<const Conversation> conversations);

/// Examples from every conversation, in corpus order.
std::vector<TrainingExample> build_all_examples(std::span<const Conversation> conversations, const KnowledgeGraph& kg,
                                                std::size_t cap, bool include_chitchat = false);

/// True when the conversation falls in the validation split:
/// fnv1a(id) mod 10000 < fraction * 10000.
bool in_validation_split(std::int64_t conversation_id, double fraction);

}  // namespace kerl
