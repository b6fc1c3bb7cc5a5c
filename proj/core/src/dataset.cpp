#include "kerl/dataset.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "kerl/errors.hpp"
#include "kerl/rng.hpp"

namespace kerl {

Dataset load_dataset(const std::filesystem::path& dir, const Config& cfg) {
  Dataset d;
  auto kg = std::make_shared<const KnowledgeGraph>(
      load_graph(dir / "entities.jsonl", dir / "triples.tsv", cfg.irreflexive_relations()));
  std::map<std::string, EntityId> names;
  if (std::filesystem::exists(dir / "names.json")) names = load_name_dictionary(dir / "names.json", *kg);
  const EntityLinker linker(*kg, names);
  d.conversations = load_corpus(dir / "corpus.jsonl", *kg, linker);
  d.kg = std::move(kg);
  return d;
}

TokenEmbeddingTable make_token_table(const Config& cfg, const std::filesystem::path& data_dir) {
  if (cfg.token_table == "builtin") return TokenEmbeddingTable::builtin(cfg.token_seed, cfg.d_tok);
  std::filesystem::path p(cfg.token_table);
  if (p.is_relative()) p = data_dir / p;
  return TokenEmbeddingTable::from_file(p);
}

void write_dataset(const std::filesystem::path& dir, const KnowledgeGraph& kg,
                   std::span<const Conversation> conversations) {
  std::filesystem::create_directories(dir);
  std::ofstream ents(dir / "entities.jsonl");
  for (const Entity& e : kg.entities()) {
    ents << nlohmann::json{{"id", e.id}, {"name", e.name}, {"is_item", e.is_item}, {"description", e.description}}
                .dump()
         << "\n";
  }
  std::ofstream triples(dir / "triples.tsv");
  for (const Triple& t : kg.triples()) {
    triples << t.head << '\t' << kg.relations()[static_cast<std::size_t>(t.relation)] << '\t' << t.tail << "\n";
  }
  std::ofstream corpus(dir / "corpus.jsonl");
  for (const Conversation& c : conversations) {
    nlohmann::json msgs = nlohmann::json::array();
    for (const Utterance& u : c.utterances) msgs.push_back({{"speaker", to_string(u.speaker)}, {"text", u.raw}});
    corpus << nlohmann::json{{"id", c.id}, {"messages", msgs}}.dump() << "\n";
  }
  if (!ents || !triples || !corpus) throw MalformedRecord(dir.string(), 0, "failed to write dataset");
}

std::vector<TrainingExample> build_all_examples(std::span<const Conversation> conversations, const KnowledgeGraph& kg,
                                                std::size_t cap, bool include_chitchat) {
  std::vector<TrainingExample> out;
  for (const Conversation& c : conversations) {
    auto ex = build_examples(c, kg, cap, include_chitchat);
    out.insert(out.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  return out;
}

bool in_validation_split(std::int64_t conversation_id, double fraction) {
  const auto h = fnv1a(std::to_string(conversation_id)) % 10000;
  return static_cast<double>(h) < fraction * 10000.0;
}

}  // namespace kerl
