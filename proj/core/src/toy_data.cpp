#include "kerl/toy_data.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <string>

#include "kerl/rng.hpp"

namespace kerl::toy {

namespace {

using Turn = std::pair<Speaker, std::string>;

Conversation make_conversation(std::int64_t id, const std::vector<Turn>& turns, const EntityLinker& linker) {
  Conversation c;
  c.id = id;
  for (const auto& [speaker, raw] : turns) c.utterances.push_back(linker.link(speaker, raw));
  return c;
}

std::string at(EntityId e) { return "@" + std::to_string(e); }

std::string two_digits(std::size_t i) { return (i < 10 ? "0" : "") + std::to_string(i); }

template <std::size_t N>
const std::string& pick(const std::array<std::string, N>& options, Rng& rng) {
  return options[rng.below(N)];
}

}  // namespace

ToyData kge_graph(std::uint64_t seed) {
  constexpr std::size_t n = 20;
  Rng rng(derive_seed(seed, 101));
  std::vector<EntityId> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  std::vector<Entity> entities;
  for (std::size_t i = 0; i < n; ++i) {
    entities.push_back({static_cast<EntityId>(i), "node" + two_digits(i), i < 5, "node" + two_digits(i) + " entity"});
  }
  // Position p along `order` is linked to p + offset by relation r.
  const std::array<std::size_t, 3> offsets{1, 3, 7};
  const std::array<std::size_t, 3> stride{1, 2, 3};
  std::vector<Triple> triples;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t p = 0; p + offsets[r] < n; p += stride[r]) {
      triples.push_back({order[p], static_cast<RelationId>(r), order[p + offsets[r]]});
    }
  }
  ToyData d;
  d.kg = std::make_shared<const KnowledgeGraph>(
      KnowledgeGraph::build(std::move(entities), {"next", "skip", "leap"}, std::move(triples)));
  return d;
}

ToyData rec_corpus(std::uint64_t seed) {
  const std::array<std::string, 6> genres{"action", "comedy", "drama", "horror", "romance", "scifi"};
  const std::array<std::string, 5> directors{"nolan", "kubrick", "hitchcock", "scorsese", "spielberg"};
  constexpr EntityId kItems = 30;
  const EntityId genre0 = kItems;
  const EntityId director0 = kItems + 6;

  std::vector<Entity> entities;
  std::vector<Triple> triples;
  for (EntityId i = 0; i < kItems; ++i) {
    const auto g = static_cast<std::size_t>(i % 6);
    const auto dir = static_cast<std::size_t>(i / 6);
    entities.push_back({i, "film" + two_digits(static_cast<std::size_t>(i)), true,
                        "a " + genres[g] + " movie directed by " + directors[dir]});
    triples.push_back({i, 0, genre0 + static_cast<EntityId>(g)});
    triples.push_back({genre0 + static_cast<EntityId>(g), 1, i});
    triples.push_back({i, 2, director0 + static_cast<EntityId>(dir)});
    triples.push_back({director0 + static_cast<EntityId>(dir), 3, i});
  }
  for (std::size_t g = 0; g < genres.size(); ++g) {
    entities.push_back({genre0 + static_cast<EntityId>(g), genres[g], false, genres[g] + " genre"});
  }
  for (std::size_t k = 0; k < directors.size(); ++k) {
    entities.push_back({director0 + static_cast<EntityId>(k), directors[k], false, "film director " + directors[k]});
  }
  ToyData d;
  d.kg = std::make_shared<const KnowledgeGraph>(KnowledgeGraph::build(
      std::move(entities), {"has_genre", "genre_of", "directed_by", "directed"}, std::move(triples)));

  const EntityLinker linker(*d.kg);
  Rng rng(derive_seed(seed, 102));
  const std::array<std::string, 3> openers{"hi , i am looking for a ", "hello ! can you find me a ",
                                           "i would like to watch a "};
  const std::array<std::string, 3> asks{"sure , any favorite director ?", "who do you like behind the camera ?",
                                        "ok , which director do you enjoy ?"};
  const std::array<std::string, 3> replies{"i like films by ", "anything from ", "i am a fan of "};
  const std::array<std::string, 3> recs{"then you should watch ", "try ", "you will enjoy "};
  for (std::int64_t c = 0; c < 50; ++c) {
    const EntityId item = (c * 7) % kItems;
    const EntityId g = genre0 + item % 6;
    const EntityId dir = director0 + item / 6;
    d.train.push_back(make_conversation(c + 1,
                                        {{Speaker::Seeker, pick(openers, rng) + at(g) + " movie"},
                                         {Speaker::Recommender, pick(asks, rng)},
                                         {Speaker::Seeker, pick(replies, rng) + at(dir)},
                                         {Speaker::Recommender, pick(recs, rng) + at(item) + " ."}},
                                        linker));
  }
  return d;
}

ToyData ablation_corpus(std::uint64_t seed) {
  constexpr EntityId kItems = 40;
  constexpr EntityId kTrainItems = 30;
  const EntityId hub = 2 * kItems;
  Rng rng(derive_seed(seed, 103));

  // Keywords are random letter strings so the hashed token vectors carry no
  // structure beyond identity.
  std::vector<std::string> keywords;
  while (keywords.size() < static_cast<std::size_t>(kItems)) {
    std::string w;
    for (int i = 0; i < 6; ++i) w.push_back(static_cast<char>('a' + rng.below(26)));
    if (std::find(keywords.begin(), keywords.end(), w) == keywords.end()) keywords.push_back(w);
  }

  std::vector<Entity> entities;
  std::vector<Triple> triples;
  for (EntityId i = 0; i < kItems; ++i) {
    entities.push_back({i, "title" + two_digits(static_cast<std::size_t>(i)), true,
                        keywords[static_cast<std::size_t>(i)]});
    triples.push_back({i, 0, hub});
    triples.push_back({hub, 1, i});
  }
  for (EntityId i = 0; i < kItems; ++i) {
    entities.push_back({kItems + i, "theme" + two_digits(static_cast<std::size_t>(i)), false,
                        keywords[static_cast<std::size_t>(i)]});
  }
  entities.push_back({hub, "movie", false, "a film"});
  ToyData d;
  d.kg = std::make_shared<const KnowledgeGraph>(
      KnowledgeGraph::build(std::move(entities), {"is_a", "has_instance"}, std::move(triples)));

  const EntityLinker linker(*d.kg);
  const std::array<std::string, 3> asks{"i want something about ", "show me a film on ", "anything with "};
  const std::array<std::string, 3> recs{"try ", "how about ", "you may like "};
  std::int64_t id = 1;
  for (EntityId i = 0; i < kItems; ++i) {
    const int copies = i < kTrainItems ? 2 : 1;
    for (int c = 0; c < copies; ++c) {
      Conversation conv = make_conversation(
          id++,
          {{Speaker::Seeker, pick(asks, rng) + at(kItems + i)}, {Speaker::Recommender, pick(recs, rng) + at(i)}},
          linker);
      (i < kTrainItems ? d.train : d.heldout).push_back(std::move(conv));
    }
  }
  return d;
}

ToyData gen_corpus(std::uint64_t /*seed*/) {
  const std::array<std::string, 10> moods{"funny", "scary", "sad", "exciting", "quiet",
                                          "strange", "gentle", "dark", "bright", "tense"};
  std::vector<Entity> entities;
  std::vector<Triple> triples;
  for (EntityId i = 0; i < 10; ++i) {
    const auto& mood = moods[static_cast<std::size_t>(i)];
    entities.push_back({i, "picture" + two_digits(static_cast<std::size_t>(i)), true, "a " + mood + " picture"});
  }
  for (EntityId i = 0; i < 10; ++i) {
    const auto& mood = moods[static_cast<std::size_t>(i)];
    entities.push_back({10 + i, mood, false, mood + " mood"});
    triples.push_back({i, 0, 10 + i});
  }
  ToyData d;
  d.kg = std::make_shared<const KnowledgeGraph>(
      KnowledgeGraph::build(std::move(entities), {"has_mood"}, std::move(triples)));

  const std::array<std::string, 10> replies{
      "you should watch @0 , it is a classic .",
      "@1 will keep you up at night .",
      "bring tissues for @2 .",
      "@3 has the best chase i know !",
      "i think @4 suits a calm evening .",
      "nobody forgets the ending of @5 .",
      "@6 is kind and warm , like a hug .",
      "if you like shadows , @7 is for you .",
      "@8 is full of color and joy .",
      "hold your breath during @9 .",
  };
  const EntityLinker linker(*d.kg);
  for (EntityId i = 0; i < 10; ++i) {
    d.train.push_back(make_conversation(i + 1,
                                        {{Speaker::Seeker, "i am in a " + at(10 + i) + " mood tonight"},
                                         {Speaker::Recommender, replies[static_cast<std::size_t>(i)]}},
                                        linker));
  }
  return d;
}

ToyData grad_instance(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 104));
  std::vector<Entity> entities{
      {0, "alpha", true, "a quiet film about trains"},
      {1, "beta", true, "loud war film"},
      {2, "gamma", true, "space opera"},
      {3, "delta", true, ""},
      {4, "drama", false, "drama genre"},
      {5, "space", false, "outer space"},
  };
  std::vector<Triple> triples{{0, 0, 4}, {1, 0, 4}, {2, 0, 5}, {3, 0, 5}, {4, 1, 0}, {5, 1, 2}, {5, 1, 3}};
  ToyData d;
  d.kg = std::make_shared<const KnowledgeGraph>(
      KnowledgeGraph::build(std::move(entities), {"genre", "genre_of"}, std::move(triples)));
  const EntityLinker linker(*d.kg);
  const std::array<std::string, 2> hellos{"hello there", "hi"};
  d.train.push_back(make_conversation(1,
                                      {{Speaker::Seeker, pick(hellos, rng) + " , i like @4 films"},
                                       {Speaker::Recommender, "have you seen @0 ?"},
                                       {Speaker::Seeker, "yes , and @1 too"},
                                       {Speaker::Recommender, "nice , what else ?"}},
                                      linker));
  d.train.push_back(make_conversation(2,
                                      {{Speaker::Seeker, "something set in @5 please"},
                                       {Speaker::Recommender, "@2 or @3 then"}},
                                      linker));
  d.train.push_back(make_conversation(3,
                                      {{Speaker::Seeker, "i loved @2 and @0"},
                                       {Speaker::Recommender, "then @3 is next"}},
                                      linker));
  return d;
}

Config tiny_config() {
  Config c;
  c.d_tok = 8;
  c.d_ff = 8;
  c.d_0 = 4;
  c.rgcn_layers = 2;
  c.d_attn = 4;
  c.cap_P = 8;
  c.max_ctx_len = 32;
  c.hist_blocks = 1;
  c.heads = 2;
  c.gen_d_model = 8;
  c.gen_d_ff = 8;
  c.gen_blocks = 2;
  c.gen_heads = 2;
  c.max_gen_len = 16;
  c.k_neg = 2;
  c.tau = 0.5;
  c.val_fraction = 0.0;
  return c;
}

}  // namespace kerl::toy
