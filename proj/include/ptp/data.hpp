#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptp/rng.hpp"
#include "ptp/vocab.hpp"

namespace ptp {

/// One classification example: token ids (leading [CLS]) and a class index.
struct Example {
  std::vector<int> tokens;
  int label = 0;
};

struct TaskSizes {
  std::size_t train = 256;
  std::size_t dev = 64;
  std::size_t test = 128;
};

/// Everything a consumer needs to know about a generated task: the vocabulary,
/// the class count, and which words carry the signal (used by rule-based
/// baselines and by the word-swap tests).
struct TaskInfo {
  std::string name;
  int num_classes = 2;
  std::uint64_t seed = 0;
  std::size_t sentence_len = 20;
  Vocabulary vocab;
  std::vector<std::vector<int>> keyword_groups;  // token ids, one group per class (keyword) or {A, B} (xor)
  std::vector<int> distractors;                  // token ids never carrying label signal
};

struct DatasetSplit {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<Example> test;
  TaskInfo info;
};

namespace detail {

// Fixed pool of short lowercase words for the synthetic corpora.
inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> kWords = {
      "apple",  "baker",  "candle", "dusty",  "ember",  "fable",  "gable",  "haven",
      "ivory",  "jolly",  "kettle", "lemon",  "maple",  "noble",  "olive",  "petal",
      "quill",  "raven",  "stone",  "tulip",  "umber",  "velvet", "wafer",  "xenon",
      "yarrow", "zephyr", "amber",  "birch",  "cedar",  "delta",  "eagle",  "ferry",
      "grove",  "hazel",  "inlet",  "jade",   "knoll",  "lodge",  "mound",  "nectar",
      "oak",    "pine",   "quartz", "ridge",  "summit", "trail",  "upland", "vale",
      "willow", "yonder", "acorn",  "basil",  "clover", "daisy",  "elder",  "fennel",
      "ginger", "holly",  "iris",   "juniper","kale",   "laurel", "mint",   "nutmeg",
      "orchid", "poppy",  "reed",   "sage",   "thyme",  "umbra",  "violet", "wheat",
      "yam",    "zinnia", "anchor", "beacon", "cabin",  "dock",   "engine", "fathom",
      "galley", "harbor", "island", "jetty",  "keel",   "lantern","mast",   "north",
      "ocean",  "port",   "quay",   "rudder", "sail",   "tide",   "vessel", "wharf",
      "yacht",  "zenith", "arrow",  "bridge", "castle", "drum",   "east",   "flag",
      "gate",   "hill",   "inner",  "jewel",  "king",   "lance",  "moat",   "nave",
      "outer",  "plume",  "queen",  "rook",   "shield", "tower",  "under",  "vault",
      "wall",   "yoke",   "alder",  "brook",  "creek",  "dune",   "estate", "field",
      "glen",   "heath",  "isle",   "jungle", "kiln",   "lagoon", "meadow", "niche",
      "oasis",  "plain",  "quarry", "ravine", "shore",  "tundra", "valley", "woods",
      "yard",   "zone",   "atlas",  "brass",  "chalk",  "dime",   "easel",  "flint",
      "glass",  "hinge",  "ingot",  "jar",    "knob",   "ledger", "marble", "needle",
      "onyx",   "pewter", "quilt",  "rivet",  "slate",  "tin",    "urn",    "vellum",
      "wax",    "yew",    "ash",    "bell",   "cork",   "door",   "elm",    "fern",
      "gold",   "hemp",   "ink",    "jute",   "kelp",   "lime",   "moss",   "nail",
      "opal",   "pearl",  "quince", "rose",   "silk",   "teak",   "umbrella","vine",
      "walnut", "yarn",   "azure",  "bronze",
  };
  return kWords;
}

inline std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace detail

/// Vocabulary over the first `content_words` entries of the built-in pool.
inline Vocabulary make_task_vocabulary(std::size_t content_words = 196) {
  const auto& pool = detail::word_pool();
  if (content_words == 0 || content_words > pool.size())
    throw std::invalid_argument("make_task_vocabulary: content_words must be in [1, " +
                                std::to_string(pool.size()) + "]");
  return Vocabulary(std::vector<std::string>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(content_words)));
}

/// Whitespace tokenizer: lowercase, vocabulary lookup with [UNK] fallback,
/// leading [CLS].
inline std::vector<int> tokenize(const Vocabulary& vocab, const std::string& text) {
  std::vector<int> ids = {Vocabulary::kCls};
  std::istringstream in(text);
  std::string word;
  while (in >> word) ids.push_back(vocab.id_of(detail::to_lower(word)));
  return ids;
}

inline std::string detokenize(const Vocabulary& vocab, const std::vector<int>& ids, bool skip_cls = true) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (skip_cls && ids[i] == Vocabulary::kCls && i == 0) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token_of(ids[i]);
  }
  return out;
}

namespace detail {

struct TaskLayout {
  Vocabulary vocab;
  std::vector<std::vector<int>> groups;
  std::vector<int> distractors;
};

inline TaskLayout build_task_layout(std::uint64_t seed, std::size_t content_words, int num_groups,
                                    std::size_t group_size) {
  TaskLayout layout;
  layout.vocab = make_task_vocabulary(content_words);
  Rng rng = make_rng(seed, RngStream::kData);
  std::vector<int> content_ids;
  for (std::size_t i = Vocabulary::kNumReserved; i < layout.vocab.size(); ++i)
    content_ids.push_back(static_cast<int>(i));
  std::shuffle(content_ids.begin(), content_ids.end(), rng);
  const std::size_t needed = static_cast<std::size_t>(num_groups) * group_size;
  if (content_ids.size() < needed + 8)
    throw std::invalid_argument("task layout: vocabulary too small for keyword groups");
  std::size_t pos = 0;
  for (int g = 0; g < num_groups; ++g) {
    layout.groups.emplace_back(content_ids.begin() + static_cast<std::ptrdiff_t>(pos),
                               content_ids.begin() + static_cast<std::ptrdiff_t>(pos + group_size));
    pos += group_size;
  }
  layout.distractors.assign(content_ids.begin() + static_cast<std::ptrdiff_t>(pos), content_ids.end());
  return layout;
}

inline int pick(Rng& rng, const std::vector<int>& ids) { return ids[rand_index(rng, ids.size())]; }

// Balanced label sequence: each value in [0, k) appears floor(n/k) or
// ceil(n/k) times, order shuffled.
inline std::vector<int> balanced_labels(Rng& rng, std::size_t n, int k) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

inline Example make_keyword_example(Rng& rng, const TaskLayout& layout, const Vocabulary& vocab,
                                    std::size_t sentence_len, int label, int num_classes) {
  // Majority construction: the label group contributes k words, every other
  // group at most k-1, so counting keywords recovers the label exactly.
  const std::size_t k = 2 + rand_index(rng, 2);  // 2 or 3
  std::vector<int> body;
  for (std::size_t i = 0; i < k; ++i) body.push_back(pick(rng, layout.groups[static_cast<std::size_t>(label)]));
  for (int c = 0; c < num_classes; ++c) {
    if (c == label) continue;
    if (rand_index(rng, 2) == 0) body.push_back(pick(rng, layout.groups[static_cast<std::size_t>(c)]));
  }
  while (body.size() < sentence_len) body.push_back(pick(rng, layout.distractors));
  body.resize(sentence_len);
  std::shuffle(body.begin(), body.end(), rng);

  Example ex;
  ex.label = label;
  std::string text;
  for (int id : body) {
    if (!text.empty()) text += ' ';
    text += vocab.token_of(id);
  }
  ex.tokens = tokenize(vocab, text);
  return ex;
}

inline Example make_xor_example(Rng& rng, const TaskLayout& layout, const Vocabulary& vocab,
                                std::size_t sentence_len, int combo) {
  const bool has_a = (combo & 1) != 0;
  const bool has_b = (combo & 2) != 0;
  std::vector<int> body;
  if (has_a) {
    const std::size_t k = 1 + rand_index(rng, 2);
    for (std::size_t i = 0; i < k; ++i) body.push_back(pick(rng, layout.groups[0]));
  }
  if (has_b) {
    const std::size_t k = 1 + rand_index(rng, 2);
    for (std::size_t i = 0; i < k; ++i) body.push_back(pick(rng, layout.groups[1]));
  }
  while (body.size() < sentence_len) body.push_back(pick(rng, layout.distractors));
  body.resize(sentence_len);
  std::shuffle(body.begin(), body.end(), rng);

  Example ex;
  ex.label = (has_a != has_b) ? 1 : 0;
  std::string text;
  for (int id : body) {
    if (!text.empty()) text += ' ';
    text += vocab.token_of(id);
  }
  ex.tokens = tokenize(vocab, text);
  return ex;
}

inline void check_sizes(const TaskSizes& sizes) {
  if (sizes.train == 0 || sizes.dev == 0 || sizes.test == 0)
    throw std::invalid_argument("task sizes must be positive");
}

}  // namespace detail

/// Sentences over a ~200-word vocabulary where the label is the majority
/// keyword group; distractor words carry no signal. Deterministic from seed.
inline DatasetSplit gen_keyword_task(std::uint64_t seed, const TaskSizes& sizes, int num_classes = 2,
                                     std::size_t sentence_len = 20, std::size_t content_words = 196) {
  detail::check_sizes(sizes);
  if (num_classes < 2) throw std::invalid_argument("gen_keyword_task: need at least 2 classes");
  if (sentence_len < 6) throw std::invalid_argument("gen_keyword_task: sentence_len too small");
  auto layout = detail::build_task_layout(seed, content_words, num_classes, 5);

  DatasetSplit split;
  split.info = TaskInfo{"keyword", num_classes, seed, sentence_len, layout.vocab, layout.groups, layout.distractors};

  const std::size_t* counts[3] = {&sizes.train, &sizes.dev, &sizes.test};
  std::vector<Example>* dests[3] = {&split.train, &split.dev, &split.test};
  for (int part = 0; part < 3; ++part) {
    Rng rng = make_rng(seed, 100 + static_cast<std::uint64_t>(part));
    const auto labels = detail::balanced_labels(rng, *counts[part], num_classes);
    for (int y : labels)
      dests[part]->push_back(
          detail::make_keyword_example(rng, layout, layout.vocab, sentence_len, y, num_classes));
  }
  return split;
}

/// Control task: label = XOR of two keyword-group presences. Linear
/// bag-of-words models sit near chance; attention models can solve it.
inline DatasetSplit gen_xor_task(std::uint64_t seed, const TaskSizes& sizes, std::size_t sentence_len = 20,
                                 std::size_t content_words = 196) {
  detail::check_sizes(sizes);
  if (sentence_len < 6) throw std::invalid_argument("gen_xor_task: sentence_len too small");
  auto layout = detail::build_task_layout(seed, content_words, 2, 5);

  DatasetSplit split;
  split.info = TaskInfo{"xor", 2, seed, sentence_len, layout.vocab, layout.groups, layout.distractors};

  const std::size_t* counts[3] = {&sizes.train, &sizes.dev, &sizes.test};
  std::vector<Example>* dests[3] = {&split.train, &split.dev, &split.test};
  for (int part = 0; part < 3; ++part) {
    Rng rng = make_rng(seed, 200 + static_cast<std::uint64_t>(part));
    // Stratified over the four presence combos so classes stay balanced.
    const auto combos = detail::balanced_labels(rng, *counts[part], 4);
    for (int combo : combos)
      dests[part]->push_back(detail::make_xor_example(rng, layout, layout.vocab, sentence_len, combo));
  }
  return split;
}

/// Dispatch by task name ("keyword" or "xor").
inline DatasetSplit gen_task(const std::string& name, std::uint64_t seed, const TaskSizes& sizes,
                             int num_classes = 2, std::size_t sentence_len = 20,
                             std::size_t content_words = 196) {
  if (name == "keyword") return gen_keyword_task(seed, sizes, num_classes, sentence_len, content_words);
  if (name == "xor") return gen_xor_task(seed, sizes, sentence_len, content_words);
  throw std::invalid_argument("gen_task: unknown task '" + name + "'");
}

/// Counts keyword-group hits; predicts the majority group (ties -> lowest
/// class). Scores ~100% on keyword-task splits by construction.
inline int keyword_count_classify(const TaskInfo& info, const std::vector<int>& tokens) {
  std::vector<int> counts(static_cast<std::size_t>(info.num_classes), 0);
  for (int t : tokens)
    for (std::size_t g = 0; g < info.keyword_groups.size(); ++g)
      if (std::find(info.keyword_groups[g].begin(), info.keyword_groups[g].end(), t) !=
          info.keyword_groups[g].end())
        counts[g]++;
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace ptp
