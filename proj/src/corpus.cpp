#include "ffdapt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ffdapt/errors.hpp"

namespace ffdapt {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0, end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

std::int64_t Corpus::total_tokens() const {
  std::int64_t n = 0;
  for (const auto& doc : docs) n += static_cast<std::int64_t>(doc.tokens.size());
  return n;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> sentences;
  std::string current;
  for (char c : text) {
    if (is_terminator(c)) {
      std::string fragment = trim(current);
      if (!fragment.empty()) sentences.push_back(std::move(fragment));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  std::string tail = trim(current);
  if (!tail.empty()) sentences.push_back(std::move(tail));
  return sentences;
}

std::vector<std::string> tokenize(const std::string& sentence) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  };
  for (char c : sentence) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return tokens;
}

Document make_document(std::string id, std::string text) {
  Document doc;
  doc.id = std::move(id);
  doc.text = std::move(text);
  for (const auto& sentence : split_sentences(doc.text)) {
    std::vector<std::string> toks = tokenize(sentence);
    if (toks.empty()) continue;
    doc.sentence_lengths.push_back(static_cast<int>(toks.size()));
    doc.tokens.insert(doc.tokens.end(), std::make_move_iterator(toks.begin()),
                      std::make_move_iterator(toks.end()));
  }
  return doc;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);

  Corpus corpus;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("malformed corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("text") ||
        !obj["id"].is_string() || !obj["text"].is_string()) {
      throw IoError("malformed corpus line " + std::to_string(line_no) +
                    ": expected object with string fields \"id\" and \"text\"");
    }
    std::string id = obj["id"].get<std::string>();
    if (!seen_ids.insert(id).second) throw IoError("duplicate document id: " + id);
    corpus.docs.push_back(make_document(std::move(id), obj["text"].get<std::string>()));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const auto& doc : corpus.docs) {
    nlohmann::json obj{{"id", doc.id}, {"text", doc.text}};
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

Vocabulary build_vocab(const Corpus& corpus, int max_size, int min_freq) {
  if (max_size < Vocabulary::kNumSpecials + 1)
    throw ConfigError("build_vocab: max_size must be at least 4");
  if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be at least 1");
  if (corpus.docs.empty()) throw ConfigError("build_vocab: empty corpus");

  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& doc : corpus.docs)
    for (const auto& tok : doc.tokens) ++freq[tok];

  std::vector<std::pair<std::string, std::int64_t>> ranked;
  ranked.reserve(freq.size());
  for (auto& kv : freq)
    if (kv.second >= min_freq) ranked.emplace_back(kv.first, kv.second);
  // Most frequent first; ties lexicographically ascending.
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.id_to_token = {"<pad>", "<unk>", "<mask>"};
  const std::size_t room = static_cast<std::size_t>(max_size - Vocabulary::kNumSpecials);
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i)
    vocab.id_to_token.push_back(ranked[i].first);
  for (int id = 0; id < static_cast<int>(vocab.id_to_token.size()); ++id)
    vocab.token_to_id.emplace(vocab.id_to_token[id], id);
  return vocab;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary: " + path);
  out << nlohmann::json{{"tokens", vocab.id_to_token}}.dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path);
  nlohmann::json obj;
  try {
    in >> obj;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("vocabulary parse error in " + path + ": " + e.what());
  }
  Vocabulary vocab;
  vocab.id_to_token = obj.at("tokens").get<std::vector<std::string>>();
  if (vocab.id_to_token.size() < Vocabulary::kNumSpecials)
    throw IoError("vocabulary in " + path + " is missing the special tokens");
  for (int id = 0; id < vocab.size(); ++id)
    vocab.token_to_id.emplace(vocab.id_to_token[static_cast<std::size_t>(id)], id);
  return vocab;
}

CorpusStats corpus_stats(const std::vector<const Document*>& docs) {
  CorpusStats stats;
  stats.doc_count = static_cast<std::int64_t>(docs.size());
  std::int64_t total_tokens = 0;
  std::int64_t total_sentences = 0;
  std::unordered_set<std::string> types;
  for (const Document* doc : docs) {
    total_tokens += static_cast<std::int64_t>(doc->tokens.size());
    total_sentences += static_cast<std::int64_t>(doc->sentence_lengths.size());
    types.insert(doc->tokens.begin(), doc->tokens.end());
  }
  stats.mean_sentence_length =
      total_sentences == 0 ? 0.0 : static_cast<double>(total_tokens) / static_cast<double>(total_sentences);
  stats.unique_word_count = static_cast<std::int64_t>(types.size());
  return stats;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  std::vector<const Document*> docs;
  docs.reserve(corpus.docs.size());
  for (const auto& doc : corpus.docs) docs.push_back(&doc);
  return corpus_stats(docs);
}

MlmBatch make_mlm_batch(const std::vector<const Document*>& shard, const Vocabulary& vocab,
                        Rng& rng, int batch_size, int context_radius,
                        const MlmCorruption& corruption) {
  if (corruption.mask_rate <= 0.0 || corruption.mask_rate >= 1.0)
    throw ConfigError("make_mlm_batch: mask_rate must lie in (0,1)");
  if (batch_size < 1) throw ConfigError("make_mlm_batch: batch_size must be positive");
  if (context_radius < 0) throw ConfigError("make_mlm_batch: context_radius must be non-negative");

  // Cumulative token counts let us draw a position uniformly over the shard.
  std::vector<std::int64_t> cumulative;
  cumulative.reserve(shard.size());
  std::int64_t total = 0;
  for (const Document* doc : shard) {
    total += static_cast<std::int64_t>(doc->tokens.size());
    cumulative.push_back(total);
  }
  if (total == 0) throw ConfigError("make_mlm_batch: shard holds no tokens");

  const int window = 2 * context_radius + 1;
  MlmBatch batch;
  batch.input_ids.resize(batch_size, window);
  batch.target_ids.resize(batch_size);
  batch.mask_meta.resize(static_cast<std::size_t>(batch_size));

  for (int b = 0; b < batch_size; ++b) {
    const std::int64_t flat = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(total)));
    const std::size_t doc_idx = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), flat) - cumulative.begin());
    const Document& doc = *shard[doc_idx];
    const std::int64_t base = doc_idx == 0 ? 0 : cumulative[doc_idx - 1];
    const int pos = static_cast<int>(flat - base);

    for (int offset = -context_radius; offset <= context_radius; ++offset) {
      const int p = pos + offset;
      int id = Vocabulary::kPad;
      if (p >= 0 && p < static_cast<int>(doc.tokens.size())) id = vocab.lookup(doc.tokens[static_cast<std::size_t>(p)]);
      batch.input_ids(b, offset + context_radius) = id;
    }

    const int original = vocab.lookup(doc.tokens[static_cast<std::size_t>(pos)]);
    batch.target_ids(b) = original;

    const double u = rng.next_double();
    int center;
    Corruption branch;
    if (u < corruption.mask_prob) {
      center = Vocabulary::kMask;
      branch = Corruption::Mask;
    } else if (u < corruption.mask_prob + corruption.random_prob) {
      // Uniform over non-special ids; falls back to the original when the
      // vocabulary holds nothing but specials.
      const int pool = vocab.size() - Vocabulary::kNumSpecials;
      center = pool > 0
                   ? Vocabulary::kNumSpecials + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(pool)))
                   : original;
      branch = Corruption::Random;
    } else {
      center = original;
      branch = Corruption::Keep;
    }
    batch.input_ids(b, context_radius) = center;
    batch.mask_meta[static_cast<std::size_t>(b)] = branch;
  }
  return batch;
}

Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.docs < 1 || spec.sentences_min < 1 || spec.sentence_len_min < 1 ||
      spec.common_vocab < 1 || spec.topic_count < 1 || spec.topic_vocab < 1)
    throw ConfigError("synth_corpus: generator parameters must be positive");
  if (spec.sentences_max < spec.sentences_min || spec.sentence_len_max < spec.sentence_len_min ||
      spec.rare_uniques_max < spec.rare_uniques_min || spec.rare_uniques_min < 0)
    throw ConfigError("synth_corpus: empty parameter range");
  if (spec.topic_fraction < 0.0 || spec.topic_fraction > 1.0)
    throw ConfigError("synth_corpus: topic_fraction must lie in [0,1]");

  Rng rng(seed);
  Corpus corpus;
  corpus.docs.reserve(static_cast<std::size_t>(spec.docs));

  const int id_width = static_cast<int>(std::to_string(spec.docs - 1).size());
  for (int d = 0; d < spec.docs; ++d) {
    const int sentences = static_cast<int>(rng.next_range(spec.sentences_min, spec.sentences_max));
    const int sentence_len = static_cast<int>(rng.next_range(spec.sentence_len_min, spec.sentence_len_max));
    const int topic = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.topic_count)));
    const int rare_uniques = static_cast<int>(rng.next_range(spec.rare_uniques_min, spec.rare_uniques_max));

    std::vector<std::string> words;
    words.reserve(static_cast<std::size_t>(sentences * sentence_len));
    for (int i = 0; i < sentences * sentence_len; ++i) {
      if (rng.next_double() < spec.topic_fraction) {
        words.push_back("t" + std::to_string(topic) + "x" +
                        std::to_string(rng.next_below(static_cast<std::uint64_t>(spec.topic_vocab))));
      } else {
        words.push_back("w" + std::to_string(rng.next_below(static_cast<std::uint64_t>(spec.common_vocab))));
      }
    }
    // One-off tokens that exist nowhere else in the corpus; they drive the
    // per-document unique-word count without touching sentence length.
    if (rare_uniques > 0) {
      std::vector<std::size_t> slots(words.size());
      for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
      rng.shuffle(slots);
      for (int j = 0; j < rare_uniques && j < static_cast<int>(words.size()); ++j)
        words[slots[static_cast<std::size_t>(j)]] = "u" + std::to_string(d) + "x" + std::to_string(j);
    }

    std::string doc_number = std::to_string(d);
    std::string text;
    for (int s = 0; s < sentences; ++s) {
      for (int i = 0; i < sentence_len; ++i) {
        text += words[static_cast<std::size_t>(s * sentence_len + i)];
        text += i + 1 < sentence_len ? " " : "";
      }
      text += ". ";
    }
    corpus.docs.push_back(make_document(
        "d" + std::string(static_cast<std::size_t>(id_width) - doc_number.size(), '0') + doc_number,
        trim(text)));
  }
  return corpus;
}

}  // namespace ffdapt
