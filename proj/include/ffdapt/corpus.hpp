#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ffdapt/rng.hpp"

namespace ffdapt {

struct Document {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;     // concatenated over sentences
  std::vector<int> sentence_lengths;   // tokens per sentence, all > 0
};

struct Corpus {
  std::vector<Document> docs;

  std::size_t size() const { return docs.size(); }
  std::int64_t total_tokens() const;
};

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kNumSpecials = 3;

  std::vector<std::string> id_to_token;  // contiguous ids 0..V-1, specials first
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }
};

struct CorpusStats {
  std::int64_t doc_count = 0;
  double mean_sentence_length = 0.0;  // total tokens / total sentences
  std::int64_t unique_word_count = 0; // distinct raw token types

  bool operator==(const CorpusStats&) const = default;
};

enum class Corruption : std::uint8_t { Mask, Random, Keep };

// One masked-prediction example per row: the center column holds the
// corrupted token, the rest is the surrounding context (PAD beyond the
// document boundary, UNK for out-of-vocab context tokens).
struct MlmBatch {
  Eigen::MatrixXi input_ids;          // B x (2c+1)
  Eigen::VectorXi target_ids;         // B, pre-corruption originals
  std::vector<Corruption> mask_meta;  // per-example branch taken

  int batch_size() const { return static_cast<int>(input_ids.rows()); }
  int window() const { return static_cast<int>(input_ids.cols()); }
};

struct MlmCorruption {
  double mask_prob = 0.8;    // center replaced by MASK
  double random_prob = 0.1;  // center replaced by a uniform non-special token
  double mask_rate = 0.15;   // fraction of positions treated as prediction
                             // sites; with one site per example it is carried
                             // for configuration only
};

// Generator parameters for reproducible synthetic corpora. Sentence length is
// constant within a document (drawn per document), so the per-document mean
// sentence length is exactly the draw; lexical diversity is controlled by a
// per-document count of globally unique filler tokens.
struct SynthSpec {
  int docs = 100;
  int sentences_min = 3;
  int sentences_max = 8;
  int sentence_len_min = 4;
  int sentence_len_max = 12;
  int common_vocab = 200;    // shared pool "w0".."w{C-1}"
  int topic_count = 4;       // pools "t{m}x{j}"
  int topic_vocab = 50;
  double topic_fraction = 0.3;
  int rare_uniques_min = 0;  // per-document one-off tokens "u{doc}x{j}"
  int rare_uniques_max = 0;

  bool operator==(const SynthSpec&) const = default;
};

std::vector<std::string> split_sentences(const std::string& text);
std::vector<std::string> tokenize(const std::string& sentence);

// Tokenizes and sentence-splits raw text into a Document.
Document make_document(std::string id, std::string text);

// JSON-lines file of {"id": ..., "text": ...}. Order preserved.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

Vocabulary build_vocab(const Corpus& corpus, int max_size, int min_freq);

// Vocabulary as a JSON token array in id order.
void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

CorpusStats corpus_stats(const std::vector<const Document*>& docs);
CorpusStats corpus_stats(const Corpus& corpus);

MlmBatch make_mlm_batch(const std::vector<const Document*>& shard, const Vocabulary& vocab,
                        Rng& rng, int batch_size, int context_radius,
                        const MlmCorruption& corruption = {});

Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed);

}  // namespace ffdapt
