#include <doctest.h>

#include <algorithm>
#include <set>
#include <unordered_set>

#include "ffdapt/corpus.hpp"
#include "ffdapt/errors.hpp"
#include "test_util.hpp"

using namespace ffdapt;

namespace {

Corpus corpus_of(const std::vector<std::string>& texts) {
  Corpus corpus;
  for (std::size_t i = 0; i < texts.size(); ++i)
    corpus.docs.push_back(make_document("d" + std::to_string(i), texts[i]));
  return corpus;
}

std::vector<const Document*> all_docs(const Corpus& corpus) {
  std::vector<const Document*> out;
  for (const auto& doc : corpus.docs) out.push_back(&doc);
  return out;
}

}  // namespace

TEST_CASE("split_sentences on terminators, dropping empty fragments") {
  CHECK(split_sentences("a b c. d e.") == std::vector<std::string>{"a b c", "d e"});
  CHECK(split_sentences("").empty());
  CHECK(split_sentences("x! y? z") == std::vector<std::string>{"x", "y", "z"});
  CHECK(split_sentences("...").empty());
  CHECK(split_sentences("one.. two") == std::vector<std::string>{"one", "two"});
}

TEST_CASE("tokenize lowercases and splits on whitespace") {
  CHECK(tokenize("A b  c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(tokenize(" ").empty());
  CHECK(tokenize("Gene-disease GAD") == std::vector<std::string>{"gene-disease", "gad"});
  CHECK(tokenize("a\tb\nc") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("make_document keeps sentence structure consistent") {
  const Document doc = make_document("x", "First one here. Second!   ");
  CHECK(doc.tokens == std::vector<std::string>{"first", "one", "here", "second"});
  CHECK(doc.sentence_lengths == std::vector<int>{3, 1});
  int total = 0;
  for (int len : doc.sentence_lengths) {
    CHECK(len > 0);
    total += len;
  }
  CHECK(total == static_cast<int>(doc.tokens.size()));

  // Re-tokenizing the same text is idempotent.
  const Document again = make_document("x", doc.text);
  CHECK(again.tokens == doc.tokens);
  CHECK(again.sentence_lengths == doc.sentence_lengths);
}

TEST_CASE("load_corpus reads JSON lines in order") {
  testutil::TempDir tmp;
  testutil::write_file(tmp.file("c.jsonl"),
                       "{\"id\":\"a\",\"text\":\"Hello there. Bye.\"}\n"
                       "\n"
                       "{\"id\":\"b\",\"text\":\"Second doc!\"}\n");
  const Corpus corpus = load_corpus(tmp.file("c.jsonl"));
  REQUIRE(corpus.docs.size() == 2);
  CHECK(corpus.docs[0].id == "a");
  CHECK(corpus.docs[1].id == "b");
  CHECK(corpus.docs[0].tokens == std::vector<std::string>{"hello", "there", "bye"});
}

TEST_CASE("load_corpus names the offending line or id") {
  testutil::TempDir tmp;
  testutil::write_file(tmp.file("bad.jsonl"),
                       "{\"id\":\"a\",\"text\":\"ok.\"}\n"
                       "{not json\n");
  CHECK_THROWS_WITH_AS(load_corpus(tmp.file("bad.jsonl")),
                       doctest::Contains("line 2"), IoError);

  testutil::write_file(tmp.file("dup.jsonl"),
                       "{\"id\":\"a\",\"text\":\"x.\"}\n"
                       "{\"id\":\"a\",\"text\":\"y.\"}\n");
  CHECK_THROWS_WITH_AS(load_corpus(tmp.file("dup.jsonl")),
                       doctest::Contains("duplicate document id: a"), IoError);

  testutil::write_file(tmp.file("fields.jsonl"), "{\"id\":\"a\"}\n");
  CHECK_THROWS_AS(load_corpus(tmp.file("fields.jsonl")), IoError);
}

TEST_CASE("corpus save/load round-trips documents") {
  const Corpus corpus = synth_corpus({.docs = 20, .rare_uniques_min = 1, .rare_uniques_max = 3}, 11);
  testutil::TempDir tmp;
  save_corpus(corpus, tmp.file("c.jsonl"));
  const Corpus reloaded = load_corpus(tmp.file("c.jsonl"));
  REQUIRE(reloaded.docs.size() == corpus.docs.size());
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    CHECK(reloaded.docs[i].id == corpus.docs[i].id);
    CHECK(reloaded.docs[i].text == corpus.docs[i].text);
    CHECK(reloaded.docs[i].tokens == corpus.docs[i].tokens);
    CHECK(reloaded.docs[i].sentence_lengths == corpus.docs[i].sentence_lengths);
  }
}

TEST_CASE("build_vocab keeps the most frequent tokens") {
  SUBCASE("specials plus both tokens") {
    const Vocabulary vocab = build_vocab(corpus_of({"a a b"}), 5, 1);
    CHECK(vocab.id_to_token == std::vector<std::string>{"<pad>", "<unk>", "<mask>", "a", "b"});
  }
  SUBCASE("frequency filter leaves specials only") {
    const Vocabulary vocab = build_vocab(corpus_of({"a b"}), 10, 2);
    CHECK(vocab.size() == Vocabulary::kNumSpecials);
  }
  SUBCASE("frequency tie broken lexicographically") {
    const Vocabulary vocab = build_vocab(corpus_of({"a a b b"}), 4, 1);
    CHECK(vocab.id_to_token.back() == "a");
  }
  SUBCASE("ids are contiguous and bijective") {
    const Vocabulary vocab = build_vocab(corpus_of({"x y z y z z"}), 100, 1);
    CHECK(vocab.size() == 6);
    for (int id = 0; id < vocab.size(); ++id)
      CHECK(vocab.token_to_id.at(vocab.id_to_token[static_cast<std::size_t>(id)]) == id);
    CHECK(vocab.id_to_token[3] == "z");  // frequency 3
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_vocab(Corpus{}, 10, 1), ConfigError);
    CHECK_THROWS_AS(build_vocab(corpus_of({"a"}), 3, 1), ConfigError);
    CHECK_THROWS_AS(build_vocab(corpus_of({"a"}), 10, 0), ConfigError);
  }
}

TEST_CASE("corpus_stats counts tokens, sentences and types") {
  const Corpus one = corpus_of({"a b c. d e."});
  const CorpusStats stats = corpus_stats(all_docs(one));
  CHECK(stats.doc_count == 1);
  CHECK(stats.mean_sentence_length == doctest::Approx(2.5));
  CHECK(stats.unique_word_count == 5);

  CHECK(corpus_stats(std::vector<const Document*>{}) == CorpusStats{});

  const Corpus repeats = corpus_of({"a b a c"});
  CHECK(corpus_stats(all_docs(repeats)).unique_word_count == 3);
}

TEST_CASE("corpus_stats is additive over disjoint shard families") {
  const Corpus corpus = synth_corpus({.docs = 60, .rare_uniques_min = 0, .rare_uniques_max = 4}, 5);
  Rng rng(99);
  std::vector<const Document*> pool = all_docs(corpus);
  rng.shuffle(pool);

  std::vector<std::vector<const Document*>> family(3);
  for (std::size_t i = 0; i < pool.size(); ++i) family[i % 3].push_back(pool[i]);

  std::int64_t doc_total = 0;
  std::unordered_set<std::string> union_types;
  for (const auto& shard : family) {
    doc_total += corpus_stats(shard).doc_count;
    for (const Document* doc : shard) union_types.insert(doc->tokens.begin(), doc->tokens.end());
  }
  const CorpusStats full = corpus_stats(corpus);
  CHECK(doc_total == full.doc_count);
  CHECK(static_cast<std::int64_t>(union_types.size()) == full.unique_word_count);
}

TEST_CASE("make_mlm_batch corruption branches stay near 80/10/10") {
  const Corpus corpus = synth_corpus({.docs = 30}, 7);
  const Vocabulary vocab = build_vocab(corpus, 500, 1);
  Rng rng(123);
  const int draws = 100000;
  const MlmBatch batch = make_mlm_batch(all_docs(corpus), vocab, rng, draws, 4);

  int mask = 0, random = 0, keep = 0;
  for (int b = 0; b < draws; ++b) {
    switch (batch.mask_meta[static_cast<std::size_t>(b)]) {
      case Corruption::Mask:
        ++mask;
        CHECK(batch.input_ids(b, 4) == Vocabulary::kMask);
        break;
      case Corruption::Random:
        ++random;
        CHECK(batch.input_ids(b, 4) >= Vocabulary::kNumSpecials);
        break;
      case Corruption::Keep:
        ++keep;
        CHECK(batch.input_ids(b, 4) == batch.target_ids(b));
        break;
    }
  }
  CHECK(std::abs(mask - 80000) <= 1000);
  CHECK(std::abs(random - 10000) <= 1000);
  CHECK(std::abs(keep - 10000) <= 1000);
}

TEST_CASE("make_mlm_batch windows, determinism and errors") {
  const Corpus corpus = corpus_of({"alpha beta gamma."});
  Vocabulary vocab = build_vocab(corpus, 10, 1);

  SUBCASE("PAD beyond document boundary, UNK for out-of-vocab context") {
    // Rebuild a vocab that misses "gamma", so it must map to UNK in context.
    const Vocabulary small = build_vocab(corpus_of({"alpha alpha beta beta gamma."}), 5, 2);
    CHECK(small.lookup("gamma") == Vocabulary::kUnk);
    Rng rng(1);
    const MlmBatch batch = make_mlm_batch(all_docs(corpus), small, rng, 64, 3);
    bool saw_pad = false, saw_unk = false;
    for (int b = 0; b < batch.batch_size(); ++b) {
      for (int j = 0; j < batch.window(); ++j) {
        if (batch.input_ids(b, j) == Vocabulary::kPad) saw_pad = true;
        if (j != 3 && batch.input_ids(b, j) == Vocabulary::kUnk) saw_unk = true;
      }
    }
    CHECK(saw_pad);  // 3-token doc, radius 3
    CHECK(saw_unk);
  }

  SUBCASE("same stream state gives identical batches") {
    Rng a(42), b(42);
    const MlmBatch first = make_mlm_batch(all_docs(corpus), vocab, a, 16, 2);
    const MlmBatch second = make_mlm_batch(all_docs(corpus), vocab, b, 16, 2);
    CHECK(first.input_ids == second.input_ids);
    CHECK(first.target_ids == second.target_ids);
    CHECK(first.mask_meta == second.mask_meta);
  }

  SUBCASE("empty shard and bad mask_rate are rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(make_mlm_batch({}, vocab, rng, 4, 2), ConfigError);
    MlmCorruption bad;
    bad.mask_rate = 0.0;
    CHECK_THROWS_AS(make_mlm_batch(all_docs(corpus), vocab, rng, 4, 2, bad), ConfigError);
    bad.mask_rate = 1.0;
    CHECK_THROWS_AS(make_mlm_batch(all_docs(corpus), vocab, rng, 4, 2, bad), ConfigError);
  }
}

TEST_CASE("synth_corpus is reproducible and controllable") {
  SynthSpec spec;
  spec.docs = 40;
  spec.sentence_len_min = 3;
  spec.sentence_len_max = 15;
  spec.rare_uniques_min = 0;
  spec.rare_uniques_max = 5;

  const Corpus a = synth_corpus(spec, 21);
  const Corpus b = synth_corpus(spec, 21);
  const Corpus c = synth_corpus(spec, 22);
  REQUIRE(a.docs.size() == 40);
  bool all_equal = a.docs.size() == b.docs.size();
  bool any_diff = false;
  for (std::size_t i = 0; i < a.docs.size(); ++i) {
    all_equal = all_equal && a.docs[i].id == b.docs[i].id && a.docs[i].text == b.docs[i].text;
    any_diff = any_diff || a.docs[i].text != c.docs[i].text;
  }
  CHECK(all_equal);
  CHECK(any_diff);

  // Constant sentence length within each document.
  for (const auto& doc : a.docs) {
    REQUIRE(!doc.sentence_lengths.empty());
    const int len = doc.sentence_lengths.front();
    CHECK(len >= 3);
    CHECK(len <= 15);
  }

  CHECK_THROWS_AS(synth_corpus({.docs = 0}, 1), ConfigError);
  CHECK_THROWS_AS(synth_corpus({.sentences_min = 5, .sentences_max = 2}, 1), ConfigError);
}
