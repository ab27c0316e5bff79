#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffdapt/corpus.hpp"

namespace ffdapt {

enum class SkewKind { Iid, Quantity, SentenceLength, Vocabulary };

std::string to_string(SkewKind kind);
SkewKind skew_kind_from_string(const std::string& name);

struct PartitionSpec {
  SkewKind kind = SkewKind::Iid;
  int num_clients = 2;
  double skew_factor = 3.0;  // target max/min ratio on the primary metric; ignored for IID
  std::uint64_t seed = 0;

  bool operator==(const PartitionSpec&) const = default;
};

struct PartitionManifest {
  PartitionSpec spec;
  std::vector<std::vector<std::string>> assignment;  // client k (0-based) → doc ids
  std::vector<CorpusStats> per_client_stats;

  int num_clients() const { return static_cast<int>(assignment.size()); }
  std::vector<std::int64_t> doc_counts() const;

  // Client shards as document pointers, in assignment order.
  std::vector<std::vector<const Document*>> shards(const Corpus& corpus) const;
};

struct MetricSkew {
  double cv = 0.0;     // population std / mean
  double ratio = 1.0;  // max / min (+inf when min == 0)
};

struct SkewReport {
  MetricSkew doc_count;
  MetricSkew mean_sentence_length;
  MetricSkew unique_word_count;
};

PartitionManifest partition_iid(const Corpus& corpus, int num_clients, std::uint64_t seed);
PartitionManifest partition_quantity_skew(const Corpus& corpus, const PartitionSpec& spec);
PartitionManifest partition_sentence_length_skew(const Corpus& corpus, const PartitionSpec& spec);
PartitionManifest partition_vocabulary_skew(const Corpus& corpus, const PartitionSpec& spec,
                                            std::int64_t rare_threshold = 2);

// Dispatches on spec.kind.
PartitionManifest partition(const Corpus& corpus, const PartitionSpec& spec,
                            std::int64_t rare_threshold = 2);

SkewReport measure_skew(const PartitionManifest& manifest);

// Every violation found, not just the first; empty means valid.
std::vector<std::string> validate_partition(const PartitionManifest& manifest, const Corpus& corpus);

// Geometric per-client document targets with max/min == skew_factor, rounded
// by largest remainder so they sum to total exactly. Client 0 gets the most.
std::vector<std::int64_t> quantity_targets(std::int64_t total, int num_clients, double skew_factor);

std::string manifest_to_json(const PartitionManifest& manifest);
PartitionManifest manifest_from_json(const std::string& text);

}  // namespace ffdapt
