#pragma once

#include <cstdint>
#include <string>

#include "ffdapt/corpus.hpp"
#include "ffdapt/federation.hpp"
#include "ffdapt/partition.hpp"

namespace ffdapt {

// Sectioned plain-text experiment description. Parsing rejects unknown
// sections and keys; serialization materializes every field, so
// parse → serialize → parse is the identity and written configs are
// self-describing.
struct ExperimentConfigFile {
  // [corpus]
  std::string corpus_source = "synth";  // synth | file
  std::string corpus_path;              // used when source = file
  SynthSpec synth;
  std::uint64_t corpus_seed = 1;
  double holdout_fraction = 0.1;

  // [partition]
  SkewKind partition_kind = SkewKind::Iid;
  double skew_factor = 3.0;
  std::int64_t rare_threshold = 2;
  std::uint64_t partition_seed = 7;

  // [model]
  ModelConfig model;
  int context_radius = 8;

  // [schedule]
  int max_frozen = 5;
  double gamma = 1.0;
  bool literal_pseudocode = false;

  // [federation]
  Mode mode = Mode::Fdapt;
  int clients = 2;
  int rounds = 20;
  int local_epochs = 1;
  int steps_per_epoch = 30;
  int batch_size = 32;
  double learning_rate = 0.05;
  double mask_rate = 0.15;
  int eval_every = 5;
  int eval_batches = 16;
  int eval_batch_size = 64;
  std::uint64_t eval_seed = 97;
  std::uint64_t master_seed = 1234;

  // [output]
  std::string out_dir = "out";

  bool operator==(const ExperimentConfigFile&) const = default;

  // Assembled federation config; schedule sample counts are filled from the
  // manifest by the caller once the partition exists.
  FederationConfig federation_config() const;
};

ExperimentConfigFile parse_config(const std::string& text);
ExperimentConfigFile load_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfigFile& config);

}  // namespace ffdapt
