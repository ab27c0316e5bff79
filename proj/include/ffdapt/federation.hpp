#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ffdapt/corpus.hpp"
#include "ffdapt/model.hpp"
#include "ffdapt/partition.hpp"
#include "ffdapt/schedule.hpp"

namespace ffdapt {

enum class Mode { Centralized, Fdapt, Ffdapt };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

// Client fan-out strategy within a round. Results are independent of the
// choice; aggregation always reduces in client order.
enum class ExecutionOrder { Parallel, SerialForward, SerialReverse };

struct ModelConfig {
  int num_groups = 6;
  int hidden_dim = 64;
  int vocab_size = 2000;
  int min_freq = 1;
  std::uint64_t init_seed = 3;

  bool operator==(const ModelConfig&) const = default;
};

struct FederationConfig {
  Mode mode = Mode::Fdapt;
  int num_clients = 2;
  int rounds = 20;
  ScheduleParams schedule;  // FFDAPT only; sample_counts must match the manifest
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  int eval_every = 5;
  double holdout_fraction = 0.1;  // trailing share of the corpus held out for eval
  std::uint64_t master_seed = 1234;
  ExecutionOrder execution = ExecutionOrder::Parallel;

  bool operator==(const FederationConfig&) const = default;
};

struct ClientRecord {
  int client = 0;  // 1-based
  double wall_time = 0.0;
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
  double mean_loss = 0.0;
  std::vector<int> frozen;  // sorted group indices
};

struct RoundRecord {
  int round = 0;  // 1-based
  std::vector<ClientRecord> clients;
  double wall_max = 0.0;  // parallel-deployment round time
  double wall_sum = 0.0;  // serial compute time; basis for efficiency reports
  std::optional<double> eval_loss;

  std::uint64_t backward_flops_total() const;
};

struct ExperimentResult {
  FederationConfig config;
  PartitionManifest manifest;
  std::uint64_t corpus_fingerprint = 0;
  std::vector<RoundRecord> rounds;
  LayeredLm final_model;           // empty when reloaded from disk
  std::string checkpoint_path;
  double final_eval_loss = 0.0;
  double final_perplexity = 0.0;

  std::uint64_t total_backward_flops() const;
  double mean_round_wall() const;  // serial-sum basis
};

// Sample-count-weighted mean of the client models, reduced in client order
// with compensated accumulation so that averaging identical models is a
// bit-exact identity.
LayeredLm fedavg_aggregate(const std::vector<LayeredLm>& models,
                           const std::vector<std::int64_t>& sample_counts);

// Per-client RNG stream id; adding clients or rounds never perturbs others.
std::uint64_t client_seed(std::uint64_t master_seed, int round, int client);

std::uint64_t corpus_fingerprint(const Corpus& corpus);

struct RoundOutcome {
  LayeredLm model;
  RoundRecord record;
};

// One FedAvg round: broadcast, local training under plan_row masks, weighted
// aggregation. plan_row holds one frozen set per client (all empty in FDAPT).
RoundOutcome run_round(const LayeredLm& global, const std::vector<std::vector<const Document*>>& shards,
                       const std::vector<std::int64_t>& sample_counts, const Vocabulary& vocab,
                       const std::vector<std::vector<int>>& plan_row, const FederationConfig& config,
                       int round);

ExperimentResult run_experiment(const FederationConfig& config, const Corpus& corpus,
                                const PartitionManifest& manifest,
                                const std::function<void(const RoundRecord&)>& on_round = {});

std::string round_record_to_json(const RoundRecord& record);
RoundRecord round_record_from_json(const std::string& line);

// Everything except the model weights; rounds live in a JSONL side file.
std::string experiment_summary_to_json(const ExperimentResult& result);
ExperimentResult experiment_summary_from_json(const std::string& text);

}  // namespace ffdapt
