#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ffdapt/corpus.hpp"

namespace ffdapt {

// N freezable parameter groups: group 1 is the embedding table, groups
// 2..N-1 are residual tanh blocks, group N is the output projection.
// Everything is double precision so aggregation tests can demand bit
// equality.
struct LayeredLm {
  struct HiddenBlock {
    Eigen::MatrixXd weight;  // d x d
    Eigen::VectorXd bias;    // d
  };

  int num_groups = 0;  // N >= 3
  int hidden_dim = 0;  // d
  int vocab_size = 0;  // V

  Eigen::MatrixXd embedding;        // V x d, group 1
  std::vector<HiddenBlock> blocks;  // groups 2..N-1
  Eigen::MatrixXd out_weight;       // V x d, group N
  Eigen::VectorXd out_bias;         // V

  std::int64_t parameter_count() const;
};

// Frozen groups, 1-based like the schedule. Never all N at once.
class FreezeMask {
 public:
  FreezeMask() = default;
  static FreezeMask none(int num_groups);
  static FreezeMask from_indices(int num_groups, const std::vector<int>& groups);

  bool frozen(int group) const { return flags_[static_cast<std::size_t>(group - 1)] != 0; }
  int num_groups() const { return static_cast<int>(flags_.size()); }
  int count() const;
  bool any() const { return count() > 0; }
  std::vector<int> indices() const;  // sorted ascending, 1-based

  bool operator==(const FreezeMask&) const = default;

 private:
  std::vector<std::uint8_t> flags_;
};

struct Gradients {
  Eigen::MatrixXd embedding;
  std::vector<LayeredLm::HiddenBlock> blocks;
  Eigen::MatrixXd out_weight;
  Eigen::VectorXd out_bias;

  static Gradients zeros_like(const LayeredLm& model);
};

struct TrainConfig {
  double learning_rate = 0.05;
  int local_epochs = 1;
  int batch_size = 32;
  int steps_per_epoch = 30;
  double mask_rate = 0.15;
  int context_radius = 8;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

struct EvalConfig {
  int batches = 16;
  int batch_size = 64;
  int context_radius = 8;
  double mask_rate = 0.15;
  std::uint64_t seed = 97;

  bool operator==(const EvalConfig&) const = default;
};

struct LocalTrainStats {
  double wall_time = 0.0;  // seconds
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
  double mean_loss = 0.0;
  int steps = 0;
};

struct FlopCount {
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
};

// Activations retained for the backward pass, plus the loss.
struct ForwardCache {
  Eigen::MatrixXi input_ids;
  Eigen::VectorXi target_ids;
  Eigen::VectorXd context_counts;        // non-PAD tokens per example
  std::vector<Eigen::MatrixXd> h;        // h[0] = pooled embeddings, h[j] after block j; d x B
  std::vector<Eigen::MatrixXd> tanh_out; // per block, d x B
  Eigen::MatrixXd probs;                 // V x B
  double loss = 0.0;
  std::uint64_t flops = 0;
};

struct Backprop {
  Gradients grads;
  std::uint64_t flops = 0;
};

LayeredLm init_model(int num_groups, int hidden_dim, int vocab_size, std::uint64_t seed);

ForwardCache forward(const LayeredLm& model, const MlmBatch& batch);

// Exact reverse-mode gradients. Frozen groups are skipped, not zeroed after
// the fact; activation gradients still flow through them.
Backprop backward(const LayeredLm& model, const ForwardCache& cache, const FreezeMask& mask);

void apply_update(LayeredLm& model, const Gradients& grads, const FreezeMask& mask,
                  double learning_rate);

LocalTrainStats train_local(LayeredLm& model, const std::vector<const Document*>& shard,
                            const Vocabulary& vocab, const FreezeMask& mask,
                            const TrainConfig& config);

// (mean loss, perplexity) under deterministic masking from the eval seed.
std::pair<double, double> eval_loss(const LayeredLm& model, const std::vector<const Document*>& heldout,
                                    const Vocabulary& vocab, const EvalConfig& config);

// Closed-form multiply-add counts for the same network; the backward count
// drops the parameter-gradient terms of frozen groups but keeps the
// activation pass-through of frozen hidden blocks.
FlopCount flops_estimate(int num_groups, int hidden_dim, int vocab_size, int context_radius,
                         const FreezeMask& mask, int batch_size, std::int64_t steps);

// Canonical parameter order: embedding, blocks (weight then bias), output
// projection then bias; matrices row-major.
Eigen::VectorXd flatten(const LayeredLm& model);
void unflatten(const Eigen::VectorXd& params, LayeredLm& model);

// Checkpoint format: "FFDL", version, N, d, V as little-endian u32, then the
// flattened parameters as little-endian doubles. Byte-identical across
// platforms.
std::string model_to_bytes(const LayeredLm& model);
LayeredLm model_from_bytes(const std::string& bytes);
void save_model(const LayeredLm& model, const std::string& path);
LayeredLm load_model(const std::string& path);

}  // namespace ffdapt
