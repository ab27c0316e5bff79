#include "ffdapt/model.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ffdapt/errors.hpp"
#include "ffdapt/rng.hpp"

namespace ffdapt {

namespace {

constexpr char kMagic[4] = {'F', 'F', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

void check_dims(int num_groups, int hidden_dim, int vocab_size) {
  if (num_groups < 3) throw std::invalid_argument("model: need at least 3 parameter groups");
  if (hidden_dim < 1) throw std::invalid_argument("model: hidden_dim must be positive");
  if (vocab_size < 4) throw std::invalid_argument("model: vocab_size must be at least 4");
}

// Row-major fill so the draw order is independent of Eigen's storage layout.
void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, Rng& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.next_double() * 0.1 - 0.05;
}

void write_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void write_f64(std::string& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& in, std::size_t& at) {
  if (at + 4 > in.size()) throw IoError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
  return v;
}

double read_f64(const std::string& in, std::size_t& at) {
  if (at + 8 > in.size()) throw IoError("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at++])) << (8 * i);
  return std::bit_cast<double>(bits);
}

template <typename Fn>
void for_each_matrix(LayeredLm& model, Fn&& fn) {
  fn(model.embedding);
  for (auto& block : model.blocks) {
    fn(block.weight);
    fn(block.bias);
  }
  fn(model.out_weight);
  fn(model.out_bias);
}

}  // namespace

std::int64_t LayeredLm::parameter_count() const {
  std::int64_t n = static_cast<std::int64_t>(vocab_size) * hidden_dim;              // embedding
  n += static_cast<std::int64_t>(blocks.size()) * (hidden_dim * hidden_dim + hidden_dim);
  n += static_cast<std::int64_t>(vocab_size) * hidden_dim + vocab_size;             // head
  return n;
}

FreezeMask FreezeMask::none(int num_groups) {
  FreezeMask mask;
  mask.flags_.assign(static_cast<std::size_t>(num_groups), 0);
  return mask;
}

FreezeMask FreezeMask::from_indices(int num_groups, const std::vector<int>& groups) {
  FreezeMask mask = none(num_groups);
  for (int g : groups) {
    if (g < 1 || g > num_groups)
      throw std::invalid_argument("freeze mask: group index out of range: " + std::to_string(g));
    mask.flags_[static_cast<std::size_t>(g - 1)] = 1;
  }
  if (mask.count() >= num_groups)
    throw std::invalid_argument("freeze mask: freezing every group is not allowed");
  return mask;
}

int FreezeMask::count() const {
  int n = 0;
  for (auto f : flags_) n += f != 0;
  return n;
}

std::vector<int> FreezeMask::indices() const {
  std::vector<int> out;
  for (int g = 1; g <= num_groups(); ++g)
    if (frozen(g)) out.push_back(g);
  return out;
}

Gradients Gradients::zeros_like(const LayeredLm& model) {
  Gradients g;
  g.embedding = Eigen::MatrixXd::Zero(model.vocab_size, model.hidden_dim);
  g.blocks.resize(model.blocks.size());
  for (auto& block : g.blocks) {
    block.weight = Eigen::MatrixXd::Zero(model.hidden_dim, model.hidden_dim);
    block.bias = Eigen::VectorXd::Zero(model.hidden_dim);
  }
  g.out_weight = Eigen::MatrixXd::Zero(model.vocab_size, model.hidden_dim);
  g.out_bias = Eigen::VectorXd::Zero(model.vocab_size);
  return g;
}

LayeredLm init_model(int num_groups, int hidden_dim, int vocab_size, std::uint64_t seed) {
  check_dims(num_groups, hidden_dim, vocab_size);
  LayeredLm model;
  model.num_groups = num_groups;
  model.hidden_dim = hidden_dim;
  model.vocab_size = vocab_size;

  Rng rng(seed);
  model.embedding.resize(vocab_size, hidden_dim);
  fill_uniform(model.embedding, rng);
  model.blocks.resize(static_cast<std::size_t>(num_groups - 2));
  for (auto& block : model.blocks) {
    block.weight.resize(hidden_dim, hidden_dim);
    fill_uniform(block.weight, rng);
    block.bias = Eigen::VectorXd::Zero(hidden_dim);
  }
  model.out_weight.resize(vocab_size, hidden_dim);
  fill_uniform(model.out_weight, rng);
  model.out_bias = Eigen::VectorXd::Zero(vocab_size);
  return model;
}

ForwardCache forward(const LayeredLm& model, const MlmBatch& batch) {
  const int B = batch.batch_size();
  const int window = batch.window();
  const int d = model.hidden_dim;
  const int V = model.vocab_size;
  if (B < 1) throw std::invalid_argument("forward: empty batch");
  if ((batch.input_ids.array() < 0).any() || (batch.input_ids.array() >= V).any() ||
      (batch.target_ids.array() < 0).any() || (batch.target_ids.array() >= V).any())
    throw std::invalid_argument("forward: token id outside vocabulary");

  ForwardCache cache;
  cache.input_ids = batch.input_ids;
  cache.target_ids = batch.target_ids;
  cache.context_counts.resize(B);
  std::uint64_t flops = 0;

  // Mean of the non-PAD token embeddings in the window.
  Eigen::MatrixXd h0 = Eigen::MatrixXd::Zero(d, B);
  for (int b = 0; b < B; ++b) {
    int count = 0;
    for (int j = 0; j < window; ++j) {
      const int id = batch.input_ids(b, j);
      if (id == Vocabulary::kPad) continue;
      h0.col(b) += model.embedding.row(id).transpose();
      ++count;
    }
    if (count == 0) throw std::invalid_argument("forward: all-PAD context row");
    h0.col(b) /= static_cast<double>(count);
    cache.context_counts(b) = static_cast<double>(count);
  }
  flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(window + 1);
  cache.h.push_back(std::move(h0));

  for (const auto& block : model.blocks) {
    const Eigen::MatrixXd& h_prev = cache.h.back();
    Eigen::MatrixXd t = ((block.weight * h_prev).colwise() + block.bias).array().tanh().matrix();
    cache.h.push_back(h_prev + t);
    cache.tanh_out.push_back(std::move(t));
    flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(d + 3);
  }

  Eigen::MatrixXd logits = (model.out_weight * cache.h.back()).colwise() + model.out_bias;
  flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(V) * static_cast<std::uint64_t>(d + 1);

  cache.probs.resize(V, B);
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double m = logits.col(b).maxCoeff();
    Eigen::VectorXd shifted = (logits.col(b).array() - m).exp();
    const double z = shifted.sum();
    cache.probs.col(b) = shifted / z;
    loss += m + std::log(z) - logits(batch.target_ids(b), b);
  }
  flops += static_cast<std::uint64_t>(B) * 3u * static_cast<std::uint64_t>(V);

  cache.loss = loss / static_cast<double>(B);
  cache.flops = flops;
  return cache;
}

Backprop backward(const LayeredLm& model, const ForwardCache& cache, const FreezeMask& mask) {
  const int B = static_cast<int>(cache.probs.cols());
  const int d = model.hidden_dim;
  const int V = model.vocab_size;
  const int window = static_cast<int>(cache.input_ids.cols());
  const int N = model.num_groups;
  if (mask.num_groups() != N) throw std::invalid_argument("backward: mask size does not match model");
  if (cache.h.size() != model.blocks.size() + 1 || cache.probs.rows() != V)
    throw std::invalid_argument("backward: cache does not match model shape");

  Backprop result;
  result.grads = Gradients::zeros_like(model);
  std::uint64_t flops = 0;

  // d(mean cross-entropy)/d(logits) = (p - onehot) / B.
  Eigen::MatrixXd dlogits = cache.probs;
  for (int b = 0; b < B; ++b) dlogits(cache.target_ids(b), b) -= 1.0;
  dlogits /= static_cast<double>(B);
  flops += static_cast<std::uint64_t>(B) * 2u * static_cast<std::uint64_t>(V);

  if (!mask.frozen(N)) {
    result.grads.out_weight = dlogits * cache.h.back().transpose();
    result.grads.out_bias = dlogits.rowwise().sum();
    flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(V) * static_cast<std::uint64_t>(d + 1);
  }
  Eigen::MatrixXd dh = model.out_weight.transpose() * dlogits;
  flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(V) * static_cast<std::uint64_t>(d);

  for (int j = static_cast<int>(model.blocks.size()) - 1; j >= 0; --j) {
    const auto& t = cache.tanh_out[static_cast<std::size_t>(j)];
    Eigen::MatrixXd dz = (dh.array() * (1.0 - t.array().square())).matrix();
    flops += static_cast<std::uint64_t>(B) * 3u * static_cast<std::uint64_t>(d);

    if (!mask.frozen(j + 2)) {
      result.grads.blocks[static_cast<std::size_t>(j)].weight =
          dz * cache.h[static_cast<std::size_t>(j)].transpose();
      result.grads.blocks[static_cast<std::size_t>(j)].bias = dz.rowwise().sum();
      flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(d + 1);
    }
    dh += model.blocks[static_cast<std::size_t>(j)].weight.transpose() * dz;
    flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(d + 1);
  }

  if (!mask.frozen(1)) {
    for (int b = 0; b < B; ++b) {
      const double scale = 1.0 / cache.context_counts(b);
      for (int j = 0; j < window; ++j) {
        const int id = cache.input_ids(b, j);
        if (id == Vocabulary::kPad) continue;
        result.grads.embedding.row(id) += scale * dh.col(b).transpose();
      }
    }
    flops += static_cast<std::uint64_t>(B) * static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(window + 1);
  }

  result.flops = flops;
  return result;
}

void apply_update(LayeredLm& model, const Gradients& grads, const FreezeMask& mask,
                  double learning_rate) {
  if (grads.blocks.size() != model.blocks.size() || grads.embedding.rows() != model.embedding.rows() ||
      grads.embedding.cols() != model.embedding.cols())
    throw std::invalid_argument("apply_update: gradient shapes do not match model");
  const int N = model.num_groups;

  auto step = [&](Eigen::MatrixXd& w, const Eigen::MatrixXd& g) {
    if (!g.allFinite()) throw std::invalid_argument("apply_update: non-finite gradient");
    w -= learning_rate * g;
  };
  auto step_vec = [&](Eigen::VectorXd& w, const Eigen::VectorXd& g) {
    if (!g.allFinite()) throw std::invalid_argument("apply_update: non-finite gradient");
    w -= learning_rate * g;
  };

  if (!mask.frozen(1)) step(model.embedding, grads.embedding);
  for (std::size_t j = 0; j < model.blocks.size(); ++j) {
    if (mask.frozen(static_cast<int>(j) + 2)) continue;
    step(model.blocks[j].weight, grads.blocks[j].weight);
    step_vec(model.blocks[j].bias, grads.blocks[j].bias);
  }
  if (!mask.frozen(N)) {
    step(model.out_weight, grads.out_weight);
    step_vec(model.out_bias, grads.out_bias);
  }
}

LocalTrainStats train_local(LayeredLm& model, const std::vector<const Document*>& shard,
                            const Vocabulary& vocab, const FreezeMask& mask,
                            const TrainConfig& config) {
  if (shard.empty()) throw std::invalid_argument("train_local: empty shard");
  if (config.local_epochs < 1 || config.steps_per_epoch < 1 || config.batch_size < 1)
    throw std::invalid_argument("train_local: epochs, steps and batch size must be positive");
  if (config.learning_rate <= 0.0) throw std::invalid_argument("train_local: learning rate must be positive");

  Rng rng(config.seed);
  MlmCorruption corruption;
  corruption.mask_rate = config.mask_rate;

  LocalTrainStats stats;
  const int total_steps = config.local_epochs * config.steps_per_epoch;
  double loss_sum = 0.0;

  const auto started = std::chrono::steady_clock::now();
  for (int step = 0; step < total_steps; ++step) {
    MlmBatch batch =
        make_mlm_batch(shard, vocab, rng, config.batch_size, config.context_radius, corruption);
    ForwardCache cache = forward(model, batch);
    Backprop bp = backward(model, cache, mask);
    apply_update(model, bp.grads, mask, config.learning_rate);
    loss_sum += cache.loss;
    stats.forward_flops += cache.flops;
    stats.backward_flops += bp.flops;
  }
  stats.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  stats.steps = total_steps;
  stats.mean_loss = loss_sum / static_cast<double>(total_steps);
  return stats;
}

std::pair<double, double> eval_loss(const LayeredLm& model, const std::vector<const Document*>& heldout,
                                    const Vocabulary& vocab, const EvalConfig& config) {
  if (heldout.empty()) throw std::invalid_argument("eval_loss: empty held-out set");
  Rng rng(config.seed);
  MlmCorruption corruption;
  corruption.mask_rate = config.mask_rate;

  double loss_sum = 0.0;
  for (int i = 0; i < config.batches; ++i) {
    MlmBatch batch = make_mlm_batch(heldout, vocab, rng, config.batch_size, config.context_radius, corruption);
    loss_sum += forward(model, batch).loss;
  }
  const double mean = loss_sum / static_cast<double>(config.batches);
  return {mean, std::exp(mean)};
}

FlopCount flops_estimate(int num_groups, int hidden_dim, int vocab_size, int context_radius,
                         const FreezeMask& mask, int batch_size, std::int64_t steps) {
  check_dims(num_groups, hidden_dim, vocab_size);
  if (mask.num_groups() != num_groups) throw std::invalid_argument("flops_estimate: mask size mismatch");

  const std::uint64_t B = static_cast<std::uint64_t>(batch_size);
  const std::uint64_t d = static_cast<std::uint64_t>(hidden_dim);
  const std::uint64_t V = static_cast<std::uint64_t>(vocab_size);
  const std::uint64_t w = 2u * static_cast<std::uint64_t>(context_radius) + 1u;
  const std::uint64_t hidden = static_cast<std::uint64_t>(num_groups - 2);

  std::uint64_t fwd = B * d * (w + 1);          // pooled embedding
  fwd += hidden * B * d * (d + 3);              // residual tanh blocks
  fwd += B * V * (d + 1);                       // output projection
  fwd += B * 3 * V;                             // softmax + loss

  std::uint64_t bwd = B * 2 * V;                // dlogits
  bwd += B * V * d;                             // pass-through out of the head
  if (!mask.frozen(num_groups)) bwd += B * V * (d + 1);
  for (std::uint64_t j = 0; j < hidden; ++j) {
    bwd += B * 3 * d + B * d * (d + 1);         // dz and pass-through, frozen or not
    if (!mask.frozen(static_cast<int>(j) + 2)) bwd += B * d * (d + 1);
  }
  if (!mask.frozen(1)) bwd += B * d * (w + 1);  // embedding scatter

  const std::uint64_t s = static_cast<std::uint64_t>(steps);
  return {fwd * s, bwd * s};
}

Eigen::VectorXd flatten(const LayeredLm& model) {
  Eigen::VectorXd out(model.parameter_count());
  Eigen::Index at = 0;
  auto emit = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) out(at++) = m(r, c);
  };
  emit(model.embedding);
  for (const auto& block : model.blocks) {
    emit(block.weight);
    emit(block.bias);
  }
  emit(model.out_weight);
  emit(model.out_bias);
  return out;
}

void unflatten(const Eigen::VectorXd& params, LayeredLm& model) {
  if (params.size() != model.parameter_count())
    throw std::invalid_argument("unflatten: parameter count mismatch");
  Eigen::Index at = 0;
  auto take = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = params(at++);
  };
  auto take_vec = [&](Eigen::VectorXd& v) {
    for (Eigen::Index r = 0; r < v.size(); ++r) v(r) = params(at++);
  };
  take(model.embedding);
  for (auto& block : model.blocks) {
    take(block.weight);
    take_vec(block.bias);
  }
  take(model.out_weight);
  take_vec(model.out_bias);
}

std::string model_to_bytes(const LayeredLm& model) {
  std::string out;
  out.reserve(static_cast<std::size_t>(model.parameter_count()) * 8 + 24);
  out.append(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(model.num_groups));
  write_u32(out, static_cast<std::uint32_t>(model.hidden_dim));
  write_u32(out, static_cast<std::uint32_t>(model.vocab_size));
  const Eigen::VectorXd params = flatten(model);
  for (Eigen::Index i = 0; i < params.size(); ++i) write_f64(out, params(i));
  return out;
}

LayeredLm model_from_bytes(const std::string& bytes) {
  if (bytes.size() < 20 || bytes.compare(0, 4, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic");
  std::size_t at = 4;
  const std::uint32_t version = read_u32(bytes, at);
  if (version != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const int num_groups = static_cast<int>(read_u32(bytes, at));
  const int hidden_dim = static_cast<int>(read_u32(bytes, at));
  const int vocab_size = static_cast<int>(read_u32(bytes, at));
  check_dims(num_groups, hidden_dim, vocab_size);

  LayeredLm model;
  model.num_groups = num_groups;
  model.hidden_dim = hidden_dim;
  model.vocab_size = vocab_size;
  model.embedding.resize(vocab_size, hidden_dim);
  model.blocks.resize(static_cast<std::size_t>(num_groups - 2));
  for (auto& block : model.blocks) {
    block.weight.resize(hidden_dim, hidden_dim);
    block.bias.resize(hidden_dim);
  }
  model.out_weight.resize(vocab_size, hidden_dim);
  model.out_bias.resize(vocab_size);

  Eigen::VectorXd params(model.parameter_count());
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = read_f64(bytes, at);
  if (at != bytes.size()) throw IoError("checkpoint: trailing bytes");
  unflatten(params, model);
  return model;
}

void save_model(const LayeredLm& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  const std::string bytes = model_to_bytes(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint write failed: " + path);
}

LayeredLm load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return model_from_bytes(buffer.str());
}

}  // namespace ffdapt
