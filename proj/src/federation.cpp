#include "ffdapt/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ffdapt/errors.hpp"
#include "ffdapt/rng.hpp"

namespace ffdapt {

namespace {

using json = nlohmann::json;

// Double-double accumulator. Client weights n_k/n do not sum to 1 exactly in
// double precision, so the mean is computed as (Σ n_k·w_k) / n with exact
// products (FMA) and compensated sums; the single final division then lands
// on w exactly when all w_k equal w.
struct Compensated {
  double hi = 0.0;
  double lo = 0.0;

  void add_product(double a, double b) {
    const double p = a * b;
    const double p_err = std::fma(a, b, -p);
    const double s = hi + p;
    const double t = s - hi;
    const double s_err = (hi - (s - t)) + (p - t);
    hi = s;
    lo += s_err + p_err;
  }

  double divided_by(double n) const {
    const double q = hi / n;
    const double r = std::fma(-q, n, hi) + lo;
    return q + r / n;
  }
};

int thread_budget(int num_clients) {
  if (const char* env = std::getenv("FFDAPT_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return std::min(parsed, num_clients);
  }
  return num_clients;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json client_record_to_json(const ClientRecord& c) {
  return {{"k", c.client},
          {"wall_time", c.wall_time},
          {"forward_flops", c.forward_flops},
          {"backward_flops", c.backward_flops},
          {"mean_loss", c.mean_loss},
          {"frozen", c.frozen}};
}

ClientRecord client_record_from_json(const json& obj) {
  ClientRecord c;
  c.client = obj.at("k").get<int>();
  c.wall_time = obj.at("wall_time").get<double>();
  c.forward_flops = obj.at("forward_flops").get<std::uint64_t>();
  c.backward_flops = obj.at("backward_flops").get<std::uint64_t>();
  c.mean_loss = obj.at("mean_loss").get<double>();
  c.frozen = obj.at("frozen").get<std::vector<int>>();
  return c;
}

json train_config_to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"local_epochs", t.local_epochs},
          {"batch_size", t.batch_size},       {"steps_per_epoch", t.steps_per_epoch},
          {"mask_rate", t.mask_rate},         {"context_radius", t.context_radius},
          {"seed", t.seed}};
}

TrainConfig train_config_from_json(const json& obj) {
  TrainConfig t;
  t.learning_rate = obj.at("learning_rate").get<double>();
  t.local_epochs = obj.at("local_epochs").get<int>();
  t.batch_size = obj.at("batch_size").get<int>();
  t.steps_per_epoch = obj.at("steps_per_epoch").get<int>();
  t.mask_rate = obj.at("mask_rate").get<double>();
  t.context_radius = obj.at("context_radius").get<int>();
  t.seed = obj.at("seed").get<std::uint64_t>();
  return t;
}

json federation_config_to_json(const FederationConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"num_clients", c.num_clients},
          {"rounds", c.rounds},
          {"schedule",
           {{"num_groups", c.schedule.num_groups},
            {"num_clients", c.schedule.num_clients},
            {"sample_counts", c.schedule.sample_counts},
            {"rounds", c.schedule.rounds},
            {"max_frozen", c.schedule.max_frozen},
            {"gamma", c.schedule.gamma},
            {"literal_pseudocode", c.schedule.literal_pseudocode}}},
          {"model",
           {{"num_groups", c.model.num_groups},
            {"hidden_dim", c.model.hidden_dim},
            {"vocab_size", c.model.vocab_size},
            {"min_freq", c.model.min_freq},
            {"init_seed", c.model.init_seed}}},
          {"train", train_config_to_json(c.train)},
          {"eval",
           {{"batches", c.eval.batches},
            {"batch_size", c.eval.batch_size},
            {"context_radius", c.eval.context_radius},
            {"mask_rate", c.eval.mask_rate},
            {"seed", c.eval.seed}}},
          {"eval_every", c.eval_every},
          {"holdout_fraction", c.holdout_fraction},
          {"master_seed", c.master_seed}};
}

FederationConfig federation_config_from_json(const json& obj) {
  FederationConfig c;
  c.mode = mode_from_string(obj.at("mode").get<std::string>());
  c.num_clients = obj.at("num_clients").get<int>();
  c.rounds = obj.at("rounds").get<int>();
  const json& s = obj.at("schedule");
  c.schedule.num_groups = s.at("num_groups").get<int>();
  c.schedule.num_clients = s.at("num_clients").get<int>();
  c.schedule.sample_counts = s.at("sample_counts").get<std::vector<std::int64_t>>();
  c.schedule.rounds = s.at("rounds").get<int>();
  c.schedule.max_frozen = s.at("max_frozen").get<int>();
  c.schedule.gamma = s.at("gamma").get<double>();
  c.schedule.literal_pseudocode = s.at("literal_pseudocode").get<bool>();
  const json& m = obj.at("model");
  c.model.num_groups = m.at("num_groups").get<int>();
  c.model.hidden_dim = m.at("hidden_dim").get<int>();
  c.model.vocab_size = m.at("vocab_size").get<int>();
  c.model.min_freq = m.at("min_freq").get<int>();
  c.model.init_seed = m.at("init_seed").get<std::uint64_t>();
  c.train = train_config_from_json(obj.at("train"));
  const json& e = obj.at("eval");
  c.eval.batches = e.at("batches").get<int>();
  c.eval.batch_size = e.at("batch_size").get<int>();
  c.eval.context_radius = e.at("context_radius").get<int>();
  c.eval.mask_rate = e.at("mask_rate").get<double>();
  c.eval.seed = e.at("seed").get<std::uint64_t>();
  c.eval_every = obj.at("eval_every").get<int>();
  c.holdout_fraction = obj.at("holdout_fraction").get<double>();
  c.master_seed = obj.at("master_seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Centralized: return "centralized";
    case Mode::Fdapt: return "fdapt";
    case Mode::Ffdapt: return "ffdapt";
  }
  return "fdapt";
}

Mode mode_from_string(const std::string& name) {
  if (name == "centralized") return Mode::Centralized;
  if (name == "fdapt") return Mode::Fdapt;
  if (name == "ffdapt") return Mode::Ffdapt;
  throw ConfigError("unknown mode: " + name + " (expected centralized|fdapt|ffdapt)");
}

std::uint64_t RoundRecord::backward_flops_total() const {
  std::uint64_t total = 0;
  for (const auto& c : clients) total += c.backward_flops;
  return total;
}

std::uint64_t ExperimentResult::total_backward_flops() const {
  std::uint64_t total = 0;
  for (const auto& r : rounds) total += r.backward_flops_total();
  return total;
}

double ExperimentResult::mean_round_wall() const {
  if (rounds.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rounds) sum += r.wall_sum;
  return sum / static_cast<double>(rounds.size());
}

std::uint64_t client_seed(std::uint64_t master_seed, int round, int client) {
  return mix_hash(mix_hash(master_seed, static_cast<std::uint64_t>(round)),
                  static_cast<std::uint64_t>(client));
}

std::uint64_t corpus_fingerprint(const Corpus& corpus) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& doc : corpus.docs) {
    h = fnv1a(doc.id, h);
    h = fnv1a(doc.text, h);
  }
  return h;
}

LayeredLm fedavg_aggregate(const std::vector<LayeredLm>& models,
                           const std::vector<std::int64_t>& sample_counts) {
  if (models.empty()) throw std::invalid_argument("fedavg_aggregate: no models");
  if (models.size() != sample_counts.size())
    throw std::invalid_argument("fedavg_aggregate: one sample count per model required");
  const LayeredLm& first = models.front();
  for (const LayeredLm& m : models)
    if (m.num_groups != first.num_groups || m.hidden_dim != first.hidden_dim ||
        m.vocab_size != first.vocab_size)
      throw std::invalid_argument("fedavg_aggregate: model shapes differ");
  for (std::int64_t n : sample_counts)
    if (n < 1) throw std::invalid_argument("fedavg_aggregate: sample counts must be positive");

  const double n_total = static_cast<double>(
      std::accumulate(sample_counts.begin(), sample_counts.end(), std::int64_t{0}));

  LayeredLm out = first;  // shapes and metadata; every parameter overwritten
  auto reduce = [&](auto&& view) {
    const Eigen::Index rows = view(first).rows();
    const Eigen::Index cols = view(first).cols();
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        Compensated acc;
        for (std::size_t k = 0; k < models.size(); ++k)
          acc.add_product(static_cast<double>(sample_counts[k]), view(models[k])(r, c));
        view(out)(r, c) = acc.divided_by(n_total);
      }
    }
  };

  reduce([](auto& m) -> auto& { return m.embedding; });
  for (std::size_t j = 0; j < first.blocks.size(); ++j) {
    reduce([j](auto& m) -> auto& { return m.blocks[j].weight; });
    reduce([j](auto& m) -> auto& { return m.blocks[j].bias; });
  }
  reduce([](auto& m) -> auto& { return m.out_weight; });
  reduce([](auto& m) -> auto& { return m.out_bias; });
  return out;
}

RoundOutcome run_round(const LayeredLm& global, const std::vector<std::vector<const Document*>>& shards,
                       const std::vector<std::int64_t>& sample_counts, const Vocabulary& vocab,
                       const std::vector<std::vector<int>>& plan_row, const FederationConfig& config,
                       int round) {
  const int num_clients = static_cast<int>(shards.size());
  if (plan_row.size() != shards.size() || sample_counts.size() != shards.size())
    throw ConfigError("run_round: shards, plan row and sample counts must align");

  std::vector<LayeredLm> locals(static_cast<std::size_t>(num_clients));
  std::vector<ClientRecord> records(static_cast<std::size_t>(num_clients));

  auto train_client = [&](int k) {
    LayeredLm local = global;
    FreezeMask mask = FreezeMask::from_indices(global.num_groups, plan_row[static_cast<std::size_t>(k)]);
    TrainConfig train = config.train;
    train.seed = client_seed(config.master_seed, round, k + 1);
    const LocalTrainStats stats = train_local(local, shards[static_cast<std::size_t>(k)], vocab, mask, train);

    ClientRecord rec;
    rec.client = k + 1;
    rec.wall_time = stats.wall_time;
    rec.forward_flops = stats.forward_flops;
    rec.backward_flops = stats.backward_flops;
    rec.mean_loss = stats.mean_loss;
    rec.frozen = plan_row[static_cast<std::size_t>(k)];
    locals[static_cast<std::size_t>(k)] = std::move(local);
    records[static_cast<std::size_t>(k)] = std::move(rec);
  };

  switch (config.execution) {
    case ExecutionOrder::SerialForward:
      for (int k = 0; k < num_clients; ++k) train_client(k);
      break;
    case ExecutionOrder::SerialReverse:
      for (int k = num_clients - 1; k >= 0; --k) train_client(k);
      break;
    case ExecutionOrder::Parallel: {
      const int workers = thread_budget(num_clients);
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (int k = next.fetch_add(1); k < num_clients; k = next.fetch_add(1)) train_client(k);
        });
      }
      for (auto& thread : pool) thread.join();
      break;
    }
  }

  RoundOutcome outcome;
  outcome.model = fedavg_aggregate(locals, sample_counts);
  outcome.record.round = round;
  outcome.record.clients = std::move(records);
  for (const auto& rec : outcome.record.clients) {
    outcome.record.wall_max = std::max(outcome.record.wall_max, rec.wall_time);
    outcome.record.wall_sum += rec.wall_time;
  }
  return outcome;
}

ExperimentResult run_experiment(const FederationConfig& config, const Corpus& corpus,
                                const PartitionManifest& manifest,
                                const std::function<void(const RoundRecord&)>& on_round) {
  if (config.rounds < 1) throw ConfigError("run_experiment: need at least 1 round");
  if (config.eval_every < 1) throw ConfigError("run_experiment: eval_every must be positive");
  if (config.holdout_fraction < 0.0 || config.holdout_fraction >= 1.0)
    throw ConfigError("run_experiment: holdout_fraction must lie in [0,1)");

  // Trailing documents are the held-out split; the manifest must cover the
  // training prefix exactly.
  const std::size_t holdout =
      static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(corpus.docs.size()));
  const std::size_t train_count = corpus.docs.size() - holdout;
  if (train_count == 0) throw ConfigError("run_experiment: holdout leaves no training documents");

  std::vector<const Document*> train_docs, eval_docs;
  for (std::size_t i = 0; i < train_count; ++i) train_docs.push_back(&corpus.docs[i]);
  for (std::size_t i = train_count; i < corpus.docs.size(); ++i) eval_docs.push_back(&corpus.docs[i]);
  if (eval_docs.empty()) eval_docs = train_docs;  // holdout_fraction == 0

  const bool federated = config.mode != Mode::Centralized;
  std::vector<std::vector<const Document*>> shards;
  std::vector<std::int64_t> sample_counts;
  if (federated) {
    if (manifest.num_clients() != config.num_clients)
      throw ConfigError("run_experiment: manifest has " + std::to_string(manifest.num_clients()) +
                        " clients but the config says " + std::to_string(config.num_clients));
    shards = manifest.shards(corpus);
    sample_counts = manifest.doc_counts();

    std::unordered_set<const Document*> covered;
    for (const auto& shard : shards) covered.insert(shard.begin(), shard.end());
    if (covered.size() != train_docs.size() ||
        !std::all_of(train_docs.begin(), train_docs.end(),
                     [&](const Document* d) { return covered.count(d) > 0; }))
      throw ConfigError("run_experiment: manifest does not cover exactly the training split");
  } else {
    shards.push_back(train_docs);
    sample_counts.push_back(static_cast<std::int64_t>(train_docs.size()));
  }

  Corpus train_corpus;
  train_corpus.docs.assign(corpus.docs.begin(), corpus.docs.begin() + static_cast<std::ptrdiff_t>(train_count));
  const Vocabulary vocab = build_vocab(train_corpus, config.model.vocab_size, config.model.min_freq);

  FreezePlan plan;
  if (config.mode == Mode::Ffdapt) {
    if (config.schedule.num_groups != config.model.num_groups ||
        config.schedule.num_clients != config.num_clients ||
        config.schedule.rounds != config.rounds || config.schedule.sample_counts != sample_counts)
      throw ConfigError("run_experiment: schedule params are inconsistent with the manifest");
    plan = build_schedule(config.schedule);
  }

  LayeredLm global =
      init_model(config.model.num_groups, config.model.hidden_dim, vocab.size(), config.model.init_seed);

  ExperimentResult result;
  result.config = config;
  result.manifest = manifest;
  result.corpus_fingerprint = corpus_fingerprint(corpus);

  const std::vector<std::vector<int>> no_freezing(shards.size());
  for (int t = 1; t <= config.rounds; ++t) {
    RoundOutcome outcome;
    if (config.mode == Mode::Centralized) {
      // Step-matched baseline: the same total optimizer steps as K parallel
      // clients, on the whole training split, no aggregation.
      LayeredLm model = std::move(global);
      TrainConfig train = config.train;
      train.steps_per_epoch = config.train.steps_per_epoch * config.num_clients;
      train.seed = client_seed(config.master_seed, t, 1);
      const LocalTrainStats stats =
          train_local(model, shards.front(), vocab, FreezeMask::none(model.num_groups), train);
      ClientRecord rec;
      rec.client = 1;
      rec.wall_time = stats.wall_time;
      rec.forward_flops = stats.forward_flops;
      rec.backward_flops = stats.backward_flops;
      rec.mean_loss = stats.mean_loss;
      outcome.model = std::move(model);
      outcome.record.round = t;
      outcome.record.clients.push_back(std::move(rec));
      outcome.record.wall_max = stats.wall_time;
      outcome.record.wall_sum = stats.wall_time;
    } else {
      const auto& plan_row = config.mode == Mode::Ffdapt ? plan.round(t) : no_freezing;
      outcome = run_round(global, shards, sample_counts, vocab, plan_row, config, t);
    }
    global = std::move(outcome.model);

    if (t % config.eval_every == 0 || t == config.rounds)
      outcome.record.eval_loss = eval_loss(global, eval_docs, vocab, config.eval).first;
    if (on_round) on_round(outcome.record);
    result.rounds.push_back(std::move(outcome.record));
  }

  const auto [loss, perplexity] = eval_loss(global, eval_docs, vocab, config.eval);
  result.final_eval_loss = loss;
  result.final_perplexity = perplexity;
  result.final_model = std::move(global);
  return result;
}

std::string round_record_to_json(const RoundRecord& record) {
  json obj;
  obj["round"] = record.round;
  json clients = json::array();
  for (const auto& c : record.clients) clients.push_back(client_record_to_json(c));
  obj["clients"] = std::move(clients);
  obj["wall_max"] = record.wall_max;
  obj["wall_sum"] = record.wall_sum;
  if (record.eval_loss) obj["eval_loss"] = *record.eval_loss;
  return obj.dump();
}

RoundRecord round_record_from_json(const std::string& line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("round record parse error: ") + e.what());
  }
  RoundRecord record;
  record.round = obj.at("round").get<int>();
  for (const auto& c : obj.at("clients")) record.clients.push_back(client_record_from_json(c));
  record.wall_max = obj.at("wall_max").get<double>();
  record.wall_sum = obj.at("wall_sum").get<double>();
  if (obj.contains("eval_loss")) record.eval_loss = obj.at("eval_loss").get<double>();
  return record;
}

std::string experiment_summary_to_json(const ExperimentResult& result) {
  json obj;
  obj["config"] = federation_config_to_json(result.config);
  obj["manifest"] = json::parse(manifest_to_json(result.manifest));
  obj["corpus_fingerprint"] = result.corpus_fingerprint;
  obj["checkpoint"] = result.checkpoint_path;
  obj["rounds_completed"] = result.rounds.size();
  obj["final_eval_loss"] = result.final_eval_loss;
  obj["final_perplexity"] = result.final_perplexity;
  obj["total_backward_flops"] = result.total_backward_flops();
  obj["mean_round_wall"] = result.mean_round_wall();
  return obj.dump(2);
}

ExperimentResult experiment_summary_from_json(const std::string& text) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("summary parse error: ") + e.what());
  }
  ExperimentResult result;
  result.config = federation_config_from_json(obj.at("config"));
  result.manifest = manifest_from_json(obj.at("manifest").dump());
  result.corpus_fingerprint = obj.at("corpus_fingerprint").get<std::uint64_t>();
  result.checkpoint_path = obj.at("checkpoint").get<std::string>();
  result.final_eval_loss = obj.at("final_eval_loss").get<double>();
  result.final_perplexity = obj.at("final_perplexity").get<double>();
  return result;
}

}  // namespace ffdapt
