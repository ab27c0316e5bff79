#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ffdapt/errors.hpp"
#include "ffdapt/federation.hpp"
#include "test_util.hpp"

using namespace ffdapt;

namespace {

LayeredLm constant_model(double value, int num_groups = 3, int d = 1, int vocab = 4) {
  LayeredLm model = init_model(num_groups, d, vocab, 0);
  const Eigen::VectorXd fill = Eigen::VectorXd::Constant(model.parameter_count(), value);
  unflatten(fill, model);
  return model;
}

// Small but non-degenerate setup shared by the experiment tests.
struct Fixture {
  Corpus corpus;
  PartitionManifest manifest;
  FederationConfig config;

  explicit Fixture(int clients = 2, Mode mode = Mode::Fdapt) {
    SynthSpec s;
    s.docs = 30;
    s.common_vocab = 80;
    corpus = synth_corpus(s, 71);

    config.mode = mode;
    config.num_clients = clients;
    config.rounds = 3;
    config.model.num_groups = 4;
    config.model.hidden_dim = 6;
    config.model.vocab_size = 120;
    config.train.batch_size = 8;
    config.train.steps_per_epoch = 4;
    config.train.context_radius = 3;
    config.eval.batches = 4;
    config.eval.batch_size = 16;
    config.eval.context_radius = 3;
    config.eval_every = 2;
    config.holdout_fraction = 0.2;
    config.master_seed = 99;

    Corpus train;
    train.docs.assign(corpus.docs.begin(), corpus.docs.begin() + 24);
    if (clients >= 2) {
      manifest = partition_iid(train, clients, 7);
    } else {
      manifest.spec.kind = SkewKind::Iid;
      manifest.spec.num_clients = 1;
      manifest.assignment.resize(1);
      std::vector<const Document*> docs;
      for (const auto& doc : train.docs) {
        manifest.assignment[0].push_back(doc.id);
        docs.push_back(&doc);
      }
      manifest.per_client_stats = {corpus_stats(docs)};
    }

    config.schedule.num_groups = config.model.num_groups;
    config.schedule.num_clients = clients;
    config.schedule.sample_counts = manifest.doc_counts();
    config.schedule.rounds = config.rounds;
    config.schedule.max_frozen = config.model.num_groups - 1;
    config.schedule.gamma = 1.0;
  }
};

}  // namespace

TEST_CASE("fedavg_aggregate computes the weighted mean") {
  SUBCASE("scalar example: w = (2, 4), n = (1, 3)") {
    const std::vector<LayeredLm> models = {constant_model(2.0), constant_model(4.0)};
    const LayeredLm mean = fedavg_aggregate(models, {1, 3});
    const Eigen::VectorXd flat = flatten(mean);
    for (Eigen::Index i = 0; i < flat.size(); ++i) CHECK(flat(i) == 3.5);
  }

  SUBCASE("identical models aggregate to a bit-exact identity") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const int k = static_cast<int>(rng.next_range(1, 16));
      const LayeredLm model = init_model(4, 5, 17, rng.next_u64());
      std::vector<LayeredLm> copies(static_cast<std::size_t>(k), model);
      std::vector<std::int64_t> weights;
      double weight_sum = 0.0;
      for (int i = 0; i < k; ++i) weights.push_back(rng.next_range(1, 1000));
      const double n = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::int64_t{0}));
      for (std::int64_t w : weights) weight_sum += static_cast<double>(w) / n;
      CHECK(std::abs(weight_sum - 1.0) <= 1e-15);
      CHECK(model_to_bytes(fedavg_aggregate(copies, weights)) == model_to_bytes(model));
    }
  }

  SUBCASE("matches a high-precision oracle on random instances") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
      const int k = static_cast<int>(rng.next_range(2, 16));
      std::vector<LayeredLm> models;
      std::vector<std::int64_t> weights;
      for (int i = 0; i < k; ++i) {
        models.push_back(init_model(3, 2, 6, rng.next_u64()));
        weights.push_back(rng.next_range(1, 500));
      }
      const LayeredLm mean = fedavg_aggregate(models, weights);

      const long double n = static_cast<long double>(
          std::accumulate(weights.begin(), weights.end(), std::int64_t{0}));
      const Eigen::VectorXd got = flatten(mean);
      std::vector<Eigen::VectorXd> flats;
      for (const auto& m : models) flats.push_back(flatten(m));
      for (Eigen::Index i = 0; i < got.size(); ++i) {
        long double acc = 0.0L;
        for (int c = 0; c < k; ++c)
          acc += static_cast<long double>(weights[static_cast<std::size_t>(c)]) *
                 static_cast<long double>(flats[static_cast<std::size_t>(c)](i));
        const double expected = static_cast<double>(acc / n);
        const double scale = std::max(std::abs(expected), 1e-30);
        CHECK(std::abs(got(i) - expected) / scale <= 1e-12);
      }
    }
  }

  SUBCASE("shape and weight validation") {
    const std::vector<LayeredLm> mixed = {constant_model(1.0, 3, 1, 4), constant_model(1.0, 4, 1, 4)};
    CHECK_THROWS_AS(fedavg_aggregate(mixed, {1, 1}), std::invalid_argument);
    const std::vector<LayeredLm> two = {constant_model(1.0), constant_model(1.0)};
    CHECK_THROWS_AS(fedavg_aggregate(two, {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(fedavg_aggregate(two, {1}), std::invalid_argument);
    CHECK_THROWS_AS(fedavg_aggregate({}, {}), std::invalid_argument);
  }
}

TEST_CASE("client RNG streams are independent of the roster") {
  CHECK(client_seed(1, 2, 3) == client_seed(1, 2, 3));
  CHECK(client_seed(1, 2, 3) != client_seed(1, 2, 4));
  CHECK(client_seed(1, 2, 3) != client_seed(1, 3, 3));
  CHECK(client_seed(1, 2, 3) != client_seed(2, 2, 3));
  CHECK(client_seed(1, 2, 3) != client_seed(1, 3, 2));
}

TEST_CASE("execution order does not change the aggregated result") {
  Fixture fx(3);
  fx.config.execution = ExecutionOrder::SerialForward;
  const ExperimentResult forward = run_experiment(fx.config, fx.corpus, fx.manifest);
  fx.config.execution = ExecutionOrder::SerialReverse;
  const ExperimentResult reverse = run_experiment(fx.config, fx.corpus, fx.manifest);
  fx.config.execution = ExecutionOrder::Parallel;
  const ExperimentResult parallel = run_experiment(fx.config, fx.corpus, fx.manifest);

  const std::string bytes = model_to_bytes(forward.final_model);
  CHECK(model_to_bytes(reverse.final_model) == bytes);
  CHECK(model_to_bytes(parallel.final_model) == bytes);
  CHECK(forward.final_eval_loss == reverse.final_eval_loss);
  CHECK(forward.final_eval_loss == parallel.final_eval_loss);
}

TEST_CASE("frozen groups enter aggregation with their stale values") {
  Fixture fx(2);
  const Vocabulary vocab = [&] {
    Corpus train;
    train.docs.assign(fx.corpus.docs.begin(), fx.corpus.docs.begin() + 24);
    return build_vocab(train, fx.config.model.vocab_size, 1);
  }();
  const LayeredLm global = init_model(4, 6, vocab.size(), 123);
  const auto shards = fx.manifest.shards(fx.corpus);
  const auto counts = fx.manifest.doc_counts();

  SUBCASE("a group frozen on every client survives the round bit-exactly") {
    const std::vector<std::vector<int>> plan_row = {{2}, {2}};
    const RoundOutcome outcome = run_round(global, shards, counts, vocab, plan_row, fx.config, 1);
    CHECK(outcome.model.blocks[0].weight == global.blocks[0].weight);
    CHECK(outcome.model.blocks[0].bias == global.blocks[0].bias);
    CHECK(outcome.model.embedding != global.embedding);
    CHECK(outcome.record.clients[0].frozen == std::vector<int>{2});
  }

  SUBCASE("run_round equals a by-hand broadcast/train/aggregate sequence") {
    const std::vector<std::vector<int>> plan_row = {{1, 2}, {3}};
    const RoundOutcome outcome = run_round(global, shards, counts, vocab, plan_row, fx.config, 2);

    std::vector<LayeredLm> locals;
    for (int k = 0; k < 2; ++k) {
      LayeredLm local = global;
      TrainConfig train = fx.config.train;
      train.seed = client_seed(fx.config.master_seed, 2, k + 1);
      train_local(local, shards[static_cast<std::size_t>(k)], vocab,
                  FreezeMask::from_indices(4, plan_row[static_cast<std::size_t>(k)]), train);
      locals.push_back(std::move(local));
    }
    CHECK(model_to_bytes(outcome.model) == model_to_bytes(fedavg_aggregate(locals, counts)));
  }
}

TEST_CASE("ffdapt with epsilon 0 equals fdapt bit-exactly") {
  Fixture fdapt(2, Mode::Fdapt);
  const ExperimentResult plain = run_experiment(fdapt.config, fdapt.corpus, fdapt.manifest);

  Fixture ffdapt(2, Mode::Ffdapt);
  ffdapt.config.schedule.max_frozen = 0;
  const ExperimentResult frozen = run_experiment(ffdapt.config, ffdapt.corpus, ffdapt.manifest);

  CHECK(model_to_bytes(frozen.final_model) == model_to_bytes(plain.final_model));
  CHECK(frozen.final_eval_loss == plain.final_eval_loss);
}

TEST_CASE("single-client fdapt equals the step-matched centralized baseline") {
  // The fixture's K = 1 manifest holds the whole training split in corpus
  // order, which is exactly the centralized shard.
  Fixture fx(1);
  const ExperimentResult federated = run_experiment(fx.config, fx.corpus, fx.manifest);
  fx.config.mode = Mode::Centralized;
  const ExperimentResult central = run_experiment(fx.config, fx.corpus, fx.manifest);
  CHECK(model_to_bytes(federated.final_model) == model_to_bytes(central.final_model));
}

TEST_CASE("rerunning an experiment reproduces every computed metric") {
  Fixture fx(2, Mode::Ffdapt);
  const ExperimentResult a = run_experiment(fx.config, fx.corpus, fx.manifest);
  const ExperimentResult b = run_experiment(fx.config, fx.corpus, fx.manifest);

  CHECK(model_to_bytes(a.final_model) == model_to_bytes(b.final_model));
  CHECK(a.final_eval_loss == b.final_eval_loss);
  CHECK(a.final_perplexity == b.final_perplexity);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t t = 0; t < a.rounds.size(); ++t) {
    CHECK(a.rounds[t].eval_loss == b.rounds[t].eval_loss);
    for (std::size_t k = 0; k < a.rounds[t].clients.size(); ++k) {
      CHECK(a.rounds[t].clients[k].mean_loss == b.rounds[t].clients[k].mean_loss);
      CHECK(a.rounds[t].clients[k].backward_flops == b.rounds[t].clients[k].backward_flops);
      CHECK(a.rounds[t].clients[k].frozen == b.rounds[t].clients[k].frozen);
    }
  }
}

TEST_CASE("ffdapt round records carry the planned frozen sets") {
  Fixture fx(2, Mode::Ffdapt);
  const ExperimentResult result = run_experiment(fx.config, fx.corpus, fx.manifest);
  const FreezePlan plan = build_schedule(fx.config.schedule);
  REQUIRE(result.rounds.size() == 3);
  for (int t = 1; t <= 3; ++t)
    for (int k = 0; k < 2; ++k)
      CHECK(result.rounds[static_cast<std::size_t>(t - 1)].clients[static_cast<std::size_t>(k)].frozen ==
            plan.round(t)[static_cast<std::size_t>(k)]);

  Fixture plain(2, Mode::Fdapt);
  const ExperimentResult unfrozen = run_experiment(plain.config, plain.corpus, plain.manifest);
  for (const auto& round : unfrozen.rounds)
    for (const auto& client : round.clients) CHECK(client.frozen.empty());
}

TEST_CASE("run_experiment rejects inconsistent inputs") {
  Fixture fx(2);
  SUBCASE("client count mismatch") {
    fx.config.num_clients = 3;
    CHECK_THROWS_AS(run_experiment(fx.config, fx.corpus, fx.manifest), ConfigError);
  }
  SUBCASE("manifest must cover the training split") {
    fx.manifest.assignment[0].pop_back();
    CHECK_THROWS_AS(run_experiment(fx.config, fx.corpus, fx.manifest), ConfigError);
  }
  SUBCASE("ffdapt schedule must match the manifest") {
    fx.config.mode = Mode::Ffdapt;
    fx.config.schedule.sample_counts[0] += 1;
    CHECK_THROWS_AS(run_experiment(fx.config, fx.corpus, fx.manifest), ConfigError);
  }
}

TEST_CASE("round records and summaries serialize to JSON and back") {
  Fixture fx(2, Mode::Ffdapt);
  ExperimentResult result = run_experiment(fx.config, fx.corpus, fx.manifest);
  result.checkpoint_path = "model.ckpt";

  for (const auto& record : result.rounds) {
    const RoundRecord reloaded = round_record_from_json(round_record_to_json(record));
    CHECK(reloaded.round == record.round);
    CHECK(reloaded.wall_sum == record.wall_sum);
    CHECK(reloaded.eval_loss == record.eval_loss);
    REQUIRE(reloaded.clients.size() == record.clients.size());
    for (std::size_t k = 0; k < record.clients.size(); ++k) {
      CHECK(reloaded.clients[k].backward_flops == record.clients[k].backward_flops);
      CHECK(reloaded.clients[k].frozen == record.clients[k].frozen);
      CHECK(reloaded.clients[k].mean_loss == record.clients[k].mean_loss);
    }
  }

  const ExperimentResult reloaded = experiment_summary_from_json(experiment_summary_to_json(result));
  CHECK(reloaded.config == result.config);
  CHECK(reloaded.manifest.assignment == result.manifest.assignment);
  CHECK(reloaded.corpus_fingerprint == result.corpus_fingerprint);
  CHECK(reloaded.final_eval_loss == result.final_eval_loss);
  CHECK(reloaded.checkpoint_path == "model.ckpt");
}
