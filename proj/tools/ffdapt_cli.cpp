// Command-line front end: synthesize corpora, partition them across clients,
// dump freeze schedules, run pre-training experiments and compare runs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ffdapt/config.hpp"
#include "ffdapt/errors.hpp"
#include "ffdapt/federation.hpp"
#include "ffdapt/metrics.hpp"

namespace fs = std::filesystem;
using namespace ffdapt;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitSkew = 3;
constexpr int kExitRuntime = 4;
constexpr int kExitMismatch = 5;

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out.flush()) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

Corpus corpus_from_config(const ExperimentConfigFile& cfg) {
  if (cfg.corpus_source == "file") {
    if (cfg.corpus_path.empty()) throw ConfigError("[corpus] path is required when source = file");
    return load_corpus(cfg.corpus_path);
  }
  return synth_corpus(cfg.synth, cfg.corpus_seed);
}

std::size_t training_prefix(const ExperimentConfigFile& cfg, const Corpus& corpus) {
  if (cfg.holdout_fraction < 0.0 || cfg.holdout_fraction >= 1.0)
    throw ConfigError("[corpus] holdout_fraction must lie in [0,1)");
  const auto holdout =
      static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(corpus.docs.size()));
  if (corpus.docs.size() == holdout) throw ConfigError("holdout leaves no training documents");
  return corpus.docs.size() - holdout;
}

void print_skew_report(const SkewReport& report) {
  auto line = [](const char* name, const MetricSkew& m) {
    std::printf("  %-22s cv=%-10.4f max/min=%.4f\n", name, m.cv, m.ratio);
  };
  std::printf("skew report:\n");
  line("doc_count", report.doc_count);
  line("mean_sentence_length", report.mean_sentence_length);
  line("unique_word_count", report.unique_word_count);
}

ExperimentResult load_run_dir(const std::string& dir) {
  ExperimentResult result =
      experiment_summary_from_json(read_text((fs::path(dir) / "summary.json").string()));
  std::ifstream rounds((fs::path(dir) / "rounds.jsonl").string());
  if (!rounds) throw IoError("cannot open " + (fs::path(dir) / "rounds.jsonl").string());
  std::string line;
  while (std::getline(rounds, line)) {
    if (!line.empty()) result.rounds.push_back(round_record_from_json(line));
  }
  return result;
}

struct PretrainArgs {
  std::string config_path;
  std::string mode_override;
  std::string seed_override;
  std::string out_override;
};

int cmd_pretrain(const PretrainArgs& args) {
  ExperimentConfigFile cfg = load_config_file(args.config_path);
  if (!args.mode_override.empty()) cfg.mode = mode_from_string(args.mode_override);
  if (!args.seed_override.empty()) cfg.master_seed = std::stoull(args.seed_override);
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;

  const Corpus corpus = corpus_from_config(cfg);
  const std::size_t train_count = training_prefix(cfg, corpus);
  Corpus train;
  train.docs.assign(corpus.docs.begin(), corpus.docs.begin() + static_cast<std::ptrdiff_t>(train_count));

  PartitionSpec pspec;
  pspec.kind = cfg.partition_kind;
  pspec.num_clients = cfg.clients;
  pspec.skew_factor = cfg.skew_factor;
  pspec.seed = cfg.partition_seed;
  const PartitionManifest manifest = partition(train, pspec, cfg.rare_threshold);
  const auto violations = validate_partition(manifest, train);
  if (!violations.empty()) throw std::runtime_error("invalid partition: " + violations.front());

  FederationConfig fed = cfg.federation_config();
  fed.schedule.sample_counts = manifest.doc_counts();

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.out_dir + ": " + ec.message());

  const int total_groups = fed.model.num_groups * std::max(fed.num_clients, 1);
  auto progress = [&](const RoundRecord& record) {
    double mean_loss = 0.0;
    int frozen_groups = 0;
    for (const auto& c : record.clients) {
      mean_loss += c.mean_loss;
      frozen_groups += static_cast<int>(c.frozen.size());
    }
    mean_loss /= static_cast<double>(record.clients.size());
    std::printf("round %3d  loss %.4f  wall %.3fs  frozen %.2f", record.round, mean_loss,
                record.wall_sum, static_cast<double>(frozen_groups) / total_groups);
    if (record.eval_loss) std::printf("  eval %.4f", *record.eval_loss);
    std::printf("\n");
    std::fflush(stdout);
  };

  ExperimentResult result = run_experiment(fed, corpus, manifest, progress);

  const std::string ckpt = (fs::path(cfg.out_dir) / "model.ckpt").string();
  save_model(result.final_model, ckpt);
  result.checkpoint_path = ckpt;

  write_text((fs::path(cfg.out_dir) / "config.ini").string(), serialize_config(cfg));
  write_text((fs::path(cfg.out_dir) / "manifest.json").string(), manifest_to_json(manifest) + "\n");
  const Vocabulary vocab = build_vocab(train, cfg.model.vocab_size, cfg.model.min_freq);
  save_vocab(vocab, (fs::path(cfg.out_dir) / "vocab.json").string());

  std::ostringstream rounds;
  for (const auto& record : result.rounds) rounds << round_record_to_json(record) << '\n';
  write_text((fs::path(cfg.out_dir) / "rounds.jsonl").string(), rounds.str());
  write_text((fs::path(cfg.out_dir) / "summary.json").string(),
             experiment_summary_to_json(result) + "\n");

  std::printf("final eval loss %.6f  perplexity %.3f\n", result.final_eval_loss,
              result.final_perplexity);
  std::printf("wrote %s\n", cfg.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale federated domain-adaptive pre-training simulator"};
  app.require_subcommand(1);

  const std::string config_footer =
      "Config file keys and their defaults:\n\n" + serialize_config(ExperimentConfigFile{});

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic JSON-lines corpus");
  std::string synth_config, synth_out = "corpus.jsonl", synth_seed;
  synth->add_option("--config", synth_config, "Experiment config file ([corpus] section is used)");
  synth->add_option("--seed", synth_seed, "Override the corpus seed");
  synth->add_option("--out", synth_out, "Output corpus path")->capture_default_str();
  synth->footer(config_footer);

  // partition
  auto* part = app.add_subcommand("partition", "Split a corpus across clients and report the skew");
  std::string part_corpus, part_kind = "iid", part_out = "manifest.json";
  int part_clients = 2;
  double part_skew = 3.0;
  std::int64_t part_rare = 2;
  std::uint64_t part_seed = 7;
  part->add_option("--corpus", part_corpus, "JSON-lines corpus path")->required();
  part->add_option("--kind", part_kind, "iid | quantity | length | vocab")->capture_default_str();
  part->add_option("--clients", part_clients, "Number of clients")->capture_default_str();
  part->add_option("--skew", part_skew, "Target max/min ratio on the primary metric")
      ->capture_default_str();
  part->add_option("--rare-threshold", part_rare, "Global frequency bound for rare tokens")
      ->capture_default_str();
  part->add_option("--seed", part_seed, "Partition seed")->capture_default_str();
  part->add_option("--out", part_out, "Manifest output path")->capture_default_str();

  // schedule
  auto* sched = app.add_subcommand("schedule", "Precompute and dump a freeze plan as JSON");
  ScheduleParams sched_params;
  std::string sched_counts = "75,25", sched_out;
  sched->add_option("--groups", sched_params.num_groups, "Model group count N")->capture_default_str();
  sched->add_option("--clients", sched_params.num_clients, "Client count K")->capture_default_str();
  sched->add_option("--counts", sched_counts, "Comma-separated per-client sample counts")
      ->capture_default_str();
  sched->add_option("--rounds", sched_params.rounds, "Rounds T")->capture_default_str();
  sched->add_option("--max-frozen", sched_params.max_frozen, "Freeze cap per client")
      ->capture_default_str();
  sched->add_option("--gamma", sched_params.gamma, "Frozen-count scaling factor")
      ->capture_default_str();
  sched->add_flag("--literal-pseudocode", sched_params.literal_pseudocode,
                  "Freeze start..start+N_k instead of exactly N_k groups");
  sched->add_option("--out", sched_out, "Write the plan here instead of stdout");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Run a centralized, fdapt or ffdapt experiment");
  PretrainArgs pre_args;
  pre->add_option("--config", pre_args.config_path, "Experiment config file")->required();
  pre->add_option("--mode", pre_args.mode_override, "Override: centralized | fdapt | ffdapt");
  pre->add_option("--seed", pre_args.seed_override, "Override the master seed");
  pre->add_option("--out", pre_args.out_override, "Override the output directory");
  pre->footer(config_footer);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on a held-out corpus");
  std::string eval_ckpt, eval_vocab, eval_corpus;
  EvalConfig eval_cfg;
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--vocab", eval_vocab, "Vocabulary JSON written by pretrain")->required();
  eval->add_option("--corpus", eval_corpus, "JSON-lines corpus to score")->required();
  eval->add_option("--batches", eval_cfg.batches, "Evaluation batches")->capture_default_str();
  eval->add_option("--batch-size", eval_cfg.batch_size, "Examples per batch")->capture_default_str();
  eval->add_option("--radius", eval_cfg.context_radius, "Context radius")->capture_default_str();
  eval->add_option("--seed", eval_cfg.seed, "Deterministic masking seed")->capture_default_str();

  // compare
  auto* cmp = app.add_subcommand("compare", "Efficiency report for an fdapt/ffdapt run pair");
  std::string cmp_fdapt, cmp_ffdapt, cmp_out = "reports";
  cmp->add_option("--fdapt", cmp_fdapt, "Output directory of the fdapt run")->required();
  cmp->add_option("--ffdapt", cmp_ffdapt, "Output directory of the ffdapt run")->required();
  cmp->add_option("--out", cmp_out, "Report directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (synth->parsed()) {
      ExperimentConfigFile cfg;
      if (!synth_config.empty()) cfg = load_config_file(synth_config);
      if (!synth_seed.empty()) cfg.corpus_seed = std::stoull(synth_seed);
      const Corpus corpus = synth_corpus(cfg.synth, cfg.corpus_seed);
      save_corpus(corpus, synth_out);
      std::printf("wrote %zu documents to %s\n", corpus.docs.size(), synth_out.c_str());
    } else if (part->parsed()) {
      const Corpus corpus = load_corpus(part_corpus);
      PartitionSpec spec;
      spec.kind = skew_kind_from_string(part_kind);
      spec.num_clients = part_clients;
      spec.skew_factor = part_skew;
      spec.seed = part_seed;
      const PartitionManifest manifest = partition(corpus, spec, part_rare);
      const auto violations = validate_partition(manifest, corpus);
      if (!violations.empty())
        throw std::runtime_error("refusing to write an invalid manifest: " + violations.front());
      write_text(part_out, manifest_to_json(manifest) + "\n");
      std::printf("clients:");
      for (std::int64_t n : manifest.doc_counts()) std::printf(" %lld", static_cast<long long>(n));
      std::printf("\n");
      print_skew_report(measure_skew(manifest));
      std::printf("wrote %s\n", part_out.c_str());
    } else if (sched->parsed()) {
      sched_params.sample_counts.clear();
      std::istringstream counts(sched_counts);
      std::string token;
      while (std::getline(counts, token, ','))
        if (!token.empty()) sched_params.sample_counts.push_back(std::stoll(token));
      const std::string json = schedule_to_json(build_schedule(sched_params)) + "\n";
      if (sched_out.empty())
        std::fputs(json.c_str(), stdout);
      else
        write_text(sched_out, json);
    } else if (pre->parsed()) {
      return cmd_pretrain(pre_args);
    } else if (eval->parsed()) {
      const LayeredLm model = load_model(eval_ckpt);
      const Vocabulary vocab = load_vocab(eval_vocab);
      const Corpus corpus = load_corpus(eval_corpus);
      std::vector<const Document*> docs;
      for (const auto& doc : corpus.docs) docs.push_back(&doc);
      const auto [loss, perplexity] = eval_loss(model, docs, vocab, eval_cfg);
      std::printf("eval_loss %.6f\nperplexity %.6f\n", loss, perplexity);
    } else if (cmp->parsed()) {
      const ExperimentResult fdapt_run = load_run_dir(cmp_fdapt);
      const ExperimentResult ffdapt_run = load_run_dir(cmp_ffdapt);
      const EfficiencyReport report = compare_runs(fdapt_run, ffdapt_run);
      write_reports({&fdapt_run, &ffdapt_run}, &report, cmp_out);
      std::printf("round time: fdapt %.4fs  ffdapt %.4fs\n", report.round_time_fdapt,
                  report.round_time_ffdapt);
      std::printf("improvement: wall %.2f%%  flops %.2f%%\n", report.improvement_wall,
                  report.improvement_flops);
      std::printf("wrote %s\n", cmp_out.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const SkewUnachievableError& e) {
    std::fprintf(stderr, "skew error: %s\n", e.what());
    return kExitSkew;
  } catch (const RunMismatchError& e) {
    std::fprintf(stderr, "mismatch: %s\n", e.what());
    return kExitMismatch;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
