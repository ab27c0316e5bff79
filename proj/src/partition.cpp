#include "ffdapt/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "ffdapt/errors.hpp"

namespace ffdapt {

namespace {

using json = nlohmann::json;

struct DocKey {
  std::size_t index;       // position in corpus
  double mean_sentence_len;
  std::int64_t rare_score;
};

double doc_mean_sentence_len(const Document& doc) {
  if (doc.sentence_lengths.empty()) return 0.0;
  return static_cast<double>(doc.tokens.size()) / static_cast<double>(doc.sentence_lengths.size());
}

void require_clients(const Corpus& corpus, int num_clients) {
  if (num_clients < 2) throw ConfigError("partition: need at least 2 clients");
  if (corpus.docs.size() < static_cast<std::size_t>(num_clients))
    throw ConfigError("partition: corpus smaller than client count");
}

PartitionManifest finalize(const Corpus& corpus, PartitionSpec spec,
                           std::vector<std::vector<std::size_t>> blocks) {
  PartitionManifest manifest;
  manifest.spec = spec;
  manifest.assignment.resize(blocks.size());
  manifest.per_client_stats.resize(blocks.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    std::vector<const Document*> docs;
    docs.reserve(blocks[k].size());
    for (std::size_t idx : blocks[k]) {
      manifest.assignment[k].push_back(corpus.docs[idx].id);
      docs.push_back(&corpus.docs[idx]);
    }
    manifest.per_client_stats[k] = corpus_stats(docs);
  }
  return manifest;
}

// Equal block sizes, remainder to the leading blocks.
std::vector<std::int64_t> equal_counts(std::int64_t total, int num_clients) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_clients), total / num_clients);
  for (std::int64_t r = 0; r < total % num_clients; ++r) ++counts[static_cast<std::size_t>(r)];
  return counts;
}

std::vector<std::vector<std::size_t>> cut_blocks(const std::vector<std::size_t>& order,
                                                 const std::vector<std::int64_t>& counts) {
  std::vector<std::vector<std::size_t>> blocks(counts.size());
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (std::int64_t i = 0; i < counts[k]; ++i) blocks[k].push_back(order[cursor++]);
  }
  return blocks;
}

// Incrementally maintained shard statistics for the swap pass.
struct ShardState {
  std::unordered_map<std::string, std::int64_t> token_counts;
  std::int64_t tokens = 0;
  std::int64_t sentences = 0;
  std::int64_t uniques = 0;

  void add(const Document& doc, int sign) {
    tokens += sign * static_cast<std::int64_t>(doc.tokens.size());
    sentences += sign * static_cast<std::int64_t>(doc.sentence_lengths.size());
    for (const auto& tok : doc.tokens) {
      std::int64_t& c = token_counts[tok];
      if (sign > 0 && c == 0) ++uniques;
      c += sign;
      if (sign < 0 && c == 0) --uniques;
    }
  }

  double mean_len() const {
    return sentences == 0 ? 0.0 : static_cast<double>(tokens) / static_cast<double>(sentences);
  }
};

double population_cv(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size())) / mean;
}

double max_min_ratio(const std::vector<double>& values) {
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (*mn == 0.0) return std::numeric_limits<double>::infinity();
  return *mx / *mn;
}

enum class SwapGoal { EqualizeUniques, EqualizeMeanLen };

// Bounded repair pass: swap documents between adjacent blocks to lower the
// secondary metric's CV while the primary metric keeps its ordering and at
// least 90% of the pre-pass max/min ratio. Candidates are restricted to a
// small window at each block boundary, where the primary metric changes
// least.
void adjacent_swap_pass(const Corpus& corpus, std::vector<std::vector<std::size_t>>& blocks,
                        SwapGoal goal) {
  constexpr std::size_t kBoundaryWindow = 16;
  constexpr int kMaxSwaps = 64;
  const std::size_t num_blocks = blocks.size();

  std::vector<ShardState> state(num_blocks);
  for (std::size_t k = 0; k < num_blocks; ++k)
    for (std::size_t idx : blocks[k]) state[k].add(corpus.docs[idx], +1);

  auto primary = [&](std::size_t k) {
    return goal == SwapGoal::EqualizeUniques ? state[k].mean_len()
                                             : static_cast<double>(state[k].uniques);
  };
  auto secondary_values = [&] {
    std::vector<double> vals(num_blocks);
    for (std::size_t k = 0; k < num_blocks; ++k)
      vals[k] = goal == SwapGoal::EqualizeUniques ? static_cast<double>(state[k].uniques)
                                                  : state[k].mean_len();
    return vals;
  };
  auto primary_values = [&] {
    std::vector<double> vals(num_blocks);
    for (std::size_t k = 0; k < num_blocks; ++k) vals[k] = primary(k);
    return vals;
  };

  const double ratio_floor = 0.9 * max_min_ratio(primary_values());

  int swaps = 0;
  bool improved = true;
  while (improved && swaps < kMaxSwaps) {
    improved = false;
    for (std::size_t k = 0; k + 1 < num_blocks && swaps < kMaxSwaps; ++k) {
      const double cv_before = population_cv(secondary_values());
      double best_gain = 0.0;
      std::size_t best_a = 0, best_b = 0;

      const std::size_t a_begin = blocks[k].size() > kBoundaryWindow ? blocks[k].size() - kBoundaryWindow : 0;
      const std::size_t b_end = std::min(kBoundaryWindow, blocks[k + 1].size());
      for (std::size_t ai = a_begin; ai < blocks[k].size(); ++ai) {
        for (std::size_t bi = 0; bi < b_end; ++bi) {
          const Document& da = corpus.docs[blocks[k][ai]];
          const Document& db = corpus.docs[blocks[k + 1][bi]];
          state[k].add(da, -1);
          state[k].add(db, +1);
          state[k + 1].add(db, -1);
          state[k + 1].add(da, +1);

          const auto prim = primary_values();
          const bool monotone = std::is_sorted(prim.begin(), prim.end());
          const bool ratio_ok = max_min_ratio(prim) >= ratio_floor;
          const double gain = cv_before - population_cv(secondary_values());
          if (monotone && ratio_ok && gain > best_gain + 1e-12) {
            best_gain = gain;
            best_a = ai;
            best_b = bi;
          }

          state[k].add(db, -1);
          state[k].add(da, +1);
          state[k + 1].add(da, -1);
          state[k + 1].add(db, +1);
        }
      }

      if (best_gain > 0.0) {
        const Document& da = corpus.docs[blocks[k][best_a]];
        const Document& db = corpus.docs[blocks[k + 1][best_b]];
        state[k].add(da, -1);
        state[k].add(db, +1);
        state[k + 1].add(db, -1);
        state[k + 1].add(da, +1);
        std::swap(blocks[k][best_a], blocks[k + 1][best_b]);
        ++swaps;
        improved = true;
      }
    }
  }
}

MetricSkew metric_skew(const std::vector<double>& values) {
  MetricSkew skew;
  skew.cv = population_cv(values);
  skew.ratio = max_min_ratio(values);
  return skew;
}

json metric_to_json(const MetricSkew& m) {
  json obj{{"cv", m.cv}};
  if (std::isinf(m.ratio))
    obj["ratio"] = "inf";
  else
    obj["ratio"] = m.ratio;
  return obj;
}

}  // namespace

std::string to_string(SkewKind kind) {
  switch (kind) {
    case SkewKind::Iid: return "iid";
    case SkewKind::Quantity: return "quantity";
    case SkewKind::SentenceLength: return "length";
    case SkewKind::Vocabulary: return "vocab";
  }
  return "iid";
}

SkewKind skew_kind_from_string(const std::string& name) {
  if (name == "iid") return SkewKind::Iid;
  if (name == "quantity") return SkewKind::Quantity;
  if (name == "length") return SkewKind::SentenceLength;
  if (name == "vocab") return SkewKind::Vocabulary;
  throw ConfigError("unknown partition kind: " + name + " (expected iid|quantity|length|vocab)");
}

std::vector<std::int64_t> PartitionManifest::doc_counts() const {
  std::vector<std::int64_t> counts;
  counts.reserve(assignment.size());
  for (const auto& ids : assignment) counts.push_back(static_cast<std::int64_t>(ids.size()));
  return counts;
}

std::vector<std::vector<const Document*>> PartitionManifest::shards(const Corpus& corpus) const {
  std::unordered_map<std::string, const Document*> by_id;
  for (const auto& doc : corpus.docs) by_id.emplace(doc.id, &doc);
  std::vector<std::vector<const Document*>> out(assignment.size());
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    for (const auto& id : assignment[k]) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("manifest references unknown document id: " + id);
      out[k].push_back(it->second);
    }
  }
  return out;
}

PartitionManifest partition_iid(const Corpus& corpus, int num_clients, std::uint64_t seed) {
  require_clients(corpus, num_clients);
  std::vector<std::size_t> order(corpus.docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> blocks(static_cast<std::size_t>(num_clients));
  for (std::size_t i = 0; i < order.size(); ++i) blocks[i % static_cast<std::size_t>(num_clients)].push_back(order[i]);

  PartitionSpec spec;
  spec.kind = SkewKind::Iid;
  spec.num_clients = num_clients;
  spec.skew_factor = 1.0;
  spec.seed = seed;
  return finalize(corpus, spec, std::move(blocks));
}

std::vector<std::int64_t> quantity_targets(std::int64_t total, int num_clients, double skew_factor) {
  if (skew_factor <= 1.0) throw ConfigError("quantity skew: skew_factor must exceed 1");
  // Geometric weights with max/min == skew_factor, largest for client 1.
  const double rho = std::pow(skew_factor, 1.0 / static_cast<double>(num_clients - 1));
  std::vector<double> weights(static_cast<std::size_t>(num_clients));
  double sum = 0.0;
  for (int k = 0; k < num_clients; ++k) {
    weights[static_cast<std::size_t>(k)] = std::pow(rho, static_cast<double>(num_clients - 1 - k));
    sum += weights[static_cast<std::size_t>(k)];
  }

  std::vector<std::int64_t> targets(static_cast<std::size_t>(num_clients));
  std::vector<std::pair<double, int>> remainders;
  std::int64_t assigned = 0;
  for (int k = 0; k < num_clients; ++k) {
    const double quota = static_cast<double>(total) * weights[static_cast<std::size_t>(k)] / sum;
    targets[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(std::floor(quota));
    assigned += targets[static_cast<std::size_t>(k)];
    remainders.emplace_back(quota - std::floor(quota), k);
  }
  // Largest remainder; ties to the lower client index.
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::int64_t i = 0; i < total - assigned; ++i)
    ++targets[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)];

  for (std::int64_t t : targets)
    if (t < 1)
      throw ConfigError("quantity skew: infeasible targets (a client would receive no documents)");
  return targets;
}

PartitionManifest partition_quantity_skew(const Corpus& corpus, const PartitionSpec& spec) {
  require_clients(corpus, spec.num_clients);
  const auto targets = quantity_targets(static_cast<std::int64_t>(corpus.docs.size()),
                                        spec.num_clients, spec.skew_factor);

  // Deal documents in sentence-length order against running quotas, so each
  // client samples every length stratum in proportion to its target. This
  // keeps the secondary metrics close while the counts carry all the skew.
  std::vector<std::size_t> order(corpus.docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double la = doc_mean_sentence_len(corpus.docs[a]);
    const double lb = doc_mean_sentence_len(corpus.docs[b]);
    if (la != lb) return la < lb;
    return corpus.docs[a].id < corpus.docs[b].id;
  });

  const double total = static_cast<double>(order.size());
  std::vector<std::vector<std::size_t>> blocks(static_cast<std::size_t>(spec.num_clients));
  std::vector<std::int64_t> assigned(static_cast<std::size_t>(spec.num_clients), 0);
  for (std::size_t j = 0; j < order.size(); ++j) {
    int best = -1;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < spec.num_clients; ++k) {
      if (assigned[static_cast<std::size_t>(k)] >= targets[static_cast<std::size_t>(k)]) continue;
      const double deficit = static_cast<double>(targets[static_cast<std::size_t>(k)]) *
                                 static_cast<double>(j + 1) / total -
                             static_cast<double>(assigned[static_cast<std::size_t>(k)]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = k;
      }
    }
    blocks[static_cast<std::size_t>(best)].push_back(order[j]);
    ++assigned[static_cast<std::size_t>(best)];
  }
  return finalize(corpus, spec, std::move(blocks));
}

PartitionManifest partition_sentence_length_skew(const Corpus& corpus, const PartitionSpec& spec) {
  require_clients(corpus, spec.num_clients);

  std::vector<std::size_t> order(corpus.docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double first_len = doc_mean_sentence_len(corpus.docs[order[0]]);
  const bool has_variance = std::any_of(order.begin(), order.end(), [&](std::size_t i) {
    return doc_mean_sentence_len(corpus.docs[i]) != first_len;
  });
  if (!has_variance)
    throw SkewUnachievableError("sentence-length skew unachievable: zero variance corpus");

  // Shortest documents to client 1, longest to client K; contiguous quantile
  // blocks maximize the max/min mean-length ratio under equal counts.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double la = doc_mean_sentence_len(corpus.docs[a]);
    const double lb = doc_mean_sentence_len(corpus.docs[b]);
    if (la != lb) return la < lb;
    return corpus.docs[a].id < corpus.docs[b].id;
  });

  auto blocks = cut_blocks(order, equal_counts(static_cast<std::int64_t>(order.size()), spec.num_clients));
  adjacent_swap_pass(corpus, blocks, SwapGoal::EqualizeUniques);
  return finalize(corpus, spec, std::move(blocks));
}

PartitionManifest partition_vocabulary_skew(const Corpus& corpus, const PartitionSpec& spec,
                                            std::int64_t rare_threshold) {
  require_clients(corpus, spec.num_clients);

  const auto& first_tokens = corpus.docs.front().tokens;
  std::unordered_set<std::string> first_set(first_tokens.begin(), first_tokens.end());
  const bool all_same_set = std::all_of(corpus.docs.begin(), corpus.docs.end(), [&](const Document& d) {
    std::unordered_set<std::string> s(d.tokens.begin(), d.tokens.end());
    return s == first_set;
  });
  if (all_same_set)
    throw SkewUnachievableError("vocabulary skew unachievable: zero lexical diversity");

  std::unordered_map<std::string, std::int64_t> global_freq;
  for (const auto& doc : corpus.docs)
    for (const auto& tok : doc.tokens) ++global_freq[tok];

  // Score = distinct tokens whose corpus frequency is at most the threshold.
  std::vector<std::int64_t> score(corpus.docs.size(), 0);
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    std::unordered_set<std::string> distinct(corpus.docs[i].tokens.begin(), corpus.docs[i].tokens.end());
    for (const auto& tok : distinct)
      if (global_freq[tok] <= rare_threshold) ++score[i];
  }

  std::vector<std::size_t> order(corpus.docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] < score[b];
    return corpus.docs[a].id < corpus.docs[b].id;
  });

  auto blocks = cut_blocks(order, equal_counts(static_cast<std::int64_t>(order.size()), spec.num_clients));
  adjacent_swap_pass(corpus, blocks, SwapGoal::EqualizeMeanLen);
  return finalize(corpus, spec, std::move(blocks));
}

PartitionManifest partition(const Corpus& corpus, const PartitionSpec& spec, std::int64_t rare_threshold) {
  switch (spec.kind) {
    case SkewKind::Iid: return partition_iid(corpus, spec.num_clients, spec.seed);
    case SkewKind::Quantity: return partition_quantity_skew(corpus, spec);
    case SkewKind::SentenceLength: return partition_sentence_length_skew(corpus, spec);
    case SkewKind::Vocabulary: return partition_vocabulary_skew(corpus, spec, rare_threshold);
  }
  throw ConfigError("partition: unknown kind");
}

SkewReport measure_skew(const PartitionManifest& manifest) {
  std::vector<double> counts, lens, uniques;
  for (const auto& stats : manifest.per_client_stats) {
    counts.push_back(static_cast<double>(stats.doc_count));
    lens.push_back(stats.mean_sentence_length);
    uniques.push_back(static_cast<double>(stats.unique_word_count));
  }
  SkewReport report;
  report.doc_count = metric_skew(counts);
  report.mean_sentence_length = metric_skew(lens);
  report.unique_word_count = metric_skew(uniques);
  return report;
}

std::vector<std::string> validate_partition(const PartitionManifest& manifest, const Corpus& corpus) {
  std::vector<std::string> violations;

  std::unordered_map<std::string, const Document*> by_id;
  for (const auto& doc : corpus.docs) by_id.emplace(doc.id, &doc);

  if (manifest.assignment.size() != manifest.per_client_stats.size())
    violations.push_back("assignment and per_client_stats disagree on client count");

  std::unordered_map<std::string, int> seen;  // doc id → first client holding it
  for (std::size_t k = 0; k < manifest.assignment.size(); ++k) {
    const auto& ids = manifest.assignment[k];
    if (ids.empty()) violations.push_back("client " + std::to_string(k + 1) + " has no documents");
    std::vector<const Document*> docs;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        violations.push_back("client " + std::to_string(k + 1) + " references unknown document " + id);
        continue;
      }
      auto [seen_it, inserted] = seen.emplace(id, static_cast<int>(k));
      if (!inserted)
        violations.push_back("document " + id + " assigned to clients " +
                             std::to_string(seen_it->second + 1) + " and " + std::to_string(k + 1));
      docs.push_back(it->second);
    }
    if (k < manifest.per_client_stats.size()) {
      const CorpusStats recomputed = corpus_stats(docs);
      if (!(recomputed == manifest.per_client_stats[k]))
        violations.push_back("client " + std::to_string(k + 1) + " stats do not match its documents");
    }
  }

  for (const auto& doc : corpus.docs)
    if (seen.find(doc.id) == seen.end())
      violations.push_back("document " + doc.id + " missing from every client");

  return violations;
}

std::string manifest_to_json(const PartitionManifest& manifest) {
  json root;
  root["spec"] = {{"kind", to_string(manifest.spec.kind)},
                  {"num_clients", manifest.spec.num_clients},
                  {"skew_factor", manifest.spec.skew_factor},
                  {"seed", manifest.spec.seed}};
  json clients = json::array();
  for (std::size_t k = 0; k < manifest.assignment.size(); ++k) {
    const auto& stats = manifest.per_client_stats[k];
    clients.push_back({{"k", k + 1},
                       {"doc_ids", manifest.assignment[k]},
                       {"stats",
                        {{"doc_count", stats.doc_count},
                         {"mean_sentence_length", stats.mean_sentence_length},
                         {"unique_word_count", stats.unique_word_count}}}});
  }
  root["clients"] = std::move(clients);

  const SkewReport report = measure_skew(manifest);
  root["skew_report"] = {{"doc_count", metric_to_json(report.doc_count)},
                         {"mean_sentence_length", metric_to_json(report.mean_sentence_length)},
                         {"unique_word_count", metric_to_json(report.unique_word_count)}};
  return root.dump(2);
}

PartitionManifest manifest_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("manifest parse error: ") + e.what());
  }
  PartitionManifest manifest;
  manifest.spec.kind = skew_kind_from_string(root.at("spec").at("kind").get<std::string>());
  manifest.spec.num_clients = root.at("spec").at("num_clients").get<int>();
  manifest.spec.skew_factor = root.at("spec").at("skew_factor").get<double>();
  manifest.spec.seed = root.at("spec").at("seed").get<std::uint64_t>();
  for (const auto& client : root.at("clients")) {
    manifest.assignment.push_back(client.at("doc_ids").get<std::vector<std::string>>());
    CorpusStats stats;
    stats.doc_count = client.at("stats").at("doc_count").get<std::int64_t>();
    stats.mean_sentence_length = client.at("stats").at("mean_sentence_length").get<double>();
    stats.unique_word_count = client.at("stats").at("unique_word_count").get<std::int64_t>();
    manifest.per_client_stats.push_back(stats);
  }
  return manifest;
}

}  // namespace ffdapt
