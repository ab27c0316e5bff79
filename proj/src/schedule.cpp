#include "ffdapt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ffdapt/errors.hpp"

namespace ffdapt {

namespace {

// Window sizing. "end = start + N_k" with {start..end} frozen would freeze
// N_k + 1 groups, so the default freezes exactly N_k (end = start + N_k - 1)
// to keep N_k and the ε cap meaningful. literal_pseudocode restores the
// wider window for comparison against a verbatim trace.

void validate(const ScheduleParams& p) {
  if (p.num_groups < 3) throw ConfigError("schedule: need at least 3 groups");
  if (p.num_clients < 1) throw ConfigError("schedule: need at least 1 client");
  if (p.rounds < 1) throw ConfigError("schedule: need at least 1 round");
  if (p.max_frozen < 0 || p.max_frozen > p.num_groups - 1)
    throw ConfigError("schedule: max_frozen must lie in [0, N-1]");
  if (!(p.gamma > 0.0)) throw ConfigError("schedule: gamma must be positive");
  if (p.sample_counts.size() != static_cast<std::size_t>(p.num_clients))
    throw ConfigError("schedule: sample_counts size must equal the client count");
  for (std::int64_t n : p.sample_counts)
    if (n < 1) throw ConfigError("schedule: every sample count must be at least 1");
}

}  // namespace

int frozen_count(std::int64_t n_k, std::int64_t n_total, int num_groups, int max_frozen,
                 double gamma) {
  if (n_k < 1 || n_total < n_k) throw ConfigError("frozen_count: need 1 <= n_k <= n_total");
  if (num_groups < 3) throw ConfigError("frozen_count: need at least 3 groups");
  if (max_frozen < 0 || max_frozen > num_groups - 1)
    throw ConfigError("frozen_count: max_frozen must lie in [0, N-1]");
  if (!(gamma > 0.0)) throw ConfigError("frozen_count: gamma must be positive");

  const std::int64_t ceil_share = (n_k * num_groups + n_total - 1) / n_total;  // ⌈n_k/n · N⌉
  const double scaled = static_cast<double>(ceil_share) * gamma;
  const std::int64_t rounded = static_cast<std::int64_t>(std::floor(scaled + 0.5));
  const std::int64_t capped = std::min<std::int64_t>(max_frozen, rounded);
  return static_cast<int>(std::clamp<std::int64_t>(capped, 0, num_groups - 1));
}

std::pair<std::vector<int>, Cursor> advance(Cursor cursor, int n_frozen, int num_groups,
                                            bool literal_pseudocode) {
  if (cursor.start < 1 || cursor.start > num_groups)
    throw ConfigError("advance: cursor out of range");
  if (n_frozen < 0 || n_frozen > num_groups - 1)
    throw ConfigError("advance: frozen count out of range");

  if (!literal_pseudocode && n_frozen == 0) return {{}, cursor};

  int end = cursor.start + n_frozen - (literal_pseudocode ? 0 : 1);
  std::vector<int> frozen;
  if (end <= num_groups) {
    for (int g = cursor.start; g <= end; ++g) frozen.push_back(g);
  } else {
    end -= num_groups;
    for (int g = cursor.start; g <= num_groups; ++g) frozen.push_back(g);
    for (int g = 1; g <= end; ++g) frozen.push_back(g);
  }

  Cursor next;
  next.start = end + 1;
  if (next.start > num_groups) next.start -= num_groups;
  std::sort(frozen.begin(), frozen.end());
  return {std::move(frozen), next};
}

FreezePlan build_schedule(const ScheduleParams& params) {
  validate(params);

  FreezePlan plan;
  plan.params = params;
  const std::int64_t n_total =
      std::accumulate(params.sample_counts.begin(), params.sample_counts.end(), std::int64_t{0});
  plan.counts.reserve(params.sample_counts.size());
  for (std::int64_t n_k : params.sample_counts)
    plan.counts.push_back(frozen_count(n_k, n_total, params.num_groups, params.max_frozen, params.gamma));

  Cursor cursor;  // initialized once; persists across clients and rounds
  plan.rounds.resize(static_cast<std::size_t>(params.rounds));
  for (int t = 0; t < params.rounds; ++t) {
    auto& row = plan.rounds[static_cast<std::size_t>(t)];
    row.reserve(static_cast<std::size_t>(params.num_clients));
    for (int k = 0; k < params.num_clients; ++k) {
      auto [frozen, next] = advance(cursor, plan.counts[static_cast<std::size_t>(k)],
                                    params.num_groups, params.literal_pseudocode);
      row.push_back(std::move(frozen));
      cursor = next;
    }
  }
  return plan;
}

std::string schedule_to_json(const FreezePlan& plan) {
  nlohmann::json root;
  root["params"] = {{"num_groups", plan.params.num_groups},
                    {"num_clients", plan.params.num_clients},
                    {"sample_counts", plan.params.sample_counts},
                    {"rounds", plan.params.rounds},
                    {"max_frozen", plan.params.max_frozen},
                    {"gamma", plan.params.gamma},
                    {"literal_pseudocode", plan.params.literal_pseudocode}};
  root["counts"] = plan.counts;
  root["rounds"] = plan.rounds;
  return root.dump(2);
}

}  // namespace ffdapt
