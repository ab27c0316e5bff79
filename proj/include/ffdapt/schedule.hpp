#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ffdapt {

struct ScheduleParams {
  int num_groups = 6;                       // N
  int num_clients = 2;                      // K
  std::vector<std::int64_t> sample_counts;  // n_k, from the manifest's doc counts
  int rounds = 1;                           // T
  int max_frozen = 5;                       // ε in [0, N-1]
  double gamma = 1.0;
  // Compatibility switch: freeze the window {start..start+N_k} instead of
  // exactly N_k groups. See frozen window sizing note in schedule.cpp.
  bool literal_pseudocode = false;

  bool operator==(const ScheduleParams&) const = default;
};

struct Cursor {
  int start = 1;  // 1-based group index
};

// The full precomputed plan: plan[t][k] is the sorted frozen group set for
// round t+1, client k+1. Pure function of the params; the cursor carries
// across clients and rounds.
struct FreezePlan {
  ScheduleParams params;
  std::vector<int> counts;                              // N_k per client
  std::vector<std::vector<std::vector<int>>> rounds;    // [t][k] → frozen groups

  const std::vector<std::vector<int>>& round(int t) const {  // t is 1-based
    return rounds[static_cast<std::size_t>(t - 1)];
  }
};

// N_k = min(ε, round_half_up(⌈n_k/n · N⌉ · γ)), clamped to [0, N-1]. The
// ceiling is taken in exact integer arithmetic.
int frozen_count(std::int64_t n_k, std::int64_t n_total, int num_groups, int max_frozen,
                 double gamma);

// One cursor step: the frozen window for this client and the advanced cursor.
std::pair<std::vector<int>, Cursor> advance(Cursor cursor, int n_frozen, int num_groups,
                                            bool literal_pseudocode = false);

FreezePlan build_schedule(const ScheduleParams& params);

std::string schedule_to_json(const FreezePlan& plan);

}  // namespace ffdapt
