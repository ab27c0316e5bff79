#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ffdapt/federation.hpp"

namespace ffdapt {

// Per-round pairing of the two runs plus the improvement series.
struct RoundComparison {
  int round = 0;
  double wall_fdapt = 0.0;
  double wall_ffdapt = 0.0;
  std::uint64_t flops_fdapt = 0;
  std::uint64_t flops_ffdapt = 0;
  double improvement_wall = 0.0;   // percent
  double improvement_flops = 0.0;  // percent
};

struct EfficiencyReport {
  double round_time_fdapt = 0.0;    // T: mean round time, serial-sum basis
  double round_time_ffdapt = 0.0;   // T_F
  double improvement_wall = 0.0;    // percent, from the mean round times
  double improvement_wall_total = 0.0;  // percent, from summed wall time
  double improvement_flops = 0.0;   // percent, from backward-FLOP totals
  std::vector<RoundComparison> per_round;
};

// I = (T - T_F) / T_F * 100. Negative when the frozen run is slower.
double efficiency_improvement(double round_time, double round_time_frozen);

// Pairs the rounds of a standard run and a frozen run that share everything
// but mode and schedule; throws RunMismatchError listing differing fields.
EfficiencyReport compare_runs(const ExperimentResult& fdapt, const ExperimentResult& ffdapt);

std::string efficiency_report_to_json(const EfficiencyReport& report);

struct SummaryRow {
  std::string mode;
  int clients = 0;
  std::string skew_kind;
  double final_loss = 0.0;
  double perplexity = 0.0;
  double mean_round_time = 0.0;
  std::uint64_t total_backward_flops = 0;
  std::string improvement_wall_pct;   // empty when not applicable
  std::string improvement_flops_pct;
};

// summary.csv (fixed column order) plus one rounds JSONL per experiment and,
// when given, the efficiency report JSON. Returns the paths written.
std::vector<std::string> write_reports(const std::vector<const ExperimentResult*>& results,
                                       const EfficiencyReport* report, const std::string& out_dir);

std::vector<SummaryRow> read_summary_csv(const std::string& path);

}  // namespace ffdapt
