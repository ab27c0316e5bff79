#include "ffdapt/metrics.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ffdapt/errors.hpp"

namespace ffdapt {

namespace {

constexpr char kCsvHeader[] =
    "mode,clients,skew_kind,final_loss,perplexity,mean_round_time,"
    "total_backward_flops,improvement_wall_pct,improvement_flops_pct";

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void append_mismatch(std::vector<std::string>& fields, bool differs, const char* name) {
  if (differs) fields.push_back(name);
}

}  // namespace

double efficiency_improvement(double round_time, double round_time_frozen) {
  if (!(round_time_frozen > 0.0))
    throw std::invalid_argument("efficiency_improvement: frozen round time must be positive");
  return (round_time - round_time_frozen) / round_time_frozen * 100.0;
}

EfficiencyReport compare_runs(const ExperimentResult& fdapt, const ExperimentResult& ffdapt) {
  std::vector<std::string> differing;
  append_mismatch(differing, fdapt.config.mode != Mode::Fdapt, "left run is not fdapt");
  append_mismatch(differing, ffdapt.config.mode != Mode::Ffdapt, "right run is not ffdapt");
  append_mismatch(differing, fdapt.corpus_fingerprint != ffdapt.corpus_fingerprint, "corpus");
  append_mismatch(differing, fdapt.manifest.spec != ffdapt.manifest.spec, "manifest.spec");
  append_mismatch(differing, fdapt.manifest.assignment != ffdapt.manifest.assignment,
                  "manifest.assignment");
  append_mismatch(differing, fdapt.config.train != ffdapt.config.train, "train");
  append_mismatch(differing, fdapt.config.model != ffdapt.config.model, "model");
  append_mismatch(differing, fdapt.config.eval != ffdapt.config.eval, "eval");
  append_mismatch(differing, fdapt.config.num_clients != ffdapt.config.num_clients, "num_clients");
  append_mismatch(differing, fdapt.config.rounds != ffdapt.config.rounds, "rounds");
  append_mismatch(differing, fdapt.config.eval_every != ffdapt.config.eval_every, "eval_every");
  append_mismatch(differing, fdapt.config.holdout_fraction != ffdapt.config.holdout_fraction,
                  "holdout_fraction");
  append_mismatch(differing, fdapt.config.master_seed != ffdapt.config.master_seed, "master_seed");
  append_mismatch(differing, fdapt.rounds.size() != ffdapt.rounds.size(), "recorded rounds");
  if (!differing.empty()) {
    std::string msg = "compare_runs: runs are not comparable; differing fields:";
    for (const auto& f : differing) msg += " " + f;
    throw RunMismatchError(msg);
  }

  EfficiencyReport report;
  double wall_sum_fdapt = 0.0, wall_sum_ffdapt = 0.0;
  std::uint64_t flops_fdapt = 0, flops_ffdapt = 0;
  for (std::size_t t = 0; t < fdapt.rounds.size(); ++t) {
    RoundComparison cmp;
    cmp.round = fdapt.rounds[t].round;
    cmp.wall_fdapt = fdapt.rounds[t].wall_sum;
    cmp.wall_ffdapt = ffdapt.rounds[t].wall_sum;
    cmp.flops_fdapt = fdapt.rounds[t].backward_flops_total();
    cmp.flops_ffdapt = ffdapt.rounds[t].backward_flops_total();
    cmp.improvement_wall = efficiency_improvement(cmp.wall_fdapt, cmp.wall_ffdapt);
    cmp.improvement_flops = efficiency_improvement(static_cast<double>(cmp.flops_fdapt),
                                                   static_cast<double>(cmp.flops_ffdapt));
    wall_sum_fdapt += cmp.wall_fdapt;
    wall_sum_ffdapt += cmp.wall_ffdapt;
    flops_fdapt += cmp.flops_fdapt;
    flops_ffdapt += cmp.flops_ffdapt;
    report.per_round.push_back(cmp);
  }

  const double rounds = static_cast<double>(fdapt.rounds.size());
  report.round_time_fdapt = wall_sum_fdapt / rounds;
  report.round_time_ffdapt = wall_sum_ffdapt / rounds;
  report.improvement_wall = efficiency_improvement(report.round_time_fdapt, report.round_time_ffdapt);
  report.improvement_wall_total = efficiency_improvement(wall_sum_fdapt, wall_sum_ffdapt);
  report.improvement_flops = efficiency_improvement(static_cast<double>(flops_fdapt),
                                                    static_cast<double>(flops_ffdapt));
  return report;
}

std::string efficiency_report_to_json(const EfficiencyReport& report) {
  nlohmann::json obj;
  obj["round_time_fdapt"] = report.round_time_fdapt;
  obj["round_time_ffdapt"] = report.round_time_ffdapt;
  obj["improvement_wall"] = report.improvement_wall;
  obj["improvement_wall_total"] = report.improvement_wall_total;
  obj["improvement_flops"] = report.improvement_flops;
  nlohmann::json series = nlohmann::json::array();
  for (const auto& cmp : report.per_round) {
    series.push_back({{"round", cmp.round},
                      {"wall_fdapt", cmp.wall_fdapt},
                      {"wall_ffdapt", cmp.wall_ffdapt},
                      {"flops_fdapt", cmp.flops_fdapt},
                      {"flops_ffdapt", cmp.flops_ffdapt},
                      {"improvement_wall", cmp.improvement_wall},
                      {"improvement_flops", cmp.improvement_flops}});
  }
  obj["per_round"] = std::move(series);
  return obj.dump(2);
}

std::vector<std::string> write_reports(const std::vector<const ExperimentResult*>& results,
                                       const EfficiencyReport* report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create report directory " + out_dir + ": " + ec.message());

  std::vector<std::string> written;

  const std::string csv_path = (fs::path(out_dir) / "summary.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << kCsvHeader << '\n';
  for (std::size_t i = 0; i < results.size(); ++i) {
    const ExperimentResult& r = *results[i];
    const bool frozen = r.config.mode == Mode::Ffdapt;
    csv << to_string(r.config.mode) << ',' << r.config.num_clients << ','
        << to_string(r.manifest.spec.kind) << ',' << format_double(r.final_eval_loss) << ','
        << format_double(r.final_perplexity) << ',' << format_double(r.mean_round_wall()) << ','
        << r.total_backward_flops() << ',';
    if (report != nullptr && frozen) {
      csv << format_double(report->improvement_wall) << ','
          << format_double(report->improvement_flops);
    } else {
      csv << ',';
    }
    csv << '\n';
  }
  csv.close();
  if (csv.fail()) throw IoError("write failed: " + csv_path);
  written.push_back(csv_path);

  for (std::size_t i = 0; i < results.size(); ++i) {
    const ExperimentResult& r = *results[i];
    const std::string rounds_path =
        (fs::path(out_dir) / ("rounds_" + std::to_string(i + 1) + "_" + to_string(r.config.mode) + ".jsonl"))
            .string();
    std::ofstream rounds(rounds_path);
    if (!rounds) throw IoError("cannot write " + rounds_path);
    for (const auto& record : r.rounds) rounds << round_record_to_json(record) << '\n';
    rounds.close();
    if (rounds.fail()) throw IoError("write failed: " + rounds_path);
    written.push_back(rounds_path);
  }

  if (report != nullptr) {
    const std::string report_path = (fs::path(out_dir) / "efficiency.json").string();
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot write " + report_path);
    out << efficiency_report_to_json(*report) << '\n';
    out.close();
    if (out.fail()) throw IoError("write failed: " + report_path);
    written.push_back(report_path);
  }
  return written;
}

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty summary: " + path);
  if (line != kCsvHeader) throw IoError("unexpected summary header in " + path);

  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream split(line);
    while (std::getline(split, cell, ',')) cells.push_back(cell);
    while (cells.size() < 9) cells.emplace_back();
    SummaryRow row;
    row.mode = cells[0];
    row.clients = std::stoi(cells[1]);
    row.skew_kind = cells[2];
    row.final_loss = std::stod(cells[3]);
    row.perplexity = std::stod(cells[4]);
    row.mean_round_time = std::stod(cells[5]);
    row.total_backward_flops = std::stoull(cells[6]);
    row.improvement_wall_pct = cells[7];
    row.improvement_flops_pct = cells[8];
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ffdapt
