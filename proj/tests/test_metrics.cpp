#include <doctest.h>

#include <cmath>

#include "ffdapt/errors.hpp"
#include "ffdapt/metrics.hpp"
#include "ffdapt/rng.hpp"
#include "test_util.hpp"

using namespace ffdapt;

namespace {

// Minimal comparable pair of runs with synthetic telemetry.
std::pair<ExperimentResult, ExperimentResult> fake_runs() {
  ExperimentResult fdapt;
  fdapt.config.mode = Mode::Fdapt;
  fdapt.corpus_fingerprint = 42;
  fdapt.manifest.spec.num_clients = 2;
  fdapt.manifest.assignment = {{"a"}, {"b"}};

  ExperimentResult ffdapt = fdapt;
  ffdapt.config.mode = Mode::Ffdapt;

  for (int t = 1; t <= 3; ++t) {
    RoundRecord plain;
    plain.round = t;
    plain.clients = {ClientRecord{1, 0.6, 0, 900, 1.0, {}}, ClientRecord{2, 0.6, 0, 900, 1.0, {}}};
    plain.wall_max = 0.6;
    plain.wall_sum = 1.2;
    fdapt.rounds.push_back(plain);

    RoundRecord frozen;
    frozen.round = t;
    frozen.clients = {ClientRecord{1, 0.5, 0, 750, 1.0, {1}}, ClientRecord{2, 0.5, 0, 750, 1.0, {2}}};
    frozen.wall_max = 0.5;
    frozen.wall_sum = 1.0;
    ffdapt.rounds.push_back(frozen);
  }
  return {fdapt, ffdapt};
}

}  // namespace

TEST_CASE("efficiency_improvement is the relative round-time gain in percent") {
  CHECK(efficiency_improvement(90.0, 80.0) == doctest::Approx(12.5).epsilon(1e-12));
  CHECK(efficiency_improvement(5.0, 5.0) == 0.0);
  CHECK(efficiency_improvement(1.121, 1.0) == doctest::Approx(12.1).epsilon(1e-9));
  CHECK(efficiency_improvement(1.0, 2.0) == doctest::Approx(-50.0));
  CHECK_THROWS_AS(efficiency_improvement(1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(efficiency_improvement(1.0, -2.0), std::invalid_argument);

  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const double x = 0.1 + 10.0 * rng.next_double();
    const double y = 0.1 + 10.0 * rng.next_double();
    CHECK(efficiency_improvement(x, x) == 0.0);
    CHECK((efficiency_improvement(x, y) > 0.0) == (x > y));
  }
}

TEST_CASE("compare_runs pairs rounds and averages the series") {
  const auto [fdapt, ffdapt] = fake_runs();
  const EfficiencyReport report = compare_runs(fdapt, ffdapt);

  CHECK(report.round_time_fdapt == doctest::Approx(1.2));
  CHECK(report.round_time_ffdapt == doctest::Approx(1.0));
  CHECK(report.improvement_wall == doctest::Approx(20.0));
  CHECK(report.improvement_wall_total == doctest::Approx(20.0));
  CHECK(report.improvement_flops == doctest::Approx(20.0));  // 5400 vs 4500
  REQUIRE(report.per_round.size() == 3);
  CHECK(report.per_round[0].flops_fdapt == 1800);
  CHECK(report.per_round[0].flops_ffdapt == 1500);
  CHECK(report.per_round[0].improvement_flops == doctest::Approx(20.0));
}

TEST_CASE("compare_runs refuses mismatched runs and names the fields") {
  auto [fdapt, ffdapt] = fake_runs();

  SUBCASE("wrong modes") {
    CHECK_THROWS_WITH_AS(compare_runs(ffdapt, ffdapt), doctest::Contains("left run is not fdapt"),
                         RunMismatchError);
  }
  SUBCASE("different corpus") {
    ffdapt.corpus_fingerprint = 43;
    CHECK_THROWS_WITH_AS(compare_runs(fdapt, ffdapt), doctest::Contains("corpus"), RunMismatchError);
  }
  SUBCASE("different training setup lists every differing field") {
    ffdapt.config.train.learning_rate *= 2;
    ffdapt.config.master_seed += 1;
    try {
      compare_runs(fdapt, ffdapt);
      FAIL("expected RunMismatchError");
    } catch (const RunMismatchError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("train") != std::string::npos);
      CHECK(msg.find("master_seed") != std::string::npos);
    }
  }
  SUBCASE("different manifests") {
    ffdapt.manifest.assignment[0].push_back("c");
    CHECK_THROWS_WITH_AS(compare_runs(fdapt, ffdapt), doctest::Contains("manifest.assignment"),
                         RunMismatchError);
  }
}

TEST_CASE("write_reports emits a summary CSV that re-parses to the same rows") {
  const auto [fdapt, ffdapt] = fake_runs();
  ExperimentResult plain = fdapt;
  ExperimentResult frozen = ffdapt;
  plain.final_eval_loss = 5.25;
  plain.final_perplexity = std::exp(5.25);
  frozen.final_eval_loss = 5.5;
  frozen.final_perplexity = std::exp(5.5);
  const EfficiencyReport report = compare_runs(plain, frozen);

  testutil::TempDir tmp;
  const auto written = write_reports({&plain, &frozen}, &report, tmp.file("reports"));
  REQUIRE(written.size() == 4);  // csv + two jsonl + efficiency.json

  const auto rows = read_summary_csv(written.front());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].mode == "fdapt");
  CHECK(rows[0].final_loss == plain.final_eval_loss);
  CHECK(rows[0].perplexity == plain.final_perplexity);
  CHECK(rows[0].mean_round_time == plain.mean_round_wall());
  CHECK(rows[0].total_backward_flops == plain.total_backward_flops());
  CHECK(rows[0].improvement_flops_pct.empty());
  CHECK(rows[1].mode == "ffdapt");
  CHECK(rows[1].total_backward_flops == 4500);
  CHECK(std::stod(rows[1].improvement_wall_pct) == report.improvement_wall);
  CHECK(std::stod(rows[1].improvement_flops_pct) == report.improvement_flops);

  // The rounds JSONL reload to the original records.
  const std::string jsonl = testutil::read_file(written[1]);
  std::size_t lines = 0;
  for (char c : jsonl) lines += c == '\n';
  CHECK(lines == plain.rounds.size());
}

TEST_CASE("efficiency report serializes its series") {
  const auto [fdapt, ffdapt] = fake_runs();
  const EfficiencyReport report = compare_runs(fdapt, ffdapt);
  const std::string json = efficiency_report_to_json(report);
  CHECK(json.find("\"improvement_flops\": 20.0") != std::string::npos);
  CHECK(json.find("\"per_round\"") != std::string::npos);
}
