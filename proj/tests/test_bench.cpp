#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "streamlab/bench.hpp"
#include "streamlab/rng.hpp"

using namespace streamlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("streamlab-bench-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::string& args) {
  const auto cmd = std::string(STREAMLAB_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig concat_config() {
  return experiment_config_from_json(Json::parse(R"({"pipeline":"concat","inputs":{"count":20},
    "sim":{"checkpoint_interval":100}})"));
}

}  // namespace

TEST_CASE("nearest-rank percentiles") {
  std::vector<double> xs;
  for (int i = 1; i <= 100; ++i) xs.push_back(i);
  std::shuffle(xs.begin(), xs.end(), std::mt19937_64(1));
  const auto r = latency_report(xs);
  CHECK(r.samples == 100);
  CHECK(*r.p50 == 50);
  CHECK(*r.p75 == 75);
  CHECK(*r.p95 == 95);
  CHECK(*r.p99 == 99);

  const auto one = latency_report({42});
  CHECK(*one.p50 == 42);
  CHECK(*one.p99 == 42);

  const auto none = latency_report({});
  CHECK(none.samples == 0);
  CHECK_FALSE(none.p50.has_value());
  CHECK(latency_report_to_json(none)["p50"].is_null());
}

TEST_CASE("percentiles are ordered and drawn from the samples") {
  RngStream rng(8, "latency");
  for (int round = 0; round < 100; ++round) {
    std::vector<double> xs(static_cast<std::size_t>(rng.uniform_int(1, 60)));
    for (auto& x : xs) x = rng.uniform01() * 100;
    const auto r = latency_report(xs);
    CHECK(*r.p50 <= *r.p75);
    CHECK(*r.p75 <= *r.p95);
    CHECK(*r.p95 <= *r.p99);
    for (double p : {*r.p50, *r.p75, *r.p95, *r.p99}) CHECK(std::find(xs.begin(), xs.end(), p) != xs.end());
  }
}

TEST_CASE("experiment configs") {
  const auto c = concat_config();
  CHECK(build_inputs(c).size() == 20);
  CHECK(std::get<Text>(build_inputs(c)[0].payload).value == "a");
  const auto back = experiment_config_from_json(experiment_config_to_json(c));
  CHECK(experiment_config_to_json(back) == experiment_config_to_json(c));

  CHECK_THROWS_AS(experiment_config_from_json(Json{{"pipelines", "concat"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json{{"pipeline", "nope"}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(Json{{"sim", {{"checkpoint_interval", -1}}}}), ConfigError);
  CHECK_THROWS_AS(build_inputs(experiment_config_from_json(Json{{"inputs", {{"count", -3}}}})), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/streamlab.json"), ConfigError);

  auto idx = experiment_config_from_json(Json{{"pipeline", "index"}, {"inputs", {{"count", 12}}}});
  CHECK(build_inputs(idx).size() == 12);
  CHECK(std::holds_alternative<Document>(build_inputs(idx)[0].payload));
}

TEST_CASE("CSV output") {
  const auto dir = scratch("csv");
  const auto ex = run_experiment(concat_config());
  CHECK(ex.report.inputs == 20);
  CHECK(ex.report.outputs == 20);
  const auto path = (dir / "results.csv").string();
  append_csv(path, {ex.report});
  append_csv(path, {ex.report});
  std::istringstream in(slurp(path));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == kCsvVersionLine);
  CHECK(lines[1] == kCsvHeader);
  CHECK(lines[2] == csv_row(ex.report));
  CHECK(lines[2] == lines[3]);
  CHECK(lines[2].rfind("ExactlyOnceDeterministic,100.000,1,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("sweeps are ordered and independent of the worker count") {
  const auto modes = std::vector<GuaranteeMode>{GuaranteeMode::ExactlyOnceTransactional,
                                                GuaranteeMode::ExactlyOnceDeterministic};
  const auto a = sweep(concat_config(), {200, 50}, modes, 1);
  const auto b = sweep(concat_config(), {200, 50}, modes, 4);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(csv_row(a[i]) == csv_row(b[i]));
  CHECK(a[0].mode == GuaranteeMode::ExactlyOnceDeterministic);
  CHECK(a[0].checkpoint_interval == 50);
  CHECK(a[1].checkpoint_interval == 200);
}

TEST_CASE("fault profiles") {
  const auto c = concat_config();
  const auto g = build_pipeline(c);
  CHECK(fault_profile("none", 1, c.sim, g, 20).node_failures.empty());
  CHECK(fault_profile("loss", 1, c.sim, g, 20).packet_loss_probability == doctest::Approx(0.01));
  const auto one = fault_profile("crash", 1, c.sim, g, 20);
  REQUIRE(one.node_failures.size() == 1);
  CHECK(one.node_failures[0].node < 3);
  for (std::uint64_t s = 1; s <= 20; ++s) {
    const auto p = fault_profile("crashes", s, c.sim, g, 20);
    CHECK(p.node_failures.size() >= 1);
    CHECK(p.node_failures.size() <= 3);
    CHECK(fault_profile("crashes", s, c.sim, g, 20).node_failures.size() == p.node_failures.size());
  }
  CHECK_THROWS_AS(fault_profile("meteor", 1, c.sim, g, 20), ConfigError);
}

TEST_CASE("a small deterministic audit passes") {
  auto c = experiment_config_from_json(Json::parse(R"({"pipeline":"concat",
    "inputs":{"texts":["a","c","b","d","e"]},"sim":{"checkpoint_interval":50}})"));
  AuditOptions o;
  o.seeds = 5;
  const auto s = audit(c, o);
  CHECK(s.passed());
  CHECK(s.failing_seeds().empty());
  CHECK(s.tally.at("exactly_once") == std::pair<int, int>{5, 5});
  CHECK(s.tally.at("golden") == std::pair<int, int>{5, 5});
  CHECK(audit_summary_to_json(s)["seeds"].size() == 5);
}

TEST_CASE("CLI exit codes and outputs") {
  const auto dir = scratch("cli");
  const std::string concat = std::string(STREAMLAB_CONFIGS) + "/concat.json";
  CHECK(cli("run --config " + concat + " --out " + dir.string() + " --trace") == 0);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "results.csv"));
  CHECK(fs::exists(dir / "trace.jsonl"));

  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"sim":{"nodes":0}})";
  CHECK(cli("run --config " + bad.string() + " --out " + dir.string()) == 2);
  CHECK(cli("run --config " + concat + " --mode Sometimes --out " + dir.string()) == 2);
  CHECK(cli("run") == 2);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("audit --pipeline concat --inputs 5 --seeds 3 --interval 50") == 0);
  CHECK(cli("audit --pipeline concat --inputs 5 --seeds 3 --faults meteor") == 2);
  CHECK(cli("run --config " + concat + " --out /proc/streamlab") == 1);
  fs::remove_all(dir);
}
