#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "streamlab/bench.hpp"
#include "streamlab/trace.hpp"

using namespace streamlab;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

// --out beats STREAMLAB_OUT, which beats the default.
std::filesystem::path output_dir(const std::string& flag) {
  std::filesystem::path dir = "streamlab-out";
  if (const char* env = std::getenv("STREAMLAB_OUT"); env && *env) dir = env;
  if (!flag.empty()) dir = flag;
  std::filesystem::create_directories(dir);
  return dir;
}

void write_json(const std::filesystem::path& p, const Json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << *v;
  return os.str();
}

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::optional<double> interval;
  std::string pipeline;
  std::string out;
};

ExperimentConfig load(const Overrides& o) {
  auto c = o.config.empty() ? experiment_config_from_json(Json::object()) : load_experiment_config(o.config);
  if (!o.pipeline.empty()) {
    c.pipeline = o.pipeline;
    build_pipeline(c);
  }
  if (o.seed) c.sim.seed = *o.seed;
  if (!o.mode.empty()) {
    try {
      c.sim.mode = guarantee_mode_from_string(o.mode);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.interval) c.sim.checkpoint_interval = *o.interval;
  c.sim.validate();
  return c;
}

int cmd_run(const Overrides& o, bool trace) {
  const auto c = load(o);
  const auto ex = run_experiment(c);
  const auto dir = output_dir(o.out);
  write_json(dir / "report.json",
             {{"config", experiment_config_to_json(c)}, {"report", experiment_report_to_json(ex.report)}});
  append_csv((dir / "results.csv").string(), {ex.report});
  if (trace) {
    std::ofstream out(dir / "trace.jsonl");
    write_trace_jsonl(out, ex.result.trace);
  }
  const auto& r = ex.report;
  std::cout << to_string(r.mode) << " interval=" << r.checkpoint_interval << "ms seed=" << r.seed
            << " p50=" << fmt(r.latency.p50) << " p75=" << fmt(r.latency.p75) << " p95=" << fmt(r.latency.p95)
            << " p99=" << fmt(r.latency.p99) << " recoveries=" << r.recoveries << " inputs=" << r.inputs
            << " outputs=" << r.outputs << '\n';
  for (const auto& e : r.recovery_events) std::cout << "  " << e << '\n';
  std::cout << "wrote " << dir.string() << '\n';
  return 0;
}

int cmd_sweep(const Overrides& o, const std::string& intervals, const std::string& modes, unsigned workers) {
  const auto c = load(o);
  std::vector<double> ivs;
  for (const auto& s : split(intervals)) {
    try {
      ivs.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw ConfigError("bad interval '" + s + "'");
    }
    if (!(ivs.back() > 0)) throw ConfigError("intervals must be positive");
  }
  std::vector<GuaranteeMode> ms;
  if (modes.empty() || modes == "all") {
    ms = all_modes();
  } else {
    for (const auto& s : split(modes)) {
      try {
        ms.push_back(guarantee_mode_from_string(s));
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    }
  }
  const auto rows = sweep(c, ivs, ms, workers);
  const auto dir = output_dir(o.out);
  Json reports = Json::array();
  for (const auto& r : rows) reports.push_back(experiment_report_to_json(r));
  write_json(dir / "report.json", {{"config", experiment_config_to_json(c)}, {"reports", reports}});
  append_csv((dir / "results.csv").string(), rows);
  std::cout << kCsvHeader << '\n';
  for (const auto& r : rows) std::cout << csv_row(r) << '\n';
  return 0;
}

int cmd_audit(const Overrides& o, std::int64_t inputs, const AuditOptions& opts) {
  auto c = load(o);
  if (inputs >= 0) {
    c.inputs = Json::object();
    c.inputs["count"] = inputs;
  }
  const auto s = audit(c, opts);
  if (!o.out.empty() || std::getenv("STREAMLAB_OUT"))
    write_json(output_dir(o.out) / "report.json", audit_summary_to_json(s));
  std::cout << s.pipeline << ' ' << to_string(s.mode) << " faults=" << s.profile << " seeds=" << s.seeds.size()
            << '\n';
  for (const auto& [name, t] : s.tally) std::cout << "  " << name << ": " << t.first << '/' << t.second << '\n';
  const auto failing = s.failing_seeds();
  if (failing.empty()) {
    std::cout << "PASS\n";
    return 0;
  }
  std::cout << "FAIL seeds:";
  for (auto f : failing) std::cout << ' ' << f;
  std::cout << '\n';
  for (const auto& a : s.seeds) {
    if (a.passed) continue;
    for (const auto& [name, ch] : a.checks.items())
      if (ch["mandatory"].get<bool>() && !ch["holds"].get<bool>())
        std::cout << "  seed " << a.seed << ' ' << name << ": " << ch["description"].get<std::string>() << '\n';
  }
  return kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streamlab: simulated stream processing with delivery-guarantee audits"};
  app.require_subcommand(1);

  Overrides run_o;
  bool trace = false;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", run_o.config, "Experiment config (JSON)")->required();
  run->add_option("--seed", run_o.seed, "Run seed");
  run->add_option("--mode", run_o.mode, "Guarantee mode");
  run->add_option("--interval", run_o.interval, "Checkpoint interval in sim-ms");
  run->add_option("--pipeline", run_o.pipeline, "concat, index, sum or identity");
  run->add_option("--out", run_o.out, "Output directory");
  run->add_flag("--trace", trace, "Also write trace.jsonl");

  Overrides sweep_o;
  std::string intervals = "50,500,1000", modes = "all";
  unsigned workers = 0;
  auto* sw = app.add_subcommand("sweep", "Run every (mode, interval) pair");
  sw->add_option("--config", sweep_o.config, "Experiment config (JSON)")->required();
  sw->add_option("--intervals", intervals, "Comma-separated checkpoint intervals in sim-ms");
  sw->add_option("--modes", modes, "Comma-separated modes, or all");
  sw->add_option("--seed", sweep_o.seed, "Run seed");
  sw->add_option("--pipeline", sweep_o.pipeline, "concat, index, sum or identity");
  sw->add_option("--out", sweep_o.out, "Output directory");
  sw->add_option("--workers", workers, "Concurrent simulations (0: one per core)");

  Overrides audit_o;
  AuditOptions opts;
  std::int64_t audit_inputs = -1;
  auto* au = app.add_subcommand("audit", "Check delivery guarantees over many seeded faulty runs");
  au->add_option("--config", audit_o.config, "Experiment config (JSON); optional");
  au->add_option("--pipeline", audit_o.pipeline, "concat, index, sum or identity");
  au->add_option("--mode", audit_o.mode, "Guarantee mode");
  au->add_option("--interval", audit_o.interval, "Checkpoint interval in sim-ms");
  au->add_option("--seeds", opts.seeds, "Number of seeds");
  au->add_option("--first-seed", opts.first_seed, "First seed");
  au->add_option("--faults", opts.profile, "none, loss, crash or crashes");
  au->add_option("--inputs", audit_inputs, "Generated input count");
  au->add_option("--max-duplication", opts.max_duplication, "Extra copies allowed for at-least-once");
  au->add_option("--workers", opts.workers, "Concurrent simulations (0: one per core)");
  au->add_option("--out", audit_o.out, "Output directory for report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_o, trace);
    if (*sw) return cmd_sweep(sweep_o, intervals, modes, workers);
    if (*au) return cmd_audit(audit_o, audit_inputs, opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SimDiverged& e) {
    std::cerr << "simulation diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return 0;
}
