#include "streamlab/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "streamlab/pipelines.hpp"

namespace streamlab {

LatencyReport latency_report(std::vector<double> samples) {
  LatencyReport r;
  r.samples = samples.size();
  if (samples.empty()) return r;
  std::sort(samples.begin(), samples.end());
  const auto rank = [&](double p) {
    auto k = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(k, 1, samples.size()) - 1];
  };
  r.p50 = rank(50);
  r.p75 = rank(75);
  r.p95 = rank(95);
  r.p99 = rank(99);
  return r;
}

Json latency_report_to_json(const LatencyReport& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  return Json{{"samples", r.samples}, {"p50", opt(r.p50)}, {"p75", opt(r.p75)},
              {"p95", opt(r.p95)},     {"p99", opt(r.p99)}};
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig experiment_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  try {
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      if (p.is_string()) {
        c.pipeline = p.get<std::string>();
      } else if (p.is_object()) {
        c.pipeline = p.at("name").get<std::string>();
        if (p.contains("params")) c.pipeline_params = p["params"];
      } else {
        throw ConfigError("pipeline must be a name or {name, params}");
      }
    }
    if (j.contains("inputs")) c.inputs = j["inputs"];
    if (!c.inputs.is_object()) throw ConfigError("inputs must be a JSON object");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  for (const auto& [k, v] : j.items())
    if (k != "pipeline" && k != "inputs" && k != "sim") throw ConfigError("unknown config field '" + k + "'");
  c.sim = sim_config_from_json(j.value("sim", Json::object()));
  try {
    build_pipeline(c);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

Json experiment_config_to_json(const ExperimentConfig& c) {
  return Json{{"pipeline", {{"name", c.pipeline}, {"params", c.pipeline_params}}},
              {"inputs", c.inputs},
              {"sim", sim_config_to_json(c.sim)}};
}

DataflowGraph build_pipeline(const ExperimentConfig& c) {
  try {
    return pipeline_by_name(c.pipeline, c.pipeline_params);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

namespace {

std::string letters(std::uint64_t i) {
  std::string s;
  do {
    s.insert(s.begin(), static_cast<char>('a' + i % 26));
    i /= 26;
  } while (i > 0);
  return s;
}

CorpusSpec corpus_spec(const Json& j, CorpusSpec s) {
  s.seed = j.value("seed", s.seed);
  s.documents = j.value("documents", s.documents);
  s.vocabulary = j.value("vocabulary", s.vocabulary);
  s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
  s.min_words = j.value("min_words", s.min_words);
  s.max_words = j.value("max_words", s.max_words);
  return s;
}

}  // namespace

std::vector<Element> build_inputs(const ExperimentConfig& c) {
  const auto& in = c.inputs;
  std::vector<Element> out;
  try {
    if (in.contains("file")) return read_corpus_jsonl(in["file"].get<std::string>());
    if (in.contains("texts")) {
      std::uint64_t seq = 0;
      for (const auto& t : in["texts"]) out.push_back(make_input(++seq, Text{t.get<std::string>()}));
      return out;
    }
    if (in.contains("integers")) {
      std::uint64_t seq = 0;
      for (const auto& v : in["integers"]) out.push_back(make_input(++seq, Integer{v.get<std::int64_t>()}));
      return out;
    }
    if (c.pipeline == "index") {
      CorpusSpec s;
      s.documents = in.value("count", s.documents);
      return generate_corpus(corpus_spec(in.value("corpus", Json::object()), s));
    }
    const auto n = in.value("count", std::int64_t{5});
    if (n < 0) throw ConfigError("inputs.count must be non-negative");
    for (std::int64_t i = 1; i <= n; ++i) {
      if (c.pipeline == "sum") out.push_back(make_input(i, Integer{i}));
      else out.push_back(make_input(i, Text{letters(static_cast<std::uint64_t>(i - 1))}));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad inputs: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

Json experiment_report_to_json(const ExperimentReport& r) {
  return Json{{"mode", to_string(r.mode)},
              {"checkpoint_interval", r.checkpoint_interval},
              {"seed", r.seed},
              {"latency_ms", latency_report_to_json(r.latency)},
              {"recoveries", r.recoveries},
              {"recovery_events", r.recovery_events},
              {"inputs", r.inputs},
              {"outputs", r.outputs},
              {"verdicts", r.verdicts}};
}

namespace {

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string fixed3(const std::optional<double>& v) { return v ? fixed3(*v) : std::string{}; }

}  // namespace

std::string csv_row(const ExperimentReport& r) {
  std::ostringstream os;
  os << to_string(r.mode) << ',' << fixed3(r.checkpoint_interval) << ',' << r.seed << ','
     << fixed3(r.latency.p50) << ',' << fixed3(r.latency.p75) << ',' << fixed3(r.latency.p95) << ','
     << fixed3(r.latency.p99) << ',' << r.recoveries << ',' << r.inputs << ',' << r.outputs;
  return os.str();
}

void append_csv(const std::string& path, const std::vector<ExperimentReport>& rows) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write '" + path + "'");
  if (fresh) out << kCsvVersionLine << '\n' << kCsvHeader << '\n';
  for (const auto& r : rows) out << csv_row(r) << '\n';
}

// ---------------------------------------------------------------------------
// Runs

Experiment run_experiment(const ExperimentConfig& c) {
  c.sim.validate();
  const auto graph = build_pipeline(c);
  const auto inputs = build_inputs(c);
  Experiment ex;
  ex.result = run_simulation(graph, inputs, c.sim);
  auto& r = ex.report;
  r.mode = c.sim.mode;
  r.checkpoint_interval = c.sim.checkpoint_interval;
  r.seed = c.sim.seed;
  std::vector<double> ms;
  for (const auto& l : ex.result.latencies) ms.push_back(l.ms);
  r.latency = latency_report(std::move(ms));
  r.recoveries = ex.result.recoveries;
  r.recovery_events = ex.result.events;
  r.inputs = inputs.size();
  r.outputs = ex.result.delivered_items().size();
  return ex;
}

namespace {

// Runs job(i) for i in [0, n) on up to `workers` threads. The first exception wins.
template <typename Job>
void parallel_for(std::size_t n, unsigned workers, Job job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto body = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<ExperimentReport> sweep(const ExperimentConfig& base, const std::vector<double>& intervals,
                                    const std::vector<GuaranteeMode>& modes, unsigned workers) {
  std::vector<ExperimentConfig> configs;
  for (auto m : modes)
    for (auto iv : intervals) {
      auto c = base;
      c.sim.mode = m;
      c.sim.checkpoint_interval = iv;
      configs.push_back(std::move(c));
    }
  std::vector<ExperimentReport> rows(configs.size());
  parallel_for(configs.size(), workers, [&](std::size_t i) { rows[i] = run_experiment(configs[i]).report; });
  std::sort(rows.begin(), rows.end(), [](const ExperimentReport& a, const ExperimentReport& b) {
    return std::tuple(to_string(a.mode), a.checkpoint_interval, a.seed) <
           std::tuple(to_string(b.mode), b.checkpoint_interval, b.seed);
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Audits

FaultPlan fault_profile(const std::string& profile, std::uint64_t seed, const SimConfig& sim,
                        const DataflowGraph& graph, std::size_t input_count) {
  int tasks = 0;
  for (const auto& op : graph.operations) tasks += op.parallelism;
  const int occupied = std::max(1, std::min(tasks, sim.nodes));
  const auto span = std::max<std::int64_t>(1, std::llround(static_cast<double>(input_count) * 1000.0 / sim.input_rate));
  RngStream rng(seed, "faults/" + profile);
  FaultPlan plan;
  if (profile == "none") return plan;
  if (profile == "loss") {
    plan.packet_loss_probability = 0.01;
  } else if (profile == "crash") {
    plan.node_failures.push_back(
        {static_cast<double>(span) / 2.0, static_cast<int>(rng.uniform_int(0, occupied - 1))});
  } else if (profile == "crashes") {
    const auto k = rng.uniform_int(1, 3);
    for (std::int64_t i = 0; i < k; ++i) {
      const auto t = static_cast<double>(rng.uniform_int(1, span));
      plan.node_failures.push_back({t, static_cast<int>(rng.uniform_int(0, occupied - 1))});
    }
    plan.packet_loss_probability = 0.01;
  } else {
    throw ConfigError("unknown fault profile '" + profile + "' (none, loss, crash, crashes)");
  }
  return plan;
}

bool AuditSummary::passed() const {
  return std::all_of(seeds.begin(), seeds.end(), [](const SeedAudit& s) { return s.passed; });
}

std::vector<std::uint64_t> AuditSummary::failing_seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& s : seeds)
    if (!s.passed) out.push_back(s.seed);
  return out;
}

Json audit_summary_to_json(const AuditSummary& s) {
  Json tally = Json::object();
  for (const auto& [name, pr] : s.tally) tally[name] = {{"passes", pr.first}, {"runs", pr.second}};
  Json seeds = Json::array();
  for (const auto& a : s.seeds)
    seeds.push_back({{"seed", a.seed},
                     {"passed", a.passed},
                     {"recoveries", a.recoveries},
                     {"skipped_sequence_checks", a.skipped_sequence_checks},
                     {"checks", a.checks}});
  return Json{{"pipeline", s.pipeline}, {"mode", to_string(s.mode)}, {"profile", s.profile},
              {"passed", s.passed()},   {"failing_seeds", s.failing_seeds()},
              {"tally", tally},         {"seeds", seeds}};
}

namespace {

void record(SeedAudit& a, const std::string& name, bool holds, bool mandatory, const std::string& why) {
  a.checks[name] = {{"holds", holds}, {"mandatory", mandatory}, {"description", why}};
  if (mandatory && !holds) a.passed = false;
}

std::string payload_list(const std::vector<Payload>& ps) {
  std::string s;
  for (const auto& p : ps) s += (s.empty() ? "" : " ") + display(p);
  return s;
}

SeedAudit audit_seed(const ExperimentConfig& base, const AuditOptions& opts, const DataflowGraph& graph,
                     const std::vector<Element>& inputs, std::uint64_t seed) {
  const auto mode = base.sim.mode;
  const bool eo = claims_exactly_once(mode);
  SeedAudit a;
  a.seed = seed;

  auto cfg = base.sim;
  cfg.seed = seed;
  cfg.fault_plan = fault_profile(opts.profile, seed, cfg, graph, inputs.size());
  SimResult run;
  try {
    run = run_simulation(graph, inputs, cfg);
  } catch (const SimDiverged& e) {
    record(a, "quiescence", false, true, e.what());
    return a;
  }
  a.recoveries = run.recoveries;
  const auto observed = run.delivered_payloads();

  auto golden_cfg = cfg;
  golden_cfg.fault_plan = {};
  const auto golden = run_simulation(graph, inputs, golden_cfg).delivered_payloads();
  record(a, "golden", observed == golden, mode == GuaranteeMode::ExactlyOnceDeterministic,
         observed == golden ? "matches the fault-free run" : "differs from the fault-free run");

  const auto th = check_theorem1_trace(run.trace, graph);
  record(a, "theorem1", th.holds, eo, th.description);

  if (inputs.size() <= opts.limits.max_inputs) {
    const auto ref = ReferenceInput::independent(inputs);
    try {
      if (mode == GuaranteeMode::NoGuarantee) {
        const auto v = check_at_most_once(graph, ref, observed, opts.limits);
        record(a, "at_most_once", v.holds, false, v.description);
      } else {
        const auto v = check_exactly_once(graph, ref, observed, opts.limits);
        record(a, "exactly_once", v.holds, eo, v.holds ? v.description : v.description + " [" + payload_list(observed) + "]");
        if (!eo) {
          const auto w = check_at_least_once(graph, ref, observed, opts.max_duplication, opts.limits);
          record(a, "at_least_once", w.holds, true, w.description);
        }
      }
    } catch (const SearchBudgetExceeded& e) {
      a.skipped_sequence_checks = true;
      a.checks["search"] = {{"holds", false}, {"mandatory", false}, {"description", e.what()}};
    }
  } else {
    a.skipped_sequence_checks = true;
  }

  if (base.pipeline == "index") {
    const auto rebuilt = apply_index_changes(observed);
    const bool same = rebuilt.problems.empty() &&
                      canonical_index(rebuilt.index) == canonical_index(batch_index_oracle(inputs));
    record(a, "index", same, eo,
           same ? "rebuilt index matches the batch index"
                : (rebuilt.problems.empty() ? "rebuilt index differs from the batch index" : rebuilt.problems.front()));
  }
  return a;
}

}  // namespace

AuditSummary audit(const ExperimentConfig& base, const AuditOptions& opts) {
  const auto graph = build_pipeline(base);
  const auto inputs = build_inputs(base);
  fault_profile(opts.profile, 0, base.sim, graph, inputs.size());  // rejects unknown profiles up front

  AuditSummary s;
  s.pipeline = base.pipeline;
  s.mode = base.sim.mode;
  s.profile = opts.profile;
  s.seeds.resize(opts.seeds);
  parallel_for(opts.seeds, opts.workers, [&](std::size_t i) {
    s.seeds[i] = audit_seed(base, opts, graph, inputs, opts.first_seed + i);
  });
  for (const auto& a : s.seeds)
    for (const auto& [name, c] : a.checks.items()) {
      auto& t = s.tally[name];
      t.first += c["holds"].get<bool>() ? 1 : 0;
      ++t.second;
    }
  return s;
}

}  // namespace streamlab
