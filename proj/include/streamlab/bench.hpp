#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "streamlab/model.hpp"
#include "streamlab/oracle.hpp"
#include "streamlab/sim.hpp"

namespace streamlab {

struct LatencyReport {
  std::size_t samples = 0;
  // Nearest-rank percentiles in sim-ms; empty when there are no samples.
  std::optional<double> p50, p75, p95, p99;
};

LatencyReport latency_report(std::vector<double> samples_ms);
Json latency_report_to_json(const LatencyReport& r);

/// What to run: a named pipeline, its inputs and the simulator settings.
///
/// Config files are JSON:
///   {"pipeline": "concat" | {"name": ..., "params": {...}},
///    "inputs": {"texts": [...]} | {"count": N} | {"corpus": {...}} | {"file": "docs.jsonl"},
///    "sim": {...sim_config fields...}}
struct ExperimentConfig {
  std::string pipeline = "concat";
  Json pipeline_params = Json::object();
  Json inputs = Json::object();
  SimConfig sim;
};

/// Throws ConfigError.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::string& path);
Json experiment_config_to_json(const ExperimentConfig& c);

DataflowGraph build_pipeline(const ExperimentConfig& c);
/// Inputs with producer_seq 1..n. Throws ConfigError.
std::vector<Element> build_inputs(const ExperimentConfig& c);

struct ExperimentReport {
  GuaranteeMode mode = GuaranteeMode::ExactlyOnceDeterministic;
  double checkpoint_interval = 0;
  std::uint64_t seed = 0;
  LatencyReport latency;
  int recoveries = 0;
  std::vector<std::string> recovery_events;
  std::uint64_t inputs = 0;
  std::uint64_t outputs = 0;
  Json verdicts;  // null unless audited
};

Json experiment_report_to_json(const ExperimentReport& r);

inline constexpr const char* kCsvVersionLine = "# streamlab results v1";
inline constexpr const char* kCsvHeader = "mode,interval_ms,seed,p50,p75,p95,p99,recoveries,inputs,outputs";

std::string csv_row(const ExperimentReport& r);
/// Creates the file with the version and header lines when it does not exist yet.
void append_csv(const std::string& path, const std::vector<ExperimentReport>& rows);

struct Experiment {
  ExperimentReport report;
  SimResult result;
};

/// Throws ConfigError or SimDiverged.
Experiment run_experiment(const ExperimentConfig& c);

/// One run per (mode, interval) pair, spread over `workers` threads. Rows come
/// back sorted by mode, interval and seed.
std::vector<ExperimentReport> sweep(const ExperimentConfig& base, const std::vector<double>& intervals,
                                    const std::vector<GuaranteeMode>& modes, unsigned workers = 0);

/// Fault profiles for audits:
///   none     no faults
///   loss     1% packet loss
///   crash    one node failure in the middle of the input span
///   crashes  1-3 node failures at random times plus 1% packet loss
FaultPlan fault_profile(const std::string& profile, std::uint64_t seed, const SimConfig& sim,
                        const DataflowGraph& graph, std::size_t input_count);

struct SeedAudit {
  std::uint64_t seed = 0;
  bool passed = true;
  bool skipped_sequence_checks = false;
  int recoveries = 0;
  Json checks = Json::object();  // check name -> {holds, mandatory, description}
};

struct AuditSummary {
  std::string pipeline;
  GuaranteeMode mode = GuaranteeMode::ExactlyOnceDeterministic;
  std::string profile;
  std::vector<SeedAudit> seeds;
  std::map<std::string, std::pair<int, int>> tally;  // check -> (passes, runs)

  bool passed() const;
  std::vector<std::uint64_t> failing_seeds() const;
};

Json audit_summary_to_json(const AuditSummary& s);

struct AuditOptions {
  std::string profile = "crashes";
  std::uint64_t seeds = 10;
  std::uint64_t first_seed = 1;
  int max_duplication = 2;
  SearchLimits limits;
  unsigned workers = 0;
};

/// Runs every seed under the fault profile and applies the checks that fit the
/// mode. Sequence checks run when the input count is within limits.max_inputs;
/// the index pipeline is additionally checked by rebuilding the index.
AuditSummary audit(const ExperimentConfig& base, const AuditOptions& opts);

}  // namespace streamlab
