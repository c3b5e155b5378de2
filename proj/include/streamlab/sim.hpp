#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "streamlab/model.hpp"
#include "streamlab/protocols.hpp"
#include "streamlab/rng.hpp"
#include "streamlab/storage.hpp"
#include "streamlab/trace.hpp"

namespace streamlab {

class ConfigError : public Error { using Error::Error; };
class SimDiverged : public Error { using Error::Error; };

struct ChannelDelay {
  double min_ms = 1;
  double max_ms = 10;
};

struct NodeFailure {
  double time_ms = 0;
  int node = 0;
};

struct FaultPlan {
  std::vector<NodeFailure> node_failures;
  double packet_loss_probability = 0;
};

struct SimConfig {
  std::uint64_t seed = 1;
  int nodes = 10;
  ChannelDelay channel_delay;
  double input_rate = 50;             // elements per sim-second
  double checkpoint_interval = 1000;  // sim-ms
  FaultPlan fault_plan;
  GuaranteeMode mode = GuaranteeMode::ExactlyOnceDeterministic;
  double max_sim_time = 0;  // sim-ms; 0 picks a bound from the input count

  double detection_delay = 50;
  double consumer_ack_latency = 1;
  double ack_timeout = 250;
  double storage_write_latency = 2;
  double bundle_retry_timeout = 100;
  /// File-backed snapshot store root; in-memory when empty.
  std::string snapshot_dir;

  /// Throws ConfigError.
  void validate() const;
};

Json sim_config_to_json(const SimConfig& c);
/// Missing fields keep their defaults. Throws ConfigError on bad values.
SimConfig sim_config_from_json(const Json& j, SimConfig base = {});

/// Sends within one (source, destination) pair draw delays and losses from a
/// stream named after the pair.
struct Channel {
  std::string name;
  RngStream rng;
  Channel(std::uint64_t seed, std::string n) : name(n), rng(seed, "chan/" + n) {}
};

/// Sampled delivery delay in sim-microseconds, or nullopt when the message is lost.
std::optional<std::int64_t> channel_deliver(Channel& ch, const ChannelDelay& delay, double loss);

/// Completion tracking for inputs: every message carrying a derivative of input
/// s XORs its id into s's accumulator when sent and again when consumed.
class AckerRegister {
 public:
  /// Starts tracking s (again) under a fresh tree generation.
  void inject(std::uint64_t seq, std::uint64_t tree_generation);
  void spawn(std::uint64_t seq, std::uint64_t tree_generation, std::uint64_t id);
  /// Returns true when the contiguous frontier moved.
  bool ack(std::uint64_t seq, std::uint64_t tree_generation, std::uint64_t id);
  /// Forgets every seq above `seq`; they are incomplete until re-injected.
  void rewind(std::uint64_t seq);

  bool complete(std::uint64_t seq) const;
  /// Largest s such that 1..s are all complete.
  std::uint64_t frontier() const { return frontier_; }
  std::uint64_t residue(std::uint64_t seq) const;
  std::vector<std::uint64_t> incomplete() const;

 private:
  struct Tree {
    std::uint64_t accumulator = 0;
    std::uint64_t generation = 0;
    bool injected = false;
  };
  bool advance();
  std::map<std::uint64_t, Tree> trees_;
  std::uint64_t frontier_ = 0;
};

struct DeliveredBundle {
  Bundle bundle;
  std::int64_t t_us = 0;
};

struct LatencySample {
  std::uint64_t seq = 0;
  double ms = 0;
};

struct SimResult {
  std::vector<DeliveredBundle> delivered;
  ExecutionTrace trace;
  std::vector<LatencySample> latencies;
  std::vector<std::string> events;  // failure and recovery log
  int recoveries = 0;
  std::uint64_t inputs = 0;
  std::uint64_t frontier = 0;  // highest frontier ever reached

  std::vector<Element> delivered_items() const;
  std::vector<Payload> delivered_payloads() const;
};

Json sim_result_to_json(const SimResult& r);

SimResult run_simulation(const DataflowGraph& graph, const std::vector<Element>& inputs,
                         const SimConfig& config);

}  // namespace streamlab
