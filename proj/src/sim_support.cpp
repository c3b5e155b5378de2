#include <cmath>

#include "streamlab/sim.hpp"

namespace streamlab {

void SimConfig::validate() const {
  if (nodes < 1) throw ConfigError("nodes must be positive");
  if (channel_delay.min_ms < 0 || channel_delay.max_ms < channel_delay.min_ms)
    throw ConfigError("channel_delay must satisfy 0 <= min <= max");
  if (!(input_rate > 0)) throw ConfigError("input_rate must be positive");
  if (!(checkpoint_interval > 0)) throw ConfigError("checkpoint_interval must be positive");
  const auto p = fault_plan.packet_loss_probability;
  if (p < 0 || p >= 1) throw ConfigError("packet_loss_probability must be in [0, 1)");
  for (const auto& f : fault_plan.node_failures) {
    if (f.node < 0 || f.node >= nodes)
      throw ConfigError("node failure names node " + std::to_string(f.node) + " outside 0.." +
                        std::to_string(nodes - 1));
    if (f.time_ms < 0) throw ConfigError("node failure time must be non-negative");
    if (max_sim_time > 0 && f.time_ms > max_sim_time)
      throw ConfigError("node failure scheduled after max_sim_time");
  }
  if (max_sim_time < 0) throw ConfigError("max_sim_time must be non-negative");
  if (detection_delay < 0 || consumer_ack_latency < 0 || storage_write_latency < 0)
    throw ConfigError("latencies must be non-negative");
  if (!(ack_timeout > 0) || !(bundle_retry_timeout > 0))
    throw ConfigError("timeouts must be positive");
}

Json sim_config_to_json(const SimConfig& c) {
  Json failures = Json::array();
  for (const auto& f : c.fault_plan.node_failures) failures.push_back({f.time_ms, f.node});
  return Json{{"seed", c.seed},
              {"nodes", c.nodes},
              {"channel_delay", {c.channel_delay.min_ms, c.channel_delay.max_ms}},
              {"input_rate", c.input_rate},
              {"checkpoint_interval", c.checkpoint_interval},
              {"fault_plan",
               {{"node_failures", failures},
                {"packet_loss_probability", c.fault_plan.packet_loss_probability}}},
              {"mode", to_string(c.mode)},
              {"max_sim_time", c.max_sim_time},
              {"detection_delay", c.detection_delay},
              {"consumer_ack_latency", c.consumer_ack_latency},
              {"ack_timeout", c.ack_timeout},
              {"storage_write_latency", c.storage_write_latency},
              {"bundle_retry_timeout", c.bundle_retry_timeout},
              {"snapshot_dir", c.snapshot_dir}};
}

SimConfig sim_config_from_json(const Json& j, SimConfig c) {
  if (!j.is_object()) throw ConfigError("simulation config must be a JSON object");
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("nodes")) c.nodes = j["nodes"].get<int>();
    if (j.contains("channel_delay")) {
      const auto& d = j["channel_delay"];
      if (!d.is_array() || d.size() != 2) throw ConfigError("channel_delay must be [min, max]");
      c.channel_delay = {d[0].get<double>(), d[1].get<double>()};
    }
    if (j.contains("input_rate")) c.input_rate = j["input_rate"].get<double>();
    if (j.contains("checkpoint_interval")) c.checkpoint_interval = j["checkpoint_interval"].get<double>();
    if (j.contains("fault_plan")) {
      const auto& f = j["fault_plan"];
      if (f.contains("node_failures")) {
        c.fault_plan.node_failures.clear();
        for (const auto& nf : f["node_failures"]) {
          if (nf.is_array()) {
            c.fault_plan.node_failures.push_back({nf.at(0).get<double>(), nf.at(1).get<int>()});
          } else {
            c.fault_plan.node_failures.push_back({nf.at("time").get<double>(), nf.at("node").get<int>()});
          }
        }
      }
      if (f.contains("packet_loss_probability"))
        c.fault_plan.packet_loss_probability = f["packet_loss_probability"].get<double>();
    }
    if (j.contains("mode")) c.mode = guarantee_mode_from_string(j["mode"].get<std::string>());
    if (j.contains("max_sim_time")) c.max_sim_time = j["max_sim_time"].get<double>();
    if (j.contains("detection_delay")) c.detection_delay = j["detection_delay"].get<double>();
    if (j.contains("consumer_ack_latency")) c.consumer_ack_latency = j["consumer_ack_latency"].get<double>();
    if (j.contains("ack_timeout")) c.ack_timeout = j["ack_timeout"].get<double>();
    if (j.contains("storage_write_latency"))
      c.storage_write_latency = j["storage_write_latency"].get<double>();
    if (j.contains("bundle_retry_timeout")) c.bundle_retry_timeout = j["bundle_retry_timeout"].get<double>();
    if (j.contains("snapshot_dir")) c.snapshot_dir = j["snapshot_dir"].get<std::string>();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

std::optional<std::int64_t> channel_deliver(Channel& ch, const ChannelDelay& delay, double loss) {
  // Loss is drawn first so the delay sequence of a loss-free channel does not
  // depend on the loss setting.
  const bool lost = ch.rng.bernoulli(loss);
  const auto lo = std::llround(delay.min_ms * 1000.0);
  const auto hi = std::llround(delay.max_ms * 1000.0);
  const auto d = ch.rng.uniform_int(lo, hi);
  if (lost) return std::nullopt;
  return d;
}

// ---------------------------------------------------------------------------

void AckerRegister::inject(std::uint64_t seq, std::uint64_t tree_generation) {
  auto& t = trees_[seq];
  t.accumulator = 0;
  t.generation = tree_generation;
  t.injected = true;
}

void AckerRegister::spawn(std::uint64_t seq, std::uint64_t tree_generation, std::uint64_t id) {
  auto it = trees_.find(seq);
  if (it == trees_.end() || it->second.generation != tree_generation) return;
  it->second.accumulator ^= id;
}

bool AckerRegister::ack(std::uint64_t seq, std::uint64_t tree_generation, std::uint64_t id) {
  auto it = trees_.find(seq);
  if (it == trees_.end() || it->second.generation != tree_generation) return false;
  it->second.accumulator ^= id;
  return advance();
}

void AckerRegister::rewind(std::uint64_t seq) {
  trees_.erase(trees_.upper_bound(seq), trees_.end());
  if (frontier_ > seq) frontier_ = seq;
}

bool AckerRegister::complete(std::uint64_t seq) const {
  auto it = trees_.find(seq);
  return it != trees_.end() && it->second.injected && it->second.accumulator == 0;
}

std::uint64_t AckerRegister::residue(std::uint64_t seq) const {
  auto it = trees_.find(seq);
  return it == trees_.end() ? 0 : it->second.accumulator;
}

std::vector<std::uint64_t> AckerRegister::incomplete() const {
  std::vector<std::uint64_t> out;
  for (const auto& [seq, t] : trees_)
    if (!t.injected || t.accumulator != 0) out.push_back(seq);
  return out;
}

bool AckerRegister::advance() {
  const auto before = frontier_;
  while (complete(frontier_ + 1)) ++frontier_;
  return frontier_ != before;
}

// ---------------------------------------------------------------------------

std::vector<Element> SimResult::delivered_items() const {
  std::vector<Element> out;
  for (const auto& d : delivered) out.insert(out.end(), d.bundle.items.begin(), d.bundle.items.end());
  return out;
}

std::vector<Payload> SimResult::delivered_payloads() const {
  std::vector<Payload> out;
  for (const auto& d : delivered)
    for (const auto& e : d.bundle.items) out.push_back(e.payload);
  return out;
}

Json sim_result_to_json(const SimResult& r) {
  Json delivered = Json::array();
  for (const auto& d : r.delivered) delivered.push_back({{"t_us", d.t_us}, {"bundle", bundle_to_json(d.bundle)}});
  Json lat = Json::array();
  for (const auto& l : r.latencies) lat.push_back({l.seq, l.ms});
  return Json{{"delivered", delivered}, {"latencies", lat},   {"events", r.events},
              {"recoveries", r.recoveries}, {"inputs", r.inputs}, {"frontier", r.frontier}};
}

}  // namespace streamlab
