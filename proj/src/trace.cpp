#include "streamlab/trace.hpp"

#include <array>
#include <istream>
#include <ostream>
#include <sstream>
#include <utility>

namespace streamlab {

namespace {

constexpr std::array<std::pair<TraceKind, const char*>, 12> kKindNames{{
    {TraceKind::input, "input"},
    {TraceKind::transform, "transform"},
    {TraceKind::output, "output"},
    {TraceKind::persist, "persist"},
    {TraceKind::commit, "commit"},
    {TraceKind::failure, "failure"},
    {TraceKind::recovery_begin, "recovery_begin"},
    {TraceKind::recovery_end, "recovery_end"},
    {TraceKind::drop, "drop"},
    {TraceKind::filter, "filter"},
    {TraceKind::round_start, "round_start"},
    {TraceKind::round_abort, "round_abort"},
}};

}  // namespace

std::string to_string(TraceKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

TraceKind trace_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kKindNames)
    if (s == name) return kind;
  throw Error("unknown trace event kind '" + s + "'");
}

Json trace_event_to_json(const TraceEvent& e) {
  Json j{{"t_us", e.t_us}, {"kind", to_string(e.kind)}};
  if (e.node >= 0) j["node"] = e.node;
  if (!e.op.empty()) j["op"] = e.op;
  if (!e.ids.empty()) j["ids"] = e.ids;
  if (!e.keys.empty()) {
    Json keys = Json::array();
    for (const auto& k : e.keys) keys.push_back(order_key_to_json(k));
    j["keys"] = keys;
  }
  if (!e.payloads.empty()) j["payloads"] = e.payloads;
  if (!e.provenance.empty()) {
    Json prov = Json::array();
    for (const auto& p : e.provenance) prov.push_back(std::vector<std::uint64_t>(p.begin(), p.end()));
    j["provenance"] = prov;
  }
  if (e.kind == TraceKind::transform) {
    j["consumed"] = e.consumed;
    j["ordered"] = e.ordered;
    j["noncommutative"] = e.noncommutative;
  }
  if (e.state_in) j["state_in"] = *e.state_in;
  if (e.state_out) j["state_out"] = *e.state_out;
  if (e.epoch >= 0) j["epoch"] = e.epoch;
  if (e.snapshot_id >= 0) j["snapshot_id"] = e.snapshot_id;
  if (e.count != 0) j["count"] = e.count;
  if (!e.detail.empty()) j["detail"] = e.detail;
  return j;
}

TraceEvent trace_event_from_json(const Json& j) {
  TraceEvent e;
  e.t_us = j.at("t_us").get<std::int64_t>();
  e.kind = trace_kind_from_string(j.at("kind").get<std::string>());
  e.node = j.value("node", -1);
  e.op = j.value("op", std::string{});
  if (j.contains("ids")) e.ids = j["ids"].get<std::vector<std::uint64_t>>();
  if (j.contains("keys"))
    for (const auto& k : j["keys"]) e.keys.push_back(order_key_from_json(k));
  if (j.contains("payloads")) e.payloads = j["payloads"].get<std::vector<std::string>>();
  if (j.contains("provenance"))
    for (const auto& p : j["provenance"]) {
      Provenance prov;
      for (const auto& v : p) prov.insert(v.get<std::uint64_t>());
      e.provenance.push_back(std::move(prov));
    }
  if (j.contains("consumed")) e.consumed = j["consumed"].get<std::vector<std::uint64_t>>();
  if (j.contains("state_in")) e.state_in = j["state_in"].get<std::uint64_t>();
  if (j.contains("state_out")) e.state_out = j["state_out"].get<std::uint64_t>();
  e.ordered = j.value("ordered", false);
  e.noncommutative = j.value("noncommutative", false);
  e.epoch = j.value("epoch", std::int64_t{-1});
  e.snapshot_id = j.value("snapshot_id", std::int64_t{-1});
  e.count = j.value("count", std::int64_t{0});
  e.detail = j.value("detail", std::string{});
  return e;
}

void write_trace_jsonl(std::ostream& out, const ExecutionTrace& trace) {
  Json header{{"format", "streamlab-trace"},
              {"version", ExecutionTrace::kVersion},
              {"mode", trace.mode},
              {"persistence_tracked", trace.persistence_tracked}};
  out << header.dump() << '\n';
  for (const auto& e : trace.events) out << trace_event_to_json(e).dump() << '\n';
}

ExecutionTrace read_trace_jsonl(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("empty trace");
  const auto header = Json::parse(line);
  if (header.value("format", std::string{}) != "streamlab-trace")
    throw Error("not a streamlab trace");
  if (header.value("version", 0) != ExecutionTrace::kVersion)
    throw Error("unsupported trace version");
  ExecutionTrace t;
  t.mode = header.value("mode", std::string{});
  t.persistence_tracked = header.value("persistence_tracked", false);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.events.push_back(trace_event_from_json(Json::parse(line)));
  }
  return t;
}

std::string trace_to_jsonl(const ExecutionTrace& trace) {
  std::ostringstream os;
  write_trace_jsonl(os, trace);
  return os.str();
}

}  // namespace streamlab
