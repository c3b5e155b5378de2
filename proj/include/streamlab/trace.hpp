#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "streamlab/model.hpp"

namespace streamlab {

enum class TraceKind {
  input,
  transform,
  output,
  persist,
  commit,
  failure,
  recovery_begin,
  recovery_end,
  drop,
  filter,
  round_start,
  round_abort,
};

std::string to_string(TraceKind k);
TraceKind trace_kind_from_string(const std::string& s);

/// One entry of an execution trace. Fields not meaningful for a kind stay empty.
struct TraceEvent {
  std::int64_t t_us = 0;
  TraceKind kind = TraceKind::input;
  int node = -1;
  std::string op;

  /// input: the input; transform: produced data elements; output: released
  /// elements; persist/commit: elements made recoverable.
  std::vector<std::uint64_t> ids;
  std::vector<OrderKey> keys;          // parallel to ids where keys exist
  std::vector<std::string> payloads;   // output: display form of released items
  std::vector<Provenance> provenance;  // input/transform: parallel to ids

  std::vector<std::uint64_t> consumed;  // transform
  std::optional<std::uint64_t> state_in;
  std::optional<std::uint64_t> state_out;
  bool ordered = false;         // transform ran behind order enforcement
  bool noncommutative = false;  // transform's operation is non-commutative

  std::int64_t epoch = -1;
  std::int64_t snapshot_id = -1;
  std::int64_t count = 0;  // recovery_end: inputs replayed that had been injected before
  std::string detail;

  bool operator==(const TraceEvent&) const = default;
};

Json trace_event_to_json(const TraceEvent& e);
TraceEvent trace_event_from_json(const Json& j);

struct ExecutionTrace {
  static constexpr int kVersion = 1;
  std::string mode;
  bool persistence_tracked = true;
  std::vector<TraceEvent> events;

  bool operator==(const ExecutionTrace&) const = default;
};

/// JSON-lines: a header object {"format":"streamlab-trace","version":1,...}
/// followed by one event per line.
void write_trace_jsonl(std::ostream& out, const ExecutionTrace& trace);
ExecutionTrace read_trace_jsonl(std::istream& in);
std::string trace_to_jsonl(const ExecutionTrace& trace);

}  // namespace streamlab
