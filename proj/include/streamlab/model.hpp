#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace streamlab {

using Json = nlohmann::json;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Graph construction errors.
class CycleDetected : public Error { using Error::Error; };
class DanglingEdge : public Error { using Error::Error; };
class MultipleSources : public Error { using Error::Error; };
class MultipleSinks : public Error { using Error::Error; };
class InvalidGraph : public Error { using Error::Error; };

/// A user transition threw. Carries the operation name and the element id.
class TransitionPanic : public Error {
 public:
  TransitionPanic(std::string op, std::uint64_t element_id, const std::string& what);
  const std::string& op() const { return op_; }
  std::uint64_t element_id() const { return element_id_; }

 private:
  std::string op_;
  std::uint64_t element_id_;
};

// ---------------------------------------------------------------------------
// Payloads

struct Text {
  std::string value;
  auto operator<=>(const Text&) const = default;
};

struct Integer {
  std::int64_t value = 0;
  auto operator<=>(const Integer&) const = default;
};

struct Document {
  std::int64_t doc_id = 0;
  std::string text;
  auto operator<=>(const Document&) const = default;
};

struct WordPosting {
  std::string word;
  std::int64_t doc_id = 0;
  std::vector<std::int64_t> positions;  // strictly increasing, >= 0
  auto operator<=>(const WordPosting&) const = default;
};

struct IndexChange {
  std::string word;
  std::int64_t ordinal = 1;  // >= 1
  std::vector<WordPosting> postings;
  auto operator<=>(const IndexChange&) const = default;
};

/// Ordered window of strings held by the concatenation operation.
struct TextWindow {
  std::vector<std::string> items;
  auto operator<=>(const TextWindow&) const = default;
};

using Payload = std::variant<Text, Integer, Document, WordPosting, IndexChange, TextWindow>;

/// Throws InvalidGraph-free Error when payload invariants are violated.
void validate_payload(const Payload& p);

/// Canonical JSON: field names sorted, "type" tag included.
Json payload_to_json(const Payload& p);
Payload payload_from_json(const Json& j);
/// Compact canonical encoding; equal payloads give equal strings.
std::string canonical(const Payload& p);
/// Short human form: text value for Text, canonical JSON otherwise.
std::string display(const Payload& p);

// ---------------------------------------------------------------------------
// Total order on elements

struct OrderKey {
  std::uint64_t producer_seq = 0;
  std::vector<std::uint32_t> child_path;

  bool operator==(const OrderKey&) const = default;
};

enum class Ordering { less, equal, greater };

Ordering compare_order_keys(const OrderKey& a, const OrderKey& b);
inline bool operator<(const OrderKey& a, const OrderKey& b) {
  return compare_order_keys(a, b) == Ordering::less;
}
inline bool operator<=(const OrderKey& a, const OrderKey& b) { return !(b < a); }
inline bool operator>(const OrderKey& a, const OrderKey& b) { return b < a; }

OrderKey derive_order_key(const OrderKey& parent, std::uint32_t child_index);
std::string to_string(const OrderKey& k);  // "3" or "3.0.2"
Json order_key_to_json(const OrderKey& k);
OrderKey order_key_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Elements

using Provenance = std::set<std::uint64_t>;

enum class ElementKind { data, state };

struct Element {
  std::uint64_t id = 0;
  OrderKey key;
  Payload payload;
  Provenance provenance;
  ElementKind kind = ElementKind::data;

  bool operator==(const Element&) const = default;
};

Json element_to_json(const Element& e);
Element element_from_json(const Json& j);

/// Input element with producer_seq = seq; provenance = {seq}.
Element make_input(std::uint64_t seq, Payload payload, std::uint64_t id = 0);

// ---------------------------------------------------------------------------
// Operations and graphs

enum class OperationKind { map, flat_map, stateful };

std::string to_string(OperationKind k);
OperationKind operation_kind_from_string(const std::string& s);

struct TransitionResult {
  std::optional<Payload> state;
  std::vector<Payload> outputs;
};

using Transition =
    std::function<TransitionResult(const std::optional<Payload>& state, const Payload& input)>;
using PartitionFn = std::function<std::string(const Payload&)>;

struct OperationSpec {
  std::string name;
  OperationKind kind = OperationKind::map;
  bool commutative = true;
  bool order_sensitive = false;
  std::optional<Payload> initial_state;
  Transition transition;
  int parallelism = 1;
  PartitionFn partition_by;  // empty: not partitioned
  /// Name of the built-in transition, when the operation uses one.
  std::string transition_name;
  Json params = Json::object();
};

struct DataflowGraph {
  std::vector<OperationSpec> operations;  // stored in topological order
  std::vector<std::pair<std::string, std::string>> edges;
  std::string source_name;
  std::string sink_name;

  const OperationSpec& op(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  std::vector<std::size_t> successors(std::size_t op_index) const;
  std::vector<std::size_t> predecessors(std::size_t op_index) const;
  std::vector<std::string> topological_names() const;
};

/// Validates names, edges and acyclicity. Operations come back in a
/// topological order with ties broken by name.
DataflowGraph build_graph(std::vector<OperationSpec> ops,
                          std::vector<std::pair<std::string, std::string>> edges);

struct ApplyResult {
  std::optional<Element> state;
  std::vector<Element> derived;

  bool operator==(const ApplyResult&) const = default;
};

/// One step of an operation. Derived element i gets key derive_order_key(elem.key, i)
/// and id first_id + 1 + i; a new state gets id first_id. Provenance of both is
/// elem.provenance plus the incoming state's provenance.
ApplyResult apply_operation(const OperationSpec& op, const std::optional<Element>& state,
                            const Element& elem, std::uint64_t first_id);

/// Partition key of a payload under op (empty string when unpartitioned).
std::string partition_key(const OperationSpec& op, const Payload& p);

/// Stable 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view s);

}  // namespace streamlab
