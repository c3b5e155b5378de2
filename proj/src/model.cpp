#include "streamlab/model.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

namespace streamlab {

TransitionPanic::TransitionPanic(std::string op, std::uint64_t element_id, const std::string& what)
    : Error("transition of '" + op + "' failed on element " + std::to_string(element_id) + ": " +
            what),
      op_(std::move(op)),
      element_id_(element_id) {}

namespace {

void check_positions(const WordPosting& wp) {
  for (std::size_t i = 0; i < wp.positions.size(); ++i) {
    if (wp.positions[i] < 0) throw Error("negative word position");
    if (i > 0 && wp.positions[i] <= wp.positions[i - 1])
      throw Error("word positions must be strictly increasing");
  }
}

Json posting_json(const WordPosting& wp) {
  return Json{{"doc_id", wp.doc_id}, {"positions", wp.positions}, {"word", wp.word}};
}

WordPosting posting_from(const Json& j) {
  WordPosting wp;
  wp.word = j.at("word").get<std::string>();
  wp.doc_id = j.at("doc_id").get<std::int64_t>();
  wp.positions = j.at("positions").get<std::vector<std::int64_t>>();
  return wp;
}

}  // namespace

void validate_payload(const Payload& p) {
  if (auto* wp = std::get_if<WordPosting>(&p)) check_positions(*wp);
  if (auto* ic = std::get_if<IndexChange>(&p)) {
    if (ic->ordinal < 1) throw Error("index_change ordinal must be >= 1");
    for (const auto& wp : ic->postings) check_positions(wp);
  }
}

Json payload_to_json(const Payload& p) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Text>) {
          return Json{{"type", "text"}, {"value", v.value}};
        } else if constexpr (std::is_same_v<T, Integer>) {
          return Json{{"type", "integer"}, {"value", v.value}};
        } else if constexpr (std::is_same_v<T, Document>) {
          return Json{{"doc_id", v.doc_id}, {"text", v.text}, {"type", "document"}};
        } else if constexpr (std::is_same_v<T, WordPosting>) {
          Json j = posting_json(v);
          j["type"] = "word_posting";
          return j;
        } else if constexpr (std::is_same_v<T, IndexChange>) {
          Json postings = Json::array();
          for (const auto& wp : v.postings) postings.push_back(posting_json(wp));
          return Json{{"ordinal", v.ordinal},
                      {"postings", postings},
                      {"type", "index_change"},
                      {"word", v.word}};
        } else {
          return Json{{"items", v.items}, {"type", "text_window"}};
        }
      },
      p);
}

Payload payload_from_json(const Json& j) {
  const auto type = j.at("type").get<std::string>();
  Payload p;
  if (type == "text") {
    p = Text{j.at("value").get<std::string>()};
  } else if (type == "integer") {
    p = Integer{j.at("value").get<std::int64_t>()};
  } else if (type == "document") {
    p = Document{j.at("doc_id").get<std::int64_t>(), j.at("text").get<std::string>()};
  } else if (type == "word_posting") {
    p = posting_from(j);
  } else if (type == "index_change") {
    IndexChange ic;
    ic.word = j.at("word").get<std::string>();
    ic.ordinal = j.at("ordinal").get<std::int64_t>();
    for (const auto& wp : j.at("postings")) ic.postings.push_back(posting_from(wp));
    p = std::move(ic);
  } else if (type == "text_window") {
    p = TextWindow{j.at("items").get<std::vector<std::string>>()};
  } else {
    throw Error("unknown payload type '" + type + "'");
  }
  validate_payload(p);
  return p;
}

std::string canonical(const Payload& p) { return payload_to_json(p).dump(); }

std::string display(const Payload& p) {
  if (auto* t = std::get_if<Text>(&p)) return t->value;
  return canonical(p);
}

Ordering compare_order_keys(const OrderKey& a, const OrderKey& b) {
  if (a.producer_seq != b.producer_seq)
    return a.producer_seq < b.producer_seq ? Ordering::less : Ordering::greater;
  const auto n = std::min(a.child_path.size(), b.child_path.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a.child_path[i] != b.child_path[i])
      return a.child_path[i] < b.child_path[i] ? Ordering::less : Ordering::greater;
  }
  if (a.child_path.size() == b.child_path.size()) return Ordering::equal;
  return a.child_path.size() < b.child_path.size() ? Ordering::less : Ordering::greater;
}

OrderKey derive_order_key(const OrderKey& parent, std::uint32_t child_index) {
  OrderKey k = parent;
  k.child_path.push_back(child_index);
  return k;
}

std::string to_string(const OrderKey& k) {
  std::string s = std::to_string(k.producer_seq);
  for (auto c : k.child_path) s += "." + std::to_string(c);
  return s;
}

Json order_key_to_json(const OrderKey& k) {
  Json j = Json::array();
  j.push_back(k.producer_seq);
  j.push_back(k.child_path);
  return j;
}

OrderKey order_key_from_json(const Json& j) {
  OrderKey k;
  k.producer_seq = j.at(0).get<std::uint64_t>();
  k.child_path = j.at(1).get<std::vector<std::uint32_t>>();
  return k;
}

Json element_to_json(const Element& e) {
  Json j{{"id", e.id},
         {"payload", payload_to_json(e.payload)},
         {"provenance", std::vector<std::uint64_t>(e.provenance.begin(), e.provenance.end())}};
  if (e.kind == ElementKind::state) {
    j["kind"] = "state";
  } else {
    j["key"] = order_key_to_json(e.key);
  }
  return j;
}

Element element_from_json(const Json& j) {
  Element e;
  e.id = j.at("id").get<std::uint64_t>();
  e.payload = payload_from_json(j.at("payload"));
  for (auto v : j.at("provenance")) e.provenance.insert(v.get<std::uint64_t>());
  if (j.value("kind", std::string("data")) == "state") {
    e.kind = ElementKind::state;
  } else {
    e.key = order_key_from_json(j.at("key"));
  }
  return e;
}

Element make_input(std::uint64_t seq, Payload payload, std::uint64_t id) {
  Element e;
  e.id = id == 0 ? seq : id;
  e.key.producer_seq = seq;
  e.payload = std::move(payload);
  e.provenance = {seq};
  return e;
}

std::string to_string(OperationKind k) {
  switch (k) {
    case OperationKind::map: return "map";
    case OperationKind::flat_map: return "flat_map";
    case OperationKind::stateful: return "stateful";
  }
  return "?";
}

OperationKind operation_kind_from_string(const std::string& s) {
  if (s == "map") return OperationKind::map;
  if (s == "flat_map") return OperationKind::flat_map;
  if (s == "stateful") return OperationKind::stateful;
  throw InvalidGraph("unknown operation kind '" + s + "'");
}

const OperationSpec& DataflowGraph::op(const std::string& name) const {
  return operations.at(index_of(name));
}

std::size_t DataflowGraph::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < operations.size(); ++i)
    if (operations[i].name == name) return i;
  throw InvalidGraph("no operation named '" + name + "'");
}

std::vector<std::size_t> DataflowGraph::successors(std::size_t op_index) const {
  std::vector<std::size_t> out;
  for (const auto& [from, to] : edges)
    if (from == operations[op_index].name) out.push_back(index_of(to));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> DataflowGraph::predecessors(std::size_t op_index) const {
  std::vector<std::size_t> out;
  for (const auto& [from, to] : edges)
    if (to == operations[op_index].name) out.push_back(index_of(from));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> DataflowGraph::topological_names() const {
  std::vector<std::string> out;
  for (const auto& o : operations) out.push_back(o.name);
  return out;
}

DataflowGraph build_graph(std::vector<OperationSpec> ops,
                          std::vector<std::pair<std::string, std::string>> edges) {
  std::map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].name.empty()) throw InvalidGraph("operation with empty name");
    if (!by_name.emplace(ops[i].name, i).second)
      throw InvalidGraph("duplicate operation name '" + ops[i].name + "'");
    if (ops[i].parallelism < 1)
      throw InvalidGraph("parallelism of '" + ops[i].name + "' must be positive");
    if (!ops[i].commutative && !ops[i].order_sensitive)
      throw InvalidGraph("non-commutative operation '" + ops[i].name + "' must be order sensitive");
    if (!ops[i].transition) throw InvalidGraph("operation '" + ops[i].name + "' has no transition");
  }
  if (ops.empty()) throw InvalidGraph("graph has no operations");

  std::map<std::string, int> indeg, outdeg;
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& o : ops) indeg[o.name] = outdeg[o.name] = 0;
  for (const auto& [from, to] : edges) {
    if (!by_name.count(from) || !by_name.count(to))
      throw DanglingEdge("edge " + from + " -> " + to + " references an undeclared operation");
    ++indeg[to];
    ++outdeg[from];
    adj[from].push_back(to);
  }

  // Kahn's algorithm; the ready set is ordered by name for stable output.
  std::set<std::string> ready;
  auto remaining = indeg;
  for (const auto& [n, d] : remaining)
    if (d == 0) ready.insert(n);
  std::vector<std::string> order;
  while (!ready.empty()) {
    auto n = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(n);
    for (const auto& m : adj[n])
      if (--remaining[m] == 0) ready.insert(m);
  }
  if (order.size() != ops.size()) throw CycleDetected("dataflow graph contains a cycle");

  std::vector<std::string> sources, sinks;
  for (const auto& n : order) {
    if (indeg[n] == 0) sources.push_back(n);
    if (outdeg[n] == 0) sinks.push_back(n);
  }
  if (sources.size() != 1) throw MultipleSources("graph must have exactly one source");
  if (sinks.size() != 1) throw MultipleSinks("graph must have exactly one sink");

  DataflowGraph g;
  for (const auto& n : order) g.operations.push_back(std::move(ops[by_name[n]]));
  g.edges = std::move(edges);
  std::sort(g.edges.begin(), g.edges.end());
  g.source_name = sources.front();
  g.sink_name = sinks.front();
  return g;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string partition_key(const OperationSpec& op, const Payload& p) {
  return op.partition_by ? op.partition_by(p) : std::string{};
}

ApplyResult apply_operation(const OperationSpec& op, const std::optional<Element>& state,
                            const Element& elem, std::uint64_t first_id) {
  std::optional<Payload> in_state;
  if (op.kind == OperationKind::stateful) {
    in_state = state ? std::optional<Payload>(state->payload) : op.initial_state;
  }
  TransitionResult r;
  try {
    r = op.transition(in_state, elem.payload);
  } catch (const std::exception& ex) {
    throw TransitionPanic(op.name, elem.id, ex.what());
  }
  if (op.kind == OperationKind::map && r.outputs.size() != 1)
    throw TransitionPanic(op.name, elem.id, "map must produce exactly one output");

  Provenance prov = elem.provenance;
  if (state) prov.insert(state->provenance.begin(), state->provenance.end());

  ApplyResult out;
  if (op.kind == OperationKind::stateful && r.state) {
    Element s;
    s.id = first_id;
    s.kind = ElementKind::state;
    s.payload = std::move(*r.state);
    s.provenance = prov;
    out.state = std::move(s);
  }
  for (std::size_t i = 0; i < r.outputs.size(); ++i) {
    Element d;
    d.id = first_id + 1 + i;
    d.key = derive_order_key(elem.key, static_cast<std::uint32_t>(i));
    d.payload = std::move(r.outputs[i]);
    d.provenance = prov;
    out.derived.push_back(std::move(d));
  }
  return out;
}

}  // namespace streamlab
