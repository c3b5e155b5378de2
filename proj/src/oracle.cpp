#include "streamlab/oracle.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace streamlab {

// ---------------------------------------------------------------------------
// Steps

ModelStep ModelStep::input(Element e, std::uint32_t lane) {
  ModelStep s;
  s.kind = Kind::input;
  s.element = std::move(e);
  s.lane = lane;
  return s;
}

ModelStep ModelStep::output(Element e) {
  ModelStep s;
  s.kind = Kind::output;
  s.element = std::move(e);
  return s;
}

ModelStep ModelStep::transform(std::string op, std::vector<std::uint64_t> consumed) {
  ModelStep s;
  s.kind = Kind::transform;
  s.op = std::move(op);
  s.consumed = std::move(consumed);
  return s;
}

ModelStep ModelStep::failure_recover() {
  ModelStep s;
  s.kind = Kind::failure_recover;
  return s;
}

Json model_step_to_json(const ModelStep& s) {
  switch (s.kind) {
    case ModelStep::Kind::input:
      return Json{{"step", "input"}, {"element", element_to_json(s.element)}, {"lane", s.lane}};
    case ModelStep::Kind::output:
      return Json{{"step", "output"}, {"element", element_to_json(s.element)}};
    case ModelStep::Kind::transform: {
      Json produced = Json::array();
      for (const auto& e : s.produced) produced.push_back(element_to_json(e));
      return Json{{"step", "transform"}, {"op", s.op}, {"consumed", s.consumed}, {"produced", produced}};
    }
    case ModelStep::Kind::failure_recover:
      return Json{{"step", "failure_recover"}};
  }
  return {};
}

ModelStep model_step_from_json(const Json& j) {
  const auto kind = j.at("step").get<std::string>();
  if (kind == "input")
    return ModelStep::input(element_from_json(j.at("element")), j.value("lane", 0u));
  if (kind == "output") return ModelStep::output(element_from_json(j.at("element")));
  if (kind == "transform") {
    auto s = ModelStep::transform(j.at("op").get<std::string>(),
                                  j.at("consumed").get<std::vector<std::uint64_t>>());
    if (j.contains("produced"))
      for (const auto& e : j["produced"]) s.produced.push_back(element_from_json(e));
    return s;
  }
  if (kind == "failure_recover") return ModelStep::failure_recover();
  throw Error("unknown model step '" + kind + "'");
}

namespace {

std::vector<WorkItem>::const_iterator find_in(const std::vector<WorkItem>& w, std::uint64_t id) {
  return std::find_if(w.begin(), w.end(), [id](const WorkItem& i) { return i.element.id == id; });
}

}  // namespace

ModelState model_step(const ModelState& state, const ModelStep& step, const DataflowGraph& graph) {
  ModelState next = state;
  next.tau = state.tau + 1;
  switch (step.kind) {
    case ModelStep::Kind::input: {
      const auto& e = step.element;
      for (const auto& a : state.inputs_A)
        if (a.id == e.id) throw StepNotEnabled("input " + std::to_string(e.id) + " already entered");
      next.inputs_A.push_back(e);
      next.working_W.push_back(WorkItem{e, graph.source_name, {}, step.lane});
      return next;
    }
    case ModelStep::Kind::output: {
      auto it = find_in(state.working_W, step.element.id);
      if (it == state.working_W.end() || !it->at.empty() ||
          it->element.kind != ElementKind::data)
        throw StepNotEnabled("output " + std::to_string(step.element.id) +
                             " is not a ready element of the working set");
      next.outputs_B.push_back(it->element);
      next.working_W.erase(next.working_W.begin() + (it - state.working_W.begin()));
      return next;
    }
    case ModelStep::Kind::transform: {
      std::size_t op_index;
      try {
        op_index = graph.index_of(step.op);
      } catch (const InvalidGraph&) {
        throw StepNotEnabled("transform names unknown operation '" + step.op + "'");
      }
      const auto& op = graph.operations[op_index];
      const WorkItem* data = nullptr;
      const WorkItem* st = nullptr;
      for (auto id : step.consumed) {
        auto it = find_in(state.working_W, id);
        if (it == state.working_W.end() || it->at != op.name)
          throw StepNotEnabled("element " + std::to_string(id) + " is not waiting at '" + op.name + "'");
        if (it->element.kind == ElementKind::data) {
          if (data) throw StepNotEnabled("transform consumes more than one data element");
          data = &*it;
        } else {
          if (st) throw StepNotEnabled("transform consumes more than one state");
          st = &*it;
        }
      }
      if (!data) throw StepNotEnabled("transform at '" + op.name + "' has no data element to consume");
      const auto part = partition_key(op, data->element.payload);
      if (op.kind == OperationKind::stateful) {
        const WorkItem* present = nullptr;
        for (const auto& w : state.working_W)
          if (w.element.kind == ElementKind::state && w.at == op.name && w.partition == part) present = &w;
        if (present != st)
          throw StepNotEnabled("transform at '" + op.name + "' must consume the partition state");
      } else if (st) {
        throw StepNotEnabled("stateless operation '" + op.name + "' cannot consume a state");
      }
      std::optional<Element> in_state;
      if (st) in_state = st->element;
      auto result = apply_operation(op, in_state, data->element, state.next_id);
      if (!step.produced.empty()) {
        bool same = step.produced.size() == result.derived.size();
        for (std::size_t i = 0; same && i < result.derived.size(); ++i)
          same = step.produced[i].payload == result.derived[i].payload;
        if (!same) throw StepNotEnabled("produced elements are not related to the consumed ones");
      }
      next.next_id = state.next_id + 1 + result.derived.size();
      const auto lane = data->lane;
      std::erase_if(next.working_W, [&](const WorkItem& w) {
        return std::find(step.consumed.begin(), step.consumed.end(), w.element.id) !=
               step.consumed.end();
      });
      if (result.state) next.working_W.push_back(WorkItem{*result.state, op.name, part, 0});
      const auto succ = graph.successors(op_index);
      for (const auto& d : result.derived) {
        if (succ.empty()) {
          next.working_W.push_back(WorkItem{d, {}, {}, lane});
        } else {
          for (auto s : succ) next.working_W.push_back(WorkItem{d, graph.operations[s].name, {}, lane});
        }
      }
      return next;
    }
    case ModelStep::Kind::failure_recover:
      // Reference recovery restores the working set it found.
      return next;
  }
  return next;
}

// ---------------------------------------------------------------------------
// Reference input layouts

ReferenceInput::ReferenceInput(std::vector<Element> single_channel) {
  if (!single_channel.empty()) lanes.push_back(std::move(single_channel));
}

ReferenceInput ReferenceInput::single_channel(std::vector<Element> inputs) {
  return ReferenceInput(std::move(inputs));
}

ReferenceInput ReferenceInput::independent(std::vector<Element> inputs) {
  ReferenceInput r;
  for (auto& e : inputs) r.lanes.push_back({std::move(e)});
  return r;
}

ReferenceInput ReferenceInput::round_robin(std::vector<Element> inputs, int channels) {
  if (channels < 1) throw Error("channel count must be positive");
  ReferenceInput r;
  r.lanes.resize(std::min<std::size_t>(channels, inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i) r.lanes[i % channels].push_back(std::move(inputs[i]));
  return r;
}

std::vector<Element> ReferenceInput::all() const {
  std::vector<Element> out;
  for (const auto& l : lanes) out.insert(out.end(), l.begin(), l.end());
  return out;
}

std::size_t ReferenceInput::size() const {
  std::size_t n = 0;
  for (const auto& l : lanes) n += l.size();
  return n;
}

// ---------------------------------------------------------------------------
// Search engine

namespace {

constexpr std::uint32_t kNone = 0xffffffffu;

enum class MoveKind : std::uint8_t { input, transform, output, skip };

struct Move {
  MoveKind kind;
  std::uint16_t lane;
  std::uint16_t op;
};

struct Lane {
  std::vector<std::uint32_t> items;  // interned payloads
  std::vector<Element> elements;
  int dup_of = -1;    // base lane index this extra copy duplicates
  int dup_item = -1;  // index within that lane
  int dup_rank = 0;
  bool base = true;
};

struct SearchState {
  std::vector<std::uint16_t> cursor;
  std::vector<std::uint8_t> skipped;  // per lane, count of skipped heads (at-most-once)
  std::map<std::pair<std::uint16_t, std::uint16_t>, std::vector<std::uint32_t>> queues;
  std::map<std::pair<std::uint16_t, std::string>, std::uint32_t> states;
  std::vector<std::uint32_t> outputs;  // enumeration mode
  std::uint32_t matched = 0;           // guided mode
};

struct TransitionKey {
  std::uint16_t op;
  std::uint32_t state;
  std::uint32_t input;
  bool operator==(const TransitionKey&) const = default;
};

struct TransitionKeyHash {
  std::size_t operator()(const TransitionKey& k) const {
    return (static_cast<std::size_t>(k.op) * 1000003u) ^ (static_cast<std::size_t>(k.state) << 20) ^ k.input;
  }
};

struct CachedTransition {
  std::uint32_t state;
  std::vector<std::uint32_t> outputs;
};

class Engine {
 public:
  Engine(const DataflowGraph& g, const ReferenceInput& in, SearchLimits limits)
      : graph_(g), limits_(limits) {
    if (in.size() > limits.max_inputs)
      throw SearchBudgetExceeded("reference search supports at most " +
                                 std::to_string(limits.max_inputs) + " inputs, got " +
                                 std::to_string(in.size()));
    for (const auto& l : in.lanes) {
      Lane lane;
      for (const auto& e : l) {
        lane.items.push_back(intern(e.payload));
        lane.elements.push_back(e);
      }
      lanes_.push_back(std::move(lane));
    }
    egress_ = static_cast<std::uint16_t>(g.operations.size());
    for (std::size_t i = 0; i < g.operations.size(); ++i) succ_.push_back(g.successors(i));
    source_ = static_cast<std::uint16_t>(g.index_of(g.source_name));
  }

  void add_duplicates(int max_duplication) {
    const auto base = lanes_.size();
    std::uint64_t next_id = std::uint64_t{1} << 50;
    for (std::size_t l = 0; l < base; ++l)
      for (std::size_t i = 0; i < lanes_[l].items.size(); ++i)
        for (int r = 0; r < max_duplication; ++r) {
          Lane d;
          d.items = {lanes_[l].items[i]};
          Element copy = lanes_[l].elements[i];
          copy.id = next_id++;
          d.elements = {copy};
          d.dup_of = static_cast<int>(l);
          d.dup_item = static_cast<int>(i);
          d.dup_rank = r;
          d.base = false;
          dup_index_[{l, i, r}] = lanes_.size();
          lanes_.push_back(std::move(d));
        }
  }

  void allow_skips() { skips_ = true; }

  std::uint32_t intern(const Payload& p) {
    auto c = canonical(p);
    auto [it, fresh] = ids_.emplace(c, static_cast<std::uint32_t>(payloads_.size()));
    if (fresh) payloads_.push_back(p);
    return it->second;
  }

  SearchState initial() const {
    SearchState s;
    s.cursor.assign(lanes_.size(), 0);
    s.skipped.assign(lanes_.size(), 0);
    return s;
  }

  // -- enumeration ----------------------------------------------------------

  std::vector<OutputSequence> enumerate() {
    std::set<std::vector<std::uint32_t>> seqs;
    auto s = initial();
    enumerate_from(s, seqs);
    std::vector<std::string> canon;
    for (const auto& p : payloads_) canon.push_back(canonical(p));
    std::vector<std::vector<std::uint32_t>> sorted(seqs.begin(), seqs.end());
    std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
      return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                          [&](std::uint32_t x, std::uint32_t y) { return canon[x] < canon[y]; });
    });
    std::vector<OutputSequence> out;
    for (const auto& seq : sorted) {
      OutputSequence o;
      for (auto id : seq) o.push_back(payloads_[id]);
      out.push_back(std::move(o));
    }
    return out;
  }

  // -- guided search ---------------------------------------------------------

  /// Finds moves reproducing `observed` as a prefix. Returns true on success
  /// and leaves the moves in path().
  bool match(const OutputSequence& observed) {
    observed_.clear();
    for (const auto& p : observed) observed_.push_back(intern(p));
    path_.clear();
    best_ = 0;
    auto s = initial();
    return match_from(s);
  }

  std::size_t best_matched() const { return best_; }
  const std::vector<Move>& path() const { return path_; }

  /// Extends the matched path with arbitrary moves until the run is complete.
  void complete() {
    auto s = initial();
    for (const auto& m : path_) apply_move(s, m);
    std::vector<Move> moves;
    while (true) {
      moves.clear();
      list_moves(s, moves, /*guided=*/false, /*for_completion=*/true);
      if (moves.empty()) break;
      path_.push_back(moves.front());
      apply_move(s, moves.front());
    }
  }

  /// Replays the current path through the literal step rules.
  GuaranteeVerdict witness() const {
    GuaranteeVerdict v;
    ModelState ms;
    std::vector<std::uint16_t> cursor(lanes_.size(), 0);
    std::vector<bool> used(lanes_.size(), false);
    std::vector<std::vector<bool>> dropped(lanes_.size());
    for (std::size_t l = 0; l < lanes_.size(); ++l) dropped[l].assign(lanes_[l].items.size(), false);
    auto head_at = [&](const std::string& at, std::uint32_t lane) -> const WorkItem& {
      for (const auto& w : ms.working_W)
        if (w.element.kind == ElementKind::data && w.at == at && w.lane == lane) return w;
      throw Error("internal: witness replay lost its lane head");
    };
    auto transform_at = [&](const std::string& op_name, std::uint32_t lane) {
      const auto& data = head_at(op_name, lane);
      std::vector<std::uint64_t> consumed{data.element.id};
      const auto& op = graph_.op(op_name);
      if (op.kind == OperationKind::stateful) {
        const auto part = partition_key(op, data.element.payload);
        for (const auto& w : ms.working_W)
          if (w.element.kind == ElementKind::state && w.at == op_name && w.partition == part)
            consumed.push_back(w.element.id);
      }
      auto step = ModelStep::transform(op_name, consumed);
      auto next = model_step(ms, step, graph_);
      for (const auto& w : next.working_W)
        if (w.element.id >= ms.next_id && w.element.kind == ElementKind::data &&
            std::none_of(step.produced.begin(), step.produced.end(),
                         [&](const Element& e) { return e.id == w.element.id; }))
          step.produced.push_back(w.element);
      v.witness_steps.push_back(step);
      ms = std::move(next);
    };
    for (const auto& m : path_) {
      switch (m.kind) {
        case MoveKind::input: {
          const auto& e = lanes_[m.lane].elements[cursor[m.lane]++];
          used[m.lane] = true;
          auto step = ModelStep::input(e, m.lane);
          ms = model_step(ms, step, graph_);
          v.witness_steps.push_back(step);
          transform_at(graph_.source_name, m.lane);
          break;
        }
        case MoveKind::transform:
          transform_at(graph_.operations[m.op].name, m.lane);
          break;
        case MoveKind::output: {
          auto step = ModelStep::output(head_at({}, m.lane).element);
          ms = model_step(ms, step, graph_);
          v.witness_steps.push_back(step);
          break;
        }
        case MoveKind::skip:
          dropped[m.lane][cursor[m.lane]++] = true;
          break;
      }
    }
    for (const auto& b : ms.outputs_B) v.witness_outputs.push_back(b.payload);
    for (std::size_t l = 0; l < lanes_.size(); ++l) {
      if (!lanes_[l].base && !used[l]) continue;
      for (std::size_t i = 0; i < lanes_[l].elements.size(); ++i)
        if (!dropped[l][i]) v.witness_inputs.push_back(lanes_[l].elements[i]);
    }
    return v;
  }

 private:
  const Lane& lane(std::size_t l) const { return lanes_[l]; }

  bool dup_allowed(const SearchState& s, std::size_t l) const {
    const auto& ln = lanes_[l];
    if (ln.base || ln.dup_rank == 0) return true;
    auto prev = dup_index_.at({static_cast<std::size_t>(ln.dup_of), static_cast<std::size_t>(ln.dup_item),
                               ln.dup_rank - 1});
    return s.cursor[prev] > 0;
  }

  void list_moves(const SearchState& s, std::vector<Move>& moves, bool guided, bool for_completion) const {
    // Outputs first: they are the only moves that can fail a guided match.
    for (const auto& [k, q] : s.queues) {
      if (k.first != egress_ || q.empty()) continue;
      if (guided && (s.matched >= observed_.size() || q.front() != observed_[s.matched])) continue;
      moves.push_back(Move{MoveKind::output, k.second, egress_});
    }
    for (const auto& [k, q] : s.queues) {
      if (k.first == egress_ || q.empty()) continue;
      moves.push_back(Move{MoveKind::transform, k.second, k.first});
    }
    for (std::size_t l = 0; l < lanes_.size(); ++l) {
      if (s.cursor[l] >= lanes_[l].items.size()) continue;
      if (for_completion && !lanes_[l].base) continue;
      if (!dup_allowed(s, l)) continue;
      moves.push_back(Move{MoveKind::input, static_cast<std::uint16_t>(l), source_});
    }
    if (skips_ && !for_completion)
      for (std::size_t l = 0; l < lanes_.size(); ++l)
        if (lanes_[l].base && s.cursor[l] < lanes_[l].items.size())
          moves.push_back(Move{MoveKind::skip, static_cast<std::uint16_t>(l), 0});
  }

  const CachedTransition& transition(std::uint16_t op_index, std::uint32_t state, std::uint32_t input) {
    TransitionKey key{op_index, state, input};
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto& op = graph_.operations[op_index];
    std::optional<Element> st;
    if (state != kNone) {
      Element e;
      e.kind = ElementKind::state;
      e.payload = payloads_[state];
      st = e;
    }
    Element in;
    in.payload = payloads_[input];
    auto r = apply_operation(op, st, in, 1);
    CachedTransition ct;
    ct.state = r.state ? intern(r.state->payload) : kNone;
    for (const auto& d : r.derived) ct.outputs.push_back(intern(d.payload));
    return cache_.emplace(key, std::move(ct)).first->second;
  }

  const std::string& partition_of(std::uint16_t op_index, std::uint32_t payload) {
    auto key = (static_cast<std::uint64_t>(op_index) << 32) | payload;
    auto it = part_cache_.find(key);
    if (it != part_cache_.end()) return it->second;
    return part_cache_.emplace(key, partition_key(graph_.operations[op_index], payloads_[payload]))
        .first->second;
  }

  void run_op(SearchState& s, std::uint16_t op_index, std::uint16_t lane, std::uint32_t input) {
    const auto& op = graph_.operations[op_index];
    std::uint32_t st = kNone;
    std::string part;
    if (op.kind == OperationKind::stateful) {
      part = partition_of(op_index, input);
      auto it = s.states.find({op_index, part});
      if (it != s.states.end()) st = it->second;
    }
    const auto ct = transition(op_index, st, input);  // copy: cache may rehash below
    if (op.kind == OperationKind::stateful && ct.state != kNone) s.states[{op_index, part}] = ct.state;
    const auto& succ = succ_[op_index];
    for (auto out : ct.outputs) {
      if (succ.empty()) {
        s.queues[{egress_, lane}].push_back(out);
      } else {
        for (auto n : succ) s.queues[{static_cast<std::uint16_t>(n), lane}].push_back(out);
      }
    }
  }

  void apply_move(SearchState& s, const Move& m) {
    switch (m.kind) {
      case MoveKind::input: {
        const auto payload = lanes_[m.lane].items[s.cursor[m.lane]++];
        run_op(s, source_, m.lane, payload);
        break;
      }
      case MoveKind::transform: {
        auto& q = s.queues[{m.op, m.lane}];
        const auto payload = q.front();
        q.erase(q.begin());
        if (q.empty()) s.queues.erase({m.op, m.lane});
        run_op(s, m.op, m.lane, payload);
        break;
      }
      case MoveKind::output: {
        auto& q = s.queues[{egress_, m.lane}];
        s.outputs.push_back(q.front());
        q.erase(q.begin());
        if (q.empty()) s.queues.erase({egress_, m.lane});
        ++s.matched;
        break;
      }
      case MoveKind::skip:
        ++s.cursor[m.lane];
        ++s.skipped[m.lane];
        break;
    }
  }

  std::string memo_key(const SearchState& s, bool with_outputs) const {
    std::string k;
    auto put = [&k](std::uint32_t v) { k.append(reinterpret_cast<const char*>(&v), sizeof v); };
    for (auto c : s.cursor) put(c);
    put(kNone);
    for (const auto& [q, items] : s.queues) {
      put((static_cast<std::uint32_t>(q.first) << 16) | q.second);
      for (auto i : items) put(i);
      put(kNone);
    }
    put(kNone);
    for (const auto& [st, v] : s.states) {
      put(st.first);
      k += st.second;
      k.push_back('\0');
      put(v);
    }
    put(kNone);
    if (with_outputs) {
      for (auto o : s.outputs) put(o);
    } else {
      put(s.matched);
    }
    return k;
  }

  void charge() {
    if (++nodes_ > limits_.node_budget)
      throw SearchBudgetExceeded("reference search exceeded its node budget of " +
                                 std::to_string(limits_.node_budget));
  }

  void enumerate_from(SearchState& s, std::set<std::vector<std::uint32_t>>& seqs) {
    charge();
    if (!visited_.insert(memo_key(s, true)).second) return;
    if (s.outputs.size() >= limits_.max_outputs) {
      seqs.insert(s.outputs);
      return;
    }
    std::vector<Move> moves;
    list_moves(s, moves, false, false);
    if (moves.empty()) {
      seqs.insert(s.outputs);
      return;
    }
    for (const auto& m : moves) {
      SearchState next = s;
      apply_move(next, m);
      enumerate_from(next, seqs);
    }
  }

  bool match_from(SearchState& s) {
    charge();
    best_ = std::max<std::size_t>(best_, s.matched);
    if (s.matched == observed_.size()) return true;
    if (!visited_.insert(memo_key(s, false)).second) return false;
    std::vector<Move> moves;
    list_moves(s, moves, true, false);
    for (const auto& m : moves) {
      SearchState next = s;
      apply_move(next, m);
      path_.push_back(m);
      if (match_from(next)) return true;
      path_.pop_back();
    }
    return false;
  }

  const DataflowGraph& graph_;
  SearchLimits limits_;
  std::vector<Lane> lanes_;
  std::map<std::tuple<std::size_t, std::size_t, int>, std::size_t> dup_index_;
  std::vector<std::vector<std::size_t>> succ_;
  std::uint16_t egress_ = 0;
  std::uint16_t source_ = 0;
  bool skips_ = false;

  std::vector<Payload> payloads_;
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::unordered_map<TransitionKey, CachedTransition, TransitionKeyHash> cache_;
  std::unordered_map<std::uint64_t, std::string> part_cache_;

  std::vector<std::uint32_t> observed_;
  std::vector<Move> path_;
  std::size_t best_ = 0;
  std::size_t nodes_ = 0;
  std::unordered_set<std::string> visited_;
};

std::string render(const OutputSequence& seq) {
  std::string s = "[";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) s += ", ";
    s += '"' + display(seq[i]) + '"';
  }
  return s + "]";
}

GuaranteeVerdict guided(Engine& engine, const OutputSequence& observed, const char* what) {
  if (engine.match(observed)) {
    engine.complete();
    auto v = engine.witness();
    v.holds = true;
    v.description = std::string(what) + ": observed prefix reproduced by reference run " +
                    render(v.witness_outputs);
    return v;
  }
  GuaranteeVerdict v;
  v.holds = false;
  v.counterexample_index = engine.best_matched();
  v.description = std::string(what) + ": no reference run produces \"" +
                  display(observed[engine.best_matched()]) + "\" at position " +
                  std::to_string(engine.best_matched());
  return v;
}

}  // namespace

std::vector<OutputSequence> enumerate_reference_runs(const DataflowGraph& graph,
                                                     const ReferenceInput& inputs,
                                                     SearchLimits limits) {
  Engine e(graph, inputs, limits);
  return e.enumerate();
}

GuaranteeVerdict check_exactly_once(const DataflowGraph& graph, const ReferenceInput& inputs,
                                    const OutputSequence& observed, SearchLimits limits) {
  Engine e(graph, inputs, limits);
  return guided(e, observed, "exactly-once");
}

GuaranteeVerdict check_at_least_once(const DataflowGraph& graph, const ReferenceInput& inputs,
                                     const OutputSequence& observed, int max_duplication,
                                     SearchLimits limits) {
  if (max_duplication < 0) throw Error("max_duplication must be non-negative");
  Engine e(graph, inputs, limits);
  e.add_duplicates(max_duplication);
  return guided(e, observed, "at-least-once");
}

GuaranteeVerdict check_at_most_once(const DataflowGraph& graph, const ReferenceInput& inputs,
                                    const OutputSequence& observed, SearchLimits limits) {
  Engine e(graph, inputs, limits);
  e.allow_skips();
  return guided(e, observed, "at-most-once");
}

bool check_determinism(const DataflowGraph& graph, const ReferenceInput& inputs, SearchLimits limits) {
  return enumerate_reference_runs(graph, inputs, limits).size() == 1;
}

Json verdict_to_json(const GuaranteeVerdict& v) {
  Json witness = Json::array();
  for (const auto& p : v.witness_outputs) witness.push_back(display(p));
  Json inputs = Json::array();
  for (const auto& e : v.witness_inputs) inputs.push_back(display(e.payload));
  Json j{{"holds", v.holds}, {"witness", witness}, {"witness_inputs", inputs}, {"description", v.description}};
  j["counterexample_index"] = v.counterexample_index ? Json(*v.counterexample_index) : Json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Trace-level persistence check

GuaranteeVerdict check_theorem1_trace(const ExecutionTrace& trace, const DataflowGraph& graph) {
  if (!trace.persistence_tracked)
    throw MalformedTrace("trace does not record persistence events");
  (void)graph;

  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> children;
  std::vector<std::uint64_t> candidates;
  std::unordered_set<std::uint64_t> candidate_seen;
  // First position at which each element became recoverable.
  std::unordered_map<std::uint64_t, std::size_t> recoverable_at;
  struct Release {
    std::size_t pos;
    std::uint64_t id;
    std::string payload;
  };
  std::vector<Release> releases;
  std::unordered_map<std::uint64_t, std::string> names;

  for (std::size_t pos = 0; pos < trace.events.size(); ++pos) {
    const auto& e = trace.events[pos];
    switch (e.kind) {
      case TraceKind::transform: {
        if (e.consumed.empty()) throw MalformedTrace("transform event without consumed elements");
        for (auto c : e.consumed) {
          if (e.state_out) children[c].push_back(*e.state_out);
          for (auto id : e.ids) children[c].push_back(id);
        }
        if (e.state_out) {
          for (auto id : e.ids) children[*e.state_out].push_back(id);
          names[*e.state_out] = "state@" + e.op;
        }
        if (e.noncommutative && !e.ordered) {
          // Results of the operation: the new state, or the outputs if stateless.
          std::vector<std::uint64_t> results;
          if (e.state_out) results.push_back(*e.state_out);
          else results = e.ids;
          for (auto r : results)
            if (candidate_seen.insert(r).second) candidates.push_back(r);
        }
        break;
      }
      case TraceKind::persist:
      case TraceKind::commit:
        for (auto id : e.ids) recoverable_at.emplace(id, pos);
        break;
      case TraceKind::output:
        for (std::size_t i = 0; i < e.ids.size(); ++i) {
          recoverable_at.emplace(e.ids[i], pos);
          releases.push_back({pos, e.ids[i], i < e.payloads.size() ? e.payloads[i] : std::string{}});
          names[e.ids[i]] = '"' + releases.back().payload + '"';
        }
        break;
      default:
        break;
    }
  }

  auto descendants = [&](std::uint64_t root) {
    std::unordered_set<std::uint64_t> seen{root};
    std::vector<std::uint64_t> stack{root};
    while (!stack.empty()) {
      auto n = stack.back();
      stack.pop_back();
      auto it = children.find(n);
      if (it == children.end()) continue;
      for (auto c : it->second)
        if (seen.insert(c).second) stack.push_back(c);
    }
    return seen;
  };

  for (auto s : candidates) {
    const auto dep = descendants(s);
    std::vector<const Release*> dependent;
    for (const auto& r : releases)
      if (dep.count(r.id)) dependent.push_back(&r);
    if (dependent.size() < 2) continue;
    const auto first_pos = dependent.front()->pos;
    // Everything reachable from an element of dep that was recoverable by first_pos.
    std::unordered_set<std::uint64_t> covered;
    for (auto id : dep) {
      auto it = recoverable_at.find(id);
      if (it == recoverable_at.end() || it->second > first_pos) continue;
      if (covered.count(id)) continue;
      for (auto d : descendants(id)) covered.insert(d);
    }
    for (std::size_t i = 1; i < dependent.size(); ++i) {
      if (covered.count(dependent[i]->id)) continue;
      GuaranteeVerdict v;
      v.holds = false;
      v.counterexample_index = dependent[i]->pos;
      auto sname = names.count(s) ? names[s] : std::to_string(s);
      v.description = "result " + sname + " (id " + std::to_string(s) +
                      ") was not recoverable when \"" + dependent.front()->payload +
                      "\" was released, yet \"" + dependent[i]->payload + "\" depends on it";
      return v;
    }
  }
  GuaranteeVerdict v;
  v.holds = true;
  v.description = candidates.empty()
                      ? "no unordered non-commutative results in trace"
                      : "every unordered non-commutative result was recoverable before its second dependent output";
  return v;
}

}  // namespace streamlab
