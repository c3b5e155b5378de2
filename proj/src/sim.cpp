#include <algorithm>
#include <cmath>
#include <sstream>

#include "sim_internal.hpp"

namespace streamlab {

namespace detail {

Simulation::Simulation(const DataflowGraph& graph, const std::vector<Element>& inputs, const SimConfig& config)
    : graph_(graph), inputs_(inputs), cfg_(config), mode_(config.mode) {
  cfg_.validate();
  width_ = epoch_width(cfg_.input_rate, cfg_.checkpoint_interval);
  loss_ = cfg_.fault_plan.packet_loss_probability;
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    const auto& k = inputs_[i].key;
    if (k.producer_seq != i + 1 || !k.child_path.empty())
      throw Error("inputs must carry producer_seq 1, 2, ... in order");
  }
  double last_failure = 0;
  for (const auto& f : cfg_.fault_plan.node_failures) last_failure = std::max(last_failure, f.time_ms);
  max_time_ = cfg_.max_sim_time > 0
                  ? ms_to_us(cfg_.max_sim_time)
                  : ms_to_us(inputs_.size() * 1000.0 / cfg_.input_rate + last_failure + 60'000.0);

  nodes_.resize(cfg_.nodes);
  op_tasks_.resize(graph_.operations.size());
  for (std::size_t o = 0; o < graph_.operations.size(); ++o) {
    const auto& op = graph_.operations[o];
    for (int i = 0; i < op.parallelism; ++i) {
      Task t;
      t.index = static_cast<int>(tasks_.size());
      t.name = op.parallelism > 1 ? op.name + "#" + std::to_string(i) : op.name;
      t.op = o;
      t.instance = i;
      t.node = t.index % cfg_.nodes;
      t.stateful = op.kind == OperationKind::stateful;
      t.gated = t.stateful && mode_ == GuaranteeMode::ExactlyOnceDeterministic;
      op_tasks_[o].push_back(t.index);
      tasks_.push_back(std::move(t));
    }
  }
  for (auto& t : tasks_) {
    const auto preds = graph_.predecessors(t.op);
    if (preds.empty()) t.senders.push_back(kProducer);
    for (auto p : preds) t.senders.insert(t.senders.end(), op_tasks_[p].begin(), op_tasks_[p].end());
    const auto succ = graph_.successors(t.op);
    if (succ.empty()) t.receivers.push_back(kBarrier);
    for (auto s : succ) t.receivers.insert(t.receivers.end(), op_tasks_[s].begin(), op_tasks_[s].end());
    if (t.stateful) participants_.push_back(t.name);
  }
  const auto sink = graph_.index_of(graph_.sink_name);
  barrier_.node = tasks_[op_tasks_[sink].front()].node;
  barrier_.senders = op_tasks_[sink];
  participants_.push_back("barrier");

  if (cfg_.snapshot_dir.empty()) store_ = std::make_unique<MemorySnapshotStore>();
  else store_ = std::make_unique<FileSnapshotStore>(cfg_.snapshot_dir);

  result_.trace.mode = to_string(mode_);
  result_.trace.persistence_tracked = true;
  result_.inputs = inputs_.size();
}

SimResult Simulation::run() {
  for (const auto& f : cfg_.fault_plan.node_failures) {
    const int node = f.node;
    schedule(ms_to_us(f.time_ms), [this, node] { node_failure(node); });
  }
  if (!inputs_.empty()) {
    wake_producer(0);
  }
  ensure_timers();

  while (!queue_.empty()) {
    auto ev = queue_.top();
    queue_.pop();
    if (ev.t > max_time_) diverge("no quiescence within max_sim_time");
    now_ = ev.t;
    ev.fn();
    flush();
  }
  if (mode_ != GuaranteeMode::NoGuarantee && work_remaining()) diverge("event queue drained with work pending");

  // Latency: original injection to the first delivery of the input's last output.
  std::map<OrderKey, Time> first_delivery;
  for (const auto& d : result_.delivered)
    for (const auto& e : d.bundle.items) first_delivery.emplace(e.key, d.t_us);
  std::map<std::uint64_t, Time> done_at;
  for (const auto& [key, t] : first_delivery) {
    auto& slot = done_at[key.producer_seq];
    slot = std::max(slot, t);
  }
  for (const auto& [seq, t] : done_at) {
    auto it = injected_at_.find(seq);
    if (it == injected_at_.end()) continue;
    result_.latencies.push_back({seq, static_cast<double>(t - it->second) / 1000.0});
  }
  result_.frontier = frontier_max_;
  return std::move(result_);
}

void Simulation::schedule(Time at, std::function<void()> fn) {
  queue_.push(Event{at, event_order_++, std::move(fn)});
}

Channel& Simulation::channel(const std::string& from, const std::string& to) {
  const auto name = from + "->" + to;
  auto it = channels_.find(name);
  if (it == channels_.end()) it = channels_.try_emplace(name, cfg_.seed, name).first;
  return it->second;
}

std::string Simulation::agent_name(int who) const {
  switch (who) {
    case kProducer: return "producer";
    case kBarrier: return "barrier";
    case kCoordinator: return "coordinator";
    case kConsumer: return "consumer";
    default: return tasks_[who].name;
  }
}

int Simulation::agent_node(int who) const {
  if (who >= 0) return tasks_[who].node;
  if (who == kBarrier) return barrier_.node;
  return -1;
}

void Simulation::deliver_guarded(int from, int to, Time delay, std::function<void()> fn) {
  const int sn = agent_node(from);
  const int rn = agent_node(to);
  if (rn >= 0 && !nodes_[rn].up) return;
  const auto sinc = sn >= 0 ? nodes_[sn].incarnation : 0;
  const auto rinc = rn >= 0 ? nodes_[rn].incarnation : 0;
  schedule(now_ + delay, [this, sn, rn, sinc, rinc, fn = std::move(fn)] {
    if (sn >= 0 && nodes_[sn].incarnation != sinc) return;
    if (rn >= 0 && (!nodes_[rn].up || nodes_[rn].incarnation != rinc)) return;
    fn();
  });
}

void Simulation::send_data(int from, int to, DataMsg msg) {
  msg.from = from;
  msg.track = splitmix64(++next_track_);
  const auto seq = msg.elem.key.producer_seq;
  acker_.spawn(seq, msg.tree_gen, msg.track);
  if (mode_ == GuaranteeMode::ExactlyOnceTransactional) {
    const auto e = epoch_of(seq, width_);
    if (from == kProducer) ++producer_sent_[{to, e}];
    else ++tasks_[from].sent[{to, e}];
  }
  auto& ch = channel(agent_name(from), agent_name(to));
  const auto delay = channel_deliver(ch, cfg_.channel_delay, loss_);
  if (!delay) {
    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::drop;
    ev.node = agent_node(from);
    ev.ids = {msg.elem.id};
    ev.keys = {msg.elem.key};
    ev.detail = ch.name;
    add_trace(std::move(ev));
    return;
  }
  deliver_guarded(from, to, *delay, [this, to, msg = std::move(msg)] {
    // Naive recovery does not fence off messages that were already in flight.
    if (msg.gen != gen_ && mode_ != GuaranteeMode::AtLeastOnceNaive) return;
    if (to == kBarrier) barrier_receive(msg);
    else task_receive(tasks_[to], msg);
  });
}

void Simulation::send_marker(int from, int to, std::uint64_t epoch, std::uint64_t count, std::uint64_t gen) {
  auto& ch = channel(agent_name(from), agent_name(to));
  const auto delay = channel_deliver(ch, cfg_.channel_delay, loss_);
  if (!delay) {
    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::drop;
    ev.node = agent_node(from);
    ev.epoch = static_cast<std::int64_t>(epoch);
    ev.detail = ch.name + " marker";
    add_trace(std::move(ev));
    return;
  }
  deliver_guarded(from, to, *delay, [this, from, to, epoch, count, gen] {
    if (gen != gen_) return;
    if (to == kBarrier) barrier_marker(from, epoch, count);
    else task_marker(tasks_[to], from, epoch, count);
  });
}

void Simulation::send_control(int from, int to, std::function<void()> fn) {
  auto& ch = channel(agent_name(from), agent_name(to));
  const auto delay = channel_deliver(ch, cfg_.channel_delay, 0.0);
  deliver_guarded(from, to, *delay, std::move(fn));
}

void Simulation::flush() {
  while (acker_.frontier() != frontier_seen_) {
    frontier_seen_ = acker_.frontier();
    frontier_max_ = std::max(frontier_max_, frontier_seen_);
    for (auto& t : tasks_)
      if (t.gated && nodes_[t.node].up) drain(t);
    barrier_try_send();
    barrier_round_check();
  }
}

bool Simulation::barrier_busy() const {
  return !barrier_.ordered.empty() || !barrier_.arrivals.empty() || barrier_.in_flight ||
         !barrier_.release_queue.empty();
}

bool Simulation::work_remaining() const {
  if (recovering_ || next_input_ < inputs_.size() || !replay_queue_.empty()) return true;
  if (!acker_.incomplete().empty()) return true;
  if (barrier_busy()) return true;
  if (mode_ == GuaranteeMode::ExactlyOnceTransactional && !inputs_.empty() &&
      committed_epoch_ < epoch_of(inputs_.size(), width_))
    return true;
  return false;
}

void Simulation::ensure_timers() {
  if (mode_ == GuaranteeMode::NoGuarantee) return;
  const bool rounds = mode_ == GuaranteeMode::ExactlyOnceDeterministic || mode_ == GuaranteeMode::AtLeastOnceNaive;
  if (rounds && !round_timer_) {
    round_timer_ = true;
    schedule(now_ + ms_to_us(cfg_.checkpoint_interval), [this] { round_tick(); });
  }
  if (!watchdog_timer_) {
    watchdog_timer_ = true;
    schedule(now_ + ms_to_us(cfg_.ack_timeout), [this] { watchdog(); });
  }
}

void Simulation::diverge(const std::string& why) const {
  std::ostringstream os;
  os << why << " at t=" << now_ / 1000.0 << "ms; frontier " << acker_.frontier() << " of "
     << inputs_.size() << " inputs";
  const auto inc = acker_.incomplete();
  if (!inc.empty()) {
    os << "; incomplete inputs:";
    for (std::size_t i = 0; i < inc.size() && i < 8; ++i) os << ' ' << inc[i];
    if (inc.size() > 8) os << " ...";
  }
  std::size_t buffered = 0;
  for (const auto& t : tasks_) buffered += t.buffer.size();
  os << "; buffered at tasks " << buffered << "; pending at barrier "
     << barrier_.ordered.size() + barrier_.arrivals.size();
  if (barrier_.in_flight) os << " (+1 bundle in flight)";
  if (recovering_) os << "; recovery in progress";
  const auto& ev = result_.events;
  if (!ev.empty()) {
    os << "; last events:";
    for (auto i = ev.size() > 4 ? ev.size() - 4 : 0; i < ev.size(); ++i) os << " [" << ev[i] << ']';
  }
  throw SimDiverged(os.str());
}

void Simulation::add_trace(TraceEvent e) { result_.trace.events.push_back(std::move(e)); }

void Simulation::log_event(const std::string& what) {
  std::ostringstream os;
  os << "t=" << now_ / 1000.0 << "ms " << what;
  result_.events.push_back(os.str());
}

// ---------------------------------------------------------------------------
// Producer

Time Simulation::nominal_time(std::size_t index) const {
  return static_cast<Time>(std::llround(static_cast<double>(index) * 1e6 / cfg_.input_rate));
}

void Simulation::wake_producer(Time at) {
  const auto token = ++producer_token_;
  schedule(at, [this, token] {
    if (token == producer_token_) producer_tick();
  });
}

// The producer never sends faster than its input rate, replays included.
void Simulation::producer_tick() {
  if (paused_) return;
  const auto spacing = nominal_time(1);
  if (last_send_ >= 0 && now_ < last_send_ + spacing) {
    wake_producer(last_send_ + spacing);
    return;
  }
  if (!replay_queue_.empty()) {
    inject(replay_queue_.front(), true);
    replay_queue_.pop_front();
  } else if (next_input_ < inputs_.size()) {
    if (now_ < nominal_time(next_input_)) {
      wake_producer(nominal_time(next_input_));
      return;
    }
    inject(inputs_[next_input_], false);
    ++next_input_;
  } else {
    return;
  }
  last_send_ = now_;
  if (!replay_queue_.empty() || next_input_ < inputs_.size())
    wake_producer(std::max(now_ + spacing, replay_queue_.empty() ? nominal_time(next_input_) : 0));
}

int Simulation::source_task_for(const Element& e) const {
  return route(graph_.index_of(graph_.source_name), e);
}

void Simulation::inject(const Element& e, bool replay) {
  const auto seq = e.key.producer_seq;
  acker_.inject(seq, gen_);
  if (!replay) {
    log_.append(e);
    injected_at_[seq] = now_;
  }
  position_ = seq;
  TraceEvent ev;
  ev.t_us = now_;
  ev.kind = TraceKind::input;
  ev.ids = {e.id};
  ev.keys = {e.key};
  ev.provenance = {e.provenance};
  if (replay) ev.detail = "replay";
  add_trace(std::move(ev));

  DataMsg m;
  m.elem = e;
  m.tree_gen = gen_;
  m.gen = gen_;
  const int to = source_task_for(e);
  send_data(kProducer, to, std::move(m));

  if (mode_ == GuaranteeMode::ExactlyOnceTransactional) {
    const auto ep = epoch_of(seq, width_);
    if (seq == epoch_last_seq(ep, width_) || seq == inputs_.size())
      for (auto s : op_tasks_[graph_.index_of(graph_.source_name)])
        send_marker(kProducer, s, ep, producer_sent_[{s, ep}], gen_);
  }
}

// ---------------------------------------------------------------------------
// Tasks

int Simulation::route(std::size_t op_index, const Element& e) const {
  const auto& ts = op_tasks_[op_index];
  if (ts.size() == 1) return ts.front();
  const auto& op = graph_.operations[op_index];
  if (op.partition_by)
    return ts[fnv1a(partition_key(op, e.payload)) % ts.size()];
  return ts[e.key.producer_seq % ts.size()];
}

void Simulation::task_receive(Task& t, DataMsg msg) {
  if (mode_ == GuaranteeMode::ExactlyOnceTransactional) {
    const auto e = epoch_of(msg.elem.key.producer_seq, width_);
    ++t.received[{msg.from, e}];
    if (e > t.epoch) t.buffer.push_back(std::move(msg));
    else process(t, msg);
    try_align(t);
  } else if (t.gated) {
    t.buffer.push_back(std::move(msg));
    drain(t);
  } else {
    process(t, msg);
  }
}

void Simulation::task_marker(Task& t, int from, std::uint64_t epoch, std::uint64_t count) {
  t.announced[{from, epoch}] = count;
  try_align(t);
}

void Simulation::process(Task& t, const DataMsg& msg) {
  const auto& op = graph_.operations[t.op];
  const auto& elem = msg.elem;
  const auto seq = elem.key.producer_seq;
  const bool strong = mode_ == GuaranteeMode::ExactlyOnceStrongProductions && t.stateful;

  if (strong) {
    auto& recs = records_[t.name];
    if (auto it = recs.find(elem.key); it != recs.end()) {
      emit(t, it->second.derived, msg);
      return;
    }
    if (auto it = t.waiting.find(elem.key); it != t.waiting.end()) {
      it->second.push_back(msg);
      return;
    }
  }

  if (t.gated) {
    if (seq > t.max_seq) {
      const auto lo = t.max_seq, hi = seq - 1;
      if (hi / width_ * width_ >= lo) t.boundaries.push_back({lo, hi, t.states});
      if (t.pending_round && seq > *t.pending_round) persist_round(t, t.states);
    }
  }
  t.max_seq = std::max(t.max_seq, seq);

  const auto part = t.stateful ? partition_key(op, elem.payload) : std::string{};
  std::optional<Element> st;
  if (t.stateful)
    if (auto it = t.states.find(part); it != t.states.end()) st = it->second;
  auto r = apply_operation(op, st, elem, next_id_);
  next_id_ += 1 + r.derived.size();
  if (r.state) t.states[part] = *r.state;

  TraceEvent ev;
  ev.t_us = now_;
  ev.kind = TraceKind::transform;
  ev.node = t.node;
  ev.op = op.name;
  for (const auto& d : r.derived) {
    ev.ids.push_back(d.id);
    ev.keys.push_back(d.key);
    ev.provenance.push_back(d.provenance);
  }
  ev.consumed = {elem.id};
  if (st) {
    ev.consumed.push_back(st->id);
    ev.state_in = st->id;
  }
  if (r.state) ev.state_out = r.state->id;
  ev.ordered = t.gated;
  ev.noncommutative = !op.commutative;
  add_trace(std::move(ev));

  if (!strong) {
    emit(t, r.derived, msg);
    return;
  }
  // Strong productions: the record is durable before anything is emitted.
  Record rec{r.derived, part, r.state};
  t.waiting[elem.key] = {msg};
  const auto inc = nodes_[t.node].incarnation;
  const int ti = t.index;
  const auto key = elem.key;
  schedule(now_ + ms_to_us(cfg_.storage_write_latency), [this, ti, inc, key, rec] {
    auto& task = tasks_[ti];
    if (nodes_[task.node].incarnation != inc) return;
    records_[task.name][key] = rec;
    if (rec.state) record_states_[task.name][rec.partition] = *rec.state;
    TraceEvent pe;
    pe.t_us = now_;
    pe.kind = TraceKind::persist;
    pe.node = task.node;
    pe.op = graph_.operations[task.op].name;
    if (rec.state) pe.ids.push_back(rec.state->id);
    for (const auto& d : rec.derived) pe.ids.push_back(d.id);
    pe.detail = "record";
    add_trace(std::move(pe));
    auto waiting = std::move(task.waiting[key]);
    task.waiting.erase(key);
    for (const auto& m : waiting) emit(task, rec.derived, m);
  });
}

void Simulation::emit(Task& t, const std::vector<Element>& derived, const DataMsg& in) {
  const auto succ = graph_.successors(t.op);
  for (const auto& d : derived) {
    DataMsg m;
    m.elem = d;
    m.tree_gen = in.tree_gen;
    m.gen = in.gen;
    if (succ.empty()) {
      send_data(t.index, kBarrier, m);
    } else {
      for (auto s : succ) send_data(t.index, route(s, d), m);
    }
  }
  acker_.ack(in.elem.key.producer_seq, in.tree_gen, in.track);
}

void Simulation::drain(Task& t) {
  while (!t.buffer.empty()) {
    auto it = std::min_element(t.buffer.begin(), t.buffer.end(),
                               [](const DataMsg& a, const DataMsg& b) { return a.elem.key < b.elem.key; });
    if (it->elem.key.producer_seq > acker_.frontier() + 1) break;
    DataMsg m = std::move(*it);
    t.buffer.erase(it);
    process(t, m);
  }
  if (t.pending_round && acker_.frontier() >= *t.pending_round) persist_round(t, t.states);
}

void Simulation::try_align(Task& t) {
  while (true) {
    const auto e = t.epoch;
    for (auto f : t.senders) {
      auto a = t.announced.find({f, e});
      if (a == t.announced.end()) return;
      auto r = t.received.find({f, e});
      if ((r == t.received.end() ? 0 : r->second) != a->second) return;
    }
    if (t.stateful) {
      const auto json = states_to_json(t.states);
      const auto ids = state_ids(t.states);
      const auto inc = nodes_[t.node].incarnation;
      const auto gen = gen_;
      const int ti = t.index;
      schedule(now_ + ms_to_us(cfg_.storage_write_latency), [this, ti, inc, gen, e, json, ids] {
        auto& task = tasks_[ti];
        if (nodes_[task.node].incarnation != inc || gen != gen_) return;
        TraceEvent pe;
        pe.t_us = now_;
        pe.kind = TraceKind::persist;
        pe.node = task.node;
        pe.op = graph_.operations[task.op].name;
        pe.ids = ids;
        pe.epoch = static_cast<std::int64_t>(e);
        add_trace(std::move(pe));
        const auto name = task.name;
        send_control(ti, kCoordinator, [this, name, e, json, gen] { prepared(name, e, json, gen); });
      });
    }
    for (auto r : t.receivers) send_marker(t.index, r, e, t.sent[{r, e}], gen_);
    std::erase_if(t.received, [e](const auto& kv) { return kv.first.second == e; });
    std::erase_if(t.announced, [e](const auto& kv) { return kv.first.second == e; });
    std::erase_if(t.sent, [e](const auto& kv) { return kv.first.second == e; });
    ++t.epoch;
    auto buf = std::move(t.buffer);
    t.buffer.clear();
    for (auto& m : buf) {
      if (epoch_of(m.elem.key.producer_seq, width_) == t.epoch) process(t, m);
      else t.buffer.push_back(std::move(m));
    }
  }
}

void Simulation::wipe(Task& t) {
  t.states.clear();
  t.buffer.clear();
  t.boundaries.clear();
  t.pending_round.reset();
  t.round_id = -1;
  t.max_seq = 0;
  t.epoch = 1;
  t.received.clear();
  t.announced.clear();
  t.sent.clear();
  t.waiting.clear();
  t.wiped = true;
}

Json Simulation::states_to_json(const PartitionStates& s) {
  Json j = Json::object();
  for (const auto& [part, e] : s) j[part] = element_to_json(e);
  return j;
}

PartitionStates Simulation::states_from_json(const Json& j) {
  PartitionStates s;
  for (const auto& [part, e] : j.items()) s[part] = element_from_json(e);
  return s;
}

std::vector<std::uint64_t> Simulation::state_ids(const PartitionStates& s) {
  std::vector<std::uint64_t> ids;
  for (const auto& [part, e] : s) ids.push_back(e.id);
  return ids;
}

}  // namespace detail

SimResult run_simulation(const DataflowGraph& graph, const std::vector<Element>& inputs, const SimConfig& config) {
  detail::Simulation sim(graph, inputs, config);
  return sim.run();
}

}  // namespace streamlab
