#include <algorithm>

#include "sim_internal.hpp"

namespace streamlab::detail {

namespace {

std::vector<std::uint64_t> snapshot_state_ids(const Snapshot& s) {
  std::vector<std::uint64_t> ids;
  for (const auto& [task, parts] : s.states)
    for (const auto& [part, e] : parts.items()) ids.push_back(e.at("id").get<std::uint64_t>());
  return ids;
}

}  // namespace

// ---------------------------------------------------------------------------
// Snapshot rounds (deterministic and naive modes)

void Simulation::round_tick() {
  round_timer_ = false;
  if (!work_remaining()) return;
  round_timer_ = true;
  schedule(now_ + ms_to_us(cfg_.checkpoint_interval), [this] { round_tick(); });
  if (recovering_ || round_) return;

  std::optional<std::uint64_t> target;
  if (mode_ == GuaranteeMode::ExactlyOnceDeterministic) {
    target = round_target(position_, next_input_ == inputs_.size() && replay_queue_.empty(), width_,
                          committed_seq_);
  } else {
    const auto f = acker_.frontier();
    if (!committed_seq_ || f > *committed_seq_) target = f;
  }
  if (!target) return;

  SnapshotRound r;
  r.snapshot_id = next_snapshot_id_++;
  r.last_key = OrderKey{*target, {}};
  r.participants = participants_;
  round_ = r;
  round_target_ = *target;

  TraceEvent ev;
  ev.t_us = now_;
  ev.kind = TraceKind::round_start;
  ev.snapshot_id = r.snapshot_id;
  ev.keys = {r.last_key};
  add_trace(std::move(ev));

  const auto id = r.snapshot_id;
  const auto t = *target;
  for (const auto& task : tasks_) {
    if (!task.stateful) continue;
    const int i = task.index;
    send_control(kCoordinator, i, [this, i, id, t] { task_round(tasks_[i], id, t); });
  }
  send_control(kCoordinator, kBarrier, [this, id, t] {
    barrier_.round = std::make_pair(id, t);
    barrier_.accepted_round = false;
    barrier_round_check();
  });
}

void Simulation::task_round(Task& t, std::int64_t id, std::uint64_t target) {
  if (!round_ || round_->snapshot_id != id) return;
  t.round_id = id;
  if (mode_ == GuaranteeMode::AtLeastOnceNaive) {
    persist_round(t, t.states);
    return;
  }
  for (const auto& b : t.boundaries) {
    if (b.lo <= target && target <= b.hi) {
      const auto states = b.states;
      std::erase_if(t.boundaries, [target](const Task::Boundary& x) { return x.hi < target; });
      persist_round(t, states);
      return;
    }
  }
  if (t.max_seq <= target) {
    t.pending_round = target;
    if (acker_.frontier() >= target) persist_round(t, t.states);
    return;
  }
  throw Error("internal: task " + t.name + " has no state copy for boundary " + std::to_string(target));
}

void Simulation::persist_round(Task& t, const PartitionStates& states) {
  t.pending_round.reset();
  const auto id = t.round_id;
  const auto json = states_to_json(states);
  const auto ids = state_ids(states);
  const auto inc = nodes_[t.node].incarnation;
  const auto gen = gen_;
  const int ti = t.index;
  schedule(now_ + ms_to_us(cfg_.storage_write_latency), [this, ti, id, json, ids, inc, gen] {
    auto& task = tasks_[ti];
    if (nodes_[task.node].incarnation != inc || gen != gen_) return;
    TraceEvent pe;
    pe.t_us = now_;
    pe.kind = TraceKind::persist;
    pe.node = task.node;
    pe.op = graph_.operations[task.op].name;
    pe.ids = ids;
    pe.snapshot_id = id;
    add_trace(std::move(pe));
    const auto name = task.name;
    send_control(ti, kCoordinator, [this, name, id, json] { accept(name, id, json); });
  });
}

void Simulation::accept(const std::string& participant, std::int64_t id, Json state) {
  if (!round_ || round_->snapshot_id != id) return;
  round_->accept(participant, std::move(state));
  if (!round_->complete()) return;
  const auto snap = round_->commit();
  store_->put_commit(snap);
  ++commits_;
  committed_seq_ = round_target_;
  log_.truncate_through(snap.last_key);

  TraceEvent ev;
  ev.t_us = now_;
  ev.kind = TraceKind::commit;
  ev.snapshot_id = snap.snapshot_id;
  ev.ids = snapshot_state_ids(snap);
  ev.keys = {snap.last_key};
  add_trace(std::move(ev));
  round_.reset();
}

// ---------------------------------------------------------------------------
// Epoch commits (transactional mode)

void Simulation::prepared(const std::string& participant, std::uint64_t epoch, Json state, std::uint64_t gen) {
  if (gen != gen_ || epoch <= committed_epoch_) return;
  epoch_prepared_[epoch][participant] = std::move(state);
  try_commit_epochs();
}

void Simulation::try_commit_epochs() {
  while (true) {
    const auto e = committed_epoch_ + 1;
    auto it = epoch_prepared_.find(e);
    if (it == epoch_prepared_.end()) return;
    for (const auto& p : participants_)
      if (!it->second.count(p)) return;

    Snapshot s;
    s.snapshot_id = static_cast<std::int64_t>(e);
    s.last_key = OrderKey{std::min<std::uint64_t>(epoch_last_seq(e, width_), inputs_.size()), {}};
    for (const auto& [p, st] : it->second)
      if (!st.is_null()) s.states[p] = st;
    store_->put_commit(s);
    ++commits_;
    committed_epoch_ = e;
    committed_seq_ = s.last_key.producer_seq;
    log_.truncate_through(s.last_key);
    epoch_prepared_.erase(it);

    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::commit;
    ev.snapshot_id = s.snapshot_id;
    ev.epoch = static_cast<std::int64_t>(e);
    ev.ids = snapshot_state_ids(s);
    ev.keys = {s.last_key};
    add_trace(std::move(ev));

    const auto gen = gen_;
    send_control(kCoordinator, kBarrier, [this, e, gen] {
      if (gen != gen_) return;
      auto out = prepared_outputs_.find(e);
      if (out == prepared_outputs_.end()) return;
      if (out->second.empty() || epoch_released(e)) {
        prepared_outputs_.erase(out);
        return;
      }
      barrier_.release_queue.push_back(out->second);
      barrier_try_send();
    });
  }
}

// ---------------------------------------------------------------------------
// Barrier

void Simulation::barrier_receive(DataMsg msg) {
  const auto& e = msg.elem;
  const TrackRef ref{e.key.producer_seq, msg.tree_gen, msg.track};
  auto filtered = [&] {
    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::filter;
    ev.node = barrier_.node;
    ev.ids = {e.id};
    ev.keys = {e.key};
    add_trace(std::move(ev));
    acker_.ack(ref.seq, ref.tree_gen, ref.track);
  };

  switch (mode_) {
    case GuaranteeMode::ExactlyOnceDeterministic:
      if (barrier_.t_last && e.key <= *barrier_.t_last) {
        filtered();
        return;
      }
      barrier_.ordered[e.key] = e;
      acker_.ack(ref.seq, ref.tree_gen, ref.track);
      break;
    case GuaranteeMode::ExactlyOnceTransactional: {
      const auto ep = epoch_of(e.key.producer_seq, width_);
      ++barrier_.received[{msg.from, ep}];
      barrier_.epoch_outputs[ep].push_back(e);
      acker_.ack(ref.seq, ref.tree_gen, ref.track);
      barrier_align();
      break;
    }
    case GuaranteeMode::NoGuarantee:
      barrier_.arrivals.emplace_back(e, ref);
      acker_.ack(ref.seq, ref.tree_gen, ref.track);
      break;
    case GuaranteeMode::AtLeastOnceNaive:
      barrier_.arrivals.emplace_back(e, ref);
      break;
    case GuaranteeMode::ExactlyOnceStrongProductions: {
      bool seen = released_keys_.count(e.key) > 0;
      for (const auto& [x, r] : barrier_.arrivals) seen = seen || x.key == e.key;
      if (barrier_.in_flight)
        for (const auto& x : barrier_.in_flight->items) seen = seen || x.key == e.key;
      if (seen) {
        filtered();
        return;
      }
      barrier_.arrivals.emplace_back(e, ref);
      break;
    }
  }
  barrier_try_send();
}

void Simulation::barrier_marker(int from, std::uint64_t epoch, std::uint64_t count) {
  barrier_.announced[{from, epoch}] = count;
  barrier_align();
}

void Simulation::barrier_align() {
  while (true) {
    const auto e = barrier_.epoch;
    for (auto f : barrier_.senders) {
      auto a = barrier_.announced.find({f, e});
      if (a == barrier_.announced.end()) return;
      auto r = barrier_.received.find({f, e});
      if ((r == barrier_.received.end() ? 0 : r->second) != a->second) return;
    }
    auto items = std::move(barrier_.epoch_outputs[e]);
    barrier_.epoch_outputs.erase(e);
    std::erase_if(barrier_.received, [e](const auto& kv) { return kv.first.second == e; });
    std::erase_if(barrier_.announced, [e](const auto& kv) { return kv.first.second == e; });
    ++barrier_.epoch;

    const auto inc = nodes_[barrier_.node].incarnation;
    const auto gen = gen_;
    schedule(now_ + ms_to_us(cfg_.storage_write_latency), [this, e, items, inc, gen] {
      if (nodes_[barrier_.node].incarnation != inc || gen != gen_) return;
      prepared_outputs_[e] = items;
      TraceEvent pe;
      pe.t_us = now_;
      pe.kind = TraceKind::persist;
      pe.node = barrier_.node;
      for (const auto& x : items) pe.ids.push_back(x.id);
      pe.epoch = static_cast<std::int64_t>(e);
      pe.detail = "outputs";
      add_trace(std::move(pe));
      send_control(kBarrier, kCoordinator, [this, e, gen] { prepared("barrier", e, nullptr, gen); });
    });
  }
}

void Simulation::barrier_round_check() {
  if (!barrier_.round || barrier_.accepted_round || !nodes_[barrier_.node].up) return;
  const auto [id, target] = *barrier_.round;
  if (acker_.frontier() < target) return;
  if (!barrier_.ordered.empty() && barrier_.ordered.begin()->first.producer_seq <= target) return;
  for (const auto& [e, r] : barrier_.arrivals)
    if (e.key.producer_seq <= target) return;
  if (barrier_.in_flight)
    for (const auto& e : barrier_.in_flight->items)
      if (e.key.producer_seq <= target) return;
  barrier_.accepted_round = true;
  const auto rid = id;
  send_control(kBarrier, kCoordinator, [this, rid] { accept("barrier", rid, nullptr); });
}

void Simulation::barrier_try_send() {
  if (!nodes_[barrier_.node].up || barrier_.in_flight) return;
  std::vector<Element> items;
  std::vector<TrackRef> tracks;
  switch (mode_) {
    case GuaranteeMode::ExactlyOnceDeterministic: {
      const auto f = acker_.frontier();
      while (!barrier_.ordered.empty() && barrier_.ordered.begin()->first.producer_seq <= f) {
        items.push_back(std::move(barrier_.ordered.begin()->second));
        barrier_.ordered.erase(barrier_.ordered.begin());
      }
      break;
    }
    case GuaranteeMode::ExactlyOnceTransactional:
      if (!barrier_.release_queue.empty()) {
        items = std::move(barrier_.release_queue.front());
        barrier_.release_queue.pop_front();
      }
      break;
    default:
      for (auto& [e, r] : barrier_.arrivals) {
        items.push_back(std::move(e));
        tracks.push_back(r);
      }
      barrier_.arrivals.clear();
      break;
  }
  if (items.empty()) return;
  barrier_.in_flight = make_bundle(std::move(items));
  barrier_.in_flight_tracks = std::move(tracks);
  send_bundle(++barrier_.bundle_seq);
}

// Epoch bundles keep arrival order, so the consumer's t_last identifies the
// last released epoch rather than a key bound.
bool Simulation::epoch_released(std::uint64_t epoch) const {
  return barrier_.t_last && epoch <= epoch_of(barrier_.t_last->producer_seq, width_);
}

void Simulation::send_bundle(std::uint64_t bseq) {
  if (!barrier_.in_flight || bseq != barrier_.bundle_seq) return;
  const auto b = *barrier_.in_flight;
  auto& ch = channel("barrier", "consumer");
  const auto delay = channel_deliver(ch, cfg_.channel_delay, loss_);
  if (!delay) {
    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::drop;
    ev.node = barrier_.node;
    ev.detail = ch.name + " bundle";
    add_trace(std::move(ev));
  } else {
    deliver_guarded(kBarrier, kConsumer, *delay, [this, b, bseq] { consumer_receive(b, bseq); });
  }
  schedule(now_ + ms_to_us(cfg_.bundle_retry_timeout), [this, bseq] {
    if (nodes_[barrier_.node].up && barrier_.in_flight && barrier_.bundle_seq == bseq) send_bundle(bseq);
  });
}

void Simulation::consumer_receive(const Bundle& b, std::uint64_t bseq) {
  if (consumer_.receive(b)) {
    result_.delivered.push_back({b, now_});
    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::output;
    for (const auto& e : b.items) {
      ev.ids.push_back(e.id);
      ev.keys.push_back(e.key);
      ev.payloads.push_back(display(e.payload));
    }
    add_trace(std::move(ev));
  }
  auto& ch = channel("consumer", "barrier");
  if (ch.rng.bernoulli(loss_)) {
    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::drop;
    ev.detail = ch.name + " ack";
    add_trace(std::move(ev));
    return;
  }
  deliver_guarded(kConsumer, kBarrier, ms_to_us(cfg_.consumer_ack_latency), [this, bseq] { bundle_acked(bseq); });
}

void Simulation::bundle_acked(std::uint64_t bseq) {
  if (!barrier_.in_flight || bseq != barrier_.bundle_seq) return;
  const auto b = std::move(*barrier_.in_flight);
  barrier_.in_flight.reset();
  barrier_.t_last = b.t_last;
  ++acked_bundles_;
  for (const auto& r : barrier_.in_flight_tracks) acker_.ack(r.seq, r.tree_gen, r.track);
  barrier_.in_flight_tracks.clear();
  if (mode_ == GuaranteeMode::ExactlyOnceStrongProductions)
    for (const auto& e : b.items) released_keys_.insert(e.key);
  if (mode_ == GuaranteeMode::ExactlyOnceTransactional)
    prepared_outputs_.erase(epoch_of(b.t_last.producer_seq, width_));
  barrier_round_check();
  barrier_try_send();
}

void Simulation::wipe_barrier() {
  barrier_.ordered.clear();
  barrier_.arrivals.clear();
  barrier_.in_flight.reset();
  barrier_.in_flight_tracks.clear();
  ++barrier_.bundle_seq;
  barrier_.t_last.reset();
  barrier_.round.reset();
  barrier_.accepted_round = false;
  barrier_.epoch = 1;
  barrier_.received.clear();
  barrier_.announced.clear();
  barrier_.epoch_outputs.clear();
  barrier_.release_queue.clear();
}

// ---------------------------------------------------------------------------
// Failures and recovery

void Simulation::node_failure(int node) {
  if (!nodes_[node].up) return;
  nodes_[node].up = false;
  ++nodes_[node].incarnation;
  TraceEvent ev;
  ev.t_us = now_;
  ev.kind = TraceKind::failure;
  ev.node = node;
  add_trace(std::move(ev));
  log_event("failure of node " + std::to_string(node));
  for (auto& t : tasks_)
    if (t.node == node) wipe(t);
  if (barrier_.node == node) wipe_barrier();

  schedule(now_ + ms_to_us(cfg_.detection_delay), [this, node] {
    nodes_[node].up = true;
    log_event("node " + std::to_string(node) + " restarted");
    if (mode_ == GuaranteeMode::NoGuarantee) return;
    if (recovering_) {
      // The running recovery may have lost its notifications to this node.
      const auto g = gen_;
      for (auto& t : tasks_)
        if (t.node == node && recovery_waiting_.count(t.name)) {
          const int i = t.index;
          send_control(kCoordinator, i, [this, i, g] { task_recover(tasks_[i], g); });
        }
      if (barrier_.node == node && recovery_waiting_.count("barrier"))
        send_control(kCoordinator, kBarrier, [this, g] { barrier_recover(g); });
    }
    start_recovery("failure of node " + std::to_string(node));
  });
}

void Simulation::start_recovery(const std::string& reason) {
  if (recovering_) {
    recovery_pending_ = true;
    return;
  }
  recovering_ = true;
  ++result_.recoveries;
  ++gen_;
  paused_ = true;
  if (round_) {
    TraceEvent ev;
    ev.t_us = now_;
    ev.kind = TraceKind::round_abort;
    ev.snapshot_id = round_->snapshot_id;
    add_trace(std::move(ev));
    round_.reset();
  }
  epoch_prepared_.clear();
  producer_sent_.clear();

  // Naive recovery replays everything after the last snapshot but keeps live state.
  if (rolls_back(mode_) || mode_ == GuaranteeMode::AtLeastOnceNaive) {
    const auto snap = store_->latest();
    replay_key_ = snap ? snap->last_key : OrderKey{0, {}};
  } else {
    replay_key_ = OrderKey{acker_.frontier(), {}};
  }
  acker_.rewind(replay_key_.producer_seq);
  position_ = std::min(position_, replay_key_.producer_seq);

  TraceEvent ev;
  ev.t_us = now_;
  ev.kind = TraceKind::recovery_begin;
  ev.keys = {replay_key_};
  ev.detail = reason;
  add_trace(std::move(ev));
  log_event("recovery " + std::to_string(result_.recoveries) + " begins (" + reason + "), replay after " +
            to_string(replay_key_));

  recovery_waiting_.clear();
  const auto g = gen_;
  for (const auto& t : tasks_) {
    recovery_waiting_.insert(t.name);
    const int i = t.index;
    send_control(kCoordinator, i, [this, i, g] { task_recover(tasks_[i], g); });
  }
  recovery_waiting_.insert("barrier");
  send_control(kCoordinator, kBarrier, [this, g] { barrier_recover(g); });
  ensure_timers();
}

void Simulation::task_recover(Task& t, std::uint64_t g) {
  if (g != gen_ || !recovering_) return;
  if (rolls_back(mode_)) {
    wipe(t);
    t.wiped = false;
    if (const auto snap = store_->latest(); snap && snap->states.count(t.name))
      t.states = states_from_json(snap->states.at(t.name));
    t.max_seq = replay_key_.producer_seq;
    t.epoch = committed_epoch_ + 1;
  } else {
    t.buffer.clear();
    t.waiting.clear();
    if (t.wiped && mode_ == GuaranteeMode::AtLeastOnceNaive) {
      // Only the failed task goes back to its last snapshot; everyone else keeps
      // running state and sees the replay on top of it.
      if (const auto snap = store_->latest(); snap && snap->states.count(t.name))
        t.states = states_from_json(snap->states.at(t.name));
    } else if (t.wiped) {
      t.states = record_states_[t.name];
    }
    t.wiped = false;
  }
  const auto inc = nodes_[t.node].incarnation;
  const int ti = t.index;
  schedule(now_ + ms_to_us(cfg_.storage_write_latency), [this, ti, inc, g] {
    if (nodes_[tasks_[ti].node].incarnation != inc) return;
    const auto name = tasks_[ti].name;
    send_control(ti, kCoordinator, [this, name, g] { recovered(name, g); });
  });
}

void Simulation::barrier_recover(std::uint64_t g) {
  if (g != gen_ || !recovering_) return;
  if (mode_ != GuaranteeMode::AtLeastOnceNaive) wipe_barrier();
  barrier_.epoch = committed_epoch_ + 1;
  std::erase_if(prepared_outputs_, [this](const auto& kv) { return kv.first > committed_epoch_; });
  send_control(kBarrier, kConsumer, [this, g] {
    const auto last = consumer_.last_bundle();
    send_control(kConsumer, kBarrier, [this, g, last] {
      if (g != gen_) return;
      barrier_.t_last = last ? std::optional<OrderKey>(last->t_last) : std::nullopt;
      if (last && mode_ == GuaranteeMode::ExactlyOnceStrongProductions)
        for (const auto& e : last->items) released_keys_.insert(e.key);
      if (mode_ == GuaranteeMode::ExactlyOnceTransactional) {
        for (auto it = prepared_outputs_.begin(); it != prepared_outputs_.end();) {
          if (it->second.empty() || epoch_released(it->first)) {
            it = prepared_outputs_.erase(it);
          } else {
            barrier_.release_queue.push_back(it->second);
            ++it;
          }
        }
      }
      send_control(kBarrier, kCoordinator, [this, g] { recovered("barrier", g); });
      barrier_try_send();
    });
  });
}

void Simulation::recovered(const std::string& who, std::uint64_t g) {
  if (g != gen_ || !recovering_) return;
  recovery_waiting_.erase(who);
  if (recovery_waiting_.empty()) finish_recovery();
}

void Simulation::finish_recovery() {
  const auto replay = log_.replay_from(replay_key_);
  replay_queue_.assign(replay.begin(), replay.end());
  TraceEvent ev;
  ev.t_us = now_;
  ev.kind = TraceKind::recovery_end;
  ev.keys = {replay_key_};
  ev.count = static_cast<std::int64_t>(replay.size());
  add_trace(std::move(ev));
  log_event("recovery " + std::to_string(result_.recoveries) + " replayed " + std::to_string(replay.size()) +
            " inputs");

  recovering_ = false;
  paused_ = false;
  progress_ = {acker_.frontier(), commits_, acked_bundles_};
  recovered_at_ = now_;
  wake_producer(now_);
  if (recovery_pending_) {
    recovery_pending_ = false;
    start_recovery("deferred failure");
  }
}

void Simulation::watchdog() {
  watchdog_timer_ = false;
  if (!work_remaining()) return;
  watchdog_timer_ = true;
  schedule(now_ + ms_to_us(cfg_.ack_timeout), [this] { watchdog(); });
  // Paced replay needs a full timeout before a lack of progress means anything.
  if (recovering_ || (result_.recoveries > 0 && now_ - recovered_at_ < ms_to_us(cfg_.ack_timeout))) return;

  const auto f = acker_.frontier();
  bool stalled = !acker_.incomplete().empty();
  if (mode_ == GuaranteeMode::ExactlyOnceTransactional && !inputs_.empty()) {
    const auto next = committed_epoch_ + 1;
    if (f >= std::min<std::uint64_t>(epoch_last_seq(next, width_), inputs_.size()) &&
        committed_epoch_ < epoch_of(inputs_.size(), width_))
      stalled = true;
  }
  const std::tuple<std::uint64_t, std::uint64_t, std::uint64_t> now_progress{f, commits_, acked_bundles_};
  if (stalled && now_progress == progress_) start_recovery("ack timeout");
  progress_ = now_progress;
}

}  // namespace streamlab::detail
