#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <queue>
#include <set>

#include "streamlab/sim.hpp"

namespace streamlab::detail {

using Time = std::int64_t;  // sim-microseconds

constexpr int kProducer = -1;
constexpr int kBarrier = -2;
constexpr int kCoordinator = -3;
constexpr int kConsumer = -4;

inline Time ms_to_us(double ms) { return static_cast<Time>(ms * 1000.0 + 0.5); }

struct DataMsg {
  Element elem;
  std::uint64_t track = 0;     // acker id of this message
  std::uint64_t tree_gen = 0;  // acker tree the message belongs to
  std::uint64_t gen = 0;       // recovery generation it was sent in
  int from = kProducer;
};

using PartitionStates = std::map<std::string, Element>;

struct Task {
  std::string name;
  int index = 0;
  std::size_t op = 0;
  int instance = 0;
  int node = 0;
  bool stateful = false;
  bool gated = false;  // drains in key order behind the frontier
  std::vector<int> senders;    // task indices or kProducer
  std::vector<int> receivers;  // task indices or kBarrier

  PartitionStates states;
  std::vector<DataMsg> buffer;
  std::uint64_t max_seq = 0;
  bool wiped = false;
  std::map<OrderKey, std::vector<DataMsg>> waiting;  // inputs whose record is being written

  // Copies of the state valid as of any boundary in [lo, hi].
  struct Boundary {
    std::uint64_t lo = 0, hi = 0;
    PartitionStates states;
  };
  std::vector<Boundary> boundaries;
  std::optional<std::uint64_t> pending_round;
  std::int64_t round_id = -1;

  // Epoch alignment.
  std::uint64_t epoch = 1;
  std::map<std::pair<int, std::uint64_t>, std::uint64_t> received;
  std::map<std::pair<int, std::uint64_t>, std::uint64_t> announced;
  std::map<std::pair<int, std::uint64_t>, std::uint64_t> sent;
};

struct TrackRef {
  std::uint64_t seq = 0, tree_gen = 0, track = 0;
};

struct Barrier {
  int node = 0;
  std::vector<int> senders;

  std::map<OrderKey, Element> ordered;                  // key-ordered release
  std::vector<std::pair<Element, TrackRef>> arrivals;   // arrival-ordered release
  std::optional<Bundle> in_flight;
  std::vector<TrackRef> in_flight_tracks;
  std::uint64_t bundle_seq = 0;
  std::optional<OrderKey> t_last;
  std::optional<std::pair<std::int64_t, std::uint64_t>> round;  // id, target
  bool accepted_round = false;

  // Epoch alignment.
  std::uint64_t epoch = 1;
  std::map<std::pair<int, std::uint64_t>, std::uint64_t> received;
  std::map<std::pair<int, std::uint64_t>, std::uint64_t> announced;
  std::map<std::uint64_t, std::vector<Element>> epoch_outputs;
  std::deque<std::vector<Element>> release_queue;
};

struct Record {
  std::vector<Element> derived;
  std::string partition;
  std::optional<Element> state;
};

struct Node {
  bool up = true;
  std::uint64_t incarnation = 0;
};

struct Event {
  Time t;
  std::uint64_t order;
  std::function<void()> fn;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    return a.t != b.t ? a.t > b.t : a.order > b.order;
  }
};

class Simulation {
 public:
  Simulation(const DataflowGraph& graph, const std::vector<Element>& inputs, const SimConfig& config);
  SimResult run();

 private:
  // core
  void schedule(Time at, std::function<void()> fn);
  Channel& channel(const std::string& from, const std::string& to);
  std::string agent_name(int who) const;
  int agent_node(int who) const;
  void deliver_guarded(int from, int to, Time delay, std::function<void()> fn);
  void send_data(int from, int to, DataMsg msg);
  void send_marker(int from, int to, std::uint64_t epoch, std::uint64_t count, std::uint64_t gen);
  void send_control(int from, int to, std::function<void()> fn);
  void flush();
  bool work_remaining() const;
  void ensure_timers();
  [[noreturn]] void diverge(const std::string& why) const;
  void add_trace(TraceEvent e);
  void log_event(const std::string& what);

  // producer
  void producer_tick();
  void wake_producer(Time at);
  void inject(const Element& e, bool replay);
  Time nominal_time(std::size_t index) const;
  int source_task_for(const Element& e) const;

  // tasks
  int route(std::size_t op_index, const Element& e) const;
  void task_receive(Task& t, DataMsg msg);
  void task_marker(Task& t, int from, std::uint64_t epoch, std::uint64_t count);
  void process(Task& t, const DataMsg& msg);
  void emit(Task& t, const std::vector<Element>& derived, const DataMsg& in);
  void drain(Task& t);
  void try_align(Task& t);
  void wipe(Task& t);

  // rounds
  void round_tick();
  void task_round(Task& t, std::int64_t id, std::uint64_t target);
  void persist_round(Task& t, const PartitionStates& states);
  void accept(const std::string& participant, std::int64_t id, Json state);
  void prepared(const std::string& participant, std::uint64_t epoch, Json state, std::uint64_t gen);
  void try_commit_epochs();

  // barrier
  void barrier_receive(DataMsg msg);
  void barrier_marker(int from, std::uint64_t epoch, std::uint64_t count);
  void barrier_align();
  void barrier_round_check();
  void barrier_try_send();
  bool epoch_released(std::uint64_t epoch) const;
  void send_bundle(std::uint64_t bseq);
  void bundle_acked(std::uint64_t bseq);
  void consumer_receive(const Bundle& b, std::uint64_t bseq);
  void wipe_barrier();
  bool barrier_busy() const;

  // faults and recovery
  void node_failure(int node);
  void start_recovery(const std::string& reason);
  void task_recover(Task& t, std::uint64_t gen);
  void barrier_recover(std::uint64_t gen);
  void recovered(const std::string& who, std::uint64_t gen);
  void finish_recovery();
  void watchdog();

  static Json states_to_json(const PartitionStates& s);
  static PartitionStates states_from_json(const Json& j);
  static std::vector<std::uint64_t> state_ids(const PartitionStates& s);

  const DataflowGraph& graph_;
  const std::vector<Element>& inputs_;
  SimConfig cfg_;
  GuaranteeMode mode_;
  std::uint64_t width_;
  Time max_time_;
  double loss_;

  std::priority_queue<Event, std::vector<Event>, EventLater> queue_;
  std::uint64_t event_order_ = 0;
  Time now_ = 0;
  std::map<std::string, Channel> channels_;
  std::uint64_t next_track_ = 0;
  std::uint64_t next_id_ = std::uint64_t{1} << 32;

  std::vector<Node> nodes_;
  std::vector<Task> tasks_;
  std::vector<std::vector<int>> op_tasks_;  // op index -> task indices
  Barrier barrier_;
  AckerRegister acker_;
  std::uint64_t frontier_seen_ = 0;
  std::uint64_t frontier_max_ = 0;

  // producer
  std::size_t next_input_ = 0;
  std::uint64_t position_ = 0;  // last seq injected since the latest rollback
  bool paused_ = false;
  std::uint64_t producer_token_ = 0;
  Time last_send_ = -1;
  std::deque<Element> replay_queue_;
  std::map<std::uint64_t, Time> injected_at_;
  std::map<std::pair<int, std::uint64_t>, std::uint64_t> producer_sent_;
  ReplayLog log_;

  // coordinator
  std::unique_ptr<SnapshotStore> store_;
  std::uint64_t gen_ = 0;
  std::optional<SnapshotRound> round_;
  std::uint64_t round_target_ = 0;
  std::int64_t next_snapshot_id_ = 1;
  std::optional<std::uint64_t> committed_seq_;
  std::uint64_t committed_epoch_ = 0;
  std::map<std::uint64_t, std::map<std::string, Json>> epoch_prepared_;
  std::vector<std::string> participants_;
  bool recovering_ = false;
  bool recovery_pending_ = false;
  std::set<std::string> recovery_waiting_;
  OrderKey replay_key_;
  bool round_timer_ = false;
  bool watchdog_timer_ = false;
  std::tuple<std::uint64_t, std::uint64_t, std::uint64_t> progress_{};
  std::int64_t recovered_at_ = 0;  // end of the latest recovery
  std::uint64_t commits_ = 0;
  std::uint64_t acked_bundles_ = 0;

  // durable storage beyond snapshots
  std::map<std::uint64_t, std::vector<Element>> prepared_outputs_;  // epoch -> outputs
  std::map<std::string, std::map<OrderKey, Record>> records_;
  std::map<std::string, PartitionStates> record_states_;
  std::set<OrderKey> released_keys_;

  ConsumerEndpoint consumer_;
  SimResult result_;
};

}  // namespace streamlab::detail
