#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "streamlab/model.hpp"

namespace streamlab {

class DuplicateId : public Error { using Error::Error; };
class TruncatedRange : public Error { using Error::Error; };
class SimulatedCrash : public Error { using Error::Error; };

/// Committed operation states plus the high-water key of the inputs they cover.
/// `states` maps a task name to its serialized state (partition -> payload).
struct Snapshot {
  std::int64_t snapshot_id = 0;
  std::map<std::string, Json> states;
  OrderKey last_key;
  bool committed = false;

  bool operator==(const Snapshot&) const = default;
};

Json snapshot_to_json(const Snapshot& s);
Snapshot snapshot_from_json(const Json& j);

/// Output batch handed to the consumer. t_last is the key of the last item.
struct Bundle {
  std::vector<Element> items;
  OrderKey t_last;

  bool operator==(const Bundle&) const = default;
};

Bundle make_bundle(std::vector<Element> items);
Json bundle_to_json(const Bundle& b);
Bundle bundle_from_json(const Json& j);

class SnapshotStore {
 public:
  virtual ~SnapshotStore() = default;
  /// Stores and commits. Throws DuplicateId when the id was used before.
  virtual std::int64_t put_commit(Snapshot s) = 0;
  virtual std::optional<Snapshot> latest() const = 0;
  virtual std::optional<Snapshot> get(std::int64_t id) const = 0;
  virtual std::vector<std::int64_t> committed_ids() const = 0;
};

class MemorySnapshotStore : public SnapshotStore {
 public:
  std::int64_t put_commit(Snapshot s) override;
  std::optional<Snapshot> latest() const override;
  std::optional<Snapshot> get(std::int64_t id) const override;
  std::vector<std::int64_t> committed_ids() const override;

 private:
  std::map<std::int64_t, Snapshot> committed_;
};

/// Points in the file backend's write sequence where a crash can be injected.
enum class CrashPoint {
  none,
  after_temp_write,     // snapshot-<id>.json.tmp written
  after_data_rename,    // snapshot-<id>.json in place, no marker
  after_marker_temp,    // COMMITTED-<id>.tmp written
};

/// One directory per run: snapshot-<id>.json plus COMMITTED-<id> markers, each
/// made visible with write-temp-then-rename. Only snapshots with a marker exist
/// for readers.
class FileSnapshotStore : public SnapshotStore {
 public:
  explicit FileSnapshotStore(std::filesystem::path root);

  /// The next put_commit throws SimulatedCrash at this point.
  void inject_crash(CrashPoint p) { crash_ = p; }

  std::int64_t put_commit(Snapshot s) override;
  std::optional<Snapshot> latest() const override;
  std::optional<Snapshot> get(std::int64_t id) const override;
  std::vector<std::int64_t> committed_ids() const override;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  CrashPoint crash_ = CrashPoint::none;
};

/// Producer-side log of injected inputs, replayable by key.
class ReplayLog {
 public:
  ReplayLog() = default;
  /// Also appends every element as a JSON line to `path`.
  explicit ReplayLog(std::filesystem::path path);

  /// Keys must strictly increase.
  void append(const Element& e);
  /// Retained elements with key > k, in key order.
  std::vector<Element> replay_from(const OrderKey& k) const;
  /// Drops every element with key <= k. Replays must then start at or above k.
  void truncate_through(const OrderKey& k);

  std::size_t size() const { return elements_.size(); }
  const std::optional<OrderKey>& floor() const { return floor_; }

 private:
  std::vector<Element> elements_;
  std::optional<OrderKey> floor_;
  std::optional<std::filesystem::path> path_;
};

class ConsumerEndpoint {
 public:
  ConsumerEndpoint() = default;
  /// Also appends every accepted bundle as a JSON line to `path`.
  explicit ConsumerEndpoint(std::filesystem::path path);

  /// Appends the bundle and updates last_bundle in one step. A retry of the
  /// last bundle is acknowledged again without being appended; returns whether
  /// the bundle was new.
  bool receive(const Bundle& b);
  std::optional<Bundle> last_bundle() const;
  const std::vector<Bundle>& log() const { return log_; }

 private:
  std::vector<Bundle> log_;
  std::optional<std::filesystem::path> path_;
};

}  // namespace streamlab
