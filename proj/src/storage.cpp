#include "streamlab/storage.hpp"

#include <algorithm>
#include <fstream>

namespace streamlab {

namespace fs = std::filesystem;

Json snapshot_to_json(const Snapshot& s) {
  Json states = Json::object();
  for (const auto& [task, st] : s.states) states[task] = st;
  return Json{{"snapshot_id", s.snapshot_id},
              {"states", states},
              {"last_key", order_key_to_json(s.last_key)},
              {"committed", s.committed}};
}

Snapshot snapshot_from_json(const Json& j) {
  Snapshot s;
  s.snapshot_id = j.at("snapshot_id").get<std::int64_t>();
  for (const auto& [task, st] : j.at("states").items()) s.states[task] = st;
  s.last_key = order_key_from_json(j.at("last_key"));
  s.committed = j.value("committed", false);
  return s;
}

Bundle make_bundle(std::vector<Element> items) {
  Bundle b;
  if (!items.empty()) b.t_last = items.back().key;
  b.items = std::move(items);
  return b;
}

Json bundle_to_json(const Bundle& b) {
  Json items = Json::array();
  for (const auto& e : b.items) items.push_back(element_to_json(e));
  return Json{{"items", items}, {"t_last", order_key_to_json(b.t_last)}};
}

Bundle bundle_from_json(const Json& j) {
  Bundle b;
  for (const auto& e : j.at("items")) b.items.push_back(element_from_json(e));
  b.t_last = order_key_from_json(j.at("t_last"));
  return b;
}

// ---------------------------------------------------------------------------

std::int64_t MemorySnapshotStore::put_commit(Snapshot s) {
  if (committed_.count(s.snapshot_id))
    throw DuplicateId("snapshot id " + std::to_string(s.snapshot_id) + " already committed");
  s.committed = true;
  const auto id = s.snapshot_id;
  committed_.emplace(id, std::move(s));
  return id;
}

std::optional<Snapshot> MemorySnapshotStore::latest() const {
  if (committed_.empty()) return std::nullopt;
  return committed_.rbegin()->second;
}

std::optional<Snapshot> MemorySnapshotStore::get(std::int64_t id) const {
  auto it = committed_.find(id);
  if (it == committed_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::int64_t> MemorySnapshotStore::committed_ids() const {
  std::vector<std::int64_t> ids;
  for (const auto& [id, s] : committed_) ids.push_back(id);
  return ids;
}

// ---------------------------------------------------------------------------

namespace {

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << content;
  out.flush();
  if (!out) throw Error("short write to " + p.string());
}

std::string snapshot_file(std::int64_t id) { return "snapshot-" + std::to_string(id) + ".json"; }
std::string marker_file(std::int64_t id) { return "COMMITTED-" + std::to_string(id); }

}  // namespace

FileSnapshotStore::FileSnapshotStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
}

std::int64_t FileSnapshotStore::put_commit(Snapshot s) {
  const auto id = s.snapshot_id;
  if (fs::exists(root_ / marker_file(id)))
    throw DuplicateId("snapshot id " + std::to_string(id) + " already committed");
  s.committed = true;
  const auto crash = std::exchange(crash_, CrashPoint::none);

  const auto data = root_ / snapshot_file(id);
  auto tmp = data;
  tmp += ".tmp";
  write_file(tmp, snapshot_to_json(s).dump());
  if (crash == CrashPoint::after_temp_write) throw SimulatedCrash("crash after temp write");
  fs::rename(tmp, data);
  if (crash == CrashPoint::after_data_rename) throw SimulatedCrash("crash after data rename");

  const auto marker = root_ / marker_file(id);
  auto marker_tmp = marker;
  marker_tmp += ".tmp";
  write_file(marker_tmp, std::to_string(id));
  if (crash == CrashPoint::after_marker_temp) throw SimulatedCrash("crash after marker temp write");
  fs::rename(marker_tmp, marker);
  return id;
}

std::vector<std::int64_t> FileSnapshotStore::committed_ids() const {
  std::vector<std::int64_t> ids;
  if (!fs::exists(root_)) return ids;
  const std::string prefix = "COMMITTED-";
  for (const auto& entry : fs::directory_iterator(root_)) {
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0 || name.find('.') != std::string::npos) continue;
    try {
      ids.push_back(std::stoll(name.substr(prefix.size())));
    } catch (const std::exception&) {
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::optional<Snapshot> FileSnapshotStore::get(std::int64_t id) const {
  if (!fs::exists(root_ / marker_file(id))) return std::nullopt;
  std::ifstream in(root_ / snapshot_file(id), std::ios::binary);
  if (!in) throw Error("committed snapshot " + std::to_string(id) + " has no data file");
  return snapshot_from_json(Json::parse(in));
}

std::optional<Snapshot> FileSnapshotStore::latest() const {
  const auto ids = committed_ids();
  if (ids.empty()) return std::nullopt;
  return get(ids.back());
}

// ---------------------------------------------------------------------------

ReplayLog::ReplayLog(fs::path path) : path_(std::move(path)) {
  std::ofstream(*path_, std::ios::trunc);
}

void ReplayLog::append(const Element& e) {
  if (!elements_.empty() && !(elements_.back().key < e.key))
    throw Error("replay log keys must strictly increase, got " + to_string(e.key) + " after " +
                to_string(elements_.back().key));
  if (floor_ && e.key <= *floor_) throw Error("append below the replay log floor");
  elements_.push_back(e);
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << element_to_json(e).dump() << '\n';
  }
}

std::vector<Element> ReplayLog::replay_from(const OrderKey& k) const {
  if (floor_ && k < *floor_)
    throw TruncatedRange("replay from " + to_string(k) + " is below the truncation floor " +
                         to_string(*floor_));
  std::vector<Element> out;
  for (const auto& e : elements_)
    if (k < e.key) out.push_back(e);
  return out;
}

void ReplayLog::truncate_through(const OrderKey& k) {
  if (floor_ && k <= *floor_) return;
  std::erase_if(elements_, [&](const Element& e) { return e.key <= k; });
  floor_ = k;
}

// ---------------------------------------------------------------------------

ConsumerEndpoint::ConsumerEndpoint(fs::path path) : path_(std::move(path)) {
  std::ofstream(*path_, std::ios::trunc);
}

bool ConsumerEndpoint::receive(const Bundle& b) {
  if (!log_.empty() && log_.back() == b) return false;
  log_.push_back(b);
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << bundle_to_json(b).dump() << '\n';
  }
  return true;
}

std::optional<Bundle> ConsumerEndpoint::last_bundle() const {
  if (log_.empty()) return std::nullopt;
  return log_.back();
}

}  // namespace streamlab
