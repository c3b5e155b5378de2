#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "streamlab/storage.hpp"

using namespace streamlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("streamlab-test-" + name + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Snapshot snap(std::int64_t id, std::uint64_t seq) {
  Snapshot s;
  s.snapshot_id = id;
  s.states["concat"] = Json{{"0", payload_to_json(TextWindow{{"a", "c"}})}};
  s.last_key = OrderKey{seq, {}};
  return s;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("memory store commits and rejects reused ids") {
  MemorySnapshotStore st;
  CHECK_FALSE(st.latest().has_value());
  st.put_commit(snap(1, 2));
  st.put_commit(snap(2, 4));
  CHECK(st.latest()->snapshot_id == 2);
  CHECK(st.latest()->committed);
  CHECK(st.get(1)->last_key == OrderKey{2, {}});
  CHECK_FALSE(st.get(3).has_value());
  CHECK(st.committed_ids() == std::vector<std::int64_t>{1, 2});
  CHECK_THROWS_AS(st.put_commit(snap(2, 9)), DuplicateId);
  CHECK(st.get(2)->last_key == OrderKey{4, {}});
}

TEST_CASE("snapshot and bundle JSON round-trip") {
  auto s = snap(5, 7);
  s.committed = true;
  CHECK(snapshot_from_json(snapshot_to_json(s)) == s);

  const auto b = make_bundle({make_input(1, Text{"a"}, 1), make_input(3, Text{"b"}, 2)});
  CHECK(b.t_last == OrderKey{3, {}});
  CHECK(bundle_from_json(bundle_to_json(b)) == b);
}

TEST_CASE("file store survives reopening") {
  TempDir dir("reopen");
  {
    FileSnapshotStore st(dir.path);
    st.put_commit(snap(1, 3));
    st.put_commit(snap(2, 6));
  }
  FileSnapshotStore again(dir.path);
  CHECK(again.committed_ids() == std::vector<std::int64_t>{1, 2});
  auto expect = snap(2, 6);
  expect.committed = true;
  CHECK(again.latest() == expect);
  CHECK_THROWS_AS(again.put_commit(snap(1, 9)), DuplicateId);
}

TEST_CASE("a crash at any point of a file commit leaves no visible snapshot") {
  for (auto point : {CrashPoint::after_temp_write, CrashPoint::after_data_rename, CrashPoint::after_marker_temp}) {
    TempDir dir("crash-" + std::to_string(static_cast<int>(point)));
    FileSnapshotStore st(dir.path);
    st.put_commit(snap(1, 2));
    st.inject_crash(point);
    CHECK_THROWS_AS(st.put_commit(snap(2, 4)), SimulatedCrash);

    FileSnapshotStore reader(dir.path);
    CHECK(reader.committed_ids() == std::vector<std::int64_t>{1});
    CHECK(reader.latest()->snapshot_id == 1);
    CHECK_FALSE(reader.get(2).has_value());

    // The interrupted id can be committed afterwards.
    st.put_commit(snap(2, 4));
    CHECK(FileSnapshotStore(dir.path).latest()->snapshot_id == 2);
  }
}

TEST_CASE("replay log") {
  TempDir dir("replay");
  fs::create_directories(dir.path);
  ReplayLog log(dir.path / "inputs.jsonl");
  for (std::uint64_t i = 1; i <= 5; ++i) log.append(make_input(i, Integer{static_cast<std::int64_t>(i)}, i));
  CHECK(count_lines(dir.path / "inputs.jsonl") == 5);
  CHECK_THROWS(log.append(make_input(5, Integer{0}, 99)));

  auto tail = log.replay_from(OrderKey{2, {}});
  REQUIRE(tail.size() == 3);
  CHECK(tail.front().key == OrderKey{3, {}});

  log.truncate_through(OrderKey{3, {}});
  CHECK(log.size() == 2);
  CHECK(log.floor() == OrderKey{3, {}});
  CHECK(log.replay_from(OrderKey{3, {}}).size() == 2);
  CHECK_THROWS_AS(log.replay_from(OrderKey{2, {}}), TruncatedRange);
  // Truncating below the floor changes nothing.
  log.truncate_through(OrderKey{1, {}});
  CHECK(log.floor() == OrderKey{3, {}});
}

TEST_CASE("consumer endpoint acknowledges retries without appending") {
  TempDir dir("consumer");
  fs::create_directories(dir.path);
  ConsumerEndpoint c(dir.path / "out.jsonl");
  CHECK_FALSE(c.last_bundle().has_value());
  const auto b1 = make_bundle({make_input(1, Text{"a"}, 1)});
  const auto b2 = make_bundle({make_input(2, Text{"ac"}, 2)});
  CHECK(c.receive(b1));
  CHECK_FALSE(c.receive(b1));
  CHECK(c.receive(b2));
  CHECK(c.log().size() == 2);
  CHECK(c.last_bundle() == b2);
  CHECK(count_lines(dir.path / "out.jsonl") == 2);
}
