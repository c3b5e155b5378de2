#include <doctest.h>

#include <algorithm>
#include <chrono>

#include "brute_force.hpp"
#include "streamlab/oracle.hpp"
#include "streamlab/pipelines.hpp"
#include "streamlab/sim.hpp"

using namespace streamlab;

namespace {

std::vector<Element> texts(const std::vector<std::string>& vs) {
  std::vector<Element> out;
  for (std::size_t i = 0; i < vs.size(); ++i) out.push_back(make_input(i + 1, Text{vs[i]}));
  return out;
}

OutputSequence seq(const std::vector<std::string>& vs) {
  OutputSequence out;
  for (const auto& v : vs) out.push_back(Text{v});
  return out;
}

std::set<brute::Sequence> as_strings(const std::vector<OutputSequence>& runs) {
  std::set<brute::Sequence> out;
  for (const auto& r : runs) {
    brute::Sequence s;
    for (const auto& p : r) s.push_back(std::get<Text>(p).value);
    out.insert(s);
  }
  return out;
}

brute::Lanes lanes_of(const ReferenceInput& in) {
  brute::Lanes out;
  for (const auto& lane : in.lanes) {
    out.emplace_back();
    for (const auto& e : lane) out.back().push_back(std::get<Text>(e.payload).value);
  }
  return out;
}

}  // namespace

TEST_CASE("reference runs match the brute-force interleaver") {
  const auto g = concat_pipeline({2});
  const std::vector<std::vector<std::string>> cases = {
      {"a"}, {"a", "b"}, {"a", "c", "b"}, {"a", "c", "b", "d"}, {"a", "c", "b", "d", "e"}, {"x", "x", "y", "x"}};
  for (const auto& c : cases) {
    for (int channels : {1, 2, 3}) {
      const auto in = ReferenceInput::round_robin(texts(c), channels);
      CAPTURE(c.size());
      CAPTURE(channels);
      CHECK(as_strings(enumerate_reference_runs(g, in)) == brute::concat_runs(lanes_of(in), 2));
    }
  }
}

TEST_CASE("unbounded window agrees with the brute-force interleaver too") {
  const auto g = concat_pipeline({std::nullopt});
  const auto in = ReferenceInput::round_robin(texts({"a", "b", "c", "d"}), 2);
  CHECK(as_strings(enumerate_reference_runs(g, in)) == brute::concat_runs(lanes_of(in), 0));
}

TEST_CASE("single channel has exactly one run") {
  const auto g = concat_pipeline({2});
  const auto runs = enumerate_reference_runs(g, ReferenceInput::single_channel(texts({"a", "c", "b"})));
  REQUIRE(runs.size() == 1);
  CHECK(runs[0] == seq({"a", "ac", "cb"}));
}

TEST_CASE("zero inputs give the empty run") {
  const auto runs = enumerate_reference_runs(concat_pipeline({2}), ReferenceInput{});
  REQUIRE(runs.size() == 1);
  CHECK(runs[0].empty());
}

TEST_CASE("too many inputs exceed the search bound") {
  std::vector<std::string> nine(9, "a");
  CHECK_THROWS_AS(enumerate_reference_runs(concat_pipeline({2}), ReferenceInput::independent(texts(nine))),
                  SearchBudgetExceeded);
}

TEST_CASE("racing inputs make concat non-deterministic but not sum over one channel") {
  CHECK_FALSE(check_determinism(concat_pipeline({2}), ReferenceInput::round_robin(texts({"a", "b", "c"}), 2)));
  CHECK(check_determinism(concat_pipeline({2}), ReferenceInput::single_channel(texts({"a", "b", "c"}))));
  std::vector<Element> ints;
  for (int i = 1; i <= 3; ++i) ints.push_back(make_input(i, Integer{i}));
  CHECK(check_determinism(sum_pipeline(), ReferenceInput::single_channel(ints)));
}

TEST_CASE("inconsistent concat sequence is rejected at the right position") {
  const auto g = concat_pipeline({2});
  const auto in = ReferenceInput::round_robin(texts({"a", "c", "b", "d", "e"}), 2);

  const auto ok = check_exactly_once(g, in, seq({"a", "ac", "cd", "db", "be"}));
  CHECK(ok.holds);
  CHECK(ok.witness_outputs == seq({"a", "ac", "cd", "db", "be"}));
  CHECK_FALSE(ok.counterexample_index.has_value());

  const auto bad = check_exactly_once(g, in, seq({"a", "ac", "cd", "db", "de"}));
  CHECK_FALSE(bad.holds);
  REQUIRE(bad.counterexample_index.has_value());
  CHECK(*bad.counterexample_index == 4);
  CHECK(bad.description.find("de") != std::string::npos);
}

TEST_CASE("exactly-once accepts a prefix and completes it") {
  const auto g = concat_pipeline({2});
  const auto in = ReferenceInput::single_channel(texts({"a", "c", "b"}));
  const auto v = check_exactly_once(g, in, seq({"a", "ac"}));
  CHECK(v.holds);
  CHECK(v.witness_outputs == seq({"a", "ac", "cb"}));
  CHECK_FALSE(check_exactly_once(g, in, seq({"a", "ac", "cb", "cb"})).holds);
}

TEST_CASE("witness steps replay through the transition rules") {
  const auto g = concat_pipeline({2});
  const auto in = ReferenceInput::round_robin(texts({"a", "c", "b"}), 2);
  const auto v = check_exactly_once(g, in, seq({"a", "ab", "bc"}));
  REQUIRE(v.holds);
  ModelState s;
  for (const auto& step : v.witness_steps) s = model_step(s, step, g);
  OutputSequence out;
  for (const auto& e : s.outputs_B) out.push_back(e.payload);
  CHECK(out == v.witness_outputs);
  CHECK(s.working_W.size() == 1);  // only the final state remains
}

TEST_CASE("duplicates through live state are at-least-once but not exactly-once") {
  const auto g = concat_pipeline({2});
  const auto in = ReferenceInput::single_channel(texts({"a", "c", "b"}));
  const auto obs = seq({"a", "ac", "cc", "cb"});
  CHECK_FALSE(check_exactly_once(g, in, obs).holds);
  const auto v = check_at_least_once(g, in, obs, 1);
  CHECK(v.holds);
  CHECK(v.witness_inputs.size() >= 4);
  CHECK(check_at_least_once(g, in, seq({"a", "ac", "cb"}), 2).holds);
  CHECK_FALSE(check_at_least_once(g, in, seq({"a", "ac", "bd"}), 1).holds);
}

TEST_CASE("at-least-once respects the duplication bound") {
  const auto g = concat_pipeline({2});
  const auto in = ReferenceInput::single_channel(texts({"a", "b"}));
  const auto obs = seq({"a", "aa", "aa", "ab"});
  CHECK_FALSE(check_at_least_once(g, in, obs, 1).holds);
  CHECK(check_at_least_once(g, in, obs, 2).holds);
}

TEST_CASE("dropped inputs are at-most-once") {
  const auto g = concat_pipeline({2});
  const auto in = ReferenceInput::single_channel(texts({"a", "c", "b", "d"}));
  const auto obs = seq({"a", "ab", "bd"});
  CHECK_FALSE(check_exactly_once(g, in, obs).holds);
  const auto v = check_at_most_once(g, in, obs);
  CHECK(v.holds);
  CHECK(v.witness_inputs.size() == 3);
  CHECK_FALSE(check_at_most_once(g, in, seq({"a", "ac", "ca"})).holds);
}

TEST_CASE("steps whose preconditions fail are rejected") {
  const auto g = concat_pipeline({2});
  ModelState s;
  const auto a = make_input(1, Text{"a"});
  s = model_step(s, ModelStep::input(a), g);
  CHECK_THROWS_AS(model_step(s, ModelStep::input(a), g), StepNotEnabled);
  CHECK_THROWS_AS(model_step(s, ModelStep::transform("concat", {a.id}), g), StepNotEnabled);
  CHECK_THROWS_AS(model_step(s, ModelStep::transform("nope", {a.id}), g), StepNotEnabled);
  CHECK_THROWS_AS(model_step(s, ModelStep::output(a), g), StepNotEnabled);
  const auto before = s.tau;
  s = model_step(s, ModelStep::failure_recover(), g);
  CHECK(s.tau == before + 1);
  CHECK(s.working_W.size() == 1);
}

TEST_CASE("model steps round-trip through JSON") {
  const auto st = ModelStep::transform("concat", {3, 4});
  const auto back = model_step_from_json(model_step_to_json(st));
  CHECK(back.op == "concat");
  CHECK(back.consumed == std::vector<std::uint64_t>{3, 4});
  CHECK(back.kind == ModelStep::Kind::transform);
}

namespace {

// input a -> concat (unordered) -> state s1 + output "a"; then c -> s2 + "ac".
ExecutionTrace two_step_trace(bool persist_s1) {
  ExecutionTrace t;
  auto add = [&](TraceEvent e) { t.events.push_back(std::move(e)); };
  TraceEvent in1;
  in1.kind = TraceKind::input;
  in1.ids = {1};
  add(in1);
  TraceEvent t1;
  t1.kind = TraceKind::transform;
  t1.op = "concat";
  t1.consumed = {1};
  t1.state_out = 100;
  t1.ids = {101};
  t1.noncommutative = true;
  add(t1);
  if (persist_s1) {
    TraceEvent p;
    p.kind = TraceKind::persist;
    p.ids = {100};
    add(p);
  }
  TraceEvent o1;
  o1.kind = TraceKind::output;
  o1.ids = {101};
  o1.payloads = {"a"};
  add(o1);
  TraceEvent in2;
  in2.kind = TraceKind::input;
  in2.ids = {2};
  add(in2);
  TraceEvent t2;
  t2.kind = TraceKind::transform;
  t2.op = "concat";
  t2.consumed = {2, 100};
  t2.state_in = 100;
  t2.state_out = 102;
  t2.ids = {103};
  t2.noncommutative = true;
  add(t2);
  TraceEvent o2;
  o2.kind = TraceKind::output;
  o2.ids = {103};
  o2.payloads = {"ac"};
  add(o2);
  return t;
}

}  // namespace

TEST_CASE("persistence condition on hand-written traces") {
  const auto g = concat_pipeline({2});
  CHECK(check_theorem1_trace(two_step_trace(true), g).holds);
  const auto v = check_theorem1_trace(two_step_trace(false), g);
  CHECK_FALSE(v.holds);
  CHECK(v.description.find("100") != std::string::npos);
  CHECK(v.description.find("\"a\"") != std::string::npos);

  auto ordered = two_step_trace(false);
  for (auto& e : ordered.events) e.ordered = true;
  CHECK(check_theorem1_trace(ordered, g).holds);

  auto untracked = two_step_trace(true);
  untracked.persistence_tracked = false;
  CHECK_THROWS_AS(check_theorem1_trace(untracked, g), MalformedTrace);
}

TEST_CASE("naive replay violates the persistence condition while deterministic runs do not") {
  const auto g = concat_pipeline({2});
  const auto in = texts({"a", "c", "b", "d", "e"});
  int naive_violations = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    SimConfig c;
    c.seed = seed;
    c.checkpoint_interval = 50;
    c.fault_plan.node_failures = {{45, 1}};
    c.mode = GuaranteeMode::AtLeastOnceNaive;
    if (!check_theorem1_trace(run_simulation(g, in, c).trace, g).holds) ++naive_violations;
    c.mode = GuaranteeMode::ExactlyOnceDeterministic;
    CHECK(check_theorem1_trace(run_simulation(g, in, c).trace, g).holds);
  }
  CHECK(naive_violations > 0);
}

TEST_CASE("small guarantee examples") {
  const auto g = concat_pipeline({2});
  const auto ac = ReferenceInput::single_channel(texts({"a", "c"}));
  CHECK(check_exactly_once(g, ac, {}).holds);
  const auto replayed = check_at_least_once(g, ac, seq({"a", "ac", "ca"}), 2);
  CHECK(replayed.holds);

  const auto ab = ReferenceInput::single_channel(texts({"a", "b"}));
  const auto only_b = check_at_most_once(g, ab, seq({"b"}));
  CHECK(only_b.holds);
  REQUIRE(only_b.witness_inputs.size() == 1);
  CHECK(check_at_most_once(g, ab, seq({"a", "ab"})).holds);
  CHECK_FALSE(check_at_most_once(g, ab, seq({"a", "ab", "b"})).holds);

  CHECK(check_determinism(identity_pipeline(), ReferenceInput::single_channel(texts({"x", "y", "z"}))));
  CHECK(check_determinism(g, ReferenceInput{}));
}

TEST_CASE("transactional traces keep the persistence condition") {
  const auto g = concat_pipeline({2});
  SimConfig c;
  c.mode = GuaranteeMode::ExactlyOnceTransactional;
  c.checkpoint_interval = 50;
  c.fault_plan.node_failures = {{45, 1}};
  const auto r = run_simulation(g, texts({"a", "c", "b", "d", "e"}), c);
  CHECK(check_theorem1_trace(r.trace, g).holds);
  CHECK(check_theorem1_trace(run_simulation(identity_pipeline(), texts({"a", "b"}), {}).trace,
                             identity_pipeline())
            .holds);
}
