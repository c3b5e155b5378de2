#pragma once

// Executable reference model of a stream processing system: the working-set
// transition rules, reference recovery, and verdicts for delivery guarantees.
//
// "Non-zero probability" is treated as reachability: an output sequence is
// possible when some interleaving of input/transform/output steps produces it.
// The interleavings considered are those allowed by the channel layout of a
// ReferenceInput: elements in one lane stay FIFO through every operation and
// through egress, distinct lanes race freely.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "streamlab/model.hpp"
#include "streamlab/trace.hpp"

namespace streamlab {

class StepNotEnabled : public Error { using Error::Error; };
class SearchBudgetExceeded : public Error { using Error::Error; };
class MalformedTrace : public Error { using Error::Error; };

/// An element sitting in the working set. `at` names the operation that will
/// consume it; an empty `at` means it is ready to leave through an output step.
struct WorkItem {
  Element element;
  std::string at;
  std::string partition;  // state items only
  std::uint32_t lane = 0;

  bool operator==(const WorkItem&) const = default;
};

struct ModelState {
  std::uint64_t tau = 0;
  std::vector<Element> inputs_A;
  std::vector<Element> outputs_B;
  std::vector<WorkItem> working_W;
  std::uint64_t next_id = std::uint64_t{1} << 40;

  bool operator==(const ModelState&) const = default;
};

struct ModelStep {
  enum class Kind { input, output, transform, failure_recover };
  Kind kind = Kind::input;
  Element element;                      // input / output
  std::uint32_t lane = 0;               // input
  std::string op;                       // transform
  std::vector<std::uint64_t> consumed;  // transform: data element id, plus state id if any
  std::vector<Element> produced;        // transform: empty means "compute"

  static ModelStep input(Element e, std::uint32_t lane = 0);
  static ModelStep output(Element e);
  static ModelStep transform(std::string op, std::vector<std::uint64_t> consumed);
  static ModelStep failure_recover();
};

Json model_step_to_json(const ModelStep& s);
ModelStep model_step_from_json(const Json& j);

/// Applies one step of the reference rules. Throws StepNotEnabled when the step's
/// precondition does not hold in `state`. failure_recover restores exactly the
/// pre-failure working set, so it only advances tau.
ModelState model_step(const ModelState& state, const ModelStep& step, const DataflowGraph& graph);

/// Inputs arranged on channels. Each lane is FIFO; lanes race with each other.
struct ReferenceInput {
  std::vector<std::vector<Element>> lanes;

  ReferenceInput() = default;
  ReferenceInput(std::vector<Element> single_channel);  // NOLINT: implicit on purpose
  static ReferenceInput single_channel(std::vector<Element> inputs);
  /// Every input on its own lane.
  static ReferenceInput independent(std::vector<Element> inputs);
  /// Input i goes to lane i % channels.
  static ReferenceInput round_robin(std::vector<Element> inputs, int channels);

  std::vector<Element> all() const;
  std::size_t size() const;
};

using OutputSequence = std::vector<Payload>;

struct SearchLimits {
  std::size_t max_inputs = 8;
  std::size_t node_budget = 5'000'000;
  std::size_t max_outputs = static_cast<std::size_t>(-1);
};

/// Every complete output sequence reachable without failures (failures are
/// no-ops under reference recovery). Sorted lexicographically by canonical form.
std::vector<OutputSequence> enumerate_reference_runs(const DataflowGraph& graph,
                                                     const ReferenceInput& inputs,
                                                     SearchLimits limits = {});

struct GuaranteeVerdict {
  bool holds = false;
  /// Reference steps reproducing the observed prefix and completing the run.
  std::vector<ModelStep> witness_steps;
  /// Complete output sequence of the witness run.
  OutputSequence witness_outputs;
  /// Input multiset (at-least-once) or subset (at-most-once) used by the witness.
  std::vector<Element> witness_inputs;
  std::optional<std::size_t> counterexample_index;
  std::string description;
};

Json verdict_to_json(const GuaranteeVerdict& v);

GuaranteeVerdict check_exactly_once(const DataflowGraph& graph, const ReferenceInput& inputs,
                                    const OutputSequence& observed, SearchLimits limits = {});

/// Each input may appear up to 1 + max_duplication times; extra copies race on
/// their own lanes.
GuaranteeVerdict check_at_least_once(const DataflowGraph& graph, const ReferenceInput& inputs,
                                     const OutputSequence& observed, int max_duplication = 2,
                                     SearchLimits limits = {});

/// Some inputs may be dropped together with all their derivatives.
GuaranteeVerdict check_at_most_once(const DataflowGraph& graph, const ReferenceInput& inputs,
                                    const OutputSequence& observed, SearchLimits limits = {});

bool check_determinism(const DataflowGraph& graph, const ReferenceInput& inputs,
                       SearchLimits limits = {});

/// Operational form of the persistence condition for non-deterministic systems.
///
/// For every result s of a non-commutative operation that ran without order
/// enforcement, let b1 be the first released output depending on s. Every later
/// released output b2 depending on s must be reachable from some element p with
/// s ~> p ~> b2 that was recoverable (committed in a snapshot, recorded as a
/// strong production, or released) no later than b1. This is the
/// "b2 can be restored from what existed at b1" reading of the closure condition
///   G = Cl_D(b1) ∩ Cl_D^{-1}(b2),  ∀(u,v) ∈ D, u ∈ Cl_D(s): v ⊂ G ⇒ u ⊂ G.
///
/// Transform results feed outputs through the new state: an output of a stateful
/// transform depends on the state it produced.
GuaranteeVerdict check_theorem1_trace(const ExecutionTrace& trace, const DataflowGraph& graph);

}  // namespace streamlab
