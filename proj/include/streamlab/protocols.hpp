#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "streamlab/model.hpp"
#include "streamlab/storage.hpp"

namespace streamlab {

enum class GuaranteeMode {
  NoGuarantee,
  AtLeastOnceNaive,
  ExactlyOnceDeterministic,
  ExactlyOnceTransactional,
  ExactlyOnceStrongProductions,
};

std::string to_string(GuaranteeMode m);
GuaranteeMode guarantee_mode_from_string(const std::string& s);
const std::vector<GuaranteeMode>& all_modes();

bool claims_exactly_once(GuaranteeMode m);
/// Modes whose recovery rolls every task back to a committed snapshot.
bool rolls_back(GuaranteeMode m);

class IncompleteRound : public Error { using Error::Error; };

/// Inputs per epoch: rate x interval, at least one.
std::uint64_t epoch_width(double input_rate, double checkpoint_interval_ms);
/// Epoch k (from 1) holds producer_seq in ((k-1)W, kW].
std::uint64_t epoch_of(std::uint64_t seq, std::uint64_t width);
std::uint64_t epoch_last_seq(std::uint64_t epoch, std::uint64_t width);

/// Boundary a new deterministic round snapshots up to, or nullopt when there
/// is nothing new to cover. `injected` is the last producer_seq injected since
/// the latest rollback.
std::optional<std::uint64_t> round_target(std::uint64_t injected, bool producer_finished,
                                          std::uint64_t width,
                                          std::optional<std::uint64_t> last_committed);

/// A snapshot round in flight: which participants still owe an acceptance.
struct SnapshotRound {
  std::int64_t snapshot_id = 0;
  OrderKey last_key;
  std::vector<std::string> participants;
  std::map<std::string, Json> accepted;  // participant -> persisted state (null for barriers)

  bool complete() const;
  void accept(const std::string& participant, Json state);
  /// The committed snapshot. Throws IncompleteRound if an acceptance is missing.
  Snapshot commit() const;
};

/// Items a recovered barrier may still release: key strictly greater than the
/// consumer's t_last.
std::vector<Element> filter_after(const std::vector<Element>& items, const std::optional<OrderKey>& t_last);

}  // namespace streamlab
