#include "streamlab/protocols.hpp"

#include <algorithm>
#include <cmath>

namespace streamlab {

namespace {

const std::vector<std::pair<GuaranteeMode, const char*>>& mode_names() {
  static const std::vector<std::pair<GuaranteeMode, const char*>> names{
      {GuaranteeMode::NoGuarantee, "NoGuarantee"},
      {GuaranteeMode::AtLeastOnceNaive, "AtLeastOnceNaive"},
      {GuaranteeMode::ExactlyOnceDeterministic, "ExactlyOnceDeterministic"},
      {GuaranteeMode::ExactlyOnceTransactional, "ExactlyOnceTransactional"},
      {GuaranteeMode::ExactlyOnceStrongProductions, "ExactlyOnceStrongProductions"},
  };
  return names;
}

}  // namespace

std::string to_string(GuaranteeMode m) {
  for (const auto& [mode, name] : mode_names())
    if (mode == m) return name;
  return "?";
}

GuaranteeMode guarantee_mode_from_string(const std::string& s) {
  for (const auto& [mode, name] : mode_names())
    if (s == name) return mode;
  throw Error("unknown guarantee mode '" + s + "'");
}

const std::vector<GuaranteeMode>& all_modes() {
  static const std::vector<GuaranteeMode> modes = [] {
    std::vector<GuaranteeMode> m;
    for (const auto& [mode, name] : mode_names()) m.push_back(mode);
    return m;
  }();
  return modes;
}

bool claims_exactly_once(GuaranteeMode m) {
  return m == GuaranteeMode::ExactlyOnceDeterministic || m == GuaranteeMode::ExactlyOnceTransactional ||
         m == GuaranteeMode::ExactlyOnceStrongProductions;
}

bool rolls_back(GuaranteeMode m) {
  return m == GuaranteeMode::ExactlyOnceDeterministic || m == GuaranteeMode::ExactlyOnceTransactional;
}

std::uint64_t epoch_width(double input_rate, double checkpoint_interval_ms) {
  const auto w = std::llround(input_rate * checkpoint_interval_ms / 1000.0);
  return static_cast<std::uint64_t>(std::max<long long>(1, w));
}

std::uint64_t epoch_of(std::uint64_t seq, std::uint64_t width) {
  return seq == 0 ? 0 : (seq - 1) / width + 1;
}

std::uint64_t epoch_last_seq(std::uint64_t epoch, std::uint64_t width) { return epoch * width; }

std::optional<std::uint64_t> round_target(std::uint64_t injected, bool producer_finished,
                                          std::uint64_t width,
                                          std::optional<std::uint64_t> last_committed) {
  const auto target = producer_finished ? injected : injected / width * width;
  if (!last_committed) return target;
  if (target <= *last_committed) return std::nullopt;
  return target;
}

bool SnapshotRound::complete() const {
  return std::all_of(participants.begin(), participants.end(),
                     [&](const std::string& p) { return accepted.count(p) > 0; });
}

void SnapshotRound::accept(const std::string& participant, Json state) {
  if (std::find(participants.begin(), participants.end(), participant) == participants.end())
    throw Error("'" + participant + "' is not part of snapshot round " + std::to_string(snapshot_id));
  accepted[participant] = std::move(state);
}

Snapshot SnapshotRound::commit() const {
  for (const auto& p : participants)
    if (!accepted.count(p))
      throw IncompleteRound("snapshot round " + std::to_string(snapshot_id) + " lacks acceptance from '" +
                            p + "'");
  Snapshot s;
  s.snapshot_id = snapshot_id;
  s.last_key = last_key;
  s.committed = true;
  for (const auto& [p, st] : accepted)
    if (!st.is_null()) s.states[p] = st;
  return s;
}

std::vector<Element> filter_after(const std::vector<Element>& items, const std::optional<OrderKey>& t_last) {
  if (!t_last) return items;
  std::vector<Element> out;
  for (const auto& e : items)
    if (*t_last < e.key) out.push_back(e);
  return out;
}

}  // namespace streamlab
