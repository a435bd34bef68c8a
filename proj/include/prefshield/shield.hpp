#pragma once

#include <cstdlib>
#include <optional>
#include <string_view>

#include "prefshield/agent.hpp"
#include "prefshield/errors.hpp"
#include "prefshield/gridworld.hpp"
#include "prefshield/rng.hpp"

namespace prefshield {

enum class Preference { Clockwise, AntiClockwise, North, South };

inline constexpr std::array<Preference, 4> kPreferences = {
    Preference::Clockwise, Preference::AntiClockwise, Preference::North, Preference::South};

/// Command-line / wire identifier.
constexpr std::string_view preference_id(Preference p) {
  switch (p) {
    case Preference::Clockwise: return "clockwise";
    case Preference::AntiClockwise: return "anticlockwise";
    case Preference::North: return "north";
    case Preference::South: return "south";
  }
  return "?";
}

/// User-facing wording, as shown in explanations.
constexpr std::string_view preference_description(Preference p) {
  switch (p) {
    case Preference::Clockwise: return "go around obstacles clockwise";
    case Preference::AntiClockwise: return "go around obstacles anti-clockwise";
    case Preference::North: return "keep to the north of the map";
    case Preference::South: return "keep to the south of the map";
  }
  return "?";
}

inline std::optional<Preference> parse_preference(std::string_view id) {
  for (Preference p : kPreferences) {
    if (preference_id(p) == id) return p;
  }
  return std::nullopt;
}

enum class ShieldReason { Pass, UnsafeReplaced, PreferenceSubstituted };

enum class PreferredDisposition { NotDefined, Applied, SkippedUnsafe, SkippedLowerQ, AlreadyProposed };

constexpr std::string_view reason_name(ShieldReason r) {
  switch (r) {
    case ShieldReason::Pass: return "Pass";
    case ShieldReason::UnsafeReplaced: return "UnsafeReplaced";
    case ShieldReason::PreferenceSubstituted: return "PreferenceSubstituted";
  }
  return "?";
}

constexpr std::string_view disposition_name(PreferredDisposition d) {
  switch (d) {
    case PreferredDisposition::NotDefined: return "NotDefined";
    case PreferredDisposition::Applied: return "Applied";
    case PreferredDisposition::SkippedUnsafe: return "SkippedUnsafe";
    case PreferredDisposition::SkippedLowerQ: return "SkippedLowerQ";
    case PreferredDisposition::AlreadyProposed: return "AlreadyProposed";
  }
  return "?";
}

/// Everything the shield saw and decided for one step.
struct ShieldDecision {
  Cell state;
  Action proposed = Action::Up;
  Action executed = Action::Up;
  std::optional<Action> preferred;
  ShieldReason reason = ShieldReason::Pass;
  PreferredDisposition preferred_disposition = PreferredDisposition::NotDefined;
  double q_proposed = 0.0;
  double q_executed = 0.0;
  std::optional<double> q_preferred;
  // Max over all actions at decision time; lets a shield-less run state
  // whether its choice was greedy.
  double q_best = 0.0;

  friend bool operator==(const ShieldDecision&, const ShieldDecision&) = default;
};

/// Direction that closes the larger coordinate gap to the goal, vertical on
/// ties. `s` must differ from the goal.
inline Action goal_direction(const GridConfig& grid, const Cell& s) {
  const int dr = grid.goal.row - s.row;
  const int dc = grid.goal.col - s.col;
  if (std::abs(dr) >= std::abs(dc) && dr != 0) return dr < 0 ? Action::Up : Action::Down;
  return dc < 0 ? Action::Left : Action::Right;
}

/// The single preferred action for `s` under `pref`, if any.
///
/// North and South always prefer Up and Down. The rotational preferences only
/// speak when the goal direction is blocked: they then turn a quarter at a
/// time in their own sense until a safe move is found.
inline std::optional<Action> preferred_action(const GridConfig& grid, Preference pref,
                                              const Cell& s) {
  switch (pref) {
    case Preference::North: return Action::Up;
    case Preference::South: return Action::Down;
    case Preference::Clockwise:
    case Preference::AntiClockwise: break;
  }
  Action d = goal_direction(grid, s);
  if (is_safe(grid, apply_move(s, d))) return std::nullopt;
  for (int turn = 0; turn < 3; ++turn) {
    d = pref == Preference::Clockwise ? rotate_clockwise(d) : rotate_anticlockwise(d);
    if (is_safe(grid, apply_move(s, d))) return d;
  }
  return std::nullopt;
}

/// One pass of the preference shield over the agent's proposal.
///
/// An unsafe proposal is replaced by a uniformly drawn safe action. The
/// preferred action then overrides the current choice when it is safe and its
/// Q-value is at least that of the current choice. Exactly one draw is taken
/// from `rng` on every call.
inline ShieldDecision shield_step(const GridConfig& grid, const QTable& q,
                                  std::optional<Preference> pref, const Cell& s, Action proposed,
                                  RngStream& rng) {
  if (s == grid.goal) throw ContractError("shield_step called on the terminal state");
  if (!is_safe(grid, s)) throw ContractError("shield_step called on invalid state " + to_string(s));
  const ActionSet safe = safe_actions(grid, s);
  if (safe.empty()) throw ContractError("no safe action from " + to_string(s));

  const std::size_t draw = rng.uniform_index(safe.size());

  ShieldDecision d;
  d.state = s;
  d.proposed = proposed;
  d.q_proposed = q.get(s, proposed);
  d.q_best = q.max_value(s);

  Action chosen = proposed;
  if (!safe.contains(proposed)) {
    chosen = safe.at(draw);
    d.reason = ShieldReason::UnsafeReplaced;
  }

  if (pref) d.preferred = preferred_action(grid, *pref, s);
  if (d.preferred) {
    const Action p = *d.preferred;
    d.q_preferred = q.get(s, p);
    if (!safe.contains(p)) {
      d.preferred_disposition = PreferredDisposition::SkippedUnsafe;
    } else if (q.get(s, p) >= q.get(s, chosen)) {
      if (p == proposed) {
        d.preferred_disposition = PreferredDisposition::AlreadyProposed;
      } else {
        chosen = p;
        d.reason = ShieldReason::PreferenceSubstituted;
        d.preferred_disposition = PreferredDisposition::Applied;
      }
    } else {
      d.preferred_disposition = PreferredDisposition::SkippedLowerQ;
    }
  }

  d.executed = chosen;
  d.q_executed = q.get(s, chosen);
  return d;
}

/// Decision record for a step taken without a shield.
inline ShieldDecision unshielded_decision(const QTable& q, const Cell& s, Action proposed) {
  ShieldDecision d;
  d.state = s;
  d.proposed = proposed;
  d.executed = proposed;
  d.q_proposed = q.get(s, proposed);
  d.q_executed = d.q_proposed;
  d.q_best = q.max_value(s);
  return d;
}

}  // namespace prefshield
