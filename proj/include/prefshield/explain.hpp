#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "prefshield/gridworld.hpp"
#include "prefshield/shield.hpp"

namespace prefshield {

enum class ExplanationKind { UnsafeReplacement, PreferenceSubstitution, PreferenceUnavailable, GreedyRationale };

constexpr std::string_view explanation_kind_name(ExplanationKind k) {
  switch (k) {
    case ExplanationKind::UnsafeReplacement: return "UnsafeReplacement";
    case ExplanationKind::PreferenceSubstitution: return "PreferenceSubstitution";
    case ExplanationKind::PreferenceUnavailable: return "PreferenceUnavailable";
    case ExplanationKind::GreedyRationale: return "GreedyRationale";
  }
  return "?";
}

/// A contrastive, template-rendered account of one decision. For
/// PreferenceUnavailable, `rejected` is the preferred action that was not
/// followed.
struct ExplanationEvent {
  int episode = 0;
  int step = 0;
  ExplanationKind kind = ExplanationKind::GreedyRationale;
  Action chosen = Action::Up;
  std::optional<Action> rejected;
  std::optional<Preference> preference;
  std::string text;

  friend bool operator==(const ExplanationEvent&, const ExplanationEvent&) = default;
};

namespace detail {

inline std::string quoted(Preference p) {
  return "\"" + std::string(preference_description(p)) + "\"";
}

inline std::string name(Action a) { return std::string(action_name(a)); }

}  // namespace detail

/// Explanation for `decision`, or nothing when the mechanism is silent or the
/// shield did not intervene.
inline std::optional<ExplanationEvent> explain(const ShieldDecision& decision,
                                               std::optional<Preference> pref, int episode,
                                               int step, bool explanations_enabled,
                                               bool shield_enabled) {
  if (!explanations_enabled) return std::nullopt;

  ExplanationEvent ev;
  ev.episode = episode;
  ev.step = step;
  ev.chosen = decision.executed;

  if (!shield_enabled) {
    // Only claim greediness when it is true; exploratory moves stay silent.
    if (decision.q_executed < decision.q_best) return std::nullopt;
    ev.kind = ExplanationKind::GreedyRationale;
    ev.text = "I selected " + detail::name(ev.chosen) +
              " because it currently has the highest estimated value here.";
    return ev;
  }

  switch (decision.reason) {
    case ShieldReason::UnsafeReplaced:
      ev.kind = ExplanationKind::UnsafeReplacement;
      ev.rejected = decision.proposed;
      ev.text = "I selected " + detail::name(ev.chosen) + " because if I had selected " +
                detail::name(decision.proposed) + ", I would have moved into an unsafe cell.";
      return ev;
    case ShieldReason::PreferenceSubstituted:
      if (!pref) return std::nullopt;
      ev.kind = ExplanationKind::PreferenceSubstitution;
      ev.rejected = decision.proposed;
      ev.preference = pref;
      ev.text = "I selected " + detail::name(ev.chosen) + " because you prefer " +
                detail::quoted(*pref) + " and it is at least as promising as " +
                detail::name(decision.proposed) + ".";
      return ev;
    case ShieldReason::Pass: break;
  }

  if (!pref || !decision.preferred) return std::nullopt;
  const Action preferred = *decision.preferred;
  switch (decision.preferred_disposition) {
    case PreferredDisposition::SkippedUnsafe:
      ev.kind = ExplanationKind::PreferenceUnavailable;
      ev.rejected = preferred;
      ev.preference = pref;
      ev.text = "I could not follow your preference " + detail::quoted(*pref) + " because " +
                detail::name(preferred) + " would have moved into an unsafe cell.";
      return ev;
    case PreferredDisposition::SkippedLowerQ:
      ev.kind = ExplanationKind::PreferenceUnavailable;
      ev.rejected = preferred;
      ev.preference = pref;
      ev.text = "I did not follow your preference " + detail::quoted(*pref) + " because " +
                detail::name(preferred) + " currently looks worse than " +
                detail::name(ev.chosen) + ".";
      return ev;
    default: return std::nullopt;
  }
}

}  // namespace prefshield
