#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "prefshield/agent.hpp"
#include "prefshield/errors.hpp"
#include "prefshield/explain.hpp"
#include "prefshield/gridworld.hpp"
#include "prefshield/rng.hpp"
#include "prefshield/shield.hpp"

namespace prefshield {

enum class Mechanism { L1, L2, L3, L4 };

inline constexpr std::array<Mechanism, 4> kMechanisms = {Mechanism::L1, Mechanism::L2,
                                                         Mechanism::L3, Mechanism::L4};

struct MechanismConfig {
  Mechanism id = Mechanism::L2;
  bool shield_enabled = false;
  bool explanations_enabled = false;

  friend bool operator==(const MechanismConfig&, const MechanismConfig&) = default;
};

constexpr MechanismConfig mechanism_config(Mechanism m) {
  switch (m) {
    case Mechanism::L1: return {m, true, false};
    case Mechanism::L2: return {m, false, false};
    case Mechanism::L3: return {m, true, true};
    case Mechanism::L4: return {m, false, true};
  }
  return {};
}

constexpr std::string_view mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::L1: return "L1";
    case Mechanism::L2: return "L2";
    case Mechanism::L3: return "L3";
    case Mechanism::L4: return "L4";
  }
  return "?";
}

inline std::optional<Mechanism> parse_mechanism(std::string_view name) {
  for (Mechanism m : kMechanisms) {
    if (mechanism_name(m) == name) return m;
  }
  return std::nullopt;
}

struct StepRecord {
  int episode = 0;
  int step = 0;
  Cell state;
  Action proposed = Action::Up;
  ShieldDecision decision;
  StepOutcome outcome;
  std::optional<ExplanationEvent> explanation;
};

struct EpisodeTrace {
  int episode = 0;
  std::vector<StepRecord> steps;
  double episode_return = 0.0;
  int length = 0;
};

/// Per-episode state carried between steps.
struct EpisodeCursor {
  int episode = 0;
  int step = 0;
  Cell state;
  double episode_return = 0.0;
  // Last cell a greedy rationale was given for; suppresses repeats while the
  // agent stays put.
  std::optional<Cell> last_rationale_state;

  bool done = false;
};

inline void require_preference(const MechanismConfig& mech, std::optional<Preference> pref) {
  if (mech.shield_enabled && !pref) {
    throw ContractError(std::string(mechanism_name(mech.id)) + " requires a preference");
  }
}

/// Proposes, shields (when enabled), steps the environment and learns from
/// the executed action. Advances `cursor`.
inline StepRecord take_step(const GridConfig& grid, QTable& q, const MechanismConfig& mech,
                            std::optional<Preference> pref, const Hyperparams& h,
                            EpisodeCursor& cursor, RngStream& rng) {
  if (cursor.done) throw ContractError("episode already finished");
  const double epsilon = epsilon_at(h, cursor.episode);
  const Action proposed = propose_action(q, cursor.state, epsilon, rng);

  StepRecord rec;
  rec.episode = cursor.episode;
  rec.step = cursor.step;
  rec.state = cursor.state;
  rec.proposed = proposed;
  rec.decision = mech.shield_enabled ? shield_step(grid, q, pref, cursor.state, proposed, rng)
                                     : unshielded_decision(q, cursor.state, proposed);
  rec.explanation = explain(rec.decision, pref, cursor.episode, cursor.step,
                            mech.explanations_enabled, mech.shield_enabled);
  if (rec.explanation && rec.explanation->kind == ExplanationKind::GreedyRationale) {
    if (cursor.last_rationale_state == cursor.state) {
      rec.explanation.reset();
    } else {
      cursor.last_rationale_state = cursor.state;
    }
  }

  rec.outcome = step(grid, cursor.state, rec.decision.executed);
  update_q(q, cursor.state, rec.decision.executed, rec.outcome.reward, rec.outcome.next_state,
           rec.outcome.terminal, h);

  cursor.state = rec.outcome.next_state;
  cursor.episode_return += rec.outcome.reward;
  ++cursor.step;
  cursor.done = rec.outcome.terminal || cursor.step >= h.max_steps_per_episode;
  return rec;
}

inline EpisodeCursor begin_episode(const GridConfig& grid, int episode_index) {
  EpisodeCursor c;
  c.episode = episode_index;
  c.state = grid.start;
  return c;
}

/// One episode from grid.start until the goal or the step limit.
inline EpisodeTrace run_episode(const GridConfig& grid, QTable& q, const MechanismConfig& mech,
                                std::optional<Preference> pref, const Hyperparams& h,
                                int episode_index, RngStream& rng) {
  require_preference(mech, pref);
  EpisodeCursor cursor = begin_episode(grid, episode_index);
  EpisodeTrace trace;
  trace.episode = episode_index;
  while (!cursor.done) trace.steps.push_back(take_step(grid, q, mech, pref, h, cursor, rng));
  trace.episode_return = cursor.episode_return;
  trace.length = static_cast<int>(trace.steps.size());
  return trace;
}

struct TrainingRun {
  std::vector<EpisodeTrace> episodes;
  QTable q;
};

/// Full training run from a zero Q-table with a fresh stream seeded by `seed`.
inline TrainingRun train(const GridConfig& grid, const MechanismConfig& mech,
                         std::optional<Preference> pref, const Hyperparams& h, std::uint64_t seed) {
  require_preference(mech, pref);
  TrainingRun run{{}, QTable(grid)};
  RngStream rng(seed);
  run.episodes.reserve(h.episodes);
  for (int e = 0; e < h.episodes; ++e) {
    run.episodes.push_back(run_episode(grid, run.q, mech, pref, h, e, rng));
  }
  return run;
}

/// Length of the greedy path from start to goal, or nothing if the goal is
/// not reached within `max_len` steps. Shielded mechanisms keep their shield.
inline std::optional<int> greedy_rollout(const GridConfig& grid, const QTable& q,
                                         const MechanismConfig& mech,
                                         std::optional<Preference> pref, int max_len,
                                         std::uint64_t seed = 0) {
  RngStream rng(seed);
  Cell s = grid.start;
  for (int n = 1; n <= max_len; ++n) {
    Action a = greedy_action(q, s);
    if (mech.shield_enabled) a = shield_step(grid, q, pref, s, a, rng).executed;
    const StepOutcome out = step(grid, s, a);
    if (out.terminal) return n;
    s = out.next_state;
  }
  return std::nullopt;
}

struct RewardCurve {
  std::string label;
  std::vector<double> per_episode_return;
  std::vector<double> accumulated;
  std::vector<std::uint64_t> seeds;
};

inline std::vector<double> prefix_sums(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = acc += v[i];
  return out;
}

inline std::vector<double> episode_returns(const TrainingRun& run) {
  std::vector<double> out;
  out.reserve(run.episodes.size());
  for (const auto& ep : run.episodes) out.push_back(ep.episode_return);
  return out;
}

inline std::string curve_label(Mechanism m, std::optional<Preference> pref) {
  return std::string(mechanism_name(m)) + "-" +
         (pref ? std::string(preference_id(*pref)) : std::string("none"));
}

/// Per-seed returns of one (mechanism, preference) cell of an experiment.
struct ExperimentCell {
  Mechanism mechanism = Mechanism::L2;
  std::optional<Preference> preference;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> returns;  // [seed][episode]
  std::vector<TrainingRun> runs;             // kept only when requested
};

/// Element-wise mean over seeds, then prefix sums.
inline RewardCurve mean_curve(const ExperimentCell& cell) {
  RewardCurve curve;
  curve.label = curve_label(cell.mechanism, cell.preference);
  curve.seeds = cell.seeds;
  if (cell.returns.empty()) return curve;
  const std::size_t n = cell.returns.front().size();
  curve.per_episode_return.assign(n, 0.0);
  for (const auto& r : cell.returns) {
    for (std::size_t i = 0; i < n; ++i) curve.per_episode_return[i] += r[i];
  }
  for (double& v : curve.per_episode_return) v /= static_cast<double>(cell.returns.size());
  curve.accumulated = prefix_sums(curve.per_episode_return);
  return curve;
}

/// One training run per (mechanism, preference, seed). Shield-less
/// mechanisms ignore the preference list and yield a single "none" cell.
/// Runs execute on a small worker pool; results are placed by index, so
/// output does not depend on scheduling.
inline std::vector<ExperimentCell> run_experiment_cells(
    const GridConfig& grid, const std::vector<Mechanism>& mechanisms,
    const std::vector<std::optional<Preference>>& preferences,
    const std::vector<std::uint64_t>& seeds, const Hyperparams& h, bool keep_runs = false) {
  if (mechanisms.empty() || preferences.empty() || seeds.empty()) {
    throw ValidationError("experiment needs at least one mechanism, preference and seed");
  }
  std::vector<ExperimentCell> cells;
  for (Mechanism m : mechanisms) {
    const auto cfg = mechanism_config(m);
    if (!cfg.shield_enabled) {
      cells.push_back({m, std::nullopt, seeds, {}, {}});
      continue;
    }
    for (const auto& p : preferences) {
      require_preference(cfg, p);
      cells.push_back({m, p, seeds, {}, {}});
    }
  }

  const std::size_t total = cells.size() * seeds.size();
  std::vector<TrainingRun> results(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      const auto& cell = cells[i / seeds.size()];
      results[i] = train(grid, mechanism_config(cell.mechanism), cell.preference, h,
                         seeds[i % seeds.size()]);
    }
  };
  const unsigned n_workers =
      std::clamp<unsigned>(std::thread::hardware_concurrency(), 1u, 8u);
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      auto& run = results[c * seeds.size() + s];
      cells[c].returns.push_back(episode_returns(run));
      if (keep_runs) cells[c].runs.push_back(std::move(run));
    }
  }
  return cells;
}

inline std::vector<RewardCurve> run_experiment(
    const GridConfig& grid, const std::vector<Mechanism>& mechanisms,
    const std::vector<std::optional<Preference>>& preferences,
    const std::vector<std::uint64_t>& seeds, const Hyperparams& h) {
  std::vector<RewardCurve> curves;
  for (const auto& cell : run_experiment_cells(grid, mechanisms, preferences, seeds, h)) {
    curves.push_back(mean_curve(cell));
  }
  return curves;
}

// Relative importance of legibility, predictability and expectability in the
// overall transparency score.
inline constexpr double kLegibilityWeight = 0.385;
inline constexpr double kPredictabilityWeight = 0.352;
inline constexpr double kExpectabilityWeight = 0.299;

struct TransparencyInputs {
  double legibility = 0.0;
  double predictability = 0.0;
  double expectability = 0.0;
};

inline double transparency_score(const TransparencyInputs& t) {
  return kLegibilityWeight * t.legibility + kPredictabilityWeight * t.predictability +
         kExpectabilityWeight * t.expectability;
}

/// Shortest round-trip decimal form, independent of the global locale.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_csv(std::ostream& out, const std::vector<RewardCurve>& curves) {
  out << "label,episode,per_episode_return,accumulated\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.per_episode_return.size(); ++i) {
      out << c.label << ',' << i << ',' << format_double(c.per_episode_return[i]) << ','
          << format_double(c.accumulated[i]) << '\n';
    }
  }
}

inline void export_csv(const std::vector<RewardCurve>& curves, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_csv(out, curves);
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

/// Reads a file produced by export_csv back into curves (seeds are not
/// stored and come back empty).
inline std::vector<RewardCurve> read_csv(std::istream& in) {
  std::vector<RewardCurve> curves;
  std::string line;
  if (!std::getline(in, line) || line != "label,episode,per_episode_return,accumulated") {
    throw ValidationError("csv: bad header");
  }
  auto parse = [](std::string_view tok) {
    double v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
      throw ValidationError("csv: bad number '" + std::string(tok) + "'");
    }
    return v;
  };
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
    if (f.size() != 4) throw ValidationError("csv: expected 4 fields");
    if (curves.empty() || curves.back().label != f[0]) curves.push_back({f[0], {}, {}, {}});
    curves.back().per_episode_return.push_back(parse(f[2]));
    curves.back().accumulated.push_back(parse(f[3]));
  }
  return curves;
}

namespace detail {

inline nlohmann::ordered_json cell_json(const Cell& c) { return {c.row, c.col}; }

}  // namespace detail

/// Trace line for one step, fields in record order.
inline nlohmann::ordered_json step_json(const StepRecord& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["episode"] = r.episode;
  j["step"] = r.step;
  j["state"] = detail::cell_json(r.state);
  j["proposed"] = action_name(r.proposed);
  j["executed"] = action_name(r.decision.executed);
  j["preferred"] = r.decision.preferred ? ordered_json(action_name(*r.decision.preferred))
                                        : ordered_json(nullptr);
  j["reason"] = reason_name(r.decision.reason);
  j["disposition"] = disposition_name(r.decision.preferred_disposition);
  j["q_proposed"] = r.decision.q_proposed;
  j["q_executed"] = r.decision.q_executed;
  j["q_preferred"] =
      r.decision.q_preferred ? ordered_json(*r.decision.q_preferred) : ordered_json(nullptr);
  j["next_state"] = detail::cell_json(r.outcome.next_state);
  j["reward"] = r.outcome.reward;
  j["terminal"] = r.outcome.terminal;
  if (r.explanation) {
    j["explanation"] = {{"kind", explanation_kind_name(r.explanation->kind)},
                        {"text", r.explanation->text}};
  } else {
    j["explanation"] = nullptr;
  }
  return j;
}

inline void write_trace(std::ostream& out, const std::vector<EpisodeTrace>& episodes) {
  for (const auto& ep : episodes) {
    for (const auto& rec : ep.steps) out << step_json(rec).dump() << '\n';
  }
}

/// `episode:step text`, one line per explanation.
inline void write_explain_log(std::ostream& out, const std::vector<EpisodeTrace>& episodes) {
  for (const auto& ep : episodes) {
    for (const auto& rec : ep.steps) {
      if (rec.explanation) {
        out << rec.explanation->episode << ':' << rec.explanation->step << ' '
            << rec.explanation->text << '\n';
      }
    }
  }
}

/// Canonical dynamics-only serialisation: one `episode step row col action
/// reward` line per step. Explanations and Q-values are excluded.
inline std::string canonical_dynamics(const std::vector<EpisodeTrace>& episodes) {
  std::string out;
  for (const auto& ep : episodes) {
    for (const auto& r : ep.steps) {
      out += std::to_string(r.episode) + ' ' + std::to_string(r.step) + ' ' +
             std::to_string(r.state.row) + ' ' + std::to_string(r.state.col) + ' ' +
             std::string(action_name(r.decision.executed)) + ' ' +
             format_double(r.outcome.reward) + '\n';
    }
  }
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 0xf];
  }
  return hex;
}

/// SHA-256 over the states, executed actions and rewards of a run.
inline std::string trace_digest(const std::vector<EpisodeTrace>& episodes) {
  return sha256_hex(canonical_dynamics(episodes));
}

inline std::string trace_digest(const EpisodeTrace& episode) {
  return trace_digest(std::vector<EpisodeTrace>{episode});
}

}  // namespace prefshield
