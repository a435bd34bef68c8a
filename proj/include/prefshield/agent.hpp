#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "prefshield/errors.hpp"
#include "prefshield/gridworld.hpp"
#include "prefshield/rng.hpp"

namespace prefshield {

/// Tabular state-action values over a width x height grid, zero-initialised.
class QTable {
 public:
  using Row = std::array<double, kNumActions>;

  QTable() = default;
  QTable(int width, int height)
      : width_(width), height_(height), values_(static_cast<std::size_t>(width) * height, Row{}) {}
  explicit QTable(const GridConfig& grid) : QTable(grid.width, grid.height) {}

  int width() const { return width_; }
  int height() const { return height_; }

  double get(const Cell& s, Action a) const { return row(s)[index_of(a)]; }
  void set(const Cell& s, Action a, double v) { row(s)[index_of(a)] = v; }

  const Row& row(const Cell& s) const { return values_.at(index(s)); }
  Row& row(const Cell& s) { return values_.at(index(s)); }

  double max_value(const Cell& s) const {
    const Row& r = row(s);
    return *std::max_element(r.begin(), r.end());
  }

  friend bool operator==(const QTable&, const QTable&) = default;

 private:
  std::size_t index(const Cell& s) const {
    if (s.row < 0 || s.col < 0 || s.row >= height_ || s.col >= width_) {
      throw ContractError("QTable lookup out of bounds " + to_string(s));
    }
    return static_cast<std::size_t>(s.row) * width_ + s.col;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Row> values_;
};

struct Hyperparams {
  double alpha = 0.1;
  double gamma = 0.9;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_episodes = 180;
  int episodes = 300;
  int max_steps_per_episode = 200;

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

/// Defaults with epsilon decaying over the first 60% of `episodes`.
inline Hyperparams default_hyperparams(int episodes = 300) {
  Hyperparams h;
  h.episodes = episodes;
  h.epsilon_decay_episodes = std::max(1, episodes * 6 / 10);
  return h;
}

inline void validate(const Hyperparams& h) {
  if (!(h.alpha > 0.0 && h.alpha <= 1.0)) throw ValidationError("alpha must be in (0, 1]");
  if (!(h.gamma >= 0.0 && h.gamma < 1.0)) throw ValidationError("gamma must be in [0, 1)");
  if (!(h.epsilon_start >= 0.0 && h.epsilon_start <= 1.0)) {
    throw ValidationError("epsilon_start must be in [0, 1]");
  }
  if (!(h.epsilon_end >= 0.0 && h.epsilon_end <= 1.0)) {
    throw ValidationError("epsilon_end must be in [0, 1]");
  }
  if (h.epsilon_end > h.epsilon_start) throw ValidationError("epsilon_end exceeds epsilon_start");
  if (h.epsilon_decay_episodes < 1) throw ValidationError("epsilon_decay_episodes must be >= 1");
  if (h.episodes < 1) throw ValidationError("episodes must be >= 1");
  if (h.max_steps_per_episode < 1) throw ValidationError("max_steps_per_episode must be >= 1");
}

/// Linear decay from epsilon_start to epsilon_end, then flat.
inline double epsilon_at(const Hyperparams& h, int episode_index) {
  if (episode_index >= h.epsilon_decay_episodes) return h.epsilon_end;
  const double frac = static_cast<double>(episode_index) / h.epsilon_decay_episodes;
  return h.epsilon_start + (h.epsilon_end - h.epsilon_start) * frac;
}

/// Epsilon-greedy proposal. Always consumes exactly two draws: one for the
/// explore/exploit branch and one for the pick (uniform over all actions, or
/// uniform over the tied maximisers).
inline Action propose_action(const QTable& q, const Cell& s, double epsilon, RngStream& rng) {
  const bool explore = rng.uniform_real() < epsilon;
  if (explore) return kActions[rng.uniform_index(kNumActions)];

  const auto& values = q.row(s);
  const double best = *std::max_element(values.begin(), values.end());
  ActionSet ties;
  for (Action a : kActions) {
    if (values[index_of(a)] == best) ties.insert(a);
  }
  return ties.at(rng.uniform_index(ties.size()));
}

/// One-step Q-learning backup on (s, a). The bootstrap term is zero when the
/// transition is terminal.
inline void update_q(QTable& q, const Cell& s, Action a, double reward, const Cell& next,
                     bool terminal, const Hyperparams& h) {
  const double bootstrap = terminal ? 0.0 : q.max_value(next);
  const double current = q.get(s, a);
  q.set(s, a, current + h.alpha * (reward + h.gamma * bootstrap - current));
}

/// Greedy action with ties resolved in Up, Down, Left, Right order.
inline Action greedy_action(const QTable& q, const Cell& s) {
  const auto& values = q.row(s);
  Action best = Action::Up;
  for (Action a : kActions) {
    if (values[index_of(a)] > values[index_of(best)]) best = a;
  }
  return best;
}

/// Greedy action for every non-obstacle, non-goal cell.
inline std::map<Cell, Action> greedy_policy(const QTable& q, const GridConfig& grid) {
  std::map<Cell, Action> policy;
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const Cell cell{r, c};
      if (grid.is_obstacle(cell) || cell == grid.goal) continue;
      policy.emplace(cell, greedy_action(q, cell));
    }
  }
  return policy;
}

}  // namespace prefshield
