#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <deque>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prefshield/errors.hpp"

namespace prefshield {

/// Grid coordinate. Row 0 is the northmost row, column 0 the westmost. Signed
/// so that a move off the edge yields a representable out-of-bounds cell.
struct Cell {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const Cell&, const Cell&) = default;
};

inline std::string to_string(const Cell& c) {
  return "(" + std::to_string(c.row) + ", " + std::to_string(c.col) + ")";
}

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3 };

inline constexpr std::size_t kNumActions = 4;
inline constexpr std::array<Action, kNumActions> kActions = {Action::Up, Action::Down, Action::Left,
                                                             Action::Right};

constexpr std::size_t index_of(Action a) { return static_cast<std::size_t>(a); }

constexpr std::string_view action_name(Action a) {
  switch (a) {
    case Action::Up: return "Up";
    case Action::Down: return "Down";
    case Action::Left: return "Left";
    case Action::Right: return "Right";
  }
  return "?";
}

inline std::optional<Action> parse_action(std::string_view name) {
  for (Action a : kActions) {
    if (action_name(a) == name) return a;
  }
  return std::nullopt;
}

/// Quarter turn clockwise when viewed from above with north up.
constexpr Action rotate_clockwise(Action a) {
  switch (a) {
    case Action::Up: return Action::Right;
    case Action::Right: return Action::Down;
    case Action::Down: return Action::Left;
    case Action::Left: return Action::Up;
  }
  return a;
}

constexpr Action rotate_anticlockwise(Action a) {
  switch (a) {
    case Action::Up: return Action::Left;
    case Action::Left: return Action::Down;
    case Action::Down: return Action::Right;
    case Action::Right: return Action::Up;
  }
  return a;
}

/// Small ordered set of actions, always iterated in Up, Down, Left, Right
/// order.
class ActionSet {
 public:
  constexpr ActionSet() = default;

  constexpr void insert(Action a) { bits_ |= 1u << index_of(a); }
  constexpr bool contains(Action a) const { return (bits_ >> index_of(a)) & 1u; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::size_t size() const {
    std::size_t n = 0;
    for (Action a : kActions) n += contains(a) ? 1 : 0;
    return n;
  }

  /// The i-th member in canonical order; i < size().
  constexpr Action at(std::size_t i) const {
    for (Action a : kActions) {
      if (contains(a)) {
        if (i == 0) return a;
        --i;
      }
    }
    throw ContractError("ActionSet::at index out of range");
  }

  std::vector<Action> to_vector() const {
    std::vector<Action> out;
    for (Action a : kActions) {
      if (contains(a)) out.push_back(a);
    }
    return out;
  }

  friend constexpr bool operator==(ActionSet, ActionSet) = default;

 private:
  unsigned bits_ = 0;
};

struct GridConfig {
  int width = 0;
  int height = 0;
  std::set<Cell> obstacles;
  Cell start;
  Cell goal;
  double step_reward = -1.0;
  double collision_penalty = -10.0;
  double goal_reward = 100.0;

  bool in_bounds(const Cell& c) const {
    return c.row >= 0 && c.col >= 0 && c.row < height && c.col < width;
  }
  bool is_obstacle(const Cell& c) const { return obstacles.contains(c); }
  std::size_t num_cells() const { return static_cast<std::size_t>(width) * height; }
  std::size_t cell_index(const Cell& c) const {
    return static_cast<std::size_t>(c.row) * width + c.col;
  }

  friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct StepOutcome {
  Cell next_state;
  double reward = 0.0;
  bool terminal = false;

  friend bool operator==(const StepOutcome&, const StepOutcome&) = default;
};

/// Geometric successor, without any safety filtering.
constexpr Cell apply_move(const Cell& s, Action a) {
  switch (a) {
    case Action::Up: return {s.row - 1, s.col};
    case Action::Down: return {s.row + 1, s.col};
    case Action::Left: return {s.row, s.col - 1};
    case Action::Right: return {s.row, s.col + 1};
  }
  return s;
}

inline Cell apply_move(const GridConfig&, const Cell& s, Action a) { return apply_move(s, a); }

inline bool is_safe(const GridConfig& grid, const Cell& c) {
  return grid.in_bounds(c) && !grid.is_obstacle(c);
}

inline ActionSet safe_actions(const GridConfig& grid, const Cell& s) {
  ActionSet out;
  for (Action a : kActions) {
    if (is_safe(grid, apply_move(s, a))) out.insert(a);
  }
  return out;
}

/// Deterministic transition. An unsafe move leaves the agent in place and
/// costs the collision penalty.
inline StepOutcome step(const GridConfig& grid, const Cell& s, Action a) {
  const Cell target = apply_move(s, a);
  if (!is_safe(grid, target)) return {s, grid.collision_penalty, false};
  if (target == grid.goal) return {target, grid.goal_reward, true};
  return {target, grid.step_reward, false};
}

/// Cells reachable from `from` through non-obstacle cells, as a per-cell
/// distance map (-1 where unreachable).
inline std::vector<int> reachable_distances(const GridConfig& grid, const Cell& from) {
  std::vector<int> dist(grid.num_cells(), -1);
  if (!is_safe(grid, from)) return dist;
  std::deque<Cell> frontier{from};
  dist[grid.cell_index(from)] = 0;
  while (!frontier.empty()) {
    const Cell c = frontier.front();
    frontier.pop_front();
    for (Action a : kActions) {
      const Cell n = apply_move(c, a);
      if (!is_safe(grid, n) || dist[grid.cell_index(n)] >= 0) continue;
      dist[grid.cell_index(n)] = dist[grid.cell_index(c)] + 1;
      frontier.push_back(n);
    }
  }
  return dist;
}

/// Checks every GridConfig invariant; throws ValidationError naming the rule.
inline void validate(const GridConfig& grid) {
  if (grid.width < 2) throw ValidationError("width must be at least 2");
  if (grid.height < 2) throw ValidationError("height must be at least 2");
  if (!grid.in_bounds(grid.start)) throw ValidationError("start out of bounds");
  if (!grid.in_bounds(grid.goal)) throw ValidationError("goal out of bounds");
  for (const Cell& o : grid.obstacles) {
    if (!grid.in_bounds(o)) throw ValidationError("obstacle out of bounds " + to_string(o));
  }
  if (grid.is_obstacle(grid.start)) throw ValidationError("start on obstacle");
  if (grid.is_obstacle(grid.goal)) throw ValidationError("goal on obstacle");
  if (grid.start == grid.goal) throw ValidationError("start equals goal");

  const auto dist = reachable_distances(grid, grid.start);
  if (dist[grid.cell_index(grid.goal)] < 0) throw ValidationError("goal unreachable");
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const Cell cell{r, c};
      if (dist[grid.cell_index(cell)] < 0 || cell == grid.goal) continue;
      if (safe_actions(grid, cell).empty()) {
        throw ValidationError("dead-end cell " + to_string(cell));
      }
    }
  }
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline int parse_int(const std::string& tok, int line) {
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(tok, &used);
  } catch (const std::exception&) {
    throw ParseError(line, "expected integer, got '" + tok + "'");
  }
  if (used != tok.size()) throw ParseError(line, "expected integer, got '" + tok + "'");
  return value;
}

inline double parse_real(const std::string& tok, int line) {
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError(line, "expected number, got '" + tok + "'");
  }
  if (used != tok.size()) throw ParseError(line, "expected number, got '" + tok + "'");
  return value;
}

}  // namespace detail

/// Parses the line-oriented grid format:
///
///     width 5
///     height 5
///     start 4 0
///     goal 0 4
///     obstacle 2 2
///     reward step -1 collision -10 goal 100
///
/// `#` starts a comment line. The reward line is optional. The result is
/// validated before it is returned.
inline GridConfig parse_grid(std::string_view text) {
  GridConfig grid;
  bool seen_width = false, seen_height = false, seen_start = false, seen_goal = false,
       seen_reward = false;

  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto toks = detail::split_ws(raw);
    if (toks.empty() || toks[0].front() == '#') continue;

    const std::string& key = toks[0];
    auto expect_args = [&](std::size_t n) {
      if (toks.size() != n + 1) {
        throw ParseError(line_no, "'" + key + "' expects " + std::to_string(n) + " argument(s)");
      }
    };
    auto once = [&](bool& seen) {
      if (seen) throw ParseError(line_no, "duplicate '" + key + "'");
      seen = true;
    };

    if (key == "width") {
      once(seen_width);
      expect_args(1);
      grid.width = detail::parse_int(toks[1], line_no);
    } else if (key == "height") {
      once(seen_height);
      expect_args(1);
      grid.height = detail::parse_int(toks[1], line_no);
    } else if (key == "start") {
      once(seen_start);
      expect_args(2);
      grid.start = {detail::parse_int(toks[1], line_no), detail::parse_int(toks[2], line_no)};
    } else if (key == "goal") {
      once(seen_goal);
      expect_args(2);
      grid.goal = {detail::parse_int(toks[1], line_no), detail::parse_int(toks[2], line_no)};
    } else if (key == "obstacle") {
      expect_args(2);
      grid.obstacles.insert(
          {detail::parse_int(toks[1], line_no), detail::parse_int(toks[2], line_no)});
    } else if (key == "reward") {
      once(seen_reward);
      if (toks.size() < 3 || toks.size() % 2 != 1) {
        throw ParseError(line_no, "'reward' expects name/value pairs");
      }
      std::set<std::string> names;
      for (std::size_t i = 1; i < toks.size(); i += 2) {
        const std::string& name = toks[i];
        if (!names.insert(name).second) throw ParseError(line_no, "duplicate reward '" + name + "'");
        const double value = detail::parse_real(toks[i + 1], line_no);
        if (name == "step") {
          grid.step_reward = value;
        } else if (name == "collision") {
          grid.collision_penalty = value;
        } else if (name == "goal") {
          grid.goal_reward = value;
        } else {
          throw ParseError(line_no, "unknown reward '" + name + "'");
        }
      }
    } else {
      throw ParseError(line_no, "unknown key '" + key + "'");
    }
  }

  if (!seen_width) throw ParseError(line_no, "missing 'width'");
  if (!seen_height) throw ParseError(line_no, "missing 'height'");
  if (!seen_start) throw ParseError(line_no, "missing 'start'");
  if (!seen_goal) throw ParseError(line_no, "missing 'goal'");

  validate(grid);
  return grid;
}

/// Writes `grid` in the format accepted by parse_grid.
inline std::string to_grid_text(const GridConfig& grid) {
  std::ostringstream out;
  out << "width " << grid.width << "\nheight " << grid.height << "\nstart " << grid.start.row
      << ' ' << grid.start.col << "\ngoal " << grid.goal.row << ' ' << grid.goal.col << '\n';
  for (const Cell& o : grid.obstacles) out << "obstacle " << o.row << ' ' << o.col << '\n';
  out.precision(17);
  out << "reward step " << grid.step_reward << " collision " << grid.collision_penalty
      << " goal " << grid.goal_reward << '\n';
  return out.str();
}

/// 5x5 grid used throughout the tests: start bottom-left, goal top-right, a
/// two-cell wall in the middle row.
inline GridConfig canonical_grid() {
  GridConfig g;
  g.width = 5;
  g.height = 5;
  g.start = {4, 0};
  g.goal = {0, 4};
  g.obstacles = {{2, 2}, {2, 3}};
  return g;
}

}  // namespace prefshield
