#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "json.hpp"
#include "prefshield/agent.hpp"
#include "prefshield/errors.hpp"
#include "prefshield/experiment.hpp"
#include "prefshield/gridworld.hpp"
#include "prefshield/shield.hpp"

namespace prefshield::service {

using json = nlohmann::ordered_json;

enum class RunState { Configuring, Running, Paused, Finished };

constexpr std::string_view run_state_name(RunState s) {
  switch (s) {
    case RunState::Configuring: return "Configuring";
    case RunState::Running: return "Running";
    case RunState::Paused: return "Paused";
    case RunState::Finished: return "Finished";
  }
  return "?";
}

enum class EventKind { Step, Explanation, EpisodeEnd, RunEnd, QSnapshot, Error };

constexpr std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Step: return "Step";
    case EventKind::Explanation: return "Explanation";
    case EventKind::EpisodeEnd: return "EpisodeEnd";
    case EventKind::RunEnd: return "RunEnd";
    case EventKind::QSnapshot: return "QSnapshot";
    case EventKind::Error: return "Error";
  }
  return "?";
}

/// One pushed event. `seq` counts events per subscriber connection so two
/// subscribers joining at the same point see byte-identical streams.
struct StreamEvent {
  EventKind kind = EventKind::Step;
  int episode = 0;
  int step = 0;
  json payload;

  json to_json(std::uint64_t seq) const {
    json j;
    j["seq"] = seq;
    j["kind"] = event_kind_name(kind);
    j["episode"] = episode;
    j["step"] = step;
    j["payload"] = payload;
    return j;
  }

  /// Server-sent-events framing.
  std::string to_sse(std::uint64_t seq) const {
    return "id: " + std::to_string(seq) + "\nevent: " + std::string(event_kind_name(kind)) +
           "\ndata: " + to_json(seq).dump() + "\n\n";
  }
};

enum class ControlCommand { Start, Pause, StepOnce, Reset };

inline std::optional<ControlCommand> parse_control(std::string_view s) {
  if (s == "Start") return ControlCommand::Start;
  if (s == "Pause") return ControlCommand::Pause;
  if (s == "StepOnce") return ControlCommand::StepOnce;
  if (s == "Reset") return ControlCommand::Reset;
  return std::nullopt;
}

/// Partial update; unset fields keep their value. `preference` holds an
/// inner nullopt to clear the preference.
struct ConfigPatch {
  std::optional<std::optional<Preference>> preference;
  std::optional<Mechanism> mechanism;
  std::optional<Hyperparams> hyperparams;
  std::optional<double> speed;
  std::optional<std::uint64_t> seed;

  bool only_speed() const { return !preference && !mechanism && !hyperparams && !seed; }
};

/// Read-only view of a session for status responses.
struct SessionInfo {
  std::string id;
  GridConfig grid;
  std::optional<Preference> preference;
  MechanismConfig mechanism;
  Hyperparams hyperparams;
  RunState run_state = RunState::Configuring;
  double speed = 10.0;
  std::uint64_t seed = 0;
  int episode = 0;
  int step = 0;
  double accumulated = 0.0;
};

inline json hyperparams_json(const Hyperparams& h) {
  json j;
  j["alpha"] = h.alpha;
  j["gamma"] = h.gamma;
  j["epsilon_start"] = h.epsilon_start;
  j["epsilon_end"] = h.epsilon_end;
  j["epsilon_decay_episodes"] = h.epsilon_decay_episodes;
  j["episodes"] = h.episodes;
  j["max_steps_per_episode"] = h.max_steps_per_episode;
  return j;
}

/// Overlays the fields present in `j` on `base`.
inline Hyperparams hyperparams_from_json(const json& j, Hyperparams base) {
  if (!j.is_object()) throw ValidationError("hyperparams must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "alpha") base.alpha = value.get<double>();
    else if (key == "gamma") base.gamma = value.get<double>();
    else if (key == "epsilon_start") base.epsilon_start = value.get<double>();
    else if (key == "epsilon_end") base.epsilon_end = value.get<double>();
    else if (key == "epsilon_decay_episodes") base.epsilon_decay_episodes = value.get<int>();
    else if (key == "episodes") base.episodes = value.get<int>();
    else if (key == "max_steps_per_episode") base.max_steps_per_episode = value.get<int>();
    else throw ValidationError("unknown hyperparameter '" + key + "'");
  }
  return base;
}

inline json session_json(const SessionInfo& s) {
  json j;
  j["id"] = s.id;
  j["run_state"] = run_state_name(s.run_state);
  j["mechanism"] = mechanism_name(s.mechanism.id);
  j["preference"] = s.preference ? json(preference_id(*s.preference)) : json(nullptr);
  j["seed"] = s.seed;
  j["speed"] = s.speed;
  j["hyperparams"] = hyperparams_json(s.hyperparams);
  j["episode"] = s.episode;
  j["step"] = s.step;
  j["accumulated"] = s.accumulated;
  j["grid"] = to_grid_text(s.grid);
  return j;
}

/// Per-connection event queue.
class Subscription {
 public:
  /// Next event, or nothing on timeout. After the stream is closed and
  /// drained, `finished()` turns true.
  std::optional<std::pair<std::uint64_t, StreamEvent>> next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(m_);
    cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    auto ev = std::move(queue_.front());
    queue_.pop_front();
    return std::make_pair(seq_++, std::move(ev));
  }

  bool finished() const {
    std::lock_guard lock(m_);
    return closed_ && queue_.empty();
  }

  /// Drops the subscription from the publisher side on the next broadcast.
  void cancel() {
    std::lock_guard lock(m_);
    cancelled_ = true;
    closed_ = true;
    cv_.notify_all();
  }

 private:
  friend class Session;

  void push(StreamEvent ev) {
    std::lock_guard lock(m_);
    if (closed_) return;
    queue_.push_back(std::move(ev));
    cv_.notify_all();
  }
  void close() {
    std::lock_guard lock(m_);
    closed_ = true;
    cv_.notify_all();
  }
  bool cancelled() const {
    std::lock_guard lock(m_);
    return cancelled_;
  }

  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<StreamEvent> queue_;
  std::uint64_t seq_ = 0;
  bool closed_ = false;
  bool cancelled_ = false;
};

/// One configurable learning run with its own command loop thread. All
/// mutations go through the command queue and are applied in order by that
/// thread; readers take a snapshot under the lock.
class Session {
 public:
  Session(std::string id, GridConfig grid, std::uint64_t seed) : info_{} {
    info_.id = std::move(id);
    info_.grid = std::move(grid);
    info_.seed = seed;
    info_.mechanism = mechanism_config(Mechanism::L2);
    info_.hyperparams = default_hyperparams();
    reset_run_locked();
    loop_ = std::thread([this] { run_loop(); });
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  ~Session() {
    {
      std::lock_guard lock(m_);
      stopping_ = true;
      for (auto& c : commands_) {
        c.done.set_exception(std::make_exception_ptr(ConflictError("session shutting down")));
      }
      commands_.clear();
      close_subscribers_locked();
    }
    cv_.notify_all();
    if (loop_.joinable()) loop_.join();
  }

  const std::string& id() const { return info_.id; }

  SessionInfo info() const {
    std::lock_guard lock(m_);
    return info_;
  }

  void configure(ConfigPatch patch) { submit(Command{std::move(patch), {}}).get(); }
  void control(ControlCommand cmd) { submit(Command{cmd, {}}).get(); }

  /// Registers a subscriber. Its stream opens with a QSnapshot of the current
  /// state; a finished session also gets RunEnd and the stream closes.
  std::shared_ptr<Subscription> subscribe() {
    auto sub = std::make_shared<Subscription>();
    std::lock_guard lock(m_);
    sub->push(snapshot_event_locked());
    if (info_.run_state == RunState::Finished) {
      sub->push(run_end_event_locked());
      sub->close();
      return sub;
    }
    subscribers_.push_back(sub);
    return sub;
  }

 private:
  struct Command {
    std::variant<ConfigPatch, ControlCommand> body;
    std::promise<void> done;
  };

  std::future<void> submit(Command cmd) {
    auto fut = cmd.done.get_future();
    {
      std::lock_guard lock(m_);
      if (stopping_) throw ConflictError("session shutting down");
      commands_.push_back(std::move(cmd));
    }
    cv_.notify_all();
    return fut;
  }

  void run_loop() {
    using clock = std::chrono::steady_clock;
    auto next_step = clock::now();
    std::unique_lock lock(m_);
    while (!stopping_) {
      if (info_.run_state == RunState::Running) {
        cv_.wait_until(lock, next_step, [&] { return stopping_ || !commands_.empty(); });
      } else {
        cv_.wait(lock, [&] { return stopping_ || !commands_.empty(); });
      }
      if (stopping_) break;

      while (!commands_.empty()) {
        Command cmd = std::move(commands_.front());
        commands_.pop_front();
        const bool was_running = info_.run_state == RunState::Running;
        try {
          std::visit([&](auto& body) { apply_locked(body); }, cmd.body);
          cmd.done.set_value();
        } catch (...) {
          cmd.done.set_exception(std::current_exception());
        }
        if (!was_running && info_.run_state == RunState::Running) next_step = clock::now();
      }

      if (info_.run_state == RunState::Running && clock::now() >= next_step) {
        advance_locked();
        next_step += std::chrono::duration_cast<clock::duration>(
            std::chrono::duration<double>(1.0 / info_.speed));
        // Do not try to catch up after a long stall.
        if (next_step < clock::now()) next_step = clock::now();
      }
    }
  }

  void apply_locked(const ConfigPatch& patch) {
    const RunState st = info_.run_state;
    if (st == RunState::Paused && !patch.only_speed()) {
      throw ConflictError("only speed can change while Paused");
    }
    if (st != RunState::Configuring && st != RunState::Paused) {
      throw ConflictError("cannot configure while " + std::string(run_state_name(st)));
    }
    if (patch.speed && !(*patch.speed > 0.0)) throw ValidationError("speed must be > 0");

    auto pref = patch.preference ? *patch.preference : info_.preference;
    auto mech = patch.mechanism ? mechanism_config(*patch.mechanism) : info_.mechanism;
    if (mech.shield_enabled && !pref) {
      throw ValidationError(std::string(mechanism_name(mech.id)) + " requires a preference");
    }
    if (patch.hyperparams) validate(*patch.hyperparams);

    info_.preference = pref;
    info_.mechanism = mech;
    if (patch.hyperparams) info_.hyperparams = *patch.hyperparams;
    if (patch.speed) info_.speed = *patch.speed;
    if (patch.seed) info_.seed = *patch.seed;
    if (st == RunState::Configuring) reset_run_locked();
  }

  void apply_locked(ControlCommand cmd) {
    const RunState st = info_.run_state;
    auto conflict = [&](std::string_view what) {
      throw ConflictError("cannot " + std::string(what) + " while " +
                          std::string(run_state_name(st)));
    };
    switch (cmd) {
      case ControlCommand::Start:
        if (st != RunState::Configuring && st != RunState::Paused) conflict("Start");
        info_.run_state = RunState::Running;
        break;
      case ControlCommand::Pause:
        if (st != RunState::Running) conflict("Pause");
        info_.run_state = RunState::Paused;
        break;
      case ControlCommand::StepOnce:
        if (st != RunState::Paused) conflict("StepOnce");
        advance_locked();
        break;
      case ControlCommand::Reset:
        info_.run_state = RunState::Configuring;
        reset_run_locked();
        close_subscribers_locked();
        break;
    }
  }

  void reset_run_locked() {
    q_ = QTable(info_.grid);
    rng_.reseed(info_.seed);
    cursor_ = begin_episode(info_.grid, 0);
    info_.episode = 0;
    info_.step = 0;
    info_.accumulated = 0.0;
  }

  /// One environment step plus its events. Ends the episode and the run
  /// when due.
  void advance_locked() {
    const StepRecord rec =
        take_step(info_.grid, q_, info_.mechanism, info_.preference, info_.hyperparams, cursor_, rng_);
    info_.step = cursor_.step;

    json step_payload = step_json(rec);
    step_payload.erase("explanation");
    broadcast_locked({EventKind::Step, rec.episode, rec.step, std::move(step_payload)});
    if (rec.explanation) {
      const auto& ex = *rec.explanation;
      json p;
      p["kind"] = explanation_kind_name(ex.kind);
      p["chosen"] = action_name(ex.chosen);
      p["rejected"] = ex.rejected ? json(action_name(*ex.rejected)) : json(nullptr);
      p["preference"] = ex.preference ? json(preference_id(*ex.preference)) : json(nullptr);
      p["text"] = ex.text;
      broadcast_locked({EventKind::Explanation, ex.episode, ex.step, std::move(p)});
    }

    if (!cursor_.done) return;
    info_.accumulated += cursor_.episode_return;
    json end;
    end["episode"] = cursor_.episode;
    end["return"] = cursor_.episode_return;
    end["length"] = cursor_.step;
    end["accumulated"] = info_.accumulated;
    broadcast_locked({EventKind::EpisodeEnd, rec.episode, rec.step, std::move(end)});

    const int next_episode = cursor_.episode + 1;
    if (next_episode >= info_.hyperparams.episodes) {
      info_.run_state = RunState::Finished;
      broadcast_locked(snapshot_event_locked());
      broadcast_locked(run_end_event_locked());
      close_subscribers_locked();
      return;
    }
    cursor_ = begin_episode(info_.grid, next_episode);
    info_.episode = next_episode;
    info_.step = 0;
    broadcast_locked(snapshot_event_locked());
  }

  StreamEvent snapshot_event_locked() const {
    json cells = json::array();
    for (const auto& [cell, action] : greedy_policy(q_, info_.grid)) {
      json c;
      c["row"] = cell.row;
      c["col"] = cell.col;
      c["greedy"] = action_name(action);
      c["max_q"] = q_.max_value(cell);
      cells.push_back(std::move(c));
    }
    json p;
    p["run_state"] = run_state_name(info_.run_state);
    p["cells"] = std::move(cells);
    return {EventKind::QSnapshot, info_.episode, info_.step, std::move(p)};
  }

  StreamEvent run_end_event_locked() const {
    json p;
    p["episodes"] = info_.hyperparams.episodes;
    p["accumulated"] = info_.accumulated;
    return {EventKind::RunEnd, info_.episode, info_.step, std::move(p)};
  }

  void broadcast_locked(const StreamEvent& ev) {
    std::erase_if(subscribers_, [](const std::weak_ptr<Subscription>& w) {
      auto s = w.lock();
      return !s || s->cancelled();
    });
    for (auto& w : subscribers_) {
      if (auto s = w.lock()) s->push(ev);
    }
  }

  void close_subscribers_locked() {
    for (auto& w : subscribers_) {
      if (auto s = w.lock()) s->close();
    }
    subscribers_.clear();
  }

  mutable std::mutex m_;
  std::condition_variable cv_;
  SessionInfo info_;
  QTable q_;
  RngStream rng_;
  EpisodeCursor cursor_;
  std::deque<Command> commands_;
  std::vector<std::weak_ptr<Subscription>> subscribers_;
  bool stopping_ = false;
  std::thread loop_;
};

/// Owns all sessions; ids are issued sequentially.
class SessionManager {
 public:
  std::shared_ptr<Session> create(const GridConfig& grid, std::uint64_t seed) {
    validate(grid);
    std::lock_guard lock(m_);
    auto id = "s" + std::to_string(++counter_);
    auto session = std::make_shared<Session>(id, grid, seed);
    sessions_.emplace(id, session);
    return session;
  }

  std::shared_ptr<Session> create(std::string_view grid_text, std::uint64_t seed) {
    return create(parse_grid(grid_text), seed);
  }

  std::shared_ptr<Session> get(const std::string& id) const {
    std::lock_guard lock(m_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
    return it->second;
  }

  std::size_t size() const {
    std::lock_guard lock(m_);
    return sessions_.size();
  }

 private:
  mutable std::mutex m_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace prefshield::service
