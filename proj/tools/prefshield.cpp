// prefshield: headless runs, seed sweeps, transparency scoring and the
// session service.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prefshield/experiment.hpp"
#include "prefshield/http_server.hpp"

namespace fs = std::filesystem;
using namespace prefshield;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, sep);) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::optional<Preference> preference_arg(const std::string& s) {
  if (s == "none") return std::nullopt;
  auto p = parse_preference(s);
  if (!p) throw ValidationError("unknown preference '" + s + "'");
  return p;
}

Mechanism mechanism_arg(const std::string& s) {
  auto m = parse_mechanism(s);
  if (!m) throw ValidationError("unknown mechanism '" + s + "'");
  return *m;
}

/// "0..19" (inclusive) or "0,3,7".
std::vector<std::uint64_t> seeds_arg(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  try {
    if (auto dots = s.find(".."); dots != std::string::npos) {
      const auto lo = std::stoull(s.substr(0, dots));
      const auto hi = std::stoull(s.substr(dots + 2));
      if (hi < lo) throw ValidationError("empty seed range '" + s + "'");
      for (auto v = lo; v <= hi; ++v) seeds.push_back(v);
    } else {
      for (const auto& tok : split(s, ',')) seeds.push_back(std::stoull(tok));
    }
  } catch (const std::logic_error&) {
    throw ValidationError("bad seed list '" + s + "'");
  }
  if (seeds.empty()) throw ValidationError("no seeds given");
  return seeds;
}

struct RunArgs {
  std::string grid;
  std::string mechanism;
  std::string preference = "none";
  std::uint64_t seed = 0;
  Hyperparams h = default_hyperparams();
  int eps_decay = 0;
  std::string out_trace, out_csv, explain_log;
};

int cmd_run(const RunArgs& a) {
  const GridConfig grid = parse_grid(read_file(a.grid));
  const auto mech = mechanism_config(mechanism_arg(a.mechanism));
  const auto pref = preference_arg(a.preference);
  Hyperparams h = a.h;
  h.epsilon_decay_episodes = a.eps_decay > 0 ? a.eps_decay : std::max(1, h.episodes * 6 / 10);
  validate(h);
  if (mech.shield_enabled && !pref) {
    throw ValidationError(std::string(mechanism_name(mech.id)) + " requires a preference");
  }

  const TrainingRun run = train(grid, mech, pref, h, a.seed);

  RewardCurve curve{curve_label(mech.id, mech.shield_enabled ? pref : std::nullopt),
                    episode_returns(run), {}, {a.seed}};
  curve.accumulated = prefix_sums(curve.per_episode_return);

  if (!a.out_trace.empty()) {
    auto out = open_out(a.out_trace);
    write_trace(out, run.episodes);
    if (!out.flush()) throw IoError("write failed for " + a.out_trace);
  }
  if (!a.out_csv.empty()) export_csv({curve}, a.out_csv);
  if (!a.explain_log.empty()) {
    auto out = open_out(a.explain_log);
    write_explain_log(out, run.episodes);
    if (!out.flush()) throw IoError("write failed for " + a.explain_log);
  }

  const auto rollout = greedy_rollout(grid, run.q, mech, pref, static_cast<int>(grid.num_cells()) * 4);
  std::cout << "label " << curve.label << '\n'
            << "accumulated " << format_double(curve.accumulated.back()) << '\n'
            << "greedy_length " << (rollout ? std::to_string(*rollout) : "unreached") << '\n'
            << "digest " << trace_digest(run.episodes) << '\n';
  return 0;
}

struct SweepArgs {
  std::string grid;
  std::string mechanisms = "L1,L2,L3,L4";
  std::string preferences = "north,clockwise,anticlockwise,south";
  std::string seeds = "0..19";
  int episodes = 300;
  std::string out_dir;
};

int cmd_sweep(const SweepArgs& a) {
  const GridConfig grid = parse_grid(read_file(a.grid));
  std::vector<Mechanism> mechs;
  for (const auto& m : split(a.mechanisms, ',')) mechs.push_back(mechanism_arg(m));
  std::vector<std::optional<Preference>> prefs;
  for (const auto& p : split(a.preferences, ',')) prefs.push_back(preference_arg(p));
  const Hyperparams h = default_hyperparams(a.episodes);
  validate(h);

  const auto curves = run_experiment(grid, mechs, prefs, seeds_arg(a.seeds), h);
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw IoError("cannot create " + a.out_dir + ": " + ec.message());
  const auto path = (fs::path(a.out_dir) / "curves.csv").string();
  export_csv(curves, path);
  for (const auto& c : curves) {
    std::cout << c.label << ' ' << format_double(c.accumulated.back()) << '\n';
  }
  std::cout << "wrote " << path << '\n';
  return 0;
}

int cmd_score(double l, double p, double e) {
  std::cout << std::setprecision(12) << transparency_score({l, p, e}) << '\n';
  return 0;
}

service::HttpServer* g_server = nullptr;

int cmd_serve(const std::string& host, int port, const std::string& grid_dir) {
  service::HttpServer server(grid_dir);
  const int bound = server.bind(host, port);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "listening on " << host << ':' << bound << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-shielded Q-learning on gridworlds"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "train one configuration and write its trace");
  run_cmd->add_option("--grid", run.grid, "grid file")->required();
  run_cmd->add_option("--mechanism", run.mechanism, "L1|L2|L3|L4")->required();
  run_cmd->add_option("--preference", run.preference,
                      "clockwise|anticlockwise|north|south|none");
  run_cmd->add_option("--seed", run.seed);
  run_cmd->add_option("--episodes", run.h.episodes);
  run_cmd->add_option("--alpha", run.h.alpha);
  run_cmd->add_option("--gamma", run.h.gamma);
  run_cmd->add_option("--eps-start", run.h.epsilon_start);
  run_cmd->add_option("--eps-end", run.h.epsilon_end);
  run_cmd->add_option("--eps-decay", run.eps_decay, "decay episodes (default 60% of episodes)");
  run_cmd->add_option("--max-steps", run.h.max_steps_per_episode);
  run_cmd->add_option("--out-trace", run.out_trace, "JSON-lines step trace");
  run_cmd->add_option("--out-csv", run.out_csv, "reward curve CSV");
  run_cmd->add_option("--explain-log", run.explain_log, "explanation log");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "mean reward curves over seeds");
  sweep_cmd->add_option("--grid", sweep.grid)->required();
  sweep_cmd->add_option("--mechanisms", sweep.mechanisms);
  sweep_cmd->add_option("--preferences", sweep.preferences);
  sweep_cmd->add_option("--seeds", sweep.seeds, "e.g. 0..19 or 1,2,5");
  sweep_cmd->add_option("--episodes", sweep.episodes);
  sweep_cmd->add_option("--out-dir", sweep.out_dir)->required();

  double legibility = 0, predictability = 0, expectability = 0;
  auto* score_cmd = app.add_subcommand("score", "weighted transparency score");
  score_cmd->add_option("--legibility", legibility)->required();
  score_cmd->add_option("--predictability", predictability)->required();
  score_cmd->add_option("--expectability", expectability)->required();

  int port = 8080;
  std::string host = "0.0.0.0";
  std::string grid_dir;
  auto* serve_cmd = app.add_subcommand("serve", "start the session service");
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--grid-dir", grid_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*sweep_cmd) return cmd_sweep(sweep);
    if (*score_cmd) return cmd_score(legibility, predictability, expectability);
    if (*serve_cmd) return cmd_serve(host, port, grid_dir);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
