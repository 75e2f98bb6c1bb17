#include "gbp/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "gbp/json_io.hpp"
#include "gbp/plotting.hpp"
#include "gbp/sim_env.hpp"
#include "json.hpp"

namespace gbp {

namespace {

using nlohmann::json;

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text, const char* what) {
  std::ofstream out(path);
  if (!out) throw PlanningError(std::string("cannot write ") + what + " file " + path);
  out << text;
  if (!out) throw PlanningError(std::string("failed writing ") + what + " file " + path);
}

void emit(const std::string& out_path, const std::string& text, const char* what) {
  if (out_path.empty())
    std::cout << text;
  else
    write_file(out_path, text, what);
}

PlannerMode parse_mode(const std::string& name) {
  auto mode = planner_mode_from_string(name);
  if (!mode) throw ConfigError("unknown mode '" + name + "' (expected eudm, edm or mpdm)");
  return *mode;
}

// Planner config resolution order: file via --config (else defaults), then
// the individual flag overrides.
PlannerConfig planner_from_common(const CommonArgs& common) {
  PlannerConfig cfg;
  if (!common.config_path.empty()) cfg = load_planner_config_file(common.config_path);
  if (!common.mode.empty()) cfg.mode = parse_mode(common.mode);
  if (common.seed_set) cfg.seed = common.seed;
  cfg.validate();
  return cfg;
}

WorldState world_from_frame(const LogFrame& frame, const LaneMapPtr& map, int ego_id,
                            const LogHeader& header, const PlannerConfig& cfg) {
  WorldState world;
  world.time = frame.timestamp;
  world.map = map;
  world.ego_id = ego_id;
  for (const ObservedVehicle& v : frame.vehicles) {
    Vehicle vehicle;
    vehicle.params.id = v.id;
    auto dims = header.dimensions.find(v.id);
    if (dims != header.dimensions.end()) {
      vehicle.params.length = dims->second.length;
      vehicle.params.width = dims->second.width;
      vehicle.params.wheelbase = dims->second.wheelbase;
    }
    // Observed vehicles are assumed to want the speed they are driving; the
    // ego's target comes from the planner config.
    vehicle.params.desired_velocity =
        v.id == ego_id ? cfg.sim.idm.desired_velocity : v.velocity;
    vehicle.state.position = {v.x, v.y};
    vehicle.state.heading = v.heading;
    vehicle.state.velocity = v.velocity;
    vehicle.state.acceleration = v.acceleration.value_or(0.0);
    vehicle.state.curvature = v.curvature.value_or(0.0);
    vehicle.state.steering_angle =
        std::atan(vehicle.state.curvature * vehicle.params.wheelbase);
    world.vehicles.push_back(std::move(vehicle));
  }
  world.sort_vehicles();
  return world;
}

LaneMapPtr map_for_log(const EpisodeLog& log, const std::string& map_path) {
  if (!map_path.empty()) return std::make_shared<LaneMap>(load_map_file(map_path));
  if (log.header.map_json)
    return std::make_shared<LaneMap>(map_from_json(*log.header.map_json));
  throw ConfigError("log has no embedded map; pass --map");
}

}  // namespace

int cmd_plan(const PlanArgs& args) {
  Scene scene = load_scene_file(args.scene_path);
  if (!args.common.map_path.empty())
    scene.world.map = std::make_shared<LaneMap>(load_map_file(args.common.map_path));
  PlannerConfig cfg = planner_from_common(args.common);
  PlanContext ctx;
  ctx.cycle_seed = cfg.seed;
  ctx.corridors = make_plan_corridors(scene.world, cfg);
  PlanResult result = plan_once(scene.world, scene.beliefs, scene.ongoing, cfg, ctx);
  emit(args.common.out_path, plan_result_to_json(result) + "\n", "plan result");
  return kExitOk;
}

int cmd_sim(const SimArgs& args) {
  bool builtin = args.scenario_path == "ring" || args.scenario_path == "double_merge";
  std::uint64_t seed = args.common.seed_set ? args.common.seed : 1;
  ScenarioConfig scenario;
  if (builtin) {
    PlannerMode mode =
        args.common.mode.empty() ? PlannerMode::kEudm : parse_mode(args.common.mode);
    scenario = args.scenario_path == "ring"
                   ? (args.agent_count > 0 ? make_ring_scenario(seed, mode, args.agent_count)
                                           : make_ring_scenario(seed, mode))
                   : (args.agent_count > 0
                          ? make_double_merge_scenario(seed, mode, args.agent_count)
                          : make_double_merge_scenario(seed, mode));
  } else {
    if (args.agent_count > 0)
      throw ConfigError("--agents applies only to the built-in scenarios");
    scenario = load_scenario_config_file(args.scenario_path);
  }
  if (!args.common.config_path.empty())
    scenario.planner = load_planner_config_file(args.common.config_path);
  if (!args.common.mode.empty()) scenario.planner.mode = parse_mode(args.common.mode);
  if (args.common.seed_set) {
    scenario.seed = seed;
    scenario.planner.seed = seed;
  }
  if (args.duration > 0.0) scenario.duration = args.duration;
  if (!args.common.map_path.empty()) {
    std::string text = read_file(args.common.map_path, "map");
    map_from_json(text);
    scenario.map_json = text;
  }
  scenario.planner.validate();

  std::ofstream trace_out;
  std::optional<TraceWriter> writer;
  if (!args.trace_path.empty()) {
    trace_out.open(args.trace_path);
    if (!trace_out) throw PlanningError("cannot write trace file " + args.trace_path);
    writer.emplace(trace_out);
  }
  // An emergency stop that persists this long means no policy has been
  // feasible for the whole window; treat the episode as aborted.
  const int abort_after =
      std::max(1, static_cast<int>(std::llround(2.0 / scenario.planner.replan_dt)));
  int consecutive_emergency = 0;
  CycleSink sink = [&](const PlanResult* result, const ReplanRecord& record,
                       const BeliefMap& beliefs, const WorldState& world) {
    if (writer) writer->write_cycle(result, record, beliefs, world);
    consecutive_emergency = record.emergency ? consecutive_emergency + 1 : 0;
    if (consecutive_emergency >= abort_after)
      throw NoFeasiblePolicy("no feasible policy for " +
                             std::to_string(consecutive_emergency) +
                             " consecutive cycles; episode aborted");
  };

  EpisodeResult episode = run_episode(scenario, sink);
  if (!args.common.out_path.empty())
    write_episode_log(episode.log, args.common.out_path);

  const BenchmarkMetrics& m = episode.metrics;
  std::ostringstream summary;
  summary << "scenario=" << scenario.name << " mode=" << to_string(scenario.planner.mode)
          << " seed=" << scenario.seed << " duration_s=" << scenario.duration
          << " distance_km=" << m.distance_km << " safety=" << m.safety_fraction
          << " avg_vel=" << m.avg_velocity << " ud_per_km=" << m.ud_per_km
          << " lcc_per_km=" << m.lcc_per_km << " collisions=" << m.collisions
          << " emergency_cycles=" << m.emergency_cycles << "\n";
  std::cout << summary.str();
  return kExitOk;
}

int cmd_bench(const BenchArgs& args) {
  std::vector<BenchmarkRow> rows;
  bool ran_suite = args.from_csv.empty();
  if (ran_suite) {
    BenchmarkOptions options;
    options.episodes = args.episodes;
    if (options.episodes < 1) throw ConfigError("--episodes must be at least 1");
    if (args.duration > 0.0) options.duration = args.duration;
    if (args.agent_count > 0) options.agent_count = args.agent_count;
    options.threads = args.threads;
    if (!args.maps.empty()) {
      for (const std::string& m : args.maps)
        if (m != "ring" && m != "double_merge")
          throw ConfigError("unknown benchmark map '" + m + "'");
      options.maps = args.maps;
    }
    if (!args.modes.empty()) {
      options.modes.clear();
      for (const std::string& m : args.modes) options.modes.push_back(parse_mode(m));
    }
    if (args.common.seed_set) options.seed = args.common.seed;
    rows = run_benchmark(options);
    emit(args.common.out_path, benchmark_csv(rows), "benchmark csv");
  } else {
    rows = benchmark_rows_from_csv(read_file(args.from_csv, "benchmark csv"));
  }
  std::string summary = benchmark_markdown(rows);
  if (!args.markdown_path.empty()) write_file(args.markdown_path, summary, "summary");
  if (!ran_suite || !args.common.out_path.empty()) std::cout << summary;
  return kExitOk;
}

int cmd_replay(const ReplayArgs& args) {
  EpisodeLog log = load_log_file(args.log_path);
  LaneMapPtr map = map_for_log(log, args.common.map_path);
  int ego_id = args.ego_id_set ? args.ego_id : log.header.ego_id.value_or(0);
  PlannerConfig cfg = planner_from_common(args.common);

  BeliefTracker tracker;
  PlanContext ctx;
  SemanticAction ongoing{LateralAction::kLaneKeep, LongitudinalAction::kMaintain,
                         cfg.node_duration};
  json decisions = json::array();
  int switches = 0, risky_frames = 0, failed_frames = 0;
  std::string prev_signature;
  double total_latency = 0.0, max_latency = 0.0;
  double prev_t = 0.0;
  bool first = true;

  for (const LogFrame& frame : log.frames) {
    WorldState world = world_from_frame(frame, map, ego_id, log.header, cfg);
    if (!world.find(ego_id))
      throw PlanningError("frame at t=" + std::to_string(frame.timestamp) +
                          " has no vehicle with the ego id " + std::to_string(ego_id));
    if (first) ctx.corridors = make_plan_corridors(world, cfg);
    double dt = first ? cfg.replan_dt : frame.timestamp - prev_t;
    tracker.update(world, dt, cfg.sim, ctx.corridors.get());
    ctx.cycle_seed = cfg.seed + 0x9e3779b97f4a7c15ULL *
                                    static_cast<std::uint64_t>(decisions.size() + 1);

    json entry{{"timestamp", frame.timestamp}};
    auto start = std::chrono::steady_clock::now();
    try {
      PlanResult result = plan_once(world, tracker.beliefs(), ongoing, cfg, ctx);
      double latency =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
              .count();
      total_latency += latency;
      max_latency = std::max(max_latency, latency);

      int risky = 0, cfb_branched = 0;
      const PolicyEvaluation& best = result.evaluations[result.best_index];
      for (const ScenarioOutcome& outcome : best.outcomes) {
        risky += outcome.risky ? 1 : 0;
        cfb_branched += outcome.scenario.origin == ScenarioOrigin::kCfbBranched ? 1 : 0;
      }
      std::string signature = result.best.signature();
      bool switched = !first && signature != prev_signature;
      switches += switched ? 1 : 0;
      risky_frames += risky > 0 ? 1 : 0;
      entry["selected"] = signature;
      entry["reward"] = best.weighted_reward;
      entry["risky_scenarios"] = risky;
      entry["cfb_scenarios"] = cfb_branched;
      entry["latency_ms"] = latency;
      entry["switched"] = switched;
      prev_signature = std::move(signature);
      ongoing = result.next_ongoing;
      ctx.last_best = result.best;
      if (result.next_ongoing_target != kNoLane)
        ctx.ongoing_target = result.next_ongoing_target;
      else
        ctx.ongoing_target.reset();
    } catch (const NoFeasiblePolicy&) {
      double latency =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
              .count();
      total_latency += latency;
      max_latency = std::max(max_latency, latency);
      ++failed_frames;
      bool switched = !first && prev_signature != "EMERGENCY";
      switches += switched ? 1 : 0;
      entry["selected"] = "EMERGENCY";
      entry["latency_ms"] = latency;
      entry["switched"] = switched;
      prev_signature = "EMERGENCY";
      ongoing = SemanticAction{LateralAction::kLaneKeep, LongitudinalAction::kDecelerate,
                               cfg.node_duration};
      ctx.last_best.reset();
      ctx.ongoing_target.reset();
    }
    decisions.push_back(std::move(entry));
    prev_t = frame.timestamp;
    first = false;
  }

  std::size_t n = log.frames.size();
  json report{{"log", args.log_path},
              {"frames", n},
              {"ego_id", ego_id},
              {"mode", to_string(cfg.mode)},
              {"decision_switches", switches},
              {"risky_frames", risky_frames},
              {"failed_frames", failed_frames},
              {"mean_latency_ms", n > 0 ? total_latency / static_cast<double>(n) : 0.0},
              {"max_latency_ms", max_latency},
              {"decisions", std::move(decisions)}};
  emit(args.common.out_path, report.dump(2) + "\n", "replay report");
  return kExitOk;
}

int cmd_plot(const PlotArgs& args) {
  if (args.keyframes < 1) throw ConfigError("--keyframes must be at least 1");
  EpisodeLog log = load_log_file(args.log_path);
  LaneMapPtr map = map_for_log(log, args.common.map_path);
  std::string prefix = args.common.out_path;
  if (prefix.empty()) {
    std::filesystem::path p(args.log_path);
    p.replace_extension();
    prefix = p.string();
  }
  PlotOptions options;
  options.keyframes = args.keyframes;
  std::vector<std::string> paths = write_episode_plots(log, *map, prefix, options);
  for (const std::string& p : paths) std::cout << p << "\n";
  return kExitOk;
}

}  // namespace gbp
