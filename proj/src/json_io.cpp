#include "gbp/json_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

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

std::string dir_of(const std::string& path) {
  return std::filesystem::path(path).parent_path().string();
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

[[noreturn]] void unknown_key(const std::string& scope, const std::string& key) {
  std::string where = scope.empty() ? key : scope + "." + key;
  throw ConfigError("unknown config key '" + where + "'");
}

json parse_document(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " parse failure: " + e.what());
  }
}

double as_double(const json& v, const std::string& scope, const std::string& key) {
  if (!v.is_number()) throw ConfigError("'" + scope + "." + key + "' must be a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& scope, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("'" + scope + "." + key + "' must be an integer");
  return v.get<int>();
}

bool as_bool(const json& v, const std::string& scope, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("'" + scope + "." + key + "' must be a boolean");
  return v.get<bool>();
}

std::uint64_t as_seed(const json& v, const std::string& scope, const std::string& key) {
  if (!v.is_number_unsigned() && !v.is_number_integer())
    throw ConfigError("'" + scope + "." + key + "' must be a nonnegative integer");
  if (v.is_number_integer() && v.get<std::int64_t>() < 0)
    throw ConfigError("'" + scope + "." + key + "' must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

std::string as_string(const json& v, const std::string& scope, const std::string& key) {
  if (!v.is_string()) throw ConfigError("'" + scope + "." + key + "' must be a string");
  return v.get<std::string>();
}

LateralAction lateral_from_string(const std::string& s, const std::string& scope) {
  if (s == "LK" || s == "LaneKeep") return LateralAction::kLaneKeep;
  if (s == "LCL" || s == "LaneChangeLeft") return LateralAction::kLaneChangeLeft;
  if (s == "LCR" || s == "LaneChangeRight") return LateralAction::kLaneChangeRight;
  throw ConfigError("'" + scope + "' has unknown lateral action '" + s + "'");
}

LongitudinalAction longitudinal_from_string(const std::string& s, const std::string& scope) {
  if (s == "Accelerate") return LongitudinalAction::kAccelerate;
  if (s == "MaintainSpeed" || s == "Maintain") return LongitudinalAction::kMaintain;
  if (s == "Decelerate") return LongitudinalAction::kDecelerate;
  throw ConfigError("'" + scope + "' has unknown longitudinal action '" + s + "'");
}

void read_idm(const json& j, const std::string& scope, IdmParams& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "desired_velocity") p.desired_velocity = as_double(value, scope, key);
    else if (key == "safe_time_headway") p.safe_time_headway = as_double(value, scope, key);
    else if (key == "max_accel") p.max_accel = as_double(value, scope, key);
    else if (key == "comfortable_decel") p.comfortable_decel = as_double(value, scope, key);
    else if (key == "min_spacing") p.min_spacing = as_double(value, scope, key);
    else if (key == "accel_exponent") p.accel_exponent = as_double(value, scope, key);
    else if (key == "hard_brake_cap") p.hard_brake_cap = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
}

void read_pursuit(const json& j, const std::string& scope, PurePursuitParams& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "lookahead_base") p.lookahead_base = as_double(value, scope, key);
    else if (key == "lookahead_gain") p.lookahead_gain = as_double(value, scope, key);
    else if (key == "wheelbase") p.wheelbase = as_double(value, scope, key);
    else if (key == "max_steer") p.max_steer = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
}

void read_rss(const json& j, const std::string& scope, RssParams& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "response_time") p.response_time = as_double(value, scope, key);
    else if (key == "max_accel_during_response")
      p.max_accel_during_response = as_double(value, scope, key);
    else if (key == "min_brake") p.min_brake = as_double(value, scope, key);
    else if (key == "max_brake") p.max_brake = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
}

void read_noise(const json& j, const std::string& scope, NoiseParams& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "accel_stddev") p.accel_stddev = as_double(value, scope, key);
    else if (key == "steer_stddev") p.steer_stddev = as_double(value, scope, key);
    else if (key == "seed") p.seed = as_seed(value, scope, key);
    else unknown_key(scope, key);
  }
}

void read_sim(const json& j, const std::string& scope, SimulationParams& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "idm") read_idm(value, scope + ".idm", p.idm);
    else if (key == "pursuit") read_pursuit(value, scope + ".pursuit", p.pursuit);
    else if (key == "rss") read_rss(value, scope + ".rss", p.rss);
    else if (key == "noise") read_noise(value, scope + ".noise", p.noise);
    else if (key == "substeps") p.substeps = as_int(value, scope, key);
    else if (key == "max_steer_rate") p.max_steer_rate = as_double(value, scope, key);
    else if (key == "lateral_overlap") p.lateral_overlap = as_double(value, scope, key);
    else if (key == "accel_speed_offset") p.accel_speed_offset = as_double(value, scope, key);
    else if (key == "decel_speed_offset") p.decel_speed_offset = as_double(value, scope, key);
    else if (key == "speed_limit_tolerance")
      p.speed_limit_tolerance = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
}

void read_cfb(const json& j, const std::string& scope, CfbConfig& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "lookahead_time") p.lookahead_time = as_double(value, scope, key);
    else if (key == "lookback_time") p.lookback_time = as_double(value, scope, key);
    else if (key == "forward_floor") p.forward_floor = as_double(value, scope, key);
    else if (key == "backward_floor") p.backward_floor = as_double(value, scope, key);
    else if (key == "uncertainty_threshold")
      p.uncertainty_threshold = as_double(value, scope, key);
    else if (key == "max_enumerated_vehicles")
      p.max_enumerated_vehicles = as_int(value, scope, key);
    else if (key == "combination_cap") p.combination_cap = as_int(value, scope, key);
    else if (key == "top_k") p.top_k = as_int(value, scope, key);
    else unknown_key(scope, key);
  }
}

void read_rewards(const json& j, const std::string& scope, RewardWeights& p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "efficiency") p.efficiency = as_double(value, scope, key);
    else if (key == "safety") p.safety = as_double(value, scope, key);
    else if (key == "consistency") p.consistency = as_double(value, scope, key);
    else if (key == "risky_penalty") p.risky_penalty = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
}

void read_planner(const json& j, const std::string& scope, PlannerConfig& cfg) {
  if (!j.is_object()) throw ConfigError("planner config must be a json object");
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") {
      std::string name = as_string(value, scope, key);
      auto mode = planner_mode_from_string(name);
      if (!mode) throw ConfigError("unknown planner mode '" + name + "'");
      cfg.mode = *mode;
    } else if (key == "horizon") cfg.horizon = as_double(value, scope, key);
    else if (key == "node_duration") cfg.node_duration = as_double(value, scope, key);
    else if (key == "sim_resolution") cfg.sim_resolution = as_double(value, scope, key);
    else if (key == "replan_dt") cfg.replan_dt = as_double(value, scope, key);
    else if (key == "parallel") cfg.parallel = as_bool(value, scope, key);
    else if (key == "seed") cfg.seed = as_seed(value, scope, key);
    else if (key == "rewards")
      read_rewards(value, scope.empty() ? "rewards" : scope + ".rewards", cfg.rewards);
    else if (key == "cfb") read_cfb(value, scope.empty() ? "cfb" : scope + ".cfb", cfg.cfb);
    else if (key == "sim") read_sim(value, scope.empty() ? "sim" : scope + ".sim", cfg.sim);
    else unknown_key(scope, key);
  }
}

json idm_to_json(const IdmParams& p) {
  return json{{"desired_velocity", p.desired_velocity},
              {"safe_time_headway", p.safe_time_headway},
              {"max_accel", p.max_accel},
              {"comfortable_decel", p.comfortable_decel},
              {"min_spacing", p.min_spacing},
              {"accel_exponent", p.accel_exponent},
              {"hard_brake_cap", p.hard_brake_cap}};
}

json planner_to_json_object(const PlannerConfig& cfg) {
  return json{
      {"mode", to_string(cfg.mode)},
      {"horizon", cfg.horizon},
      {"node_duration", cfg.node_duration},
      {"sim_resolution", cfg.sim_resolution},
      {"replan_dt", cfg.replan_dt},
      {"parallel", cfg.parallel},
      {"seed", cfg.seed},
      {"rewards",
       {{"efficiency", cfg.rewards.efficiency},
        {"safety", cfg.rewards.safety},
        {"consistency", cfg.rewards.consistency},
        {"risky_penalty", cfg.rewards.risky_penalty}}},
      {"cfb",
       {{"lookahead_time", cfg.cfb.lookahead_time},
        {"lookback_time", cfg.cfb.lookback_time},
        {"forward_floor", cfg.cfb.forward_floor},
        {"backward_floor", cfg.cfb.backward_floor},
        {"uncertainty_threshold", cfg.cfb.uncertainty_threshold},
        {"max_enumerated_vehicles", cfg.cfb.max_enumerated_vehicles},
        {"combination_cap", cfg.cfb.combination_cap},
        {"top_k", cfg.cfb.top_k}}},
      {"sim",
       {{"idm", idm_to_json(cfg.sim.idm)},
        {"pursuit",
         {{"lookahead_base", cfg.sim.pursuit.lookahead_base},
          {"lookahead_gain", cfg.sim.pursuit.lookahead_gain},
          {"wheelbase", cfg.sim.pursuit.wheelbase},
          {"max_steer", cfg.sim.pursuit.max_steer}}},
        {"rss",
         {{"response_time", cfg.sim.rss.response_time},
          {"max_accel_during_response", cfg.sim.rss.max_accel_during_response},
          {"min_brake", cfg.sim.rss.min_brake},
          {"max_brake", cfg.sim.rss.max_brake}}},
        {"noise",
         {{"accel_stddev", cfg.sim.noise.accel_stddev},
          {"steer_stddev", cfg.sim.noise.steer_stddev},
          {"seed", cfg.sim.noise.seed}}},
        {"substeps", cfg.sim.substeps},
        {"max_steer_rate", cfg.sim.max_steer_rate},
        {"lateral_overlap", cfg.sim.lateral_overlap},
        {"accel_speed_offset", cfg.sim.accel_speed_offset},
        {"decel_speed_offset", cfg.sim.decel_speed_offset},
        {"speed_limit_tolerance", cfg.sim.speed_limit_tolerance}}}};
}

SemanticAction action_from_json(const json& j, const std::string& scope) {
  SemanticAction action;
  if (!j.is_object()) throw ConfigError("'" + scope + "' must be a json object");
  for (const auto& [key, value] : j.items()) {
    if (key == "lateral")
      action.lateral = lateral_from_string(as_string(value, scope, key), scope + ".lateral");
    else if (key == "longitudinal")
      action.longitudinal =
          longitudinal_from_string(as_string(value, scope, key), scope + ".longitudinal");
    else if (key == "duration") action.duration = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
  return action;
}

json action_to_json(const SemanticAction& action) {
  return json{{"lateral", to_string(action.lateral)},
              {"longitudinal", to_string(action.longitudinal)},
              {"duration", action.duration}};
}

// Accepts either an inline "map" object or a "map_file" reference; returns
// the serialized map text and validates it parses.
std::string map_text_from(const std::string& base_dir, bool& found, const std::string& key,
                          const json& value) {
  if (found) throw ConfigError("both 'map' and 'map_file' given");
  found = true;
  std::string text;
  if (key == "map") {
    if (value.is_string())
      text = read_file(resolve(base_dir, value.get<std::string>()), "map");
    else
      text = value.dump();
  } else {
    text = read_file(resolve(base_dir, as_string(value, "", key)), "map");
  }
  map_from_json(text);
  return text;
}

IntentionBelief belief_from_json(const json& j, int vehicle, const std::string& scope) {
  IntentionBelief belief;
  belief.vehicle = vehicle;
  belief.p_lk = 0.0;
  for (const auto& [key, value] : j.items()) {
    if (key == "lk") belief.p_lk = as_double(value, scope, key);
    else if (key == "lcl") belief.p_lcl = as_double(value, scope, key);
    else if (key == "lcr") belief.p_lcr = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
  if (belief.p_lk < 0.0 || belief.p_lcl < 0.0 || belief.p_lcr < 0.0 ||
      belief.p_lk + belief.p_lcl + belief.p_lcr <= 0.0)
    throw ConfigError("'" + scope + "' probabilities must be nonnegative with positive sum");
  belief.normalize();
  return belief;
}

Vehicle vehicle_from_json(const json& j, const LaneMap& map, int index, BeliefMap& beliefs,
                          const std::string& scope) {
  Vehicle vehicle;
  vehicle.params.id = index;
  std::optional<LaneId> lane;
  std::optional<double> s, d, x, y, heading;
  const json* belief_json = nullptr;
  for (const auto& [key, value] : j.items()) {
    if (key == "id") vehicle.params.id = as_int(value, scope, key);
    else if (key == "lane") lane = as_int(value, scope, key);
    else if (key == "s") s = as_double(value, scope, key);
    else if (key == "d") d = as_double(value, scope, key);
    else if (key == "x") x = as_double(value, scope, key);
    else if (key == "y") y = as_double(value, scope, key);
    else if (key == "heading") heading = as_double(value, scope, key);
    else if (key == "velocity") vehicle.state.velocity = as_double(value, scope, key);
    else if (key == "acceleration") vehicle.state.acceleration = as_double(value, scope, key);
    else if (key == "length") vehicle.params.length = as_double(value, scope, key);
    else if (key == "width") vehicle.params.width = as_double(value, scope, key);
    else if (key == "wheelbase") vehicle.params.wheelbase = as_double(value, scope, key);
    else if (key == "max_accel") vehicle.params.max_accel = as_double(value, scope, key);
    else if (key == "max_decel") vehicle.params.max_decel = as_double(value, scope, key);
    else if (key == "desired_velocity")
      vehicle.params.desired_velocity = as_double(value, scope, key);
    else if (key == "belief") belief_json = &value;
    else unknown_key(scope, key);
  }
  if (lane) {
    if (x || y) throw ConfigError("'" + scope + "' mixes lane and cartesian placement");
    const Lane& l = map.lane(*lane);
    double along = s.value_or(0.0);
    if (along < 0.0 || along > l.length())
      throw ConfigError("'" + scope + ".s' is outside the lane arc range");
    double lane_heading = l.heading_at(along);
    Vec2 base = l.point_at(along);
    double offset = d.value_or(0.0);
    vehicle.state.position = {base.x - offset * std::sin(lane_heading),
                              base.y + offset * std::cos(lane_heading)};
    vehicle.state.heading = heading.value_or(lane_heading);
  } else if (x && y) {
    vehicle.state.position = {*x, *y};
    vehicle.state.heading = heading.value_or(0.0);
  } else {
    throw ConfigError("'" + scope + "' needs either lane/s or x/y placement");
  }
  vehicle.state.curvature =
      std::tan(vehicle.state.steering_angle) / vehicle.params.wheelbase;
  if (belief_json)
    beliefs[vehicle.params.id] =
        belief_from_json(*belief_json, vehicle.params.id, scope + ".belief");
  return vehicle;
}

EgoSpawn ego_spawn_from_json(const json& j, const std::string& scope) {
  EgoSpawn ego;
  if (!j.is_object()) throw ConfigError("'" + scope + "' must be a json object");
  for (const auto& [key, value] : j.items()) {
    if (key == "lane") ego.lane = as_int(value, scope, key);
    else if (key == "s") ego.s = as_double(value, scope, key);
    else if (key == "velocity") ego.velocity = as_double(value, scope, key);
    else if (key == "desired_velocity") ego.desired_velocity = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
  if (ego.lane == kNoLane) throw ConfigError("'" + scope + ".lane' is required");
  return ego;
}

AgentSpawn agent_spawn_from_json(const json& j, int index, const std::string& scope) {
  AgentSpawn agent;
  agent.id = index;
  for (const auto& [key, value] : j.items()) {
    if (key == "id") agent.id = as_int(value, scope, key);
    else if (key == "lane") agent.lane = as_int(value, scope, key);
    else if (key == "s") agent.s = as_double(value, scope, key);
    else if (key == "velocity") agent.velocity = as_double(value, scope, key);
    else if (key == "desired_velocity") agent.desired_velocity = as_double(value, scope, key);
    else if (key == "aggressiveness") agent.aggressiveness = as_double(value, scope, key);
    else unknown_key(scope, key);
  }
  if (agent.lane == kNoLane) throw ConfigError("'" + scope + ".lane' is required");
  return agent;
}

json scenario_to_json(const Scenario& scenario) {
  json assignment = json::array();
  for (const auto& [vehicle, intention] : scenario.assignment)
    assignment.push_back(json{{"vehicle", vehicle}, {"intention", to_string(intention)}});
  return json{{"probability", scenario.probability},
              {"origin", scenario.origin == ScenarioOrigin::kMapOnly ? "map" : "cfb"},
              {"assignment", std::move(assignment)}};
}

json trace_to_json(const std::vector<TimedEgoState>& trace) {
  json out = json::array();
  for (const TimedEgoState& p : trace)
    out.push_back(json{{"t", p.t},
                       {"x", p.state.position.x},
                       {"y", p.state.position.y},
                       {"heading", p.state.heading},
                       {"velocity", p.state.velocity}});
  return out;
}

json beliefs_to_json(const BeliefMap& beliefs) {
  json out = json::array();
  for (const auto& [vehicle, belief] : beliefs)
    out.push_back(json{{"vehicle", vehicle},
                       {"lk", belief.p_lk},
                       {"lcl", belief.p_lcl},
                       {"lcr", belief.p_lcr}});
  return out;
}

}  // namespace

PlannerConfig planner_config_from_json(const std::string& text) {
  json j = parse_document(text, "planner config");
  PlannerConfig cfg;
  try {
    read_planner(j, "", cfg);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("planner config schema violation: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

PlannerConfig load_planner_config_file(const std::string& path) {
  return planner_config_from_json(read_file(path, "planner config"));
}

std::string planner_config_to_json(const PlannerConfig& cfg) {
  return planner_to_json_object(cfg).dump(2);
}

Scene scene_from_json(const std::string& text, const std::string& base_dir) {
  json j = parse_document(text, "scene");
  if (!j.is_object()) throw ConfigError("scene must be a json object");
  Scene scene;
  std::string map_text;
  bool map_found = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "map" || key == "map_file") {
        map_text = map_text_from(base_dir, map_found, key, value);
      } else if (key == "time") {
        scene.world.time = as_double(value, "", key);
      } else if (key == "ego_id") {
        scene.world.ego_id = as_int(value, "", key);
      } else if (key == "vehicles") {
        if (!value.is_array()) throw ConfigError("'vehicles' must be an array");
      } else if (key == "ongoing") {
        scene.ongoing = action_from_json(value, "ongoing");
      } else {
        unknown_key("", key);
      }
    }
    if (!map_found) throw ConfigError("scene needs 'map' or 'map_file'");
    auto map = std::make_shared<LaneMap>(map_from_json(map_text));
    scene.world.map = map;
    if (!j.contains("vehicles")) throw ConfigError("scene needs 'vehicles'");
    int index = 0;
    for (const json& vj : j.at("vehicles")) {
      std::string scope = "vehicles[" + std::to_string(index) + "]";
      scene.world.vehicles.push_back(
          vehicle_from_json(vj, *map, index, scene.beliefs, scope));
      ++index;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene schema violation: ") + e.what());
  }
  scene.world.sort_vehicles();
  for (std::size_t i = 1; i < scene.world.vehicles.size(); ++i)
    if (scene.world.vehicles[i].params.id == scene.world.vehicles[i - 1].params.id)
      throw ConfigError("duplicate vehicle id " +
                        std::to_string(scene.world.vehicles[i].params.id));
  if (!scene.world.find(scene.world.ego_id))
    throw ConfigError("scene has no vehicle with the ego id " +
                      std::to_string(scene.world.ego_id));
  return scene;
}

Scene load_scene_file(const std::string& path) {
  return scene_from_json(read_file(path, "scene"), dir_of(path));
}

ScenarioConfig scenario_config_from_json(const std::string& text, const std::string& base_dir) {
  json j = parse_document(text, "scenario config");
  if (!j.is_object()) throw ConfigError("scenario config must be a json object");
  ScenarioConfig cfg;
  bool map_found = false;
  bool ego_found = false;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "map" || key == "map_file") {
        cfg.map_json = map_text_from(base_dir, map_found, key, value);
      } else if (key == "name") {
        cfg.name = as_string(value, "", key);
      } else if (key == "ego") {
        cfg.ego = ego_spawn_from_json(value, "ego");
        ego_found = true;
      } else if (key == "agents") {
        if (!value.is_array()) throw ConfigError("'agents' must be an array");
        int index = 1;
        for (const json& aj : value) {
          std::string scope = "agents[" + std::to_string(index - 1) + "]";
          cfg.agents.push_back(agent_spawn_from_json(aj, index, scope));
          ++index;
        }
      } else if (key == "planner") {
        read_planner(value, "planner", cfg.planner);
      } else if (key == "duration") {
        cfg.duration = as_double(value, "", key);
      } else if (key == "env_dt") {
        cfg.env_dt = as_double(value, "", key);
      } else if (key == "seed") {
        cfg.seed = as_seed(value, "", key);
      } else if (key == "param_spread") {
        cfg.param_spread = as_double(value, "", key);
      } else {
        unknown_key("", key);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario config schema violation: ") + e.what());
  }
  if (!map_found) throw ConfigError("scenario config needs 'map' or 'map_file'");
  if (!ego_found) throw ConfigError("scenario config needs 'ego'");
  if (cfg.duration <= 0.0) throw ConfigError("'duration' must be positive");
  if (cfg.env_dt <= 0.0) throw ConfigError("'env_dt' must be positive");
  cfg.planner.validate();
  return cfg;
}

ScenarioConfig load_scenario_config_file(const std::string& path) {
  return scenario_config_from_json(read_file(path, "scenario config"), dir_of(path));
}

std::string episode_log_to_jsonl(const EpisodeLog& log) {
  std::ostringstream out;
  json header{{"type", "header"}};
  if (log.header.map_json)
    header["map"] = parse_document(*log.header.map_json, "log header map");
  if (log.header.ego_id) header["ego_id"] = *log.header.ego_id;
  header["seed"] = log.header.seed;
  header["mode"] = log.header.mode;
  if (!log.header.dimensions.empty()) {
    json dims = json::array();
    for (const auto& [id, d] : log.header.dimensions)
      dims.push_back(json{{"id", id},
                          {"length", d.length},
                          {"width", d.width},
                          {"wheelbase", d.wheelbase}});
    header["dimensions"] = std::move(dims);
  }
  out << header.dump() << '\n';
  for (const LogFrame& frame : log.frames) out << frame_to_json(frame) << '\n';
  for (const std::string& event : log.events) out << event << '\n';
  return out.str();
}

void write_episode_log(const EpisodeLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw PlanningError("cannot write log file " + path);
  out << episode_log_to_jsonl(log);
  if (!out) throw PlanningError("failed writing log file " + path);
}

void TraceWriter::write_cycle(const PlanResult* result, const ReplanRecord& record,
                              const BeliefMap& beliefs, const WorldState& world) {
  json j{{"type", "cycle"},
         {"cycle", record.cycle},
         {"timestamp", record.time},
         {"emergency", record.emergency},
         {"candidate_count", record.candidate_count},
         {"scenario_count", record.scenario_count},
         {"selected", record.selected_signature},
         {"selected_reward", record.selected_reward},
         {"latency_ms", record.latency_ms}};
  json candidates = json::array();
  if (result) {
    for (const PolicyEvaluation& eval : result->evaluations) {
      json scenarios = json::array();
      for (const ScenarioOutcome& outcome : eval.outcomes) {
        json sj = scenario_to_json(outcome.scenario);
        sj["reward"] = outcome.reward;
        sj["risky"] = outcome.risky;
        sj["collided"] = outcome.collided;
        scenarios.push_back(std::move(sj));
      }
      candidates.push_back(json{{"signature", eval.sequence.signature()},
                                {"reward", eval.weighted_reward},
                                {"feasible", eval.feasible},
                                {"scenarios", std::move(scenarios)}});
    }
    j["pruned_sequences"] = result->pruned_sequences;
  }
  j["candidates"] = std::move(candidates);
  j["beliefs"] = beliefs_to_json(beliefs);
  if (const Vehicle* ego = world.find(world.ego_id))
    j["ego"] = json{{"x", ego->state.position.x},
                    {"y", ego->state.position.y},
                    {"heading", ego->state.heading},
                    {"velocity", ego->state.velocity}};
  j["trace"] = trace_to_json(record.ego_trace);
  out_ << j.dump() << '\n';
}

std::string plan_result_to_json(const PlanResult& result) {
  json actions = json::array();
  for (const SemanticAction& action : result.best.actions)
    actions.push_back(action_to_json(action));
  json candidates = json::array();
  for (const PolicyEvaluation& eval : result.evaluations) {
    int risky = 0;
    for (const ScenarioOutcome& outcome : eval.outcomes) risky += outcome.risky ? 1 : 0;
    candidates.push_back(json{{"signature", eval.sequence.signature()},
                              {"reward", eval.weighted_reward},
                              {"feasible", eval.feasible},
                              {"scenario_count", static_cast<int>(eval.outcomes.size())},
                              {"risky_scenarios", risky}});
  }
  json j{{"selected",
          {{"signature", result.best.signature()}, {"actions", std::move(actions)}}},
         {"best_index", result.best_index},
         {"reward", result.best_index >= 0
                        ? json(result.evaluations[result.best_index].weighted_reward)
                        : json()},
         {"next_ongoing", action_to_json(result.next_ongoing)},
         {"map_rollout_collision", result.map_rollout_collision},
         {"pruned_sequences", result.pruned_sequences},
         {"candidates", std::move(candidates)},
         {"ego_trace", trace_to_json(result.ego_trace)}};
  return j.dump(2);
}

}  // namespace gbp
