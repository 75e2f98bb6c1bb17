#include "gbp/sim_env.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "gbp/errors.hpp"
#include "gbp/rng.hpp"
#include "json.hpp"

namespace gbp {

using nlohmann::json;

namespace {

constexpr int kEgoId = 0;
constexpr double kAgentRetireMargin = 2.0;    // m left of a map exit before despawn
constexpr double kMergeUrgencyRange = 100.0;  // m; forced-merge window before a wall
constexpr double kWallStopMargin = 5.0;       // m; stop this far before a dead end

std::vector<Vec2> sample_arc(double radius, double spacing) {
  std::vector<Vec2> points;
  double circumference = 2.0 * M_PI * radius;
  int count = static_cast<int>(std::ceil(circumference / spacing));
  points.reserve(count);
  for (int i = 0; i < count; ++i) {
    double theta = 2.0 * M_PI * i / count;
    points.push_back({radius * std::cos(theta), radius * std::sin(theta)});
  }
  return points;
}

std::vector<Vec2> sample_straight(double x0, double x1, double y, double spacing) {
  std::vector<Vec2> points;
  double length = x1 - x0;
  int count = static_cast<int>(std::ceil(length / spacing));
  points.reserve(count + 1);
  for (int i = 0; i <= count; ++i) points.push_back({x0 + length * i / count, y});
  return points;
}

}  // namespace

LaneMap make_ring_map(double radius, double lane_width, double speed_limit) {
  LaneMap map;
  map.ring = true;
  map.lane_width = lane_width;

  Lane outer;
  outer.id = 0;
  outer.centerline = sample_arc(radius, 1.0);
  outer.left_neighbor = 1;  // counterclockwise travel: left is toward the center
  outer.successor = 0;
  outer.closes_ring = true;
  outer.speed_limit = speed_limit;

  Lane inner;
  inner.id = 1;
  inner.centerline = sample_arc(radius - lane_width, 1.0);
  inner.right_neighbor = 0;
  inner.successor = 1;
  inner.closes_ring = true;
  inner.speed_limit = speed_limit;

  map.lanes = {std::move(outer), std::move(inner)};
  map.load_and_validate();
  return map;
}

// Two parallel 3-lane roads; on each road only the innermost lane continues
// into the 2-lane shared segment, so the outer lanes force merges toward it.
LaneMap make_double_merge_map(double upstream_length, double shared_length,
                              double lane_width, double speed_limit) {
  LaneMap map;
  map.lane_width = lane_width;
  double half = 0.5 * lane_width;
  double end = upstream_length + shared_length;

  auto straight = [&](LaneId id, double x0, double x1, double y) {
    Lane lane;
    lane.id = id;
    lane.centerline = sample_straight(x0, x1, y, 1.0);
    lane.speed_limit = speed_limit;
    return lane;
  };

  Lane n_outer = straight(0, 0.0, upstream_length, half + 2.0 * lane_width);
  n_outer.right_neighbor = 1;
  Lane n_mid = straight(1, 0.0, upstream_length, half + lane_width);
  n_mid.left_neighbor = 0;
  n_mid.right_neighbor = 2;
  Lane n_inner = straight(2, 0.0, upstream_length, half);
  n_inner.left_neighbor = 1;
  n_inner.successor = 6;

  Lane s_inner = straight(3, 0.0, upstream_length, -half);
  s_inner.right_neighbor = 4;
  s_inner.successor = 7;
  Lane s_mid = straight(4, 0.0, upstream_length, -half - lane_width);
  s_mid.left_neighbor = 3;
  s_mid.right_neighbor = 5;
  Lane s_outer = straight(5, 0.0, upstream_length, -half - 2.0 * lane_width);
  s_outer.left_neighbor = 4;

  Lane shared_left = straight(6, upstream_length, end, half);
  shared_left.right_neighbor = 7;
  Lane shared_right = straight(7, upstream_length, end, -half);
  shared_right.left_neighbor = 6;

  map.lanes = {std::move(n_outer),     std::move(n_mid),  std::move(n_inner),
               std::move(s_inner),     std::move(s_mid),  std::move(s_outer),
               std::move(shared_left), std::move(shared_right)};
  map.load_and_validate();
  return map;
}

namespace {

double env_forward_length(const LaneMap& map) {
  double longest = 0.0;
  for (const Lane& lane : map.lanes) longest = std::max(longest, lane.length());
  return longest + 250.0;
}

VehicleState state_on_lane(const Lane& lane, double s, double velocity) {
  VehicleState state;
  state.position = lane.point_at(s);
  state.heading = lane.heading_at(s);
  state.velocity = velocity;
  return state;
}

VehicleState interpolate_trace(const std::vector<TimedEgoState>& trace, double t) {
  if (trace.empty()) return {};
  if (t <= trace.front().t) return trace.front().state;
  if (t >= trace.back().t) return trace.back().state;
  std::size_t hi = 1;
  while (hi < trace.size() && trace[hi].t < t) ++hi;
  const TimedEgoState& a = trace[hi - 1];
  const TimedEgoState& b = trace[hi];
  double span = b.t - a.t;
  double alpha = span > 1e-12 ? (t - a.t) / span : 1.0;
  VehicleState state;
  state.position = a.state.position + (b.state.position - a.state.position) * alpha;
  state.heading =
      normalize_angle(a.state.heading + normalize_angle(b.state.heading - a.state.heading) * alpha);
  state.velocity = a.state.velocity + (b.state.velocity - a.state.velocity) * alpha;
  // The acceleration command holds over the interval it was issued for.
  state.acceleration = a.state.acceleration;
  state.steering_angle =
      a.state.steering_angle + (b.state.steering_angle - a.state.steering_angle) * alpha;
  state.curvature = a.state.curvature + (b.state.curvature - a.state.curvature) * alpha;
  return state;
}

}  // namespace

Environment::Environment(const ScenarioConfig& config)
    : map_(std::make_shared<LaneMap>(map_from_json(config.map_json))),
      config_(config),
      duration_(config.duration),
      corridors_(map_, 80.0, env_forward_length(*map_)) {
  LaneId ego_lane = config.ego.lane != kNoLane ? config.ego.lane : map_->lanes.front().id;
  ego_.params.id = kEgoId;
  ego_.params.desired_velocity = config.ego.desired_velocity;
  ego_.state = state_on_lane(map_->lane(ego_lane), config.ego.s, config.ego.velocity);

  spawn_agents(config);

  log_.header.map_json = map_to_json(*map_);
  log_.header.ego_id = kEgoId;
  log_.header.seed = config.seed;
  log_.header.mode = to_string(config.planner.mode);
  log_.header.dimensions[kEgoId] = {ego_.params.length, ego_.params.width,
                                    ego_.params.wheelbase};
  for (const Agent& agent : agents_)
    log_.header.dimensions[agent.vehicle.params.id] = {agent.vehicle.params.length,
                                                       agent.vehicle.params.width,
                                                       agent.vehicle.params.wheelbase};
  record_frame();
}

void Environment::spawn_agents(const ScenarioConfig& config) {
  for (const AgentSpawn& spawn : config.agents) {
    Agent agent;
    agent.vehicle.params.id = spawn.id;
    agent.vehicle.state = state_on_lane(map_->lane(spawn.lane), spawn.s, spawn.velocity);

    NoiseStream params = NoiseStream::substream(config.seed, 500, spawn.id);
    auto jitter = [&](double nominal) {
      return nominal * (1.0 + config.param_spread * params.uniform(-1.0, 1.0));
    };
    double aggressiveness = std::clamp(spawn.aggressiveness, 0.0, 1.0);

    agent.idm = config.planner.sim.idm;
    agent.idm.desired_velocity =
        spawn.desired_velocity > 0.0 ? spawn.desired_velocity : jitter(agent.idm.desired_velocity);
    agent.idm.safe_time_headway =
        std::max(0.5, jitter(agent.idm.safe_time_headway) * (1.2 - 0.4 * aggressiveness));
    agent.idm.max_accel = std::max(0.8, jitter(agent.idm.max_accel));
    agent.idm.comfortable_decel = std::max(1.0, jitter(agent.idm.comfortable_decel));
    agent.idm.min_spacing = std::max(1.0, jitter(agent.idm.min_spacing));
    agent.vehicle.params.desired_velocity = agent.idm.desired_velocity;

    agent.mobil = MobilParams{};
    agent.mobil.idm = agent.idm;
    agent.mobil.politeness = std::clamp(0.6 - 0.5 * aggressiveness, 0.05, 0.6);
    // How much braking the agent is willing to impose on the new follower
    // when changing lanes; aggressive drivers force tight cut-ins.
    agent.mobil.safe_braking = 2.0 + 4.0 * aggressiveness;
    agent.change_threshold = std::max(0.05, 0.3 - 0.2 * aggressiveness);
    agent.pursuit = config.planner.sim.pursuit;

    agent.decision_period = 0.75;
    agent.next_decision = 0.1 + 0.075 * (spawn.id % 10);
    auto lane = nearest_lane(*map_, agent.vehicle.state.position);
    agent.target_lane = lane ? *lane : spawn.lane;
    agent.corridor = corridors_.get(agent.target_lane);
    agent.noise = NoiseStream::substream(config.seed, 1000, spawn.id);
    agents_.push_back(std::move(agent));
  }
}

WorldState Environment::snapshot() const {
  WorldState world;
  world.time = time_;
  world.map = map_;
  world.ego_id = kEgoId;
  world.vehicles.push_back(ego_);
  for (const Agent& agent : agents_)
    if (!agent.retired) world.vehicles.push_back(agent.vehicle);
  world.sort_vehicles();
  return world;
}

void Environment::commit_trace(const std::vector<TimedEgoState>& trace) {
  ego_trace_ = trace;
}

void Environment::maybe_change_lane(Agent& agent, const WorldState& world) {
  auto lane = nearest_lane(*map_, agent.vehicle.state.position);
  if (!lane) return;
  if (*lane != agent.target_lane && time_ < agent.cooldown_until) return;

  bool urgent = false;
  if (corridors_.ends_at_wall(agent.target_lane)) {
    auto proj = agent.corridor->project(agent.vehicle.state.position,
                                        agent.vehicle.state.heading, agent.self_hint);
    urgent = agent.corridor->length() - proj.s < kMergeUrgencyRange;
  }
  double threshold = urgent ? -1e9 : agent.change_threshold;
  MobilParams mobil_params = agent.mobil;
  // A driver running out of lane accepts forcing the new follower to brake
  // harder than usual.
  if (urgent) mobil_params.safe_braking = std::min(mobil_params.safe_braking * 1.5, 7.0);

  double best_incentive = threshold;
  std::optional<LaneId> best_target;
  for (LateralAction dir : {LateralAction::kLaneChangeLeft, LateralAction::kLaneChangeRight}) {
    auto target = try_target_lane_for(*map_, dir, *lane);
    if (!target) continue;
    if (corridors_.ends_at_wall(*target)) {
      // Never move into a lane that is already inside its own forced-merge
      // window; whoever enters there would have to merge right back out.
      if (urgent) continue;
      auto target_corridor = corridors_.get(*target);
      auto tproj = target_corridor->project(agent.vehicle.state.position,
                                            agent.vehicle.state.heading, -1);
      if (target_corridor->length() - tproj.s < kMergeUrgencyRange) continue;
    }
    MobilResult mobil;
    try {
      mobil = lane_change_incentive(world, agent.vehicle.params.id, dir, mobil_params);
    } catch (const PlanningError&) {
      continue;
    }
    if (mobil.safety_veto) continue;
    if (mobil.incentive > best_incentive) {
      best_incentive = mobil.incentive;
      best_target = *target;
    }
  }
  if (best_target && *best_target != agent.target_lane) {
    agent.target_lane = *best_target;
    agent.corridor = corridors_.get(*best_target);
    agent.self_hint = -1;
    agent.cooldown_until = time_ + 4.0;
  } else if (!urgent && *lane == agent.target_lane) {
    agent.corridor = corridors_.get(*lane);
  }
}

void Environment::step_agent(Agent& agent, const WorldState& world, double dt) {
  const SimulationParams& sim = config_.planner.sim;
  Vehicle& veh = agent.vehicle;

  if (time_ >= agent.next_decision) {
    maybe_change_lane(agent, world);
    agent.next_decision = time_ + agent.decision_period;
  }

  auto proj = agent.corridor->project(veh.state.position, veh.state.heading, agent.self_hint);
  agent.self_hint = proj.segment;
  bool wall = corridors_.ends_at_wall(agent.target_lane);
  double remaining = agent.corridor->ring() ? std::numeric_limits<double>::max()
                                            : agent.corridor->length() - proj.s;

  if (!wall && remaining < kAgentRetireMargin) {
    agent.retired = true;
    log_event("retired", {{"id", static_cast<double>(veh.params.id)}});
    return;
  }

  double accel = idm_acceleration(veh.state.velocity, std::nullopt, std::nullopt, agent.idm);
  auto lane = nearest_lane(*map_, veh.state.position);
  auto follow = [&](LaneId lane_id) {
    try {
      SurroundingVehicles around = surrounding_vehicles(world, veh.params.id, lane_id);
      if (!around.leader) return;
      const Vehicle* leader = world.find(around.leader->id);
      if (!leader) return;
      double gap = around.leader->gap;
      double a = gap <= 0.0
                     ? -agent.idm.hard_brake_cap
                     : idm_acceleration(veh.state.velocity, leader->state.velocity, gap, agent.idm);
      accel = std::min(accel, a);
    } catch (const PlanningError&) {
    }
  };
  if (lane) follow(*lane);
  if (lane && agent.target_lane != *lane) follow(agent.target_lane);
  if (wall) {
    double to_stop = remaining - kWallStopMargin;
    if (to_stop < 150.0) {
      double a = to_stop <= 0.0 ? -agent.idm.hard_brake_cap
                                : idm_acceleration(veh.state.velocity, 0.0, to_stop, agent.idm);
      accel = std::min(accel, a);
    }
  }

  double steer_cmd = 0.0;
  try {
    steer_cmd = pure_pursuit_steer(veh.state, *agent.corridor, 0.0, agent.pursuit, &proj);
  } catch (const PathExhausted&) {
    steer_cmd = 0.0;
  }

  accel += agent.noise.gaussian(0.0, sim.noise.accel_stddev);
  steer_cmd += agent.noise.gaussian(0.0, sim.noise.steer_stddev);
  accel = std::clamp(accel, -agent.idm.hard_brake_cap, agent.idm.max_accel);

  double steer_step = sim.max_steer_rate * dt;
  double steer = std::clamp(steer_cmd, veh.state.steering_angle - steer_step,
                            veh.state.steering_angle + steer_step);
  steer = std::clamp(steer, -agent.pursuit.max_steer, agent.pursuit.max_steer);
  double velocity = std::max(0.0, veh.state.velocity + accel * dt);
  double wheelbase = std::max(veh.params.wheelbase, 1e-9);
  double heading =
      normalize_angle(veh.state.heading + velocity * std::tan(steer) / wheelbase * dt);
  veh.state.position =
      veh.state.position + Vec2{std::cos(heading), std::sin(heading)} * (velocity * dt);
  veh.state.heading = heading;
  veh.state.velocity = velocity;
  veh.state.acceleration = accel;
  veh.state.steering_angle = steer;
  veh.state.curvature = std::tan(steer) / wheelbase;
}

void Environment::advance(double dt) {
  int steps = std::max(1, static_cast<int>(std::llround(dt / config_.env_dt)));
  double sub_dt = dt / steps;
  for (int k = 0; k < steps; ++k) {
    WorldState before = snapshot();
    time_ += sub_dt;

    if (ego_active_ && !ego_trace_.empty()) ego_.state = interpolate_trace(ego_trace_, time_);

    for (Agent& agent : agents_)
      if (!agent.retired) step_agent(agent, before, sub_dt);

    std::vector<const Vehicle*> moved;
    if (ego_active_) moved.push_back(&ego_);
    for (const Agent& agent : agents_)
      if (!agent.retired) moved.push_back(&agent.vehicle);
    for (std::size_t i = 0; i < moved.size(); ++i) {
      for (std::size_t j = i + 1; j < moved.size(); ++j) {
        const Vehicle& a = *moved[i];
        const Vehicle& b = *moved[j];
        double reach = 0.5 * (a.params.length + b.params.length) + 1.0;
        if ((a.state.position - b.state.position).squared_norm() > reach * reach) continue;
        if (!boxes_overlap(a.footprint(), b.footprint())) continue;
        log_event("collision", {{"a", static_cast<double>(a.params.id)},
                                {"b", static_cast<double>(b.params.id)}});
        if (a.params.id == kEgoId || b.params.id == kEgoId) {
          ego_collided_ = true;
          ego_active_ = false;
        }
      }
    }

    if (ego_active_ && !nearest_lane(*map_, ego_.state.position)) {
      ego_active_ = false;
      log_event("ego_offroad", {});
    }
  }
  record_frame();
}

bool Environment::done() const {
  return time_ >= duration_ - 1e-9 || !ego_active_;
}

void Environment::record_frame() {
  LogFrame frame;
  frame.timestamp = time_;
  auto observe = [&frame](const Vehicle& veh) {
    ObservedVehicle obs;
    obs.id = veh.params.id;
    obs.x = veh.state.position.x;
    obs.y = veh.state.position.y;
    obs.heading = veh.state.heading;
    obs.velocity = veh.state.velocity;
    obs.acceleration = veh.state.acceleration;
    obs.curvature = veh.state.curvature;
    frame.vehicles.push_back(obs);
  };
  observe(ego_);
  for (const Agent& agent : agents_)
    if (!agent.retired) observe(agent.vehicle);
  log_.frames.push_back(std::move(frame));
}

void Environment::log_event(const std::string& kind,
                            std::initializer_list<std::pair<const char*, double>> fields) {
  json j{{"type", "event"}, {"timestamp", time_}, {"kind", kind}};
  for (const auto& [key, value] : fields) j[key] = value;
  log_.events.push_back(j.dump());
}

void Environment::count_emergency_cycle() {
  ++emergency_cycles_;
  log_event("emergency", {});
}

// ---- metrics ----

BenchmarkMetrics compute_metrics(const EpisodeLog& log, const LaneMap& map,
                                 const MetricThresholds& thresholds) {
  BenchmarkMetrics metrics;
  if (log.frames.empty()) return metrics;
  int ego_id = log.header.ego_id.value_or(0);
  auto dims = [&](int id) {
    auto it = log.header.dimensions.find(id);
    return it != log.header.dimensions.end() ? it->second : VehicleDimensions{};
  };
  double ego_length = dims(ego_id).length;

  auto map_ptr = std::shared_ptr<const LaneMap>(&map, [](const LaneMap*) {});
  CorridorCache corridors(map_ptr, 80.0, env_forward_length(map));

  double distance = 0.0;
  double velocity_sum = 0.0;
  int ego_frames = 0;
  int unsafe_frames = 0;
  int ud_events = 0;
  int lcc_events = 0;
  bool in_ud = false;
  bool in_lcc = false;
  std::optional<Vec2> last_position;
  std::optional<double> last_curvature;
  double last_t = 0.0;
  std::map<LaneId, std::map<int, int>> hints;

  for (const LogFrame& frame : log.frames) {
    const ObservedVehicle* ego = nullptr;
    for (const ObservedVehicle& v : frame.vehicles)
      if (v.id == ego_id) ego = &v;
    if (!ego) {
      last_position.reset();
      last_curvature.reset();
      continue;
    }
    ++ego_frames;
    velocity_sum += ego->velocity;
    Vec2 position{ego->x, ego->y};
    if (last_position) distance += (position - *last_position).norm();
    last_position = position;

    // Deceleration comfort: maximal intervals with braking beyond the bound.
    double accel = ego->acceleration.value_or(0.0);
    bool braking_hard = accel < -thresholds.uncomfortable_decel;
    if (braking_hard && !in_ud) ++ud_events;
    in_ud = braking_hard;

    // Steering smoothness: maximal intervals of fast curvature change.
    if (ego->curvature && last_curvature) {
      double dt = frame.timestamp - last_t;
      double rate = dt > 1e-9 ? std::abs(*ego->curvature - *last_curvature) / dt : 0.0;
      bool jerky = rate > thresholds.curvature_change;
      if (jerky && !in_lcc) ++lcc_events;
      in_lcc = jerky;
    }
    last_curvature = ego->curvature;
    last_t = frame.timestamp;

    // Proximity along the ego's lane corridor.
    auto lane = nearest_lane(map, position);
    if (lane) {
      auto corridor = corridors.get(*lane);
      std::map<int, int>& lane_hints = hints[*lane];
      int& self_hint = lane_hints.try_emplace(ego_id, -1).first->second;
      auto self = corridor->project(position, ego->heading, self_hint);
      self_hint = self.segment;
      // Only vehicles ahead count: the gap to a leader is the ego's to keep,
      // a tailgating follower is not chargeable to the policy under test.
      bool unsafe = false;
      for (const ObservedVehicle& other : frame.vehicles) {
        if (other.id == ego_id) continue;
        int& hint = lane_hints.try_emplace(other.id, -1).first->second;
        auto proj = corridor->project({other.x, other.y}, other.heading, hint);
        hint = proj.segment;
        if (std::min(std::abs(proj.d - self.d), std::abs(proj.d)) > thresholds.lateral_overlap)
          continue;
        double along = corridor->arc_delta(self.s, proj.s);
        if (along < 0.0) continue;
        double gap = along - 0.5 * (ego_length + dims(other.id).length);
        double required = std::max(thresholds.min_safe_distance,
                                   thresholds.rss_fraction *
                                       rss_min_safe_gap(ego->velocity, other.velocity,
                                                        thresholds.rss));
        if (gap < required) {
          unsafe = true;
          break;
        }
      }
      if (unsafe) ++unsafe_frames;
    }
  }

  metrics.distance_km = distance / 1000.0;
  metrics.avg_velocity = ego_frames > 0 ? velocity_sum / ego_frames : 0.0;
  metrics.safety_fraction = ego_frames > 0 ? static_cast<double>(unsafe_frames) / ego_frames : 0.0;
  double km = std::max(metrics.distance_km, 1e-6);
  metrics.ud_per_km = ud_events / km;
  metrics.lcc_per_km = lcc_events / km;

  for (const std::string& line : log.events) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    std::string kind = j.value("kind", "");
    if (kind == "collision") {
      int a = j.value("a", -1);
      int b = j.value("b", -1);
      if (a == ego_id || b == ego_id) ++metrics.collisions;
    } else if (kind == "emergency") {
      ++metrics.emergency_cycles;
    }
  }
  return metrics;
}

// ---- scenario factories ----

ScenarioConfig make_ring_scenario(std::uint64_t seed, PlannerMode mode, int agent_count) {
  ScenarioConfig config;
  config.name = "ring";
  LaneMap map = make_ring_map();
  config.map_json = map_to_json(map);
  config.seed = seed;

  config.ego.lane = 0;
  config.ego.s = 0.0;
  config.ego.velocity = 10.0;
  config.ego.desired_velocity = 11.0;

  config.planner.mode = mode;
  config.planner.seed = seed;

  NoiseStream placer = NoiseStream::substream(seed, 42);
  double ring_length = map.lane(0).length();
  for (int i = 0; i < agent_count; ++i) {
    AgentSpawn spawn;
    spawn.id = i + 1;
    spawn.lane = i % 2;
    double along = ring_length * (i + 1) / (agent_count + 1) + placer.uniform(-10.0, 10.0);
    // keep a clear bubble around the ego spawn on lane 0
    if (spawn.lane == 0) along = std::clamp(along, 35.0, ring_length - 35.0);
    spawn.s = along;
    // Nobody is slower than the ego wants to go, and everyone starts at
    // their steady-state speed, so lane keeping stays optimal and the ring
    // episodes are lane-change free.
    spawn.desired_velocity = placer.uniform(11.5, 13.5);
    spawn.velocity = spawn.desired_velocity;
    spawn.aggressiveness = placer.uniform(0.2, 0.9);
    config.agents.push_back(spawn);
  }
  return config;
}

ScenarioConfig make_double_merge_scenario(std::uint64_t seed, PlannerMode mode,
                                          int agent_count) {
  ScenarioConfig config;
  config.name = "double_merge";
  LaneMap map = make_double_merge_map();
  config.map_json = map_to_json(map);
  config.seed = seed;

  config.ego.lane = 1;  // middle dying lane: merge right through merging peers
  config.ego.s = 150.0;
  config.ego.velocity = 6.5;
  config.ego.desired_velocity = 8.5;

  config.planner.mode = mode;
  config.planner.seed = seed;

  NoiseStream placer = NoiseStream::substream(seed, 42);
  // A stream in the surviving lane, slower vehicles ahead of the ego that
  // must squeeze into the same stream near the wall, and a blocked outer
  // lane. The ego threads its merge exactly where the forced cut-ins land.
  struct SpawnSlot {
    LaneId lane;
    double s_lo, s_hi;
    double v_lo, v_hi;
    double vdes_lo, vdes_hi;
  };
  const SpawnSlot slots[] = {
      {0, 240.0, 280.0, 4.8, 5.2, 5.0, 5.4},
      {0, 340.0, 380.0, 4.6, 5.0, 4.8, 5.2},
      {1, 215.0, 250.0, 5.6, 6.2, 5.8, 6.4},
      {1, 300.0, 340.0, 5.4, 6.0, 5.6, 6.2},
      {1, 385.0, 425.0, 5.2, 5.8, 5.4, 6.0},
      {2, 110.0, 160.0, 6.0, 6.8, 6.4, 7.2},
      {2, 200.0, 250.0, 5.8, 6.6, 6.2, 7.0},
      {2, 290.0, 340.0, 5.6, 6.4, 6.0, 6.8},
      {2, 380.0, 430.0, 5.4, 6.2, 5.8, 6.6},
      {3, 200.0, 300.0, 5.5, 6.5, 6.0, 7.5},
      {4, 160.0, 260.0, 5.5, 6.5, 6.5, 7.5},
      {3, 330.0, 420.0, 5.0, 6.0, 5.5, 6.5},
  };
  constexpr int kSlotCount = static_cast<int>(sizeof(slots) / sizeof(slots[0]));
  double upstream = map.lane(1).length();
  for (int i = 0; i < agent_count; ++i) {
    const SpawnSlot& slot = slots[i % kSlotCount];
    // Repeat passes over the slot table shift upstream so extra agents form
    // a second wave instead of stacking on the first.
    double wave_shift = -60.0 * static_cast<double>(i / kSlotCount);
    AgentSpawn spawn;
    spawn.id = i + 1;
    spawn.lane = slot.lane;
    spawn.s = std::clamp(placer.uniform(slot.s_lo, slot.s_hi) + wave_shift, 5.0,
                         upstream - 30.0);
    spawn.velocity = placer.uniform(slot.v_lo, slot.v_hi);
    spawn.desired_velocity = placer.uniform(slot.vdes_lo, slot.vdes_hi);
    spawn.aggressiveness = placer.uniform(0.2, 0.9);
    config.agents.push_back(spawn);
  }
  return config;
}

// ---- episode and benchmark drivers ----

EpisodeResult run_episode(const ScenarioConfig& config, const CycleSink& sink) {
  Environment env(config);
  int max_cycles =
      static_cast<int>(std::ceil(config.duration / config.planner.replan_dt)) + 1;
  CycleSink wrapped = [&](const PlanResult* result, const ReplanRecord& record,
                          const BeliefMap& beliefs, const WorldState& world) {
    if (record.emergency) env.count_emergency_cycle();
    if (sink) sink(result, record, beliefs, world);
  };
  EpisodeResult episode;
  episode.records = replan_loop(env, config.planner, max_cycles, wrapped);
  episode.log = env.log();
  episode.metrics = compute_metrics(episode.log, env.map(), MetricThresholds{});
  return episode;
}

std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& options) {
  struct Task {
    std::string map;
    PlannerMode mode;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const std::string& map : options.maps)
    for (PlannerMode mode : options.modes)
      for (int episode = 0; episode < options.episodes; ++episode)
        tasks.push_back({map, mode, options.seed + static_cast<std::uint64_t>(episode)});

  std::vector<BenchmarkRow> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto run_task = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) break;
      try {
        const Task& task = tasks[i];
        ScenarioConfig config =
            task.map == "ring"
                ? (options.agent_count > 0
                       ? make_ring_scenario(task.seed, task.mode, options.agent_count)
                       : make_ring_scenario(task.seed, task.mode))
                : (options.agent_count > 0
                       ? make_double_merge_scenario(task.seed, task.mode, options.agent_count)
                       : make_double_merge_scenario(task.seed, task.mode));
        config.duration = options.duration;
        EpisodeResult episode = run_episode(config);
        rows[i] = {task.map, to_string(task.mode), task.seed, episode.metrics};
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };

  unsigned workers = options.threads > 0 ? static_cast<unsigned>(options.threads)
                                         : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(tasks.size()));
  if (workers <= 1) {
    run_task();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 0; w + 1 < workers; ++w) pool.emplace_back(run_task);
    run_task();
    for (std::thread& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return rows;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream out;
  out << "map,mode,seed,safety,avg_vel,ud_per_km,lcc_per_km,collisions\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const BenchmarkRow& row : rows) {
    out << row.map << ',' << row.mode << ',' << row.seed << ','
        << row.metrics.safety_fraction << ',' << row.metrics.avg_velocity << ','
        << row.metrics.ud_per_km << ',' << row.metrics.lcc_per_km << ','
        << row.metrics.collisions << '\n';
  }
  return out.str();
}

std::vector<BenchmarkRow> benchmark_rows_from_csv(const std::string& csv) {
  std::vector<BenchmarkRow> rows;
  std::istringstream in(csv);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      continue;
    }
    std::istringstream fields(line);
    std::string field;
    std::vector<std::string> parts;
    while (std::getline(fields, field, ',')) parts.push_back(field);
    if (parts.size() != 8) throw ConfigError("malformed benchmark csv row: " + line);
    BenchmarkRow row;
    row.map = parts[0];
    row.mode = parts[1];
    row.seed = std::stoull(parts[2]);
    row.metrics.safety_fraction = std::stod(parts[3]);
    row.metrics.avg_velocity = std::stod(parts[4]);
    row.metrics.ud_per_km = std::stod(parts[5]);
    row.metrics.lcc_per_km = std::stod(parts[6]);
    row.metrics.collisions = std::stoi(parts[7]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string benchmark_markdown(const std::vector<BenchmarkRow>& rows) {
  struct Bucket {
    double safety = 0.0;
    double avg_vel = 0.0;
    double ud = 0.0;
    double lcc = 0.0;
    int count = 0;
  };
  std::map<std::pair<std::string, std::string>, Bucket> buckets;
  for (const BenchmarkRow& row : rows) {
    Bucket& bucket = buckets[{row.map, row.mode}];
    bucket.safety += row.metrics.safety_fraction;
    bucket.avg_vel += row.metrics.avg_velocity;
    bucket.ud += row.metrics.ud_per_km;
    bucket.lcc += row.metrics.lcc_per_km;
    ++bucket.count;
  }
  std::ostringstream out;
  out << "| Map | Mode | Safety | Avg. Vel. (m/s) | UD (#/km) | LCC (#/km) |\n";
  out << "|---|---|---|---|---|---|\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& [key, bucket] : buckets) {
    double n = bucket.count;
    out << "| " << key.first << " | " << key.second << " | " << bucket.safety / n << " | "
        << bucket.avg_vel / n << " | " << bucket.ud / n << " | " << bucket.lcc / n << " |\n";
  }
  return out.str();
}

}  // namespace gbp
