#include "gbp/sim_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gbp/errors.hpp"

namespace gbp {

namespace {

constexpr double kEps = 1e-9;

double square(double x) { return x * x; }

// std::pow is a hot spot in the rollout loop; the exponent is almost always
// the default 4.
double pow_fast(double base, double exponent) {
  if (exponent == 4.0) return square(square(base));
  if (exponent == 2.0) return square(base);
  if (exponent == 1.0) return base;
  return std::pow(base, exponent);
}

// A vehicle matters for car-following or proximity annotation when it sits
// close to the observer's lateral position or close to the corridor itself
// (the latter keeps target-lane traffic visible during a lane change).
bool laterally_relevant(double other_d, double self_d, double band) {
  return std::min(std::abs(other_d - self_d), std::abs(other_d)) <= band;
}

}  // namespace

double idm_acceleration(double velocity, std::optional<double> lead_velocity,
                        std::optional<double> gap, const IdmParams& p) {
  if (gap && *gap <= 0.0)
    throw NonPositiveGap("car-following gap " + std::to_string(*gap) + " m");
  double v0 = std::max(p.desired_velocity, kEps);
  double free_term = 1.0 - pow_fast(std::max(velocity, 0.0) / v0, p.accel_exponent);
  double interaction = 0.0;
  if (lead_velocity && gap) {
    double closing = velocity - *lead_velocity;
    double desired_gap = p.min_spacing + velocity * p.safe_time_headway +
                         velocity * closing /
                             (2.0 * std::sqrt(p.max_accel * p.comfortable_decel));
    interaction = square(desired_gap / *gap);
  }
  double accel = p.max_accel * (free_term - interaction);
  return std::clamp(accel, -p.hard_brake_cap, p.max_accel);
}

double pure_pursuit_steer(const VehicleState& state, const Corridor& path,
                          double lateral_offset, const PurePursuitParams& p,
                          const Corridor::Projection* self_projection) {
  if (path.empty()) throw PathExhausted("target path has no geometry");
  Corridor::Projection self =
      self_projection ? *self_projection : path.project(state.position, state.heading);
  double lookahead = p.lookahead_base + p.lookahead_gain * std::max(state.velocity, 0.0);
  double target_s = self.s + lookahead;
  if (!path.ring() && target_s > path.length() + kEps)
    throw PathExhausted("target path ends " + std::to_string(path.length() - self.s) +
                        " m ahead, lookahead " + std::to_string(lookahead) + " m");
  Vec2 target = path.offset_point_at(target_s, lateral_offset);
  Vec2 rel = target - state.position;
  double chord = rel.norm();
  if (chord < kEps) return 0.0;
  // sin(alpha) without the intermediate angle: cross of the heading direction
  // with the unit vector toward the target.
  Vec2 forward{std::cos(state.heading), std::sin(state.heading)};
  double sin_alpha = forward.cross(rel) / chord;
  double steer = std::atan(2.0 * p.wheelbase * sin_alpha / chord);
  return std::clamp(steer, -p.max_steer, p.max_steer);
}

double rss_min_safe_gap(double v_rear, double v_front, const RssParams& p) {
  double rho = p.response_time;
  double v_response = v_rear + rho * p.max_accel_during_response;
  double gap = v_rear * rho + 0.5 * p.max_accel_during_response * square(rho) +
               square(v_response) / (2.0 * p.min_brake) -
               square(v_front) / (2.0 * p.max_brake);
  return std::max(0.0, gap);
}

MobilResult lane_change_incentive(const WorldState& world, int vehicle,
                                  LateralAction direction, const MobilParams& p) {
  const Vehicle* self = world.find(vehicle);
  if (!self) throw OffMap("unknown vehicle id " + std::to_string(vehicle));
  if (direction == LateralAction::kLaneKeep) return {0.0, false};
  const LaneMap& map = *world.map;
  auto current = nearest_lane(map, self->state.position);
  if (!current) throw OffMap("vehicle " + std::to_string(vehicle) + " is off the map");
  LaneId target = target_lane_for(map, direction, *current);

  auto idm_for = [&](const Vehicle& v) {
    IdmParams params = p.idm;
    params.desired_velocity = v.params.desired_velocity;
    return params;
  };
  auto accel_behind = [&](const Vehicle& v, int lead_id, double gap) {
    const Vehicle* lead = world.find(lead_id);
    return idm_acceleration(v.state.velocity, lead->state.velocity, gap, idm_for(v));
  };
  auto accel_free = [&](const Vehicle& v) {
    return idm_acceleration(v.state.velocity, std::nullopt, std::nullopt, idm_for(v));
  };

  try {
    SurroundingVehicles cur = surrounding_vehicles(world, vehicle, *current);
    SurroundingVehicles tgt = surrounding_vehicles(world, vehicle, target);

    double self_before = cur.leader ? accel_behind(*self, cur.leader->id, cur.leader->gap)
                                    : accel_free(*self);
    double self_after = tgt.leader ? accel_behind(*self, tgt.leader->id, tgt.leader->gap)
                                   : accel_free(*self);

    // The slot the changing vehicle vacates or fills spans its own length.
    double slot = self->params.length;
    double new_follower_before = 0.0, new_follower_after = 0.0;
    if (tgt.follower) {
      const Vehicle& follower = *world.find(tgt.follower->id);
      new_follower_before =
          tgt.leader
              ? accel_behind(follower, tgt.leader->id, tgt.follower->gap + tgt.leader->gap + slot)
              : accel_free(follower);
      new_follower_after = accel_behind(follower, vehicle, tgt.follower->gap);
    }
    double old_follower_before = 0.0, old_follower_after = 0.0;
    if (cur.follower) {
      const Vehicle& follower = *world.find(cur.follower->id);
      old_follower_before = accel_behind(follower, vehicle, cur.follower->gap);
      old_follower_after =
          cur.leader
              ? accel_behind(follower, cur.leader->id, cur.follower->gap + cur.leader->gap + slot)
              : accel_free(follower);
    }

    MobilResult result;
    result.incentive = (self_after - self_before) +
                       p.politeness * ((new_follower_after - new_follower_before) +
                                       (old_follower_after - old_follower_before));
    result.safety_veto = tgt.follower && new_follower_after < -p.safe_braking;
    return result;
  } catch (const NonPositiveGap&) {
    // A vehicle already occupies the target slot (or the current lane has
    // degenerated into a collision state): never change.
    return {-1e9, true};
  }
}

double action_target_velocity(LongitudinalAction lon, double base_desired,
                              double speed_limit, const SimulationParams& p) {
  switch (lon) {
    case LongitudinalAction::kAccelerate:
      return std::min(base_desired + p.accel_speed_offset,
                      speed_limit * p.speed_limit_tolerance);
    case LongitudinalAction::kMaintain:
      return base_desired;
    case LongitudinalAction::kDecelerate:
      return std::max(base_desired - p.decel_speed_offset, 0.0);
  }
  return base_desired;
}

std::shared_ptr<const Corridor> CorridorCache::get(LaneId lane) const {
  auto it = cache_.find(lane);
  if (it != cache_.end()) return it->second;
  auto corridor = std::make_shared<Corridor>(Corridor::build(*map_, lane, backward_, forward_));
  cache_.emplace(lane, corridor);
  return corridor;
}

bool CorridorCache::ends_at_wall(LaneId lane) const {
  auto it = wall_cache_.find(lane);
  if (it != wall_cache_.end()) return it->second;
  auto corridor = get(lane);
  bool wall = false;
  if (!corridor->ring() && !corridor->empty()) {
    Vec2 end = corridor->point_at(corridor->length());
    for (const Lane& other : map_->lanes) {
      if (other.id == lane) continue;
      auto escape = get(other.id);
      if (escape->empty()) continue;
      auto proj = escape->project(end);
      if (std::abs(proj.d) > 3.5 * map_->lane_width) continue;
      if (escape->ring() || escape->length() - proj.s > 20.0) {
        wall = true;
        break;
      }
    }
  }
  wall_cache_.emplace(lane, wall);
  return wall;
}

ResolvedBehavior resolve_behavior(const WorldState& world, int vehicle,
                                  LateralAction lateral, LongitudinalAction lon,
                                  const SimulationParams& p, const CorridorCache& corridors) {
  const Vehicle* veh = world.find(vehicle);
  if (!veh) throw OffMap("unknown vehicle id " + std::to_string(vehicle));
  const LaneMap& map = *world.map;
  auto current = nearest_lane(map, veh->state.position);
  if (!current) throw OffMap("vehicle " + std::to_string(vehicle) + " is off the map");
  LaneId target =
      lateral == LateralAction::kLaneKeep ? *current : target_lane_for(map, lateral, *current);
  ResolvedBehavior behavior;
  behavior.target_lane = target;
  behavior.corridor = corridors.get(target);
  behavior.wall_ahead = corridors.ends_at_wall(target);
  behavior.desired_velocity =
      action_target_velocity(lon, veh->params.desired_velocity, map.lane(target).speed_limit, p);
  return behavior;
}

namespace {

// Along-corridor pose of one vehicle, re-anchored by an exact projection at
// the start of every step and advanced kinematically within the substeps.
struct Track {
  double s = 0.0;
  double d = 0.0;
  double cos_err = 1.0;
  double sin_err = 0.0;
};

// Dead-ending corridors act like a stopped leader parked short of the end.
constexpr double kWallStopMargin = 5.0;    // m
constexpr double kWallBrakeRange = 150.0;  // m; ignore walls farther than this

// Lateral bands for the lane-change responsibility flip in annotate_world:
// the ego counts as mid-change while farther than this from the target
// centerline, and a vehicle counts as established in the target lane while
// within the occupant band of it.
constexpr double kLaneSettledBand = 0.5;   // m
constexpr double kLaneOccupantBand = 1.2;  // m

}  // namespace

WorldState step_closed_loop(const WorldState& world, BehaviorMap& behaviors,
                            double dt, const SimulationParams& p,
                            std::map<int, NoiseStream>* streams,
                            StepAnnotation* annotation) {
  WorldState out = world;
  if (annotation) *annotation = StepAnnotation{};
  const int substeps = std::max(1, p.substeps);
  const double sub_dt = dt / substeps;
  const std::size_t count = out.vehicles.size();

  // Distinct corridors referenced this step, with per-vehicle tracks.
  std::vector<const Corridor*> corridors;
  std::vector<std::vector<Track>> tracks;
  std::map<const Corridor*, std::size_t> corridor_index;
  for (const Vehicle& veh : out.vehicles) {
    auto bit = behaviors.find(veh.params.id);
    if (bit == behaviors.end() || !bit->second.corridor) continue;
    const Corridor* corridor = bit->second.corridor.get();
    auto [it, fresh] = corridor_index.try_emplace(corridor, corridors.size());
    if (!fresh) continue;
    corridors.push_back(corridor);
    tracks.emplace_back(count);
    ResolvedBehavior& owner = bit->second;
    std::vector<Track>& row = tracks.back();
    for (std::size_t j = 0; j < count; ++j) {
      const Vehicle& other = out.vehicles[j];
      int& hint = owner.hints.try_emplace(other.params.id, -1).first->second;
      auto proj = corridor->project(other.state.position, other.state.heading, hint);
      hint = proj.segment;
      row[j] = {proj.s, proj.d, std::cos(proj.heading_error), std::sin(proj.heading_error)};
    }
  }

  std::vector<double> velocities(count);
  std::vector<double> new_velocities(count);
  for (int sub = 0; sub < substeps; ++sub) {
    for (std::size_t i = 0; i < count; ++i) velocities[i] = out.vehicles[i].state.velocity;

    for (std::size_t i = 0; i < count; ++i) {
      Vehicle& veh = out.vehicles[i];
      auto bit = behaviors.find(veh.params.id);
      double accel_cmd = 0.0;
      double steer_cmd = veh.state.steering_angle;  // unmanaged: coast straight on
      if (bit != behaviors.end() && bit->second.corridor) {
        const ResolvedBehavior& behavior = bit->second;
        const Corridor& corridor = *behavior.corridor;
        const std::vector<Track>& row = tracks[corridor_index.at(behavior.corridor.get())];
        const Track& self = row[i];

        IdmParams idm = behavior.idm ? *behavior.idm : p.idm;
        if (behavior.desired_velocity > 0.0) idm.desired_velocity = behavior.desired_velocity;

        accel_cmd = 0.0;
        if (behavior.reactive) {
          double best_gap = std::numeric_limits<double>::max();
          double lead_velocity = 0.0;
          bool found = false;
          for (std::size_t j = 0; j < count; ++j) {
            if (j == i) continue;
            const Track& other = row[j];
            if (!laterally_relevant(other.d, self.d, p.lateral_overlap)) continue;
            double along = corridor.arc_delta(self.s, other.s);
            if (along <= 0.0) continue;
            double gap = along - 0.5 * (veh.params.length + out.vehicles[j].params.length);
            if (gap < best_gap) {
              best_gap = gap;
              lead_velocity = velocities[j];
              found = true;
            }
          }
          if (!found) {
            accel_cmd = idm_acceleration(velocities[i], std::nullopt, std::nullopt, idm);
          } else if (best_gap <= 0.0) {
            accel_cmd = -idm.hard_brake_cap;
          } else {
            accel_cmd = idm_acceleration(velocities[i], lead_velocity, best_gap, idm);
          }
          if (behavior.wall_ahead) {
            double to_stop = corridor.length() - self.s - kWallStopMargin;
            if (to_stop < kWallBrakeRange) {
              double wall_accel = to_stop <= 0.0
                                      ? -idm.hard_brake_cap
                                      : idm_acceleration(velocities[i], 0.0, to_stop, idm);
              accel_cmd = std::min(accel_cmd, wall_accel);
            }
          }
        }

        Corridor::Projection proj{self.s, self.d, 0.0, 0};
        try {
          steer_cmd = pure_pursuit_steer(veh.state, corridor, 0.0, p.pursuit, &proj);
        } catch (const PathExhausted&) {
          steer_cmd = 0.0;  // corridor ran out: roll straight until retired
          if (annotation && veh.params.id == out.ego_id && behavior.wall_ahead)
            annotation->ego_wall_overrun = true;
        }

        if (streams) {
          auto sit = streams->find(veh.params.id);
          if (sit != streams->end()) {
            // Both samples are drawn unconditionally so the stream position
            // never depends on the behavior flags. The ego executes its plan
            // exactly; noise models the other agents' responses.
            double accel_noise = sit->second.gaussian(0.0, p.noise.accel_stddev);
            double steer_noise = sit->second.gaussian(0.0, p.noise.steer_stddev);
            if (behavior.with_noise && veh.params.id != out.ego_id) {
              accel_cmd += accel_noise;
              steer_cmd += steer_noise;
            }
          }
        }
        accel_cmd = std::clamp(accel_cmd, -idm.hard_brake_cap, idm.max_accel);
      }

      double steer_step = p.max_steer_rate * sub_dt;
      double steer = std::clamp(steer_cmd, veh.state.steering_angle - steer_step,
                                veh.state.steering_angle + steer_step);
      steer = std::clamp(steer, -p.pursuit.max_steer, p.pursuit.max_steer);
      double velocity = std::max(0.0, velocities[i] + accel_cmd * sub_dt);
      double wheelbase = std::max(veh.params.wheelbase, kEps);
      double heading =
          normalize_angle(veh.state.heading + velocity * std::tan(steer) / wheelbase * sub_dt);
      veh.state.position =
          veh.state.position + Vec2{std::cos(heading), std::sin(heading)} * (velocity * sub_dt);
      veh.state.heading = heading;
      veh.state.velocity = velocity;
      veh.state.acceleration = accel_cmd;
      veh.state.steering_angle = steer;
      veh.state.curvature = std::tan(steer) / wheelbase;
      new_velocities[i] = velocity;
    }

    if (sub + 1 < substeps) {
      for (std::size_t c = 0; c < corridors.size(); ++c) {
        std::vector<Track>& row = tracks[c];
        for (std::size_t i = 0; i < count; ++i) {
          row[i].s += new_velocities[i] * row[i].cos_err * sub_dt;
          row[i].d += new_velocities[i] * row[i].sin_err * sub_dt;
        }
      }
    }

    if (annotation) {
      for (std::size_t i = 0; i < count; ++i) {
        const Vehicle& a = out.vehicles[i];
        for (std::size_t j = i + 1; j < count; ++j) {
          const Vehicle& b = out.vehicles[j];
          double reach = 0.5 * (a.params.length + b.params.length) + 1.0;
          if ((a.state.position - b.state.position).squared_norm() > reach * reach) continue;
          if (!boxes_overlap(a.footprint(), b.footprint())) continue;
          annotation->any_collision = true;
          if (a.params.id == out.ego_id || b.params.id == out.ego_id)
            annotation->ego_collision = true;
        }
      }
    }
  }
  out.time = world.time + dt;

  if (annotation) {
    auto bit = behaviors.find(out.ego_id);
    if (bit != behaviors.end() && bit->second.corridor) {
      StepAnnotation proximity =
          annotate_world(out, *bit->second.corridor, p, -1, &bit->second.hints);
      annotation->min_gap = proximity.min_gap;
      annotation->rss_shortfall = proximity.rss_shortfall;
      annotation->ego_collision |= proximity.ego_collision;
      annotation->any_collision |= proximity.any_collision;
    }
  }
  return out;
}

std::vector<TimedEgoState> Rollout::ego_trace() const {
  std::vector<TimedEgoState> trace;
  trace.reserve(states.size());
  for (const WorldState& world : states) {
    const Vehicle* ego = world.find(world.ego_id);
    if (ego) trace.push_back({world.time, ego->state});
  }
  return trace;
}

std::vector<double> horizon_steps(double horizon, double resolution) {
  std::vector<double> steps;
  if (horizon <= kEps || resolution <= 0.0) return steps;
  int whole = static_cast<int>(std::floor(horizon / resolution + kEps));
  double remainder = horizon - whole * resolution;
  if (remainder > kEps) steps.push_back(remainder);
  steps.insert(steps.end(), whole, resolution);
  return steps;
}

StepAnnotation annotate_world(const WorldState& world, const Corridor& ego_corridor,
                              const SimulationParams& p, int focus_vehicle,
                              std::map<int, int>* hints) {
  StepAnnotation annotation;
  const Vehicle* ego = world.find(world.ego_id);
  if (!ego || ego_corridor.empty()) return annotation;

  auto project = [&](const Vehicle& v) {
    int hint = -1;
    if (hints) {
      auto it = hints->find(v.params.id);
      if (it != hints->end()) hint = it->second;
    }
    auto proj = ego_corridor.project(v.state.position, v.state.heading, hint);
    if (hints) (*hints)[v.params.id] = proj.segment;
    return proj;
  };

  Corridor::Projection self = project(*ego);
  for (const Vehicle& other : world.vehicles) {
    if (other.params.id == ego->params.id) continue;
    if (focus_vehicle >= 0 && other.params.id != focus_vehicle) continue;
    double reach = 0.5 * (ego->params.length + other.params.length) + 1.0;
    if ((ego->state.position - other.state.position).squared_norm() <= reach * reach &&
        boxes_overlap(ego->footprint(), other.footprint())) {
      annotation.ego_collision = true;
      annotation.any_collision = true;
    }
    Corridor::Projection proj = project(other);
    if (!laterally_relevant(proj.d, self.d, p.lateral_overlap)) continue;
    double along = ego_corridor.arc_delta(self.s, proj.s);
    double gap = std::abs(along) - 0.5 * (ego->params.length + other.params.length);
    annotation.min_gap = std::min(annotation.min_gap, gap);
    // Keeping the gap to a leader is the ego's responsibility; the gap to a
    // follower is the follower's, otherwise tailgating traffic would penalize
    // every policy that stays in lane. Changing lanes flips that: until the
    // ego settles near the target centerline, anyone established in the
    // target lane behind it is owed the new-follower gap.
    double required;
    if (along < 0.0) {
      bool ego_crossing = std::abs(self.d) > kLaneSettledBand;
      bool established_behind = std::abs(proj.d) <= kLaneOccupantBand;
      if (!ego_crossing || !established_behind) continue;
      required = rss_min_safe_gap(other.state.velocity, ego->state.velocity, p.rss);
    } else {
      required = rss_min_safe_gap(ego->state.velocity, other.state.velocity, p.rss);
    }
    annotation.rss_shortfall = std::max(annotation.rss_shortfall, std::max(0.0, required - gap));
  }
  return annotation;
}

bool OpenLoopBackdrop::covers(double total_horizon, double step) const {
  return std::abs(horizon - total_horizon) <= kEps && std::abs(resolution - step) <= kEps;
}

OpenLoopBackdrop build_open_loop_backdrop(const WorldState& world,
                                          const std::vector<int>& vehicles,
                                          double horizon, double resolution,
                                          const SimulationParams& p,
                                          const CorridorCache& corridors) {
  OpenLoopBackdrop backdrop;
  backdrop.horizon = horizon;
  backdrop.resolution = resolution;
  for (const Vehicle& veh : world.vehicles)
    if (veh.params.id != world.ego_id) backdrop.agents.push_back(veh);

  const std::vector<double> steps = horizon_steps(horizon, resolution);
  auto frozen = [&](int vehicle, LateralAction lateral) {
    ResolvedBehavior behavior =
        resolve_behavior(world, vehicle, lateral, LongitudinalAction::kMaintain, p, corridors);
    behavior.reactive = false;
    behavior.with_noise = false;
    return behavior;
  };
  auto roll = [&](WorldState start, BehaviorMap behaviors) {
    std::vector<std::vector<VehicleState>> rows;
    rows.reserve(steps.size() + 1);
    auto snapshot = [&rows](const WorldState& w) {
      std::vector<VehicleState> row;
      row.reserve(w.vehicles.size());
      for (const Vehicle& veh : w.vehicles) row.push_back(veh.state);
      rows.push_back(std::move(row));
    };
    snapshot(start);
    for (double step_dt : steps) {
      start = step_closed_loop(start, behaviors, step_dt, p, nullptr, nullptr);
      snapshot(start);
    }
    return rows;
  };

  WorldState agents_only = world;
  agents_only.vehicles = backdrop.agents;
  BehaviorMap lane_keep;
  for (const Vehicle& veh : backdrop.agents)
    lane_keep.emplace(veh.params.id, frozen(veh.params.id, LateralAction::kLaneKeep));
  backdrop.baseline = roll(std::move(agents_only), std::move(lane_keep));

  // A deviating vehicle never reacts, so its trace is independent of everyone
  // else and can be rolled in isolation.
  for (int vehicle : vehicles) {
    const Vehicle* veh = world.find(vehicle);
    if (!veh || vehicle == world.ego_id) continue;
    for (LateralAction lateral :
         {LateralAction::kLaneChangeLeft, LateralAction::kLaneChangeRight}) {
      BehaviorMap solo_behavior;
      try {
        solo_behavior.emplace(vehicle, frozen(vehicle, lateral));
      } catch (const NoSuchNeighbor&) {
        backdrop.infeasible.insert({vehicle, lateral});
        continue;
      }
      WorldState solo = world;
      solo.vehicles.assign(1, *veh);
      std::vector<std::vector<VehicleState>> rows = roll(std::move(solo), std::move(solo_behavior));
      std::vector<VehicleState> trace;
      trace.reserve(rows.size());
      for (const std::vector<VehicleState>& row : rows) trace.push_back(row.front());
      backdrop.deviations.emplace(std::make_pair(vehicle, lateral), std::move(trace));
    }
  }
  return backdrop;
}

Rollout simulate_open_loop(const WorldState& world, int hypothesis_vehicle,
                           LateralAction hypothesis,
                           const std::vector<SemanticAction>& ego_policy,
                           double resolution, const SimulationParams& p,
                           const CorridorCache& corridors,
                           const OpenLoopBackdrop* backdrop) {
  const LaneMap& map = *world.map;
  const Vehicle& ego = world.ego();
  auto origin = nearest_lane(map, ego.state.position);
  if (!origin) throw OffMap("ego is off the map");

  std::vector<SemanticAction> policy = ego_policy;
  if (policy.empty()) policy.push_back({});
  double total = 0.0;
  for (const SemanticAction& action : policy) total += action.duration;

  std::size_t expected_agents = 0;
  for (const Vehicle& veh : world.vehicles)
    if (veh.params.id != world.ego_id) ++expected_agents;
  OpenLoopBackdrop local;
  if (!backdrop || !backdrop->covers(total, resolution) ||
      backdrop->agents.size() != expected_agents) {
    local = build_open_loop_backdrop(world, {hypothesis_vehicle}, total, resolution, p, corridors);
    backdrop = &local;
  }

  const std::vector<VehicleState>* deviation = nullptr;
  if (hypothesis != LateralAction::kLaneKeep && world.find(hypothesis_vehicle)) {
    auto key = std::make_pair(hypothesis_vehicle, hypothesis);
    auto dit = backdrop->deviations.find(key);
    if (dit == backdrop->deviations.end() && !backdrop->infeasible.count(key)) {
      local = build_open_loop_backdrop(world, {hypothesis_vehicle}, total, resolution, p, corridors);
      backdrop = &local;
      dit = backdrop->deviations.find(key);
    }
    if (dit == backdrop->deviations.end()) {
      // Surfaces the canonical NoSuchNeighbor for an infeasible hypothesis.
      resolve_behavior(world, hypothesis_vehicle, hypothesis, LongitudinalAction::kMaintain, p,
                       corridors);
    } else {
      deviation = &dit->second;
    }
  }

  const std::size_t agent_count = backdrop->agents.size();
  auto agent_state = [&](std::size_t step_index, std::size_t j) -> const VehicleState& {
    if (deviation && backdrop->agents[j].params.id == hypothesis_vehicle)
      return (*deviation)[step_index];
    return backdrop->baseline[step_index][j];
  };
  auto compose = [&](std::size_t step_index, double time, const VehicleState& ego_state) {
    WorldState out = world;
    out.time = time;
    std::size_t j = 0;
    for (Vehicle& veh : out.vehicles) {
      if (veh.params.id == world.ego_id) {
        veh.state = ego_state;
      } else {
        veh.state = agent_state(step_index, j);
        ++j;
      }
    }
    return out;
  };

  // Lateral actions are anchored to the lane the ego occupies at the start of
  // the sequence, so a lane change followed by lane-keep means "change, then
  // settle" rather than a chain of changes.
  auto ego_behavior_for = [&](const SemanticAction& action) {
    ResolvedBehavior behavior;
    LaneId target = action.lateral == LateralAction::kLaneKeep
                        ? *origin
                        : target_lane_for(map, action.lateral, *origin);
    behavior.target_lane = target;
    behavior.corridor = corridors.get(target);
    behavior.wall_ahead = corridors.ends_at_wall(target);
    behavior.desired_velocity = action_target_velocity(
        action.longitudinal, ego.params.desired_velocity, map.lane(target).speed_limit, p);
    behavior.with_noise = false;
    return behavior;
  };

  Rollout rollout;
  rollout.step = resolution;
  rollout.states.push_back(world);

  std::map<int, int> annotation_hints;
  ResolvedBehavior ego_behavior = ego_behavior_for(policy[0]);
  StepAnnotation initial = annotate_world(world, *ego_behavior.corridor, p,
                                          hypothesis_vehicle, &annotation_hints);
  rollout.annotations.push_back(initial);
  rollout.collision |= initial.any_collision;
  rollout.ego_collision |= initial.ego_collision;
  rollout.max_rss_shortfall = std::max(rollout.max_rss_shortfall, initial.rss_shortfall);

  // Only the ego is integrated here; everyone else plays back the backdrop.
  // The stepping mirrors step_closed_loop: exact projections re-anchor the
  // tracks at every step, substeps advance them kinematically.
  const int substeps = std::max(1, p.substeps);
  VehicleState ego_state = ego.state;
  double time = world.time;
  double elapsed = 0.0;
  std::size_t action_index = 0;
  double action_end = policy[0].duration;
  std::vector<Track> agent_tracks(agent_count);
  std::size_t step_index = 0;
  for (double step_dt : horizon_steps(total, resolution)) {
    while (action_index + 1 < policy.size() && elapsed >= action_end - kEps) {
      ++action_index;
      action_end += policy[action_index].duration;
      ResolvedBehavior next = ego_behavior_for(policy[action_index]);
      next.hints = std::move(ego_behavior.hints);
      ego_behavior = std::move(next);
    }

    const Corridor& corridor = *ego_behavior.corridor;
    auto track_of = [&](int id, const VehicleState& state) {
      int& hint = ego_behavior.hints.try_emplace(id, -1).first->second;
      auto proj = corridor.project(state.position, state.heading, hint);
      hint = proj.segment;
      return Track{proj.s, proj.d, std::cos(proj.heading_error), std::sin(proj.heading_error)};
    };
    Track self = track_of(world.ego_id, ego_state);
    for (std::size_t j = 0; j < agent_count; ++j)
      agent_tracks[j] = track_of(backdrop->agents[j].params.id, agent_state(step_index, j));

    IdmParams idm = ego_behavior.idm ? *ego_behavior.idm : p.idm;
    if (ego_behavior.desired_velocity > 0.0) idm.desired_velocity = ego_behavior.desired_velocity;

    const double sub_dt = step_dt / substeps;
    for (int sub = 0; sub < substeps; ++sub) {
      double accel_cmd = 0.0;
      if (ego_behavior.reactive) {
        double best_gap = std::numeric_limits<double>::max();
        double lead_velocity = 0.0;
        bool found = false;
        for (std::size_t j = 0; j < agent_count; ++j) {
          const Track& other = agent_tracks[j];
          if (!laterally_relevant(other.d, self.d, p.lateral_overlap)) continue;
          double along = corridor.arc_delta(self.s, other.s);
          if (along <= 0.0) continue;
          double gap = along - 0.5 * (ego.params.length + backdrop->agents[j].params.length);
          if (gap < best_gap) {
            best_gap = gap;
            lead_velocity = agent_state(step_index, j).velocity;
            found = true;
          }
        }
        if (!found) {
          accel_cmd = idm_acceleration(ego_state.velocity, std::nullopt, std::nullopt, idm);
        } else if (best_gap <= 0.0) {
          accel_cmd = -idm.hard_brake_cap;
        } else {
          accel_cmd = idm_acceleration(ego_state.velocity, lead_velocity, best_gap, idm);
        }
        if (ego_behavior.wall_ahead) {
          double to_stop = corridor.length() - self.s - kWallStopMargin;
          if (to_stop < kWallBrakeRange) {
            double wall_accel = to_stop <= 0.0
                                    ? -idm.hard_brake_cap
                                    : idm_acceleration(ego_state.velocity, 0.0, to_stop, idm);
            accel_cmd = std::min(accel_cmd, wall_accel);
          }
        }
      }

      double steer_cmd = ego_state.steering_angle;
      Corridor::Projection proj{self.s, self.d, 0.0, 0};
      try {
        steer_cmd = pure_pursuit_steer(ego_state, corridor, 0.0, p.pursuit, &proj);
      } catch (const PathExhausted&) {
        steer_cmd = 0.0;  // corridor ran out: roll straight until retired
        if (ego_behavior.wall_ahead) rollout.ego_wall_overrun = true;
      }
      accel_cmd = std::clamp(accel_cmd, -idm.hard_brake_cap, idm.max_accel);

      double steer_step = p.max_steer_rate * sub_dt;
      double steer = std::clamp(steer_cmd, ego_state.steering_angle - steer_step,
                                ego_state.steering_angle + steer_step);
      steer = std::clamp(steer, -p.pursuit.max_steer, p.pursuit.max_steer);
      double velocity = std::max(0.0, ego_state.velocity + accel_cmd * sub_dt);
      double wheelbase = std::max(ego.params.wheelbase, kEps);
      double heading =
          normalize_angle(ego_state.heading + velocity * std::tan(steer) / wheelbase * sub_dt);
      ego_state.position =
          ego_state.position + Vec2{std::cos(heading), std::sin(heading)} * (velocity * sub_dt);
      ego_state.heading = heading;
      ego_state.velocity = velocity;
      ego_state.acceleration = accel_cmd;
      ego_state.steering_angle = steer;
      ego_state.curvature = std::tan(steer) / wheelbase;

      if (sub + 1 < substeps) {
        self.s += velocity * self.cos_err * sub_dt;
        self.d += velocity * self.sin_err * sub_dt;
        for (std::size_t j = 0; j < agent_count; ++j) {
          double v = agent_state(step_index, j).velocity;
          agent_tracks[j].s += v * agent_tracks[j].cos_err * sub_dt;
          agent_tracks[j].d += v * agent_tracks[j].sin_err * sub_dt;
        }
      }
    }

    ++step_index;
    elapsed += step_dt;
    time += step_dt;
    WorldState current = compose(step_index, time, ego_state);
    StepAnnotation annotation = annotate_world(current, *ego_behavior.corridor, p,
                                               hypothesis_vehicle, &annotation_hints);
    rollout.states.push_back(std::move(current));
    rollout.annotations.push_back(annotation);
    rollout.collision |= annotation.any_collision;
    rollout.ego_collision |= annotation.ego_collision;
    rollout.max_rss_shortfall = std::max(rollout.max_rss_shortfall, annotation.rss_shortfall);
  }
  return rollout;
}

}  // namespace gbp
