#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "gbp/rng.hpp"
#include "gbp/world_model.hpp"

namespace gbp {

// Intelligent driver model parameters.
struct IdmParams {
  double desired_velocity = 13.9;  // v0
  double safe_time_headway = 1.2;  // T
  double max_accel = 2.0;          // a
  double comfortable_decel = 2.5;  // b
  double min_spacing = 2.0;        // s0
  double accel_exponent = 4.0;     // delta
  double hard_brake_cap = 8.0;     // output clamp floor (positive magnitude)
};

// IDM longitudinal acceleration. Free-road term only when no leader is
// given. Throws NonPositiveGap when a leader is present with gap <= 0.
double idm_acceleration(double velocity, std::optional<double> lead_velocity,
                        std::optional<double> gap, const IdmParams& p);

struct PurePursuitParams {
  double lookahead_base = 4.0;
  double lookahead_gain = 0.5;  // seconds of travel added to the base
  double wheelbase = 2.85;
  double max_steer = 0.6;
};

// Geometric pure-pursuit steering toward the corridor offset by
// `lateral_offset`. Throws PathExhausted when the corridor ends within the
// lookahead distance. `self_projection` skips the internal projection when
// the caller already tracks the vehicle on `path`.
double pure_pursuit_steer(const VehicleState& state, const Corridor& path,
                          double lateral_offset, const PurePursuitParams& p,
                          const Corridor::Projection* self_projection = nullptr);

struct RssParams {
  double response_time = 0.6;              // rho
  double max_accel_during_response = 2.0;  // rear vehicle acceleration during rho
  double min_brake = 4.0;                  // rear vehicle guaranteed braking
  double max_brake = 8.0;                  // front vehicle worst-case braking
};

// Minimum longitudinal gap the rear vehicle must keep to be RSS-safe.
double rss_min_safe_gap(double v_rear, double v_front, const RssParams& p);

struct MobilParams {
  double politeness = 0.3;
  double safe_braking = 4.0;  // veto when the new follower must brake harder
  IdmParams idm;
};

struct MobilResult {
  double incentive = 0.0;
  bool safety_veto = false;
};

// MOBIL lane-change incentive for `vehicle` moving one lane in `direction`.
// Positive incentive favors the change; safety_veto is set when the new
// follower's post-change braking exceeds the safe bound.
MobilResult lane_change_incentive(const WorldState& world, int vehicle,
                                  LateralAction direction, const MobilParams& p);

struct NoiseParams {
  double accel_stddev = 0.2;   // m/s^2, per substep
  double steer_stddev = 0.01;  // rad, per substep
  std::uint64_t seed = 0;
};

// Shared simulation knobs used by closed-loop stepping, open-loop probing
// and the CFB assessment.
struct SimulationParams {
  IdmParams idm;
  PurePursuitParams pursuit;
  RssParams rss;
  NoiseParams noise;
  int substeps = 4;
  double max_steer_rate = 0.35;        // rad/s
  double lateral_overlap = 2.2;        // |d| band treated as same-corridor
  double accel_speed_offset = 5.0;     // Accelerate: v0 + offset
  double decel_speed_offset = 5.0;     // Decelerate: v0 - offset
  double speed_limit_tolerance = 1.2;  // Accelerate cap: limit * tolerance
};

// Longitudinal target velocity for a semantic action.
double action_target_velocity(LongitudinalAction lon, double base_desired,
                              double speed_limit, const SimulationParams& p);

// Per-vehicle behavior resolved against a concrete target lane. Holds the
// corridor and projection hints so consecutive steps reuse them.
struct ResolvedBehavior {
  LaneId target_lane = kNoLane;
  std::shared_ptr<const Corridor> corridor;
  double desired_velocity = 0.0;
  bool reactive = true;  // false: hold current speed, never brake for others
  bool with_noise = true;
  bool wall_ahead = false;  // corridor dead-ends beside lanes that continue
  std::optional<IdmParams> idm;  // per-vehicle override of the shared params
  std::map<int, int> hints;      // projection warm starts, keyed by vehicle id
};

using BehaviorMap = std::map<int, ResolvedBehavior>;

// Corridors are immutable per plan cycle; cache them per anchor lane.
class CorridorCache {
 public:
  CorridorCache(LaneMapPtr map, double backward, double forward)
      : map_(std::move(map)), backward_(backward), forward_(forward) {}
  std::shared_ptr<const Corridor> get(LaneId lane) const;

  // True when the lane's corridor dead-ends while a laterally nearby corridor
  // continues past that end (a merge wall). False at a genuine map exit and
  // on rings. Memoized; call from one thread or prewarm.
  bool ends_at_wall(LaneId lane) const;

 private:
  LaneMapPtr map_;
  double backward_ = 50.0;
  double forward_ = 250.0;
  mutable std::map<LaneId, std::shared_ptr<const Corridor>> cache_;
  mutable std::map<LaneId, bool> wall_cache_;
};

ResolvedBehavior resolve_behavior(const WorldState& world, int vehicle,
                                  LateralAction lateral, LongitudinalAction lon,
                                  const SimulationParams& p, const CorridorCache& corridors);

struct StepAnnotation {
  double min_gap = 1e9;          // smallest ego bumper gap this step
  double rss_shortfall = 0.0;    // max over vehicles of (rss_gap - gap)+
  bool ego_collision = false;
  bool any_collision = false;
  bool ego_wall_overrun = false;  // ego ran out of a dead-ending corridor
};

// Advances every vehicle by `dt` using `substeps` internal sub-intervals.
// Longitudinal control reacts to the refreshed gap structure every substep;
// Gaussian noise is drawn from `streams` (one stream per vehicle id; missing
// entries mean no noise for that vehicle). Collisions are recorded in the
// annotation, never raised.
WorldState step_closed_loop(const WorldState& world, BehaviorMap& behaviors,
                            double dt, const SimulationParams& p,
                            std::map<int, NoiseStream>* streams,
                            StepAnnotation* annotation);

struct TimedEgoState {
  double t = 0.0;
  VehicleState state;
};

struct Rollout {
  double step = 0.4;
  std::vector<WorldState> states;          // after each step
  std::vector<StepAnnotation> annotations;  // parallel to states
  bool collision = false;      // any footprint overlap at any step
  bool ego_collision = false;  // overlap involving the ego
  bool ego_wall_overrun = false;
  double max_rss_shortfall = 0.0;

  std::vector<TimedEgoState> ego_trace() const;
};

// Split of a planning horizon into integration steps: one (possibly short)
// leading remainder followed by whole `resolution` steps, so step boundaries
// line up with semantic-action boundaries.
std::vector<double> horizon_steps(double horizon, double resolution);

// Ego-vs-others proximity for one world snapshot, measured along the ego's
// corridor. Only vehicles within the lateral overlap band contribute. When
// `focus_vehicle` is >= 0 the annotation considers that vehicle alone.
// `hints` carries projection warm starts between consecutive snapshots.
StepAnnotation annotate_world(const WorldState& world, const Corridor& ego_corridor,
                              const SimulationParams& p, int focus_vehicle = -1,
                              std::map<int, int>* hints = nullptr);

// Agent motion in open-loop probes never depends on the ego policy: agents
// hold speed, only the hypothesized vehicle steers toward a different lane,
// and nobody yields. The backdrop precomputes those trajectories on the
// probe's step grid so each probe integrates the ego alone; one backdrop
// built from a world snapshot serves every probe against that same snapshot.
struct OpenLoopBackdrop {
  double horizon = 0.0;
  double resolution = 0.0;
  std::vector<Vehicle> agents;                      // non-ego, in world order
  std::vector<std::vector<VehicleState>> baseline;  // [step][agent] lane-keep
  std::map<std::pair<int, LateralAction>, std::vector<VehicleState>> deviations;
  std::set<std::pair<int, LateralAction>> infeasible;  // hypothesis lane missing

  bool covers(double total_horizon, double step) const;
};

// Rolls the lane-keep baseline for every non-ego vehicle plus one deviating
// trace per feasible lane-change hypothesis of each listed vehicle.
OpenLoopBackdrop build_open_loop_backdrop(const WorldState& world,
                                          const std::vector<int>& vehicles,
                                          double horizon, double resolution,
                                          const SimulationParams& p,
                                          const CorridorCache& corridors);

// Open-loop probe: every agent holds its speed (the hypothesized vehicle
// additionally steers toward its hypothesis lane), the ego runs its own
// controllers along the policy sequence, nobody yields to the ego, and no
// noise is injected. Annotations are computed against `hypothesis_vehicle`.
// A backdrop built from the same world snapshot skips the agent integration;
// without one (or with one whose grid does not cover the policy) an
// equivalent single-vehicle backdrop is built on the spot.
Rollout simulate_open_loop(const WorldState& world, int hypothesis_vehicle,
                           LateralAction hypothesis,
                           const std::vector<SemanticAction>& ego_policy,
                           double resolution, const SimulationParams& p,
                           const CorridorCache& corridors,
                           const OpenLoopBackdrop* backdrop = nullptr);

}  // namespace gbp
