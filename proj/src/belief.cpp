#include "gbp/belief.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gbp/errors.hpp"

namespace gbp {

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

constexpr double kBlocked = -std::numeric_limits<double>::infinity();

LaneObservation observe_lane(const WorldState& world, const Vehicle& self, LaneId lane,
                             const SimulationParams& sim) {
  LaneObservation obs;
  obs.present = true;
  SurroundingVehicles sur = surrounding_vehicles(world, self.params.id, lane);
  if (sur.leader) {
    const Vehicle* lead = world.find(sur.leader->id);
    obs.leader_gap = sur.leader->gap;
    obs.leader_velocity_delta = lead->state.velocity - self.state.velocity;
    if (sur.leader->gap < rss_min_safe_gap(self.state.velocity, lead->state.velocity, sim.rss))
      obs.rss_ok = false;
  }
  if (sur.follower) {
    const Vehicle* follower = world.find(sur.follower->id);
    obs.follower_gap = sur.follower->gap;
    if (sur.follower->gap <
        rss_min_safe_gap(follower->state.velocity, self.state.velocity, sim.rss))
      obs.rss_ok = false;
  }
  return obs;
}

}  // namespace

double IntentionBelief::prob(LateralAction a) const {
  switch (a) {
    case LateralAction::kLaneKeep: return p_lk;
    case LateralAction::kLaneChangeLeft: return p_lcl;
    case LateralAction::kLaneChangeRight: return p_lcr;
  }
  return 0.0;
}

double& IntentionBelief::prob_ref(LateralAction a) {
  switch (a) {
    case LateralAction::kLaneChangeLeft: return p_lcl;
    case LateralAction::kLaneChangeRight: return p_lcr;
    default: return p_lk;
  }
}

double IntentionBelief::max_prob() const { return std::max({p_lk, p_lcl, p_lcr}); }

void IntentionBelief::normalize() {
  p_lk = std::max(p_lk, 0.0);
  p_lcl = std::max(p_lcl, 0.0);
  p_lcr = std::max(p_lcr, 0.0);
  double sum = p_lk + p_lcl + p_lcr;
  if (sum <= 0.0) {
    p_lk = 1.0;
    p_lcl = 0.0;
    p_lcr = 0.0;
    return;
  }
  p_lk /= sum;
  p_lcl /= sum;
  p_lcr /= sum;
}

IntentionBelief IntentionBelief::uniform_feasible(int vehicle, bool lcl_possible,
                                                  bool lcr_possible) {
  IntentionBelief b;
  b.vehicle = vehicle;
  double n = 1.0 + (lcl_possible ? 1.0 : 0.0) + (lcr_possible ? 1.0 : 0.0);
  b.p_lk = 1.0 / n;
  b.p_lcl = lcl_possible ? 1.0 / n : 0.0;
  b.p_lcr = lcr_possible ? 1.0 / n : 0.0;
  return b;
}

BeliefFeatures extract_features(const WorldState& world, int vehicle,
                                const SimulationParams& sim,
                                const CorridorCache* corridors) {
  const Vehicle* self = world.find(vehicle);
  if (!self) throw OffMap("unknown vehicle id " + std::to_string(vehicle));
  const LaneMap& map = *world.map;
  auto lane_id = nearest_lane(map, self->state.position);
  if (!lane_id) throw OffMap("vehicle " + std::to_string(vehicle) + " is off the map");
  const Lane& lane = map.lane(*lane_id);

  BeliefFeatures feat;
  feat.vehicle = vehicle;
  feat.current = observe_lane(world, *self, *lane_id, sim);

  FrenetPose pose = frenet_project(self->state.position, lane, self->state.heading,
                                   map.max_projection_offset);
  feat.lateral_trend = self->state.velocity * std::sin(pose.heading_error);

  MobilParams mobil;
  mobil.idm = sim.idm;
  if (lane.left_neighbor) {
    feat.left = observe_lane(world, *self, *lane.left_neighbor, sim);
    MobilResult r = lane_change_incentive(world, vehicle, LateralAction::kLaneChangeLeft, mobil);
    feat.incentive_left = r.incentive;
    feat.veto_left = r.safety_veto;
  }
  if (lane.right_neighbor) {
    feat.right = observe_lane(world, *self, *lane.right_neighbor, sim);
    MobilResult r = lane_change_incentive(world, vehicle, LateralAction::kLaneChangeRight, mobil);
    feat.incentive_right = r.incentive;
    feat.veto_right = r.safety_veto;
  }
  if (corridors) {
    if (corridors->ends_at_wall(*lane_id)) {
      auto corridor = corridors->get(*lane_id);
      auto proj = corridor->project(self->state.position, self->state.heading, -1);
      feat.wall_remaining = corridor->length() - proj.s;
    }
    if (lane.left_neighbor) feat.left_dies = corridors->ends_at_wall(*lane.left_neighbor);
    if (lane.right_neighbor) feat.right_dies = corridors->ends_at_wall(*lane.right_neighbor);
  }
  return feat;
}

IntentionBelief update_belief(const IntentionBelief& prev, const BeliefFeatures& feat,
                              double dt, const BeliefParams& p) {
  // Approaching the end of a dying lane the keep-lane prior decays and the
  // surviving side gains weight: vehicles there merge whether or not MOBIL
  // likes the target gap, so blocked evidence only discounts, never vetoes.
  double urgency = 0.0;
  if (feat.wall_remaining)
    urgency = clamp01(1.0 - *feat.wall_remaining / std::max(p.urgency_range, 1e-9));
  double score_lk =
      p.lk_bias * (1.0 - urgency) + p.w_rss * (feat.current.rss_ok ? 1.0 : 0.0);
  double score_lcl = kBlocked;
  if (feat.left.present) {
    score_lcl = p.w_incentive * clamp01(feat.incentive_left.value_or(0.0)) +
                p.w_drift * clamp01(feat.lateral_trend) +
                p.w_rss * (feat.left.rss_ok ? 1.0 : 0.0) +
                p.w_urgency * urgency * (feat.left_dies ? 0.0 : 1.0) -
                p.w_veto * (feat.veto_left ? 1.0 : 0.0);
  }
  double score_lcr = kBlocked;
  if (feat.right.present) {
    score_lcr = p.w_incentive * clamp01(feat.incentive_right.value_or(0.0)) +
                p.w_drift * clamp01(-feat.lateral_trend) +
                p.w_rss * (feat.right.rss_ok ? 1.0 : 0.0) +
                p.w_urgency * urgency * (feat.right_dies ? 0.0 : 1.0) -
                p.w_veto * (feat.veto_right ? 1.0 : 0.0);
  }

  double tau = std::max(p.temperature, 1e-9);
  double z_lk = score_lk / tau;
  double z_lcl = score_lcl / tau;
  double z_lcr = score_lcr / tau;
  double top = std::max({z_lk, z_lcl, z_lcr});
  double e_lk = std::exp(z_lk - top);
  double e_lcl = std::isinf(z_lcl) ? 0.0 : std::exp(z_lcl - top);
  double e_lcr = std::isinf(z_lcr) ? 0.0 : std::exp(z_lcr - top);
  double denom = e_lk + e_lcl + e_lcr;

  double blend = 1.0 - std::exp(-p.smoothing_rate * dt);
  IntentionBelief out;
  out.vehicle = prev.vehicle;
  out.p_lk = (1.0 - blend) * prev.p_lk + blend * e_lk / denom;
  out.p_lcl = (1.0 - blend) * prev.p_lcl + blend * e_lcl / denom;
  out.p_lcr = (1.0 - blend) * prev.p_lcr + blend * e_lcr / denom;
  if (!feat.left.present) out.p_lcl = 0.0;
  if (!feat.right.present) out.p_lcr = 0.0;
  out.normalize();
  return out;
}

LateralAction map_intention(const IntentionBelief& belief) {
  LateralAction best = LateralAction::kLaneKeep;
  double best_p = belief.p_lk;
  if (belief.p_lcl > best_p) {
    best = LateralAction::kLaneChangeLeft;
    best_p = belief.p_lcl;
  }
  if (belief.p_lcr > best_p) {
    best = LateralAction::kLaneChangeRight;
    best_p = belief.p_lcr;
  }
  return best;
}

}  // namespace gbp
