#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gbp/errors.hpp"
#include "gbp/geometry.hpp"

namespace gbp {

using LaneId = int;
inline constexpr LaneId kNoLane = -1;

enum class LateralAction { kLaneKeep = 0, kLaneChangeLeft = 1, kLaneChangeRight = 2 };
enum class LongitudinalAction { kAccelerate = 0, kMaintain = 1, kDecelerate = 2 };

const char* to_string(LateralAction a);
const char* to_string(LongitudinalAction a);
char short_code(LateralAction a);        // K / L / R
char short_code(LongitudinalAction a);   // A / M / D

struct SemanticAction {
  LateralAction lateral = LateralAction::kLaneKeep;
  LongitudinalAction longitudinal = LongitudinalAction::kMaintain;
  double duration = 2.0;

  bool same_template(const SemanticAction& o) const {
    return lateral == o.lateral && longitudinal == o.longitudinal;
  }
};

struct Lane {
  LaneId id = kNoLane;
  std::vector<Vec2> centerline;
  std::optional<LaneId> left_neighbor;
  std::optional<LaneId> right_neighbor;
  std::optional<LaneId> successor;
  double speed_limit = 13.9;
  bool closes_ring = false;  // successor chain returns to this lane

  // Cumulative arc length per centerline point, built at load time.
  std::vector<double> arc;
  double length() const { return arc.empty() ? 0.0 : arc.back(); }
  Vec2 point_at(double s) const;
  double heading_at(double s) const;
};

// Immutable after load_and_validate(); shared read-only between threads.
struct LaneMap {
  std::vector<Lane> lanes;  // sorted by id
  bool ring = false;
  double lane_width = 3.5;
  double max_projection_offset = 10.0;

  const Lane* find(LaneId id) const;
  const Lane& lane(LaneId id) const;  // throws OffMap for unknown ids
  const std::vector<LaneId>& predecessors(LaneId id) const;

  // Checks centerline spacing, neighbor symmetry, successor cycles and
  // builds the arc tables plus the predecessor index. Throws
  // MapValidationError on the first violation.
  void load_and_validate();

 private:
  std::map<LaneId, std::vector<LaneId>> predecessor_index_;
};

using LaneMapPtr = std::shared_ptr<const LaneMap>;

struct FrenetPose {
  LaneId lane_id = kNoLane;
  double s = 0.0;
  double d = 0.0;  // signed lateral offset, left of travel direction positive
  double heading_error = 0.0;
};

// Nearest-point projection onto the lane's piecewise-linear centerline.
// Throws ProjectionOutOfRange when |d| exceeds max_offset or when the foot
// point clamps to a lane end with more than 1 m of longitudinal residual
// (ring-closing lanes wrap instead of clamping).
FrenetPose frenet_project(const Vec2& point, const Lane& lane,
                          double heading = 0.0, double max_offset = 10.0);

Vec2 frenet_to_cartesian(const Lane& lane, double s, double d);

struct VehicleState {
  Vec2 position;
  double heading = 0.0;
  double velocity = 0.0;
  double acceleration = 0.0;
  double steering_angle = 0.0;
  double curvature = 0.0;  // kept equal to tan(steering_angle)/wheelbase
};

struct VehicleParams {
  int id = 0;
  double length = 4.5;
  double width = 1.9;
  double wheelbase = 2.85;
  double max_accel = 2.0;
  double max_decel = 5.0;
  double desired_velocity = 13.9;
};

struct Vehicle {
  VehicleParams params;
  VehicleState state;

  OrientedBox footprint() const {
    return {state.position, state.heading, params.length, params.width};
  }
};

// Value snapshot of the scene; copied wholesale into every rollout.
struct WorldState {
  double time = 0.0;
  LaneMapPtr map;
  int ego_id = 0;
  std::vector<Vehicle> vehicles;  // sorted by id

  const Vehicle* find(int id) const;
  Vehicle* find(int id);
  const Vehicle& ego() const;
  void sort_vehicles();
};

// Lane with the smallest absolute lateral offset at `position`, or nullopt
// when no lane accepts the projection.
std::optional<LaneId> nearest_lane(const LaneMap& map, const Vec2& position);

struct LaneNeighborVehicle {
  int id = kNoLane;
  double gap = 0.0;  // bumper-to-bumper, ring-aware
};

struct SurroundingVehicles {
  std::optional<LaneNeighborVehicle> leader;
  std::optional<LaneNeighborVehicle> follower;
};

// Nearest leader and follower of `ref_vehicle` among the vehicles assigned
// to `lane_id`. Gaps are bumper-to-bumper and wrap around on ring lanes.
SurroundingVehicles surrounding_vehicles(const WorldState& world, int ref_vehicle,
                                         LaneId lane_id);

// Lane a lateral action targets from `current_lane`. The throwing variant
// raises NoSuchNeighbor; try_target_lane_for returns nullopt instead.
LaneId target_lane_for(const LaneMap& map, LateralAction action, LaneId current_lane);
std::optional<LaneId> try_target_lane_for(const LaneMap& map, LateralAction action,
                                          LaneId current_lane);

// Sampled polyline along a lane chain (predecessors + lane + successors, or
// the full loop on ring lanes). All rollout-time geometry queries run on
// corridors so merge seams and ring wraparound are handled in one place.
class Corridor {
 public:
  struct Projection {
    double s = 0.0;
    double d = 0.0;
    double heading_error = 0.0;
    int segment = 0;
  };

  Corridor() = default;

  bool empty() const { return pts_.size() < 2; }
  bool ring() const { return ring_; }
  double length() const { return s_.empty() ? 0.0 : s_.back(); }

  // Warm-startable nearest-point projection; pass the previous segment index
  // as `hint` when tracking a moving vehicle.
  Projection project(const Vec2& point, double heading = 0.0, int hint = -1) const;

  Vec2 point_at(double s) const;
  double heading_at(double s) const;
  Vec2 offset_point_at(double s, double lateral_offset) const;
  LaneId lane_at(double s) const;

  double wrap(double s) const;
  // Signed arc delta from -> to, mapped into [-L/2, L/2) on rings.
  double arc_delta(double from_s, double to_s) const;

  static Corridor build(const LaneMap& map, LaneId anchor_lane,
                        double backward_length, double forward_length);

 private:
  std::vector<Vec2> pts_;
  std::vector<double> s_;
  std::vector<LaneId> lane_of_point_;
  bool ring_ = false;
};

// ---- serialization ----

LaneMap map_from_json(const std::string& json_text);
LaneMap load_map_file(const std::string& path);
std::string map_to_json(const LaneMap& map);

struct ObservedVehicle {
  int id = 0;
  double x = 0.0, y = 0.0, heading = 0.0, velocity = 0.0;
  std::optional<double> acceleration;
  std::optional<double> curvature;
};

struct LogFrame {
  double timestamp = 0.0;
  std::vector<ObservedVehicle> vehicles;
};

struct VehicleDimensions {
  double length = 4.5;
  double width = 1.9;
  double wheelbase = 2.85;
};

// Optional header carried by episode logs; replayed logs may omit it.
struct LogHeader {
  std::optional<std::string> map_json;
  std::optional<int> ego_id;
  std::map<int, VehicleDimensions> dimensions;
  std::uint64_t seed = 0;
  std::string mode;
};

struct EpisodeLog {
  LogHeader header;
  std::vector<LogFrame> frames;
  std::vector<std::string> events;  // raw event lines, preserved verbatim
};

// JSON-lines parser. Throws MalformedLog (with line number) on bad lines and
// EmptyLog when no frame line is present.
EpisodeLog load_log_jsonl(const std::string& text);
EpisodeLog load_log_file(const std::string& path);

std::string frame_to_json(const LogFrame& frame);

}  // namespace gbp
