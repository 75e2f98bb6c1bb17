#include "gbp/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gbp {

namespace {

constexpr double kMaxCenterlineSpacing = 2.0 + 1e-9;
constexpr double kEndpointResidualTolerance = 1.0;
constexpr double kJointTolerance = 1e-6;

struct RawProjection {
  double s = 0.0;
  double d = 0.0;
  double tangent_heading = 0.0;
  double end_residual = 0.0;  // longitudinal overshoot past the first/last point
  int segment = 0;
};

// Nearest point on a piecewise-linear centerline; no range checks.
RawProjection project_polyline(const Vec2& point, const std::vector<Vec2>& pts,
                               const std::vector<double>& arc) {
  RawProjection best;
  double best_d2 = std::numeric_limits<double>::max();
  const int n = static_cast<int>(pts.size()) - 1;
  for (int i = 0; i < n; ++i) {
    Vec2 seg = pts[i + 1] - pts[i];
    double len2 = seg.squared_norm();
    if (len2 <= 0.0) continue;
    double t = std::clamp((point - pts[i]).dot(seg) / len2, 0.0, 1.0);
    Vec2 foot = pts[i] + seg * t;
    double d2 = (point - foot).squared_norm();
    if (d2 < best_d2) {
      best_d2 = d2;
      double seg_len = std::sqrt(len2);
      Vec2 dir = seg * (1.0 / seg_len);
      best.s = arc[i] + t * seg_len;
      best.d = dir.cross(point - foot) >= 0.0 ? std::sqrt(d2) : -std::sqrt(d2);
      best.tangent_heading = std::atan2(dir.y, dir.x);
      best.segment = i;
      best.end_residual = 0.0;
      if (i == 0 && t == 0.0) {
        best.end_residual = std::max(0.0, -(point - pts[i]).dot(dir));
      } else if (i == n - 1 && t == 1.0) {
        best.end_residual = std::max(0.0, (point - pts[i + 1]).dot(dir));
      }
    }
  }
  return best;
}

void build_arc_table(const std::vector<Vec2>& pts, std::vector<double>* arc) {
  arc->resize(pts.size());
  double s = 0.0;
  (*arc)[0] = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    s += (pts[i] - pts[i - 1]).norm();
    (*arc)[i] = s;
  }
}

}  // namespace

const char* to_string(LateralAction a) {
  switch (a) {
    case LateralAction::kLaneKeep: return "LK";
    case LateralAction::kLaneChangeLeft: return "LCL";
    case LateralAction::kLaneChangeRight: return "LCR";
  }
  return "?";
}

const char* to_string(LongitudinalAction a) {
  switch (a) {
    case LongitudinalAction::kAccelerate: return "Accelerate";
    case LongitudinalAction::kMaintain: return "MaintainSpeed";
    case LongitudinalAction::kDecelerate: return "Decelerate";
  }
  return "?";
}

char short_code(LateralAction a) {
  switch (a) {
    case LateralAction::kLaneKeep: return 'K';
    case LateralAction::kLaneChangeLeft: return 'L';
    case LateralAction::kLaneChangeRight: return 'R';
  }
  return '?';
}

char short_code(LongitudinalAction a) {
  switch (a) {
    case LongitudinalAction::kAccelerate: return 'A';
    case LongitudinalAction::kMaintain: return 'M';
    case LongitudinalAction::kDecelerate: return 'D';
  }
  return '?';
}

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  Vec2 axes[4] = {
      (ca[1] - ca[2]).normalized(), (ca[1] - ca[0]).normalized(),
      (cb[1] - cb[2]).normalized(), (cb[1] - cb[0]).normalized()};
  for (const Vec2& axis : axes) {
    double amin = std::numeric_limits<double>::max(), amax = -amin;
    double bmin = amin, bmax = amax;
    for (const Vec2& c : ca) {
      double p = c.dot(axis);
      amin = std::min(amin, p);
      amax = std::max(amax, p);
    }
    for (const Vec2& c : cb) {
      double p = c.dot(axis);
      bmin = std::min(bmin, p);
      bmax = std::max(bmax, p);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

Vec2 Lane::point_at(double s) const {
  if (centerline.size() < 2) return centerline.empty() ? Vec2{} : centerline[0];
  double total = length();
  if (closes_ring && total > 0.0) {
    s = std::fmod(s, total);
    if (s < 0.0) s += total;
  } else {
    s = std::clamp(s, 0.0, total);
  }
  auto it = std::upper_bound(arc.begin(), arc.end(), s);
  std::size_t i = std::min<std::size_t>(std::distance(arc.begin(), it), arc.size() - 1);
  if (i == 0) return centerline[0];
  double seg = arc[i] - arc[i - 1];
  double t = seg > 0.0 ? (s - arc[i - 1]) / seg : 0.0;
  return centerline[i - 1] + (centerline[i] - centerline[i - 1]) * t;
}

double Lane::heading_at(double s) const {
  if (centerline.size() < 2) return 0.0;
  double total = length();
  if (closes_ring && total > 0.0) {
    s = std::fmod(s, total);
    if (s < 0.0) s += total;
  } else {
    s = std::clamp(s, 0.0, total);
  }
  auto it = std::upper_bound(arc.begin(), arc.end(), s);
  std::size_t i = std::min<std::size_t>(std::distance(arc.begin(), it), arc.size() - 1);
  if (i == 0) i = 1;
  Vec2 dir = centerline[i] - centerline[i - 1];
  return std::atan2(dir.y, dir.x);
}

const Lane* LaneMap::find(LaneId id) const {
  auto it = std::lower_bound(lanes.begin(), lanes.end(), id,
                             [](const Lane& l, LaneId v) { return l.id < v; });
  if (it == lanes.end() || it->id != id) return nullptr;
  return &*it;
}

const Lane& LaneMap::lane(LaneId id) const {
  const Lane* l = find(id);
  if (!l) throw OffMap("unknown lane id " + std::to_string(id));
  return *l;
}

const std::vector<LaneId>& LaneMap::predecessors(LaneId id) const {
  static const std::vector<LaneId> kEmpty;
  auto it = predecessor_index_.find(id);
  return it == predecessor_index_.end() ? kEmpty : it->second;
}

void LaneMap::load_and_validate() {
  if (lanes.empty()) throw MapValidationError("map has no lanes");
  std::sort(lanes.begin(), lanes.end(),
            [](const Lane& a, const Lane& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < lanes.size(); ++i) {
    if (lanes[i].id == lanes[i - 1].id)
      throw MapValidationError("duplicate lane id " + std::to_string(lanes[i].id));
  }

  predecessor_index_.clear();
  for (Lane& lane : lanes) {
    if (lane.centerline.size() < 2)
      throw MapValidationError("lane " + std::to_string(lane.id) +
                               " needs at least 2 centerline points");
    for (std::size_t i = 1; i < lane.centerline.size(); ++i) {
      double spacing = (lane.centerline[i] - lane.centerline[i - 1]).norm();
      if (spacing <= 0.0)
        throw MapValidationError("lane " + std::to_string(lane.id) +
                                 " has a zero-length centerline segment");
      if (spacing > kMaxCenterlineSpacing)
        throw MapValidationError("lane " + std::to_string(lane.id) +
                                 " centerline spacing exceeds 2 m");
    }
    build_arc_table(lane.centerline, &lane.arc);

    auto check_neighbor = [&](std::optional<LaneId> n, const char* which) {
      if (n && !find(*n))
        throw MapValidationError("lane " + std::to_string(lane.id) + " " + which +
                                 " neighbor " + std::to_string(*n) + " does not exist");
    };
    check_neighbor(lane.left_neighbor, "left");
    check_neighbor(lane.right_neighbor, "right");
    if (lane.successor && !find(*lane.successor))
      throw MapValidationError("lane " + std::to_string(lane.id) + " successor " +
                               std::to_string(*lane.successor) + " does not exist");
    if (lane.successor) predecessor_index_[*lane.successor].push_back(lane.id);
  }
  for (auto& [id, preds] : predecessor_index_) std::sort(preds.begin(), preds.end());

  // Symmetric neighbor relations.
  for (const Lane& lane : lanes) {
    if (lane.left_neighbor) {
      const Lane& left = this->lane(*lane.left_neighbor);
      if (!left.right_neighbor || *left.right_neighbor != lane.id)
        throw MapValidationError("asymmetric neighbor relation between lanes " +
                                 std::to_string(lane.id) + " and " +
                                 std::to_string(left.id));
    }
    if (lane.right_neighbor) {
      const Lane& right = this->lane(*lane.right_neighbor);
      if (!right.left_neighbor || *right.left_neighbor != lane.id)
        throw MapValidationError("asymmetric neighbor relation between lanes " +
                                 std::to_string(lane.id) + " and " +
                                 std::to_string(right.id));
    }
  }

  // Successor cycles only close the loop on ring maps.
  for (Lane& lane : lanes) {
    LaneId cursor = lane.id;
    std::set<LaneId> seen{cursor};
    lane.closes_ring = false;
    while (true) {
      const Lane* cur = find(cursor);
      if (!cur->successor) break;
      cursor = *cur->successor;
      if (cursor == lane.id) {
        if (!ring)
          throw MapValidationError("successor cycle through lane " +
                                   std::to_string(lane.id) + " on a non-ring map");
        lane.closes_ring = true;
        break;
      }
      if (!seen.insert(cursor).second) break;  // cycle not through this lane
    }
  }
}

FrenetPose frenet_project(const Vec2& point, const Lane& lane, double heading,
                          double max_offset) {
  RawProjection raw = project_polyline(point, lane.centerline, lane.arc);
  if (std::abs(raw.d) > max_offset)
    throw ProjectionOutOfRange("lateral offset " + std::to_string(raw.d) +
                               " exceeds max " + std::to_string(max_offset) +
                               " on lane " + std::to_string(lane.id));
  if (!lane.closes_ring && raw.end_residual > kEndpointResidualTolerance)
    throw ProjectionOutOfRange("projection clamps " + std::to_string(raw.end_residual) +
                               " m past the end of lane " + std::to_string(lane.id));
  FrenetPose pose;
  pose.lane_id = lane.id;
  pose.s = raw.s;
  pose.d = raw.d;
  pose.heading_error = normalize_angle(heading - raw.tangent_heading);
  return pose;
}

Vec2 frenet_to_cartesian(const Lane& lane, double s, double d) {
  Vec2 base = lane.point_at(s);
  double heading = lane.heading_at(s);
  Vec2 normal{-std::sin(heading), std::cos(heading)};
  return base + normal * d;
}

const Vehicle* WorldState::find(int id) const {
  auto it = std::lower_bound(vehicles.begin(), vehicles.end(), id,
                             [](const Vehicle& v, int i) { return v.params.id < i; });
  if (it == vehicles.end() || it->params.id != id) return nullptr;
  return &*it;
}

Vehicle* WorldState::find(int id) {
  return const_cast<Vehicle*>(static_cast<const WorldState*>(this)->find(id));
}

const Vehicle& WorldState::ego() const {
  const Vehicle* v = find(ego_id);
  if (!v) throw PlanningError("ego vehicle " + std::to_string(ego_id) + " not in world");
  return *v;
}

void WorldState::sort_vehicles() {
  std::sort(vehicles.begin(), vehicles.end(),
            [](const Vehicle& a, const Vehicle& b) { return a.params.id < b.params.id; });
}

std::optional<LaneId> nearest_lane(const LaneMap& map, const Vec2& position) {
  std::optional<LaneId> best;
  double best_abs_d = std::numeric_limits<double>::max();
  for (const Lane& lane : map.lanes) {
    RawProjection raw = project_polyline(position, lane.centerline, lane.arc);
    if (std::abs(raw.d) > map.max_projection_offset) continue;
    if (!lane.closes_ring && raw.end_residual > kEndpointResidualTolerance) continue;
    if (std::abs(raw.d) < best_abs_d) {
      best_abs_d = std::abs(raw.d);
      best = lane.id;
    }
  }
  return best;
}

SurroundingVehicles surrounding_vehicles(const WorldState& world, int ref_vehicle,
                                         LaneId lane_id) {
  const Vehicle* ref = world.find(ref_vehicle);
  if (!ref) throw PlanningError("unknown vehicle " + std::to_string(ref_vehicle));
  const Lane& lane = world.map->lane(lane_id);
  RawProjection ref_proj =
      project_polyline(ref->state.position, lane.centerline, lane.arc);

  SurroundingVehicles out;
  double lead_delta = std::numeric_limits<double>::max();
  double follow_delta = std::numeric_limits<double>::max();
  double total = lane.length();
  for (const Vehicle& v : world.vehicles) {
    if (v.params.id == ref_vehicle) continue;
    auto assigned = nearest_lane(*world.map, v.state.position);
    if (!assigned || *assigned != lane_id) continue;
    RawProjection proj = project_polyline(v.state.position, lane.centerline, lane.arc);
    double half_lengths = 0.5 * (ref->params.length + v.params.length);
    if (lane.closes_ring && total > 0.0) {
      double fwd = std::fmod(proj.s - ref_proj.s + total, total);
      double bwd = total - fwd;
      if (fwd > 0.0 && fwd < lead_delta) {
        lead_delta = fwd;
        out.leader = LaneNeighborVehicle{v.params.id, fwd - half_lengths};
      }
      if (bwd > 0.0 && bwd < follow_delta) {
        follow_delta = bwd;
        out.follower = LaneNeighborVehicle{v.params.id, bwd - half_lengths};
      }
    } else {
      double delta = proj.s - ref_proj.s;
      bool is_leader = delta > 0.0 || (delta == 0.0 && v.params.id > ref_vehicle);
      if (is_leader && std::abs(delta) < lead_delta) {
        lead_delta = std::abs(delta);
        out.leader = LaneNeighborVehicle{v.params.id, delta - half_lengths};
      } else if (!is_leader && std::abs(delta) < follow_delta) {
        follow_delta = std::abs(delta);
        out.follower = LaneNeighborVehicle{v.params.id, -delta - half_lengths};
      }
    }
  }
  return out;
}

LaneId target_lane_for(const LaneMap& map, LateralAction action, LaneId current_lane) {
  auto target = try_target_lane_for(map, action, current_lane);
  if (!target)
    throw NoSuchNeighbor(std::string(to_string(action)) + " from lane " +
                         std::to_string(current_lane) + " has no target lane");
  return *target;
}

std::optional<LaneId> try_target_lane_for(const LaneMap& map, LateralAction action,
                                          LaneId current_lane) {
  const Lane& lane = map.lane(current_lane);
  switch (action) {
    case LateralAction::kLaneKeep: return current_lane;
    case LateralAction::kLaneChangeLeft: return lane.left_neighbor;
    case LateralAction::kLaneChangeRight: return lane.right_neighbor;
  }
  return std::nullopt;
}

// ---- Corridor ----

Corridor Corridor::build(const LaneMap& map, LaneId anchor_lane, double backward_length,
                         double forward_length) {
  Corridor c;
  const Lane& anchor = map.lane(anchor_lane);

  std::vector<LaneId> chain{anchor_lane};
  bool is_ring = false;

  // Forward along successors; a return to any chain lane closes the ring.
  {
    double covered = anchor.length();
    LaneId cursor = anchor_lane;
    while (covered < forward_length) {
      const Lane& cur = map.lane(cursor);
      if (!cur.successor) break;
      LaneId next = *cur.successor;
      if (std::find(chain.begin(), chain.end(), next) != chain.end()) {
        is_ring = map.ring;
        break;
      }
      chain.push_back(next);
      covered += map.lane(next).length();
      cursor = next;
    }
  }

  // Backward along predecessors, preferring the best-aligned one.
  if (!is_ring) {
    double covered = 0.0;
    LaneId cursor = anchor_lane;
    while (covered < backward_length) {
      const auto& preds = map.predecessors(cursor);
      if (preds.empty()) break;
      const Lane& cur = map.lane(cursor);
      double entry_heading = cur.heading_at(0.0);
      LaneId best_pred = preds.front();
      double best_align = -2.0;
      for (LaneId p : preds) {
        const Lane& pl = map.lane(p);
        double align = std::cos(normalize_angle(pl.heading_at(pl.length()) - entry_heading));
        if (align > best_align + 1e-12) {
          best_align = align;
          best_pred = p;
        }
      }
      if (std::find(chain.begin(), chain.end(), best_pred) != chain.end()) break;
      chain.insert(chain.begin(), best_pred);
      covered += map.lane(best_pred).length();
      cursor = best_pred;
    }
  }

  for (LaneId id : chain) {
    const Lane& lane = map.lane(id);
    for (const Vec2& p : lane.centerline) {
      if (!c.pts_.empty() && (p - c.pts_.back()).norm() < kJointTolerance) continue;
      c.pts_.push_back(p);
      c.lane_of_point_.push_back(id);
    }
  }
  c.ring_ = is_ring;
  if (is_ring && c.pts_.size() > 2 &&
      (c.pts_.front() - c.pts_.back()).norm() > kJointTolerance) {
    // Close the loop with an explicit seam segment.
    c.pts_.push_back(c.pts_.front());
    c.lane_of_point_.push_back(c.lane_of_point_.front());
  }
  build_arc_table(c.pts_, &c.s_);
  return c;
}

double Corridor::wrap(double s) const {
  double total = length();
  if (!ring_ || total <= 0.0) return s;
  s = std::fmod(s, total);
  if (s < 0.0) s += total;
  return s;
}

double Corridor::arc_delta(double from_s, double to_s) const {
  double total = length();
  if (!ring_ || total <= 0.0) return to_s - from_s;
  double d = std::fmod(to_s - from_s, total);
  if (d < -0.5 * total) d += total;
  if (d >= 0.5 * total) d -= total;
  return d;
}

Corridor::Projection Corridor::project(const Vec2& point, double heading, int hint) const {
  const int n = static_cast<int>(pts_.size()) - 1;
  Projection out;
  if (n < 1) return out;

  int best = -1;
  double best_d2 = std::numeric_limits<double>::max();
  double best_t = 0.0;

  auto consider = [&](int i) {
    Vec2 seg = pts_[i + 1] - pts_[i];
    double len2 = seg.squared_norm();
    if (len2 <= 0.0) return;
    double t = std::clamp((point - pts_[i]).dot(seg) / len2, 0.0, 1.0);
    Vec2 foot = pts_[i] + seg * t;
    double d2 = (point - foot).squared_norm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
      best_t = t;
    }
  };

  if (hint < 0 || hint >= n) {
    for (int i = 0; i < n; ++i) consider(i);
  } else {
    int radius = 8;
    while (true) {
      best = -1;
      best_d2 = std::numeric_limits<double>::max();
      int lo = hint - radius, hi = hint + radius;
      if (!ring_) {
        lo = std::max(lo, 0);
        hi = std::min(hi, n - 1);
        for (int i = lo; i <= hi; ++i) consider(i);
        bool full = lo == 0 && hi == n - 1;
        bool at_edge = best == lo || best == hi;
        if (full || !at_edge) break;
      } else {
        if (2 * radius + 1 >= n) {
          for (int i = 0; i < n; ++i) consider(i);
          break;
        }
        for (int k = -radius; k <= radius; ++k) {
          int i = ((hint + k) % n + n) % n;
          consider(i);
        }
        int rel = ((best - hint) % n + n) % n;
        if (rel > n / 2) rel -= n;
        if (std::abs(rel) < radius) break;
      }
      radius *= 2;
    }
  }

  Vec2 seg = pts_[best + 1] - pts_[best];
  double seg_len = seg.norm();
  Vec2 dir = seg * (1.0 / seg_len);
  Vec2 foot = pts_[best] + seg * best_t;
  out.s = s_[best] + best_t * seg_len;
  double dist = std::sqrt(best_d2);
  out.d = dir.cross(point - foot) >= 0.0 ? dist : -dist;
  out.heading_error = normalize_angle(heading - std::atan2(dir.y, dir.x));
  out.segment = best;
  return out;
}

Vec2 Corridor::point_at(double s) const {
  if (pts_.size() < 2) return pts_.empty() ? Vec2{} : pts_[0];
  s = ring_ ? wrap(s) : std::clamp(s, 0.0, length());
  auto it = std::upper_bound(s_.begin(), s_.end(), s);
  std::size_t i = std::min<std::size_t>(std::distance(s_.begin(), it), s_.size() - 1);
  if (i == 0) return pts_[0];
  double seg = s_[i] - s_[i - 1];
  double t = seg > 0.0 ? (s - s_[i - 1]) / seg : 0.0;
  return pts_[i - 1] + (pts_[i] - pts_[i - 1]) * t;
}

double Corridor::heading_at(double s) const {
  if (pts_.size() < 2) return 0.0;
  s = ring_ ? wrap(s) : std::clamp(s, 0.0, length());
  auto it = std::upper_bound(s_.begin(), s_.end(), s);
  std::size_t i = std::min<std::size_t>(std::distance(s_.begin(), it), s_.size() - 1);
  if (i == 0) i = 1;
  Vec2 dir = pts_[i] - pts_[i - 1];
  return std::atan2(dir.y, dir.x);
}

Vec2 Corridor::offset_point_at(double s, double lateral_offset) const {
  Vec2 base = point_at(s);
  double heading = heading_at(s);
  Vec2 normal{-std::sin(heading), std::cos(heading)};
  return base + normal * lateral_offset;
}

LaneId Corridor::lane_at(double s) const {
  if (pts_.empty()) return kNoLane;
  s = ring_ ? wrap(s) : std::clamp(s, 0.0, length());
  auto it = std::upper_bound(s_.begin(), s_.end(), s);
  std::size_t i = std::min<std::size_t>(std::distance(s_.begin(), it), s_.size() - 1);
  return lane_of_point_[i];
}

// ---- serialization ----

using nlohmann::json;

namespace {

json lane_to_json(const Lane& lane) {
  json points = json::array();
  for (const Vec2& p : lane.centerline) points.push_back({p.x, p.y});
  json j{{"id", lane.id},
         {"points", std::move(points)},
         {"left", lane.left_neighbor ? json(*lane.left_neighbor) : json(nullptr)},
         {"right", lane.right_neighbor ? json(*lane.right_neighbor) : json(nullptr)},
         {"successor", lane.successor ? json(*lane.successor) : json(nullptr)},
         {"speed_limit", lane.speed_limit}};
  return j;
}

std::optional<LaneId> optional_lane(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<LaneId>();
}

}  // namespace

LaneMap map_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw MapValidationError(std::string("map parse failure: ") + e.what());
  }
  LaneMap map;
  try {
    map.ring = j.value("ring", false);
    map.lane_width = j.value("lane_width", 3.5);
    for (const json& lj : j.at("lanes")) {
      Lane lane;
      lane.id = lj.at("id").get<LaneId>();
      for (const json& pj : lj.at("points"))
        lane.centerline.push_back({pj.at(0).get<double>(), pj.at(1).get<double>()});
      lane.left_neighbor = optional_lane(lj, "left");
      lane.right_neighbor = optional_lane(lj, "right");
      lane.successor = optional_lane(lj, "successor");
      lane.speed_limit = lj.value("speed_limit", 13.9);
      map.lanes.push_back(std::move(lane));
    }
  } catch (const json::exception& e) {
    throw MapValidationError(std::string("map schema violation: ") + e.what());
  }
  map.load_and_validate();
  return map;
}

LaneMap load_map_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MapValidationError("cannot open map file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return map_from_json(ss.str());
}

std::string map_to_json(const LaneMap& map) {
  json lanes = json::array();
  for (const Lane& lane : map.lanes) lanes.push_back(lane_to_json(lane));
  json j{{"ring", map.ring}, {"lane_width", map.lane_width}, {"lanes", std::move(lanes)}};
  return j.dump();
}

EpisodeLog load_log_jsonl(const std::string& text) {
  EpisodeLog log;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  double last_t = -std::numeric_limits<double>::max();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw MalformedLog(std::string("invalid json: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw MalformedLog("line is not a json object", line_no);
    std::string type = j.value("type", "frame");
    try {
      if (type == "header") {
        if (j.contains("map") && !j.at("map").is_null())
          log.header.map_json = j.at("map").dump();
        if (j.contains("ego_id")) log.header.ego_id = j.at("ego_id").get<int>();
        log.header.seed = j.value("seed", 0ULL);
        log.header.mode = j.value("mode", "");
        if (j.contains("dimensions")) {
          for (const json& dj : j.at("dimensions")) {
            VehicleDimensions dims;
            dims.length = dj.value("length", 4.5);
            dims.width = dj.value("width", 1.9);
            dims.wheelbase = dj.value("wheelbase", 2.85);
            log.header.dimensions[dj.at("id").get<int>()] = dims;
          }
        }
      } else if (type == "event") {
        log.events.push_back(line);
      } else if (type == "frame") {
        LogFrame frame;
        frame.timestamp = j.at("timestamp").get<double>();
        if (!std::isfinite(frame.timestamp))
          throw MalformedLog("non-finite timestamp", line_no);
        if (frame.timestamp <= last_t)
          throw MalformedLog("timestamps not strictly increasing", line_no);
        last_t = frame.timestamp;
        for (const json& vj : j.at("vehicles")) {
          ObservedVehicle v;
          v.id = vj.at("id").get<int>();
          v.x = vj.at("x").get<double>();
          v.y = vj.at("y").get<double>();
          v.heading = vj.at("heading").get<double>();
          v.velocity = vj.at("velocity").get<double>();
          if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.heading) ||
              !std::isfinite(v.velocity))
            throw MalformedLog("non-finite vehicle state", line_no);
          if (vj.contains("acceleration"))
            v.acceleration = vj.at("acceleration").get<double>();
          if (vj.contains("curvature")) v.curvature = vj.at("curvature").get<double>();
          frame.vehicles.push_back(v);
        }
        log.frames.push_back(std::move(frame));
      } else {
        throw MalformedLog("unknown line type '" + type + "'", line_no);
      }
    } catch (const json::exception& e) {
      throw MalformedLog(std::string("missing or mistyped field: ") + e.what(), line_no);
    }
  }
  if (log.frames.empty()) throw EmptyLog("log contains no frames");
  return log;
}

EpisodeLog load_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PlanningError("cannot open log file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_log_jsonl(ss.str());
}

std::string frame_to_json(const LogFrame& frame) {
  json vehicles = json::array();
  for (const ObservedVehicle& v : frame.vehicles) {
    json vj{{"id", v.id},         {"x", v.x},
            {"y", v.y},           {"heading", v.heading},
            {"velocity", v.velocity}};
    if (v.acceleration) vj["acceleration"] = *v.acceleration;
    if (v.curvature) vj["curvature"] = *v.curvature;
    vehicles.push_back(std::move(vj));
  }
  json j{{"timestamp", frame.timestamp}, {"vehicles", std::move(vehicles)}};
  return j.dump();
}

}  // namespace gbp
