#include "gbp/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "gbp/errors.hpp"

namespace gbp {

namespace {

struct Extent {
  double min_x = std::numeric_limits<double>::max();
  double min_y = std::numeric_limits<double>::max();
  double max_x = std::numeric_limits<double>::lowest();
  double max_y = std::numeric_limits<double>::lowest();

  void include(const Vec2& p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }

  bool valid() const { return min_x <= max_x && min_y <= max_y; }
};

std::string fmt(double v, int precision = 2) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

// World-to-pixel mapping with the y axis flipped for SVG.
class Canvas {
 public:
  Canvas(const Extent& extent, double margin, double pixels_per_meter)
      : extent_(extent), margin_(margin), scale_(pixels_per_meter) {}

  double x(double wx) const { return (wx - extent_.min_x + margin_) * scale_; }
  double y(double wy) const { return (extent_.max_y - wy + margin_) * scale_; }
  double width() const { return (extent_.max_x - extent_.min_x + 2.0 * margin_) * scale_; }
  double height() const { return (extent_.max_y - extent_.min_y + 2.0 * margin_) * scale_; }
  double meters(double m) const { return m * scale_; }

  void polyline(const std::vector<Vec2>& points, const std::string& style) {
    if (points.size() < 2) return;
    body_ << "<polyline fill=\"none\" " << style << " points=\"";
    for (const Vec2& p : points) body_ << fmt(x(p.x)) << ',' << fmt(y(p.y)) << ' ';
    body_ << "\"/>\n";
  }

  template <typename Corners>
  void polygon(const Corners& corners, const std::string& style, const std::string& title) {
    body_ << "<polygon " << style << " points=\"";
    for (const Vec2& p : corners) body_ << fmt(x(p.x)) << ',' << fmt(y(p.y)) << ' ';
    body_ << "\">";
    if (!title.empty()) body_ << "<title>" << title << "</title>";
    body_ << "</polygon>\n";
  }

  void text(const Vec2& world, const std::string& content, const std::string& style) {
    body_ << "<text x=\"" << fmt(x(world.x)) << "\" y=\"" << fmt(y(world.y)) << "\" " << style
          << ">" << content << "</text>\n";
  }

  void raw(const std::string& fragment) { body_ << fragment; }

  std::string finish() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width(), 0)
        << "\" height=\"" << fmt(height(), 0) << "\" viewBox=\"0 0 " << fmt(width(), 0) << ' '
        << fmt(height(), 0) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"#f4f5f7\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  Extent extent_;
  double margin_;
  double scale_;
  std::ostringstream body_;
};

int ego_id_of(const EpisodeLog& log) { return log.header.ego_id.value_or(0); }

const ObservedVehicle* find_vehicle(const LogFrame& frame, int id) {
  for (const ObservedVehicle& v : frame.vehicles)
    if (v.id == id) return &v;
  return nullptr;
}

VehicleDimensions dimensions_of(const EpisodeLog& log, int id) {
  auto it = log.header.dimensions.find(id);
  return it != log.header.dimensions.end() ? it->second : VehicleDimensions{};
}

std::vector<Vec2> ego_positions(const EpisodeLog& log, int first, int last) {
  std::vector<Vec2> points;
  int ego = ego_id_of(log);
  for (int i = first; i <= last; ++i)
    if (const ObservedVehicle* v = find_vehicle(log.frames[i], ego))
      points.push_back({v->x, v->y});
  return points;
}

// Per-frame ego series with finite-difference fallbacks for logs that do not
// record acceleration or curvature.
struct EgoSeries {
  std::vector<double> time;
  std::vector<double> velocity;
  std::vector<double> acceleration;
  std::vector<double> curvature;
};

EgoSeries ego_series(const EpisodeLog& log) {
  EgoSeries series;
  int ego = ego_id_of(log);
  std::vector<double> heading;
  std::vector<Vec2> position;
  for (const LogFrame& frame : log.frames) {
    const ObservedVehicle* v = find_vehicle(frame, ego);
    if (!v) continue;
    series.time.push_back(frame.timestamp);
    series.velocity.push_back(v->velocity);
    series.acceleration.push_back(v->acceleration.value_or(
        std::numeric_limits<double>::quiet_NaN()));
    series.curvature.push_back(v->curvature.value_or(
        std::numeric_limits<double>::quiet_NaN()));
    heading.push_back(v->heading);
    position.push_back({v->x, v->y});
  }
  for (std::size_t i = 0; i < series.time.size(); ++i) {
    if (std::isnan(series.acceleration[i])) {
      std::size_t a = i > 0 ? i - 1 : i;
      std::size_t b = i + 1 < series.time.size() ? i + 1 : i;
      double dt = series.time[b] - series.time[a];
      series.acceleration[i] =
          dt > 0.0 ? (series.velocity[b] - series.velocity[a]) / dt : 0.0;
    }
    if (std::isnan(series.curvature[i])) {
      std::size_t a = i > 0 ? i - 1 : i;
      std::size_t b = i + 1 < series.time.size() ? i + 1 : i;
      double ds = (position[b] - position[a]).norm();
      double dh = std::remainder(heading[b] - heading[a], 2.0 * M_PI);
      series.curvature[i] = ds > 1e-9 ? dh / ds : 0.0;
    }
  }
  return series;
}

double trapezoid_distance(const EgoSeries& series) {
  double total = 0.0;
  for (std::size_t i = 1; i < series.time.size(); ++i)
    total += 0.5 * (series.velocity[i] + series.velocity[i - 1]) *
             (series.time[i] - series.time[i - 1]);
  return total;
}

double traveled_distance(const EpisodeLog& log) {
  double total = 0.0;
  int ego = ego_id_of(log);
  const ObservedVehicle* prev = nullptr;
  Vec2 prev_pos;
  for (const LogFrame& frame : log.frames) {
    const ObservedVehicle* v = find_vehicle(frame, ego);
    if (!v) continue;
    Vec2 pos{v->x, v->y};
    if (prev) total += (pos - prev_pos).norm();
    prev = v;
    prev_pos = pos;
  }
  return total;
}

// One metrics strip: framed axis region with an auto-scaled series polyline.
void draw_strip(std::ostringstream& out, const std::vector<double>& t,
                const std::vector<double>& v, double x0, double y0, double w, double h,
                const std::string& label, const std::string& color) {
  out << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(w)
      << "\" height=\"" << fmt(h)
      << "\" fill=\"#ffffff\" stroke=\"#c5cbd3\" stroke-width=\"1\"/>\n";
  if (t.size() < 2) return;
  double t0 = t.front(), t1 = t.back();
  double lo = *std::min_element(v.begin(), v.end());
  double hi = *std::max_element(v.begin(), v.end());
  if (hi - lo < 1e-9) {
    hi += 0.5;
    lo -= 0.5;
  }
  double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto sx = [&](double tt) { return x0 + (tt - t0) / (t1 - t0) * w; };
  auto sy = [&](double vv) { return y0 + (hi - vv) / (hi - lo) * h; };
  if (lo < 0.0 && hi > 0.0)
    out << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(sy(0.0)) << "\" x2=\"" << fmt(x0 + w)
        << "\" y2=\"" << fmt(sy(0.0))
        << "\" stroke=\"#d4d9df\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.4\" points=\"";
  for (std::size_t i = 0; i < t.size(); ++i) out << fmt(sx(t[i])) << ',' << fmt(sy(v[i])) << ' ';
  out << "\"/>\n";
  out << "<text x=\"" << fmt(x0 + 6.0) << "\" y=\"" << fmt(y0 + 14.0)
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#343a40\">" << label
      << "</text>\n";
  out << "<text x=\"" << fmt(x0 + w - 6.0) << "\" y=\"" << fmt(y0 + 14.0)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#868e96\">"
      << fmt(lo + pad, 2) << " .. " << fmt(hi - pad, 2) << "</text>\n";
}

}  // namespace

std::string render_frame_svg(const EpisodeLog& log, const LaneMap& map, int frame_index,
                             const PlotOptions& options) {
  if (frame_index < 0 || frame_index >= static_cast<int>(log.frames.size()))
    throw PlanningError("frame index " + std::to_string(frame_index) +
                        " outside the log's " + std::to_string(log.frames.size()) + " frames");
  const LogFrame& frame = log.frames[frame_index];
  int ego = ego_id_of(log);

  Extent extent;
  for (const Lane& lane : map.lanes)
    for (const Vec2& p : lane.centerline) extent.include(p);
  for (const ObservedVehicle& v : frame.vehicles) extent.include({v.x, v.y});
  if (!extent.valid()) throw PlanningError("nothing to draw: empty map and frame");

  Canvas canvas(extent, options.margin, options.pixels_per_meter);
  for (const Lane& lane : map.lanes) {
    canvas.polyline(lane.centerline,
                    "stroke=\"#d9dde3\" stroke-width=\"" +
                        fmt(canvas.meters(map.lane_width)) +
                        "\" stroke-linecap=\"butt\" stroke-linejoin=\"round\"");
  }
  for (const Lane& lane : map.lanes) {
    canvas.polyline(lane.centerline,
                    "stroke=\"#ffffff\" stroke-width=\"1\" stroke-dasharray=\"6 5\"");
    if (!lane.centerline.empty())
      canvas.text(lane.centerline.front(), "lane " + std::to_string(lane.id),
                  "font-family=\"sans-serif\" font-size=\"9\" fill=\"#868e96\"");
  }

  std::vector<Vec2> past = ego_positions(log, 0, frame_index);
  std::vector<Vec2> future =
      ego_positions(log, frame_index, static_cast<int>(log.frames.size()) - 1);
  canvas.polyline(past, "stroke=\"#e8590c\" stroke-width=\"1.6\" stroke-opacity=\"0.85\"");
  canvas.polyline(future,
                  "stroke=\"#e8590c\" stroke-width=\"1.2\" stroke-opacity=\"0.6\" "
                  "stroke-dasharray=\"5 4\"");

  for (const ObservedVehicle& v : frame.vehicles) {
    VehicleDimensions dims = dimensions_of(log, v.id);
    OrientedBox box{{v.x, v.y}, v.heading, dims.length, dims.width};
    bool is_ego = v.id == ego;
    std::string style = is_ego
                            ? "fill=\"#e8590c\" fill-opacity=\"0.9\" stroke=\"#a83800\""
                            : "fill=\"#4263eb\" fill-opacity=\"0.75\" stroke=\"#2b3f9e\"";
    canvas.polygon(box.corners(), style + " stroke-width=\"0.8\"",
                   (is_ego ? "ego" : "vehicle " + std::to_string(v.id)) + ", v=" +
                       fmt(v.velocity, 1) + " m/s");
    canvas.text({v.x, v.y + 0.6 * dims.width + 0.8}, std::to_string(v.id),
                "font-family=\"sans-serif\" font-size=\"8\" fill=\"#212529\" "
                "text-anchor=\"middle\"");
  }

  std::ostringstream caption;
  caption << "<text x=\"10\" y=\"16\" font-family=\"sans-serif\" font-size=\"12\" "
             "fill=\"#212529\">t = "
          << fmt(frame.timestamp, 2) << " s (frame " << frame_index + 1 << "/"
          << log.frames.size() << ")</text>\n";
  canvas.raw(caption.str());
  return canvas.finish();
}

std::string render_metrics_svg(const EpisodeLog& log, const PlotOptions& options) {
  (void)options;
  EgoSeries series = ego_series(log);
  double width = 900.0, strip_h = 140.0, gap = 26.0, left = 10.0, top = 34.0;
  double height = top + 3.0 * strip_h + 3.0 * gap;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width, 0)
      << "\" height=\"" << fmt(height, 0) << "\" viewBox=\"0 0 " << fmt(width, 0) << ' '
      << fmt(height, 0) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"#f4f5f7\"/>\n";
  double integrated = trapezoid_distance(series);
  double traveled = traveled_distance(log);
  out << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\" "
         "fill=\"#212529\">ego "
      << ego_id_of(log) << ": " << fmt(series.time.empty() ? 0.0 : series.time.back(), 1)
      << " s, " << fmt(traveled, 1) << " m traveled (velocity integrates to "
      << fmt(integrated, 1) << " m)</text>\n";
  double w = width - 2.0 * left;
  draw_strip(out, series.time, series.velocity, left, top, w, strip_h, "velocity (m/s)",
             "#1971c2");
  draw_strip(out, series.time, series.acceleration, left, top + strip_h + gap, w, strip_h,
             "acceleration (m/s^2)", "#e8590c");
  draw_strip(out, series.time, series.curvature, left, top + 2.0 * (strip_h + gap), w,
             strip_h, "curvature (1/m)", "#2f9e44");
  out << "</svg>\n";
  return out.str();
}

std::vector<std::string> write_episode_plots(const EpisodeLog& log, const LaneMap& map,
                                             const std::string& prefix,
                                             const PlotOptions& options) {
  std::vector<std::string> paths;
  int frames = static_cast<int>(log.frames.size());
  int keyframes = std::max(1, options.keyframes);
  auto write = [&](const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw PlanningError("cannot write plot file " + path);
    out << content;
    if (!out) throw PlanningError("failed writing plot file " + path);
    paths.push_back(path);
  };
  for (int k = 0; k < keyframes; ++k) {
    int index = keyframes == 1 ? frames - 1
                               : static_cast<int>(std::llround(
                                     static_cast<double>(k) * (frames - 1) / (keyframes - 1)));
    std::ostringstream name;
    name << prefix << "_k" << std::setw(2) << std::setfill('0') << k << ".svg";
    write(name.str(), render_frame_svg(log, map, index, options));
  }
  write(prefix + "_metrics.svg", render_metrics_svg(log, options));
  return paths;
}

}  // namespace gbp
