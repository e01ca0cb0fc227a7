#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "v2x/geo_channel.hpp"

namespace v2x::geo {

namespace {

constexpr std::string_view kTraceHeader = "t_ms,vehicle_id,x_m,y_m,heading_rad";
constexpr std::string_view kObstacleHeader = "id,kind,xmin_m,ymin_m,xmax_m,ymax_m";

std::runtime_error parse_error(const std::string& what, std::size_t line) {
  return std::runtime_error(what + " at line " + std::to_string(line));
}

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

double to_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw parse_error("malformed number '" + std::string(field) + "'", line);
  }
  return v;
}

int to_int(std::string_view field, std::size_t line) {
  int v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw parse_error("malformed integer '" + std::string(field) + "'", line);
  }
  return v;
}

enum Dir { kPosX = 0, kPosY = 1, kNegX = 2, kNegY = 3 };

struct Mover {
  double x = 0.0;
  double y = 0.0;
  int dir = kPosX;
};

double heading_of(int dir) {
  switch (dir) {
    case kPosX:
      return 0.0;
    case kPosY:
      return 0.5 * std::numbers::pi;
    case kNegX:
      return std::numbers::pi;
    default:
      return -0.5 * std::numbers::pi;
  }
}

class GridMobility {
 public:
  GridMobility(const GridTraceParams& p)
      : block_(p.block_m),
        nx_(std::max(1, static_cast<int>(std::floor(p.width_m / p.block_m)))),
        ny_(std::max(1, static_cast<int>(std::floor(p.height_m / p.block_m)))),
        rng_(make_rng(p.seed, 0)) {}

  Mover place() {
    std::bernoulli_distribution horizontal(0.5);
    std::bernoulli_distribution forward(0.5);
    Mover v;
    if (horizontal(rng_)) {
      v.y = block_ * std::uniform_int_distribution<int>(0, ny_)(rng_);
      v.x = std::uniform_real_distribution<double>(0.0, nx_ * block_)(rng_);
      v.dir = forward(rng_) ? kPosX : kNegX;
    } else {
      v.x = block_ * std::uniform_int_distribution<int>(0, nx_)(rng_);
      v.y = std::uniform_real_distribution<double>(0.0, ny_ * block_)(rng_);
      v.dir = forward(rng_) ? kPosY : kNegY;
    }
    return v;
  }

  void advance(Mover& v, double distance_m) {
    double remaining = distance_m;
    while (remaining > 0.0) {
      const bool along_x = (v.dir == kPosX || v.dir == kNegX);
      const double sign = (v.dir == kPosX || v.dir == kPosY) ? 1.0 : -1.0;
      double& s = along_x ? v.x : v.y;
      const double cells = s / block_;
      const double next = sign > 0.0 ? (std::floor(cells + 1e-9) + 1.0) * block_
                                      : (std::ceil(cells - 1e-9) - 1.0) * block_;
      const double gap = std::abs(next - s);
      if (gap > remaining) {
        s += sign * remaining;
        return;
      }
      s = next;
      remaining -= gap;
      turn(v);
    }
  }

 private:
  void turn(Mover& v) {
    const int ix = static_cast<int>(std::lround(v.x / block_));
    const int iy = static_cast<int>(std::lround(v.y / block_));
    v.x = ix * block_;
    v.y = iy * block_;
    const int reverse = (v.dir + 2) % 4;
    int options[4];
    int n = 0;
    if (ix < nx_ && reverse != kPosX) options[n++] = kPosX;
    if (iy < ny_ && reverse != kPosY) options[n++] = kPosY;
    if (ix > 0 && reverse != kNegX) options[n++] = kNegX;
    if (iy > 0 && reverse != kNegY) options[n++] = kNegY;
    if (n == 0) {
      v.dir = reverse;
      return;
    }
    v.dir = options[std::uniform_int_distribution<int>(0, n - 1)(rng_)];
  }

  double block_;
  int nx_;
  int ny_;
  Rng rng_;
};

}  // namespace

TraceSet generate_grid_traces(const GridTraceParams& p) {
  if (!(p.width_m > 0.0) || !(p.height_m > 0.0)) throw std::invalid_argument("zero-area region");
  if (!(p.period_ms > 0.0)) throw std::invalid_argument("sampling period must be > 0");
  if (p.vehicles < 1) throw std::invalid_argument("need at least one vehicle");
  if (!(p.speed_mps > 0.0)) throw std::invalid_argument("speed must be > 0");
  if (p.duration_ms < 0.0) throw std::invalid_argument("negative duration");
  if (!(p.block_m > 0.0)) throw std::invalid_argument("block size must be > 0");
  const double steps_real = p.duration_ms / p.period_ms;
  const auto steps = static_cast<long>(std::llround(steps_real));
  if (std::abs(steps_real - static_cast<double>(steps)) > 1e-9) {
    throw std::invalid_argument("period does not divide duration");
  }

  GridMobility mobility(p);
  std::vector<Mover> movers;
  for (int i = 0; i < p.vehicles; ++i) movers.push_back(mobility.place());

  TraceSet out;
  out.period_ms = p.period_ms;
  const BaseStation bs{{0.5 * p.width_m, 0.5 * p.height_m}, true};
  const double step_m = p.speed_mps * p.period_ms / 1000.0;
  for (long s = 0; s <= steps; ++s) {
    if (s > 0) {
      for (auto& v : movers) mobility.advance(v, step_m);
    }
    Scene scene;
    scene.time_ms = static_cast<double>(s) * p.period_ms;
    scene.base_station = bs;
    for (int i = 0; i < p.vehicles; ++i) {
      Vehicle veh;
      veh.id = i;
      veh.position = {movers[i].x, movers[i].y};
      veh.heading = heading_of(movers[i].dir);
      scene.vehicles.push_back(veh);
    }
    out.snapshots.push_back(std::move(scene));
  }
  return out;
}

std::vector<Obstacle> grid_buildings(double width_m, double height_m, double block_m,
                                     double street_width_m) {
  if (!(street_width_m < block_m)) throw std::invalid_argument("street wider than block");
  const int nx = std::max(1, static_cast<int>(std::floor(width_m / block_m)));
  const int ny = std::max(1, static_cast<int>(std::floor(height_m / block_m)));
  const double half = 0.5 * street_width_m;
  std::vector<Obstacle> out;
  int id = 0;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      Obstacle o;
      o.id = id++;
      o.kind = ObstacleKind::building;
      o.box = {i * block_m + half, j * block_m + half, (i + 1) * block_m - half,
               (j + 1) * block_m - half};
      out.push_back(o);
    }
  }
  return out;
}

TraceSet parse_traces(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw std::runtime_error("no snapshots");
  ++lineno;
  strip_cr(line);
  if (line != kTraceHeader) throw parse_error("unexpected trace header", lineno);

  TraceSet out;
  std::vector<std::size_t> first_line;  // line of the first row of each snapshot
  std::set<int> ids_in_current;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 5) throw parse_error("missing columns", lineno);
    const double t = to_double(f[0], lineno);
    Vehicle v;
    v.id = to_int(f[1], lineno);
    v.position = {to_double(f[2], lineno), to_double(f[3], lineno)};
    v.heading = to_double(f[4], lineno);

    if (out.snapshots.empty() || t != out.snapshots.back().time_ms) {
      if (!out.snapshots.empty()) {
        const double prev = out.snapshots.back().time_ms;
        if (t < prev) throw parse_error("non-monotone timestamp", lineno);
        const double gap = t - prev;
        if (out.snapshots.size() == 1) {
          out.period_ms = gap;
        } else if (std::abs(gap - out.period_ms) > 1e-6) {
          throw parse_error("non-uniform sampling period", lineno);
        }
        const auto& ref = out.snapshots.front().vehicles;
        if (out.snapshots.back().vehicles.size() != ref.size()) {
          throw parse_error("vehicle id set differs from first snapshot", first_line.back());
        }
      }
      Scene s;
      s.time_ms = t;
      out.snapshots.push_back(std::move(s));
      first_line.push_back(lineno);
      ids_in_current.clear();
    }
    if (!ids_in_current.insert(v.id).second) throw parse_error("duplicate vehicle id", lineno);
    if (out.snapshots.size() > 1) {
      const auto& ref = out.snapshots.front().vehicles;
      const bool known = std::any_of(ref.begin(), ref.end(), [&](const Vehicle& r) { return r.id == v.id; });
      if (!known) throw parse_error("vehicle id absent from first snapshot", lineno);
    }
    out.snapshots.back().vehicles.push_back(v);
  }
  if (out.snapshots.empty()) throw std::runtime_error("no snapshots");
  if (out.snapshots.size() > 1 &&
      out.snapshots.back().vehicles.size() != out.snapshots.front().vehicles.size()) {
    throw parse_error("vehicle id set differs from first snapshot", first_line.back());
  }
  for (auto& s : out.snapshots) {
    std::sort(s.vehicles.begin(), s.vehicles.end(),
              [](const Vehicle& a, const Vehicle& b) { return a.id < b.id; });
  }
  return out;
}

TraceSet load_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path.string());
  return parse_traces(in);
}

void write_traces(std::ostream& out, const TraceSet& traces) {
  out << kTraceHeader << '\n';
  for (const auto& s : traces.snapshots) {
    for (const auto& v : s.vehicles) {
      out << fmt::format("{},{},{},{},{}\n", s.time_ms, v.id, v.position.x, v.position.y,
                         v.heading);
    }
  }
}

std::vector<Obstacle> parse_obstacles(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw std::runtime_error("empty obstacle file");
  ++lineno;
  strip_cr(line);
  if (line != kObstacleHeader) throw parse_error("unexpected obstacle header", lineno);
  std::vector<Obstacle> out;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 6) throw parse_error("missing columns", lineno);
    Obstacle o;
    o.id = to_int(f[0], lineno);
    if (f[1] == "building") {
      o.kind = ObstacleKind::building;
    } else if (f[1] == "foliage") {
      o.kind = ObstacleKind::foliage;
    } else {
      throw parse_error("unknown obstacle kind '" + std::string(f[1]) + "'", lineno);
    }
    o.box = {to_double(f[2], lineno), to_double(f[3], lineno), to_double(f[4], lineno),
             to_double(f[5], lineno)};
    if (!(o.box.xmin < o.box.xmax) || !(o.box.ymin < o.box.ymax)) {
      throw parse_error("degenerate rectangle", lineno);
    }
    out.push_back(o);
  }
  return out;
}

std::vector<Obstacle> load_obstacles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open obstacle file " + path.string());
  return parse_obstacles(in);
}

void attach_environment(TraceSet& traces, const std::vector<Obstacle>& obstacles,
                        const BaseStation& base_station) {
  for (auto& s : traces.snapshots) {
    s.obstacles = obstacles;
    s.base_station = base_station;
  }
}

Vec2 trace_centroid(const TraceSet& traces) {
  double xmin = INFINITY, ymin = INFINITY, xmax = -INFINITY, ymax = -INFINITY;
  for (const auto& s : traces.snapshots) {
    for (const auto& v : s.vehicles) {
      xmin = std::min(xmin, v.position.x);
      xmax = std::max(xmax, v.position.x);
      ymin = std::min(ymin, v.position.y);
      ymax = std::max(ymax, v.position.y);
    }
  }
  if (!std::isfinite(xmin)) return {};
  return {0.5 * (xmin + xmax), 0.5 * (ymin + ymax)};
}

}  // namespace v2x::geo
