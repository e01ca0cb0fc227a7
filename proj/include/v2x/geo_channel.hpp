#pragma once

// Geometry-driven channel model: vehicle mobility, link obstruction classes,
// spatially correlated shadowing and per-sub-band power gains.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "v2x/rng.hpp"

namespace v2x::geo {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

double distance(Vec2 a, Vec2 b);

struct Rect {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;
};

enum class ObstacleKind { building, foliage };

struct Obstacle {
  int id = 0;
  ObstacleKind kind = ObstacleKind::building;
  Rect box;
};

struct Vehicle {
  int id = 0;
  Vec2 position;
  double heading = 0.0;  // radians, counter-clockwise from +x
  double length = 4.5;
  double width = 1.8;
};

struct BaseStation {
  Vec2 position;
  bool elevated = true;
};

// One time instant of the simulated area.
struct Scene {
  double time_ms = 0.0;
  std::vector<Vehicle> vehicles;
  std::vector<Obstacle> obstacles;
  BaseStation base_station;

  // Throws std::invalid_argument on duplicate ids, non-finite coordinates or
  // degenerate obstacle rectangles.
  void validate() const;
};

enum class LinkClass { los, nlos_v, nlos_b };

const char* to_string(LinkClass c);

// Snapshots at a constant sampling period, same vehicle set throughout.
struct TraceSet {
  double period_ms = 0.0;
  std::vector<Scene> snapshots;

  double duration_ms() const;
  void validate() const;
};

struct GridTraceParams {
  double width_m = 500.0;
  double height_m = 500.0;
  int vehicles = 8;
  double speed_mps = 10.0;
  double duration_ms = 13000.0;
  double period_ms = 100.0;
  std::uint64_t seed = 0;
  double block_m = 50.0;
};

// Vehicles driving a Manhattan street grid. Roads run along every multiple of
// block_m; at each intersection a vehicle picks uniformly among the
// directions that neither reverse nor leave the grid. The base station is
// placed at the area centroid and no obstacles are attached.
TraceSet generate_grid_traces(const GridTraceParams& params);

// Buildings filling the interior of every grid block, leaving streets of the
// given width centred on the grid lines.
std::vector<Obstacle> grid_buildings(double width_m, double height_m, double block_m = 50.0,
                                     double street_width_m = 10.0);

// Trace CSV: `t_ms,vehicle_id,x_m,y_m,heading_rad`. Errors carry the
// offending line number.
TraceSet parse_traces(std::istream& in);
TraceSet load_traces(const std::filesystem::path& path);
void write_traces(std::ostream& out, const TraceSet& traces);

// Obstacle CSV: `id,kind,xmin_m,ymin_m,xmax_m,ymax_m`.
std::vector<Obstacle> parse_obstacles(std::istream& in);
std::vector<Obstacle> load_obstacles(const std::filesystem::path& path);

// Copies obstacles and base station into every snapshot.
void attach_environment(TraceSet& traces, const std::vector<Obstacle>& obstacles,
                        const BaseStation& base_station);

// Centre of the bounding box of all vehicle positions over the trace.
Vec2 trace_centroid(const TraceSet& traces);

bool segment_intersects_rect(Vec2 a, Vec2 b, const Rect& r);
bool segment_intersects_vehicle(Vec2 a, Vec2 b, const Vehicle& v);
bool vehicle_contains(const Vehicle& v, Vec2 p);

// Buildings and foliage dominate vehicles. Links terminating at the base
// station (to_base_station = true) ignore vehicle obstruction. Vehicles whose
// footprint contains either endpoint are the endpoints themselves and never
// obstruct.
LinkClass classify_link(Vec2 tx, Vec2 rx, const Scene& scene, bool to_base_station = false);

struct ClassParams {
  double exponent = 2.0;
  double extra_loss_db = 0.0;
  double sigma_db = 0.0;
};

struct PropagationParams {
  double carrier_hz = 2e9;
  // Indexed by LinkClass.
  std::array<ClassParams, 3> classes{{{2.0, 0.0, 3.3}, {2.55, 6.0, 3.8}, {2.9, 15.0, 4.1}}};
  double decorrelation_m = 25.0;
  double min_distance_m = 1.0;

  const ClassParams& of(LinkClass c) const { return classes[static_cast<std::size_t>(c)]; }
};

inline constexpr double kSpeedOfLight = 299792458.0;

double free_space_loss_1m_db(double carrier_hz);

// alpha_dB = -(PL0 + 10 n log10(d) + A_class) + shadowing_db, d clamped below
// at min_distance_m.
double large_scale_gain_db(Vec2 tx, Vec2 rx, LinkClass cls, double shadowing_db,
                           const PropagationParams& params);

struct LinkShadow {
  double value_db = 0.0;
  Vec2 last_tx;
  Vec2 last_rx;
  bool initialized = false;
};

// Gauss-Markov update in the mean endpoint displacement:
// value <- rho * value + sqrt(1 - rho^2) * sigma * z, rho = exp(-dd / d_c).
// The first update of a link is a fresh N(0, sigma^2) draw. One normal
// variate is consumed per call regardless of geometry.
double update_shadowing(LinkShadow& link, Vec2 tx, Vec2 rx, double sigma_db,
                        double decorrelation_m, Rng& rng);

inline constexpr int kBaseStationId = -1;

// Shadowing of every directed link seen so far, keyed by (tx id, rx id);
// the base station uses kBaseStationId.
class ShadowingState {
 public:
  using Key = std::pair<int, int>;

  double update(Key key, Vec2 tx, Vec2 rx, double sigma_db, double decorrelation_m, Rng& rng);
  const LinkShadow* find(Key key) const;
  std::size_t size() const { return links_.size(); }

 private:
  std::map<Key, LinkShadow> links_;
};

// Exp(1) small-scale power gain, strictly positive.
double sample_small_scale(Rng& rng);

double db_to_linear(double db);
double linear_to_db(double linear);
double dbm_to_mw(double dbm);

// Vehicle indices (into Scene::vehicles) playing each role.
struct LinkRoles {
  std::vector<int> v2i_tx;  // [m]
  std::vector<int> v2v_tx;  // [k]
  std::vector<int> v2v_rx;  // [k]
};

// V2I link m is driven by vehicle m and V2V transmitter k is vehicle k. Each
// V2V transmitter, in index order, takes the nearest vehicle that has no V2V
// role yet as its receiver. Requires at least max(M, 2K) vehicles.
LinkRoles assign_links(const Scene& scene, int num_v2i, int num_v2v);

struct LinkGain {
  double alpha_db = 0.0;
  double small_scale = 1.0;
  double linear = 0.0;
};

LinkGain make_gain(double alpha_db, double small_scale);

// Large-scale gains (dB) for one geometry; constant across sub-bands.
struct LargeScaleChannel {
  int num_v2i = 0;
  int num_v2v = 0;
  std::vector<double> v2i_direct;   // [m]
  std::vector<double> v2v_direct;   // [k]
  std::vector<double> v2v_to_bs;    // [k]
  std::vector<double> v2i_to_v2v;   // [m * K + k]
  std::vector<double> v2v_cross;    // [from * K + to], diagonal unused
  std::vector<LinkClass> v2v_direct_class;  // [k]
};

// All linear gains for one coherence interval.
class GainTensor {
 public:
  GainTensor() = default;
  GainTensor(int num_v2i, int num_v2v);

  int num_v2i() const { return m_; }
  int num_v2v() const { return k_; }

  const LinkGain& v2i_direct(int m) const { return v2i_direct_[m]; }
  const LinkGain& v2v_direct(int k, int m) const { return v2v_direct_[k * m_ + m]; }
  const LinkGain& v2v_to_bs(int k, int m) const { return v2v_to_bs_[k * m_ + m]; }
  const LinkGain& v2i_to_v2v(int m, int k) const { return v2i_to_v2v_[m * k_ + k]; }
  const LinkGain& v2v_cross(int from, int to, int m) const {
    return v2v_cross_[cross_index(from, to, m)];
  }

  LinkGain& v2i_direct(int m) { return v2i_direct_[m]; }
  LinkGain& v2v_direct(int k, int m) { return v2v_direct_[k * m_ + m]; }
  LinkGain& v2v_to_bs(int k, int m) { return v2v_to_bs_[k * m_ + m]; }
  LinkGain& v2i_to_v2v(int m, int k) { return v2i_to_v2v_[m * k_ + k]; }
  LinkGain& v2v_cross(int from, int to, int m) { return v2v_cross_[cross_index(from, to, m)]; }

  std::size_t v2i_direct_count() const { return v2i_direct_.size(); }
  std::size_t v2v_direct_count() const { return v2v_direct_.size(); }
  std::size_t v2v_to_bs_count() const { return v2v_to_bs_.size(); }
  std::size_t v2i_to_v2v_count() const { return v2i_to_v2v_.size(); }
  std::size_t v2v_cross_count() const { return v2v_cross_.size(); }

  // Every entry, family by family.
  std::vector<LinkGain> all() const;

 private:
  // k' != k packed into K(K-1) slots.
  std::size_t cross_index(int from, int to, int m) const;

  int m_ = 0;
  int k_ = 0;
  std::vector<LinkGain> v2i_direct_;
  std::vector<LinkGain> v2v_direct_;
  std::vector<LinkGain> v2v_to_bs_;
  std::vector<LinkGain> v2i_to_v2v_;
  std::vector<LinkGain> v2v_cross_;
};

// Classifies every link of the role assignment, advances its shadowing and
// returns the large-scale gains. Throws if a V2V pair has coincident
// endpoints.
LargeScaleChannel compute_large_scale(const Scene& scene, const LinkRoles& roles, int num_v2i,
                                      ShadowingState& shadow, const PropagationParams& params,
                                      Rng& rng);

// Independent Exp(1) small-scale draw per link per sub-band.
GainTensor draw_gains(const LargeScaleChannel& large, Rng& rng);

GainTensor channel_snapshot(const Scene& scene, const LinkRoles& roles, int num_v2i,
                            ShadowingState& shadow, const PropagationParams& params, Rng& rng);

}  // namespace v2x::geo
