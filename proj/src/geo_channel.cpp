#include "v2x/geo_channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>

namespace v2x::geo {

namespace {

bool finite(Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

// Liang-Barsky clip of the segment a->b against a closed box in a local frame.
bool clip_segment(Vec2 a, Vec2 b, double xmin, double ymin, double xmax, double ymax) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  double t0 = 0.0;
  double t1 = 1.0;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - xmin, xmax - a.x, a.y - ymin, ymax - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return false;
  }
  return true;
}

Vec2 to_vehicle_frame(const Vehicle& v, Vec2 p) {
  const double c = std::cos(v.heading);
  const double s = std::sin(v.heading);
  const double dx = p.x - v.position.x;
  const double dy = p.y - v.position.y;
  return {dx * c + dy * s, -dx * s + dy * c};
}

}  // namespace

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

const char* to_string(LinkClass c) {
  switch (c) {
    case LinkClass::los:
      return "LOS";
    case LinkClass::nlos_v:
      return "NLOSv";
    case LinkClass::nlos_b:
      return "NLOSb";
  }
  return "?";
}

void Scene::validate() const {
  std::set<int> ids;
  for (const auto& v : vehicles) {
    if (!ids.insert(v.id).second) {
      throw std::invalid_argument("duplicate vehicle id " + std::to_string(v.id));
    }
    if (!finite(v.position) || !std::isfinite(v.heading)) {
      throw std::invalid_argument("non-finite state for vehicle " + std::to_string(v.id));
    }
  }
  for (const auto& o : obstacles) {
    const auto& b = o.box;
    if (!(b.xmin < b.xmax) || !(b.ymin < b.ymax)) {
      throw std::invalid_argument("degenerate obstacle rectangle " + std::to_string(o.id));
    }
  }
  if (!finite(base_station.position)) {
    throw std::invalid_argument("non-finite base station position");
  }
}

double TraceSet::duration_ms() const {
  if (snapshots.empty()) return 0.0;
  return snapshots.back().time_ms - snapshots.front().time_ms;
}

void TraceSet::validate() const {
  if (snapshots.empty()) throw std::invalid_argument("no snapshots");
  if (snapshots.size() > 1 && !(period_ms > 0.0)) {
    throw std::invalid_argument("non-positive sampling period");
  }
  const auto& first = snapshots.front();
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const auto& s = snapshots[i];
    s.validate();
    if (i > 0) {
      const double dt = s.time_ms - snapshots[i - 1].time_ms;
      if (std::abs(dt - period_ms) > 1e-6) {
        throw std::invalid_argument("non-uniform sampling period at snapshot " +
                                    std::to_string(i));
      }
    }
    if (s.vehicles.size() != first.vehicles.size()) {
      throw std::invalid_argument("vehicle set changes at snapshot " + std::to_string(i));
    }
    for (std::size_t v = 0; v < s.vehicles.size(); ++v) {
      if (s.vehicles[v].id != first.vehicles[v].id) {
        throw std::invalid_argument("vehicle set changes at snapshot " + std::to_string(i));
      }
    }
  }
}

bool segment_intersects_rect(Vec2 a, Vec2 b, const Rect& r) {
  return clip_segment(a, b, r.xmin, r.ymin, r.xmax, r.ymax);
}

bool segment_intersects_vehicle(Vec2 a, Vec2 b, const Vehicle& v) {
  const double hl = 0.5 * v.length;
  const double hw = 0.5 * v.width;
  return clip_segment(to_vehicle_frame(v, a), to_vehicle_frame(v, b), -hl, -hw, hl, hw);
}

bool vehicle_contains(const Vehicle& v, Vec2 p) {
  const Vec2 local = to_vehicle_frame(v, p);
  return std::abs(local.x) <= 0.5 * v.length && std::abs(local.y) <= 0.5 * v.width;
}

LinkClass classify_link(Vec2 tx, Vec2 rx, const Scene& scene, bool to_base_station) {
  for (const auto& o : scene.obstacles) {
    if (segment_intersects_rect(tx, rx, o.box)) return LinkClass::nlos_b;
  }
  if (to_base_station) return LinkClass::los;
  for (const auto& v : scene.vehicles) {
    if (vehicle_contains(v, tx) || vehicle_contains(v, rx)) continue;
    if (segment_intersects_vehicle(tx, rx, v)) return LinkClass::nlos_v;
  }
  return LinkClass::los;
}

double free_space_loss_1m_db(double carrier_hz) {
  return 20.0 * std::log10(4.0 * std::numbers::pi * carrier_hz / kSpeedOfLight);
}

double large_scale_gain_db(Vec2 tx, Vec2 rx, LinkClass cls, double shadowing_db,
                           const PropagationParams& params) {
  if (!finite(tx) || !finite(rx)) throw std::invalid_argument("non-finite link endpoint");
  const double d = std::max(distance(tx, rx), params.min_distance_m);
  const auto& c = params.of(cls);
  const double loss =
      free_space_loss_1m_db(params.carrier_hz) + 10.0 * c.exponent * std::log10(d) + c.extra_loss_db;
  return -loss + shadowing_db;
}

double update_shadowing(LinkShadow& link, Vec2 tx, Vec2 rx, double sigma_db,
                        double decorrelation_m, Rng& rng) {
  if (!(decorrelation_m > 0.0)) throw std::invalid_argument("decorrelation distance must be > 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z = normal(rng);
  double rho = 0.0;
  if (link.initialized) {
    const double moved = 0.5 * (distance(tx, link.last_tx) + distance(rx, link.last_rx));
    rho = std::exp(-moved / decorrelation_m);
  }
  link.value_db = rho * link.value_db + std::sqrt(1.0 - rho * rho) * sigma_db * z;
  link.last_tx = tx;
  link.last_rx = rx;
  link.initialized = true;
  return link.value_db;
}

double ShadowingState::update(Key key, Vec2 tx, Vec2 rx, double sigma_db, double decorrelation_m,
                              Rng& rng) {
  return update_shadowing(links_[key], tx, rx, sigma_db, decorrelation_m, rng);
}

const LinkShadow* ShadowingState::find(Key key) const {
  auto it = links_.find(key);
  return it == links_.end() ? nullptr : &it->second;
}

double sample_small_scale(Rng& rng) {
  std::exponential_distribution<double> exp1(1.0);
  double h = exp1(rng);
  while (!(h > 0.0)) h = exp1(rng);
  return h;
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double linear_to_db(double linear) { return 10.0 * std::log10(linear); }
double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }

LinkRoles assign_links(const Scene& scene, int num_v2i, int num_v2v) {
  if (num_v2i < 1 || num_v2v < 1) throw std::invalid_argument("need at least one V2I and V2V link");
  const int n = static_cast<int>(scene.vehicles.size());
  if (n < 2 * num_v2v || n < num_v2i) {
    throw std::invalid_argument("insufficient vehicles: have " + std::to_string(n) + ", need " +
                                std::to_string(std::max(2 * num_v2v, num_v2i)));
  }
  LinkRoles roles;
  for (int m = 0; m < num_v2i; ++m) roles.v2i_tx.push_back(m);
  std::vector<bool> taken(n, false);
  for (int k = 0; k < num_v2v; ++k) {
    roles.v2v_tx.push_back(k);
    taken[k] = true;
  }
  for (int k = 0; k < num_v2v; ++k) {
    const Vec2 p = scene.vehicles[k].position;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (taken[j]) continue;
      const double d = distance(p, scene.vehicles[j].position);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    taken[best] = true;
    roles.v2v_rx.push_back(best);
  }
  return roles;
}

LinkGain make_gain(double alpha_db, double small_scale) {
  return {alpha_db, small_scale, db_to_linear(alpha_db) * small_scale};
}

GainTensor::GainTensor(int num_v2i, int num_v2v)
    : m_(num_v2i),
      k_(num_v2v),
      v2i_direct_(num_v2i),
      v2v_direct_(static_cast<std::size_t>(num_v2v) * num_v2i),
      v2v_to_bs_(static_cast<std::size_t>(num_v2v) * num_v2i),
      v2i_to_v2v_(static_cast<std::size_t>(num_v2i) * num_v2v),
      v2v_cross_(static_cast<std::size_t>(num_v2v) * (num_v2v - 1) * num_v2i) {}

std::size_t GainTensor::cross_index(int from, int to, int m) const {
  const int packed_to = to < from ? to : to - 1;
  return (static_cast<std::size_t>(from) * (k_ - 1) + packed_to) * m_ + m;
}

std::vector<LinkGain> GainTensor::all() const {
  std::vector<LinkGain> out;
  for (const auto* family : {&v2i_direct_, &v2v_direct_, &v2v_to_bs_, &v2i_to_v2v_, &v2v_cross_}) {
    out.insert(out.end(), family->begin(), family->end());
  }
  return out;
}

LargeScaleChannel compute_large_scale(const Scene& scene, const LinkRoles& roles, int num_v2i,
                                      ShadowingState& shadow, const PropagationParams& params,
                                      Rng& rng) {
  const int num_v2v = static_cast<int>(roles.v2v_tx.size());
  LargeScaleChannel out;
  out.num_v2i = num_v2i;
  out.num_v2v = num_v2v;

  const Vec2 bs = scene.base_station.position;
  auto vehicle = [&](int idx) -> const Vehicle& { return scene.vehicles.at(idx); };

  auto link = [&](int tx_id, Vec2 tx, int rx_id, Vec2 rx, bool to_bs) {
    const LinkClass cls = (tx_id == rx_id) ? LinkClass::los : classify_link(tx, rx, scene, to_bs);
    const double sh = shadow.update({tx_id, rx_id}, tx, rx, params.of(cls).sigma_db,
                                    params.decorrelation_m, rng);
    return std::pair{large_scale_gain_db(tx, rx, cls, sh, params), cls};
  };

  for (int k = 0; k < num_v2v; ++k) {
    const auto& t = vehicle(roles.v2v_tx[k]);
    const auto& r = vehicle(roles.v2v_rx[k]);
    if (t.position.x == r.position.x && t.position.y == r.position.y) {
      throw std::invalid_argument("V2V pair " + std::to_string(k) + " has coincident endpoints");
    }
  }

  for (int m = 0; m < num_v2i; ++m) {
    const auto& t = vehicle(roles.v2i_tx[m]);
    out.v2i_direct.push_back(link(t.id, t.position, kBaseStationId, bs, true).first);
  }
  for (int k = 0; k < num_v2v; ++k) {
    const auto& t = vehicle(roles.v2v_tx[k]);
    const auto& r = vehicle(roles.v2v_rx[k]);
    auto [g, cls] = link(t.id, t.position, r.id, r.position, false);
    out.v2v_direct.push_back(g);
    out.v2v_direct_class.push_back(cls);
  }
  for (int k = 0; k < num_v2v; ++k) {
    const auto& t = vehicle(roles.v2v_tx[k]);
    out.v2v_to_bs.push_back(link(t.id, t.position, kBaseStationId, bs, true).first);
  }
  for (int m = 0; m < num_v2i; ++m) {
    const auto& t = vehicle(roles.v2i_tx[m]);
    for (int k = 0; k < num_v2v; ++k) {
      const auto& r = vehicle(roles.v2v_rx[k]);
      out.v2i_to_v2v.push_back(link(t.id, t.position, r.id, r.position, false).first);
    }
  }
  out.v2v_cross.assign(static_cast<std::size_t>(num_v2v) * num_v2v,
                       std::numeric_limits<double>::quiet_NaN());
  for (int from = 0; from < num_v2v; ++from) {
    const auto& t = vehicle(roles.v2v_tx[from]);
    for (int to = 0; to < num_v2v; ++to) {
      if (from == to) continue;
      const auto& r = vehicle(roles.v2v_rx[to]);
      out.v2v_cross[from * num_v2v + to] = link(t.id, t.position, r.id, r.position, false).first;
    }
  }
  return out;
}

GainTensor draw_gains(const LargeScaleChannel& large, Rng& rng) {
  const int M = large.num_v2i;
  const int K = large.num_v2v;
  GainTensor g(M, K);
  for (int m = 0; m < M; ++m) g.v2i_direct(m) = make_gain(large.v2i_direct[m], sample_small_scale(rng));
  for (int k = 0; k < K; ++k)
    for (int m = 0; m < M; ++m)
      g.v2v_direct(k, m) = make_gain(large.v2v_direct[k], sample_small_scale(rng));
  for (int k = 0; k < K; ++k)
    for (int m = 0; m < M; ++m)
      g.v2v_to_bs(k, m) = make_gain(large.v2v_to_bs[k], sample_small_scale(rng));
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k)
      g.v2i_to_v2v(m, k) = make_gain(large.v2i_to_v2v[m * K + k], sample_small_scale(rng));
  for (int from = 0; from < K; ++from)
    for (int to = 0; to < K; ++to) {
      if (from == to) continue;
      for (int m = 0; m < M; ++m)
        g.v2v_cross(from, to, m) =
            make_gain(large.v2v_cross[from * K + to], sample_small_scale(rng));
    }
  return g;
}

GainTensor channel_snapshot(const Scene& scene, const LinkRoles& roles, int num_v2i,
                            ShadowingState& shadow, const PropagationParams& params, Rng& rng) {
  return draw_gains(compute_large_scale(scene, roles, num_v2i, shadow, params, rng), rng);
}

}  // namespace v2x::geo
