#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "v2x/geo_channel.hpp"

using namespace v2x;
using namespace v2x::geo;

namespace {

// Free-space loss at 1 m written out independently of the library.
double fspl_1m(double fc) {
  const double wavelength = 299792458.0 / fc;
  return 20.0 * std::log10(4.0 * std::numbers::pi / wavelength);
}

Vehicle car(int id, double x, double y, double heading = 0.0) {
  Vehicle v;
  v.id = id;
  v.position = {x, y};
  v.heading = heading;
  return v;
}

Scene scene_with(std::vector<Vehicle> vehicles, std::vector<Obstacle> obstacles = {}) {
  Scene s;
  s.vehicles = std::move(vehicles);
  s.obstacles = std::move(obstacles);
  s.base_station = {{0.0, 500.0}, true};
  return s;
}

// Kolmogorov-Smirnov distance of a sample against Exp(1).
double ks_exp1(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double cdf = 1.0 - std::exp(-xs[i]);
    d = std::max({d, std::abs(cdf - i / n), std::abs((i + 1) / n - cdf)});
  }
  return d;
}

}  // namespace

TEST_CASE("grid traces: snapshot count, shape, determinism") {
  GridTraceParams p;
  p.seed = 7;
  const auto a = generate_grid_traces(p);
  CHECK(a.snapshots.size() == 131);
  for (const auto& s : a.snapshots) CHECK(s.vehicles.size() == 8);
  CHECK(a.duration_ms() == doctest::Approx(13000.0));
  a.validate();

  const auto b = generate_grid_traces(p);
  REQUIRE(b.snapshots.size() == a.snapshots.size());
  bool same = true;
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    for (std::size_t v = 0; v < 8; ++v) {
      const auto& va = a.snapshots[i].vehicles[v];
      const auto& vb = b.snapshots[i].vehicles[v];
      same = same && va.position.x == vb.position.x && va.position.y == vb.position.y &&
             va.heading == vb.heading;
    }
  }
  CHECK(same);

  p.duration_ms = 0.0;
  CHECK(generate_grid_traces(p).snapshots.size() == 1);
}

TEST_CASE("grid traces stay on the street grid inside the area") {
  GridTraceParams p;
  p.seed = 3;
  p.vehicles = 12;
  const auto t = generate_grid_traces(p);
  for (const auto& s : t.snapshots) {
    for (const auto& v : s.vehicles) {
      CHECK(v.position.x >= -1e-9);
      CHECK(v.position.x <= p.width_m + 1e-9);
      CHECK(v.position.y >= -1e-9);
      CHECK(v.position.y <= p.height_m + 1e-9);
      const double fx = std::fmod(v.position.x, p.block_m);
      const double fy = std::fmod(v.position.y, p.block_m);
      const bool on_x = std::min(fx, p.block_m - fx) < 1e-6;
      const bool on_y = std::min(fy, p.block_m - fy) < 1e-6;
      CHECK((on_x || on_y));
    }
  }
  // Consecutive positions differ by at most speed * period along the streets.
  const double step = p.speed_mps * p.period_ms / 1000.0;
  for (std::size_t i = 1; i < t.snapshots.size(); ++i) {
    for (std::size_t v = 0; v < t.snapshots[i].vehicles.size(); ++v) {
      const auto& a = t.snapshots[i - 1].vehicles[v].position;
      const auto& b = t.snapshots[i].vehicles[v].position;
      CHECK(std::abs(a.x - b.x) + std::abs(a.y - b.y) <= step + 1e-9);
    }
  }
}

TEST_CASE("grid trace errors") {
  GridTraceParams p;
  p.width_m = 0.0;
  CHECK_THROWS_WITH(generate_grid_traces(p), doctest::Contains("zero-area"));
  p = {};
  p.period_ms = 0.0;
  CHECK_THROWS(generate_grid_traces(p));
  p = {};
  p.period_ms = 300.0;
  p.duration_ms = 1000.0;
  CHECK_THROWS_WITH(generate_grid_traces(p), doctest::Contains("divide"));
}

TEST_CASE("trace CSV parsing") {
  std::istringstream in(
      "t_ms,vehicle_id,x_m,y_m,heading_rad\n"
      "0,2,10,0,0\n0,1,0,0,0\n"
      "100,1,1,0,0\n100,2,11,0,0\n"
      "200,1,2,0,0\n200,2,12,0,0\n");
  const auto t = parse_traces(in);
  REQUIRE(t.snapshots.size() == 3);
  CHECK(t.period_ms == 100.0);
  CHECK(t.snapshots[0].vehicles[0].id == 1);
  CHECK(t.snapshots[0].vehicles[1].id == 2);
  CHECK(t.snapshots[2].vehicles[1].position.x == 12.0);

  std::ostringstream out;
  write_traces(out, t);
  std::istringstream again(out.str());
  const auto t2 = parse_traces(again);
  CHECK(t2.snapshots.size() == 3);
  CHECK(t2.snapshots[1].vehicles[0].position.x == 1.0);
}

TEST_CASE("trace CSV errors carry line numbers") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_traces(in);
  };
  const std::string header = "t_ms,vehicle_id,x_m,y_m,heading_rad\n";
  CHECK_THROWS_WITH(parse(header + "0,1,0,0,0\n100,1,0,0,0\n300,1,0,0,0\n"),
                    "non-uniform sampling period at line 4");
  CHECK_THROWS_WITH(parse(header + "100,1,0,0,0\n0,1,0,0,0\n"),
                    doctest::Contains("non-monotone timestamp at line 3"));
  CHECK_THROWS_WITH(parse(header + "0,1,0,0\n"), doctest::Contains("missing columns at line 2"));
  CHECK_THROWS_WITH(parse(""), doctest::Contains("no snapshots"));
  CHECK_THROWS_WITH(parse(header), doctest::Contains("no snapshots"));
  CHECK_THROWS_WITH(parse(header + "0,1,0,0,0\n0,2,0,0,0\n100,1,0,0,0\n200,1,0,0,0\n"),
                    doctest::Contains("at line"));
  CHECK_THROWS_WITH(parse(header + "0,1,0,0,0\n0,1,5,0,0\n"),
                    doctest::Contains("duplicate vehicle id"));
}

TEST_CASE("obstacle CSV") {
  std::istringstream in(
      "id,kind,xmin_m,ymin_m,xmax_m,ymax_m\n"
      "1,building,0,0,10,10\n2,foliage,20,20,25,30\n");
  const auto obs = parse_obstacles(in);
  REQUIRE(obs.size() == 2);
  CHECK(obs[1].kind == ObstacleKind::foliage);
  CHECK(obs[1].box.ymax == 30.0);

  std::istringstream bad("id,kind,xmin_m,ymin_m,xmax_m,ymax_m\n1,lake,0,0,1,1\n");
  CHECK_THROWS_WITH(parse_obstacles(bad), doctest::Contains("line 2"));
  std::istringstream degenerate("id,kind,xmin_m,ymin_m,xmax_m,ymax_m\n1,building,5,0,5,1\n");
  CHECK_THROWS(parse_obstacles(degenerate));
}

TEST_CASE("scene validation") {
  auto s = scene_with({car(1, 0, 0), car(1, 5, 0)});
  CHECK_THROWS_WITH(s.validate(), doctest::Contains("duplicate"));
  s = scene_with({car(1, 0, 0), car(2, NAN, 0)});
  CHECK_THROWS(s.validate());
  s = scene_with({car(1, 0, 0)}, {{1, ObstacleKind::building, {5, 5, 5, 6}}});
  CHECK_THROWS(s.validate());
}

TEST_CASE("classify_link examples") {
  const auto empty = scene_with({});
  CHECK(classify_link({0, 0}, {100, 0}, empty) == LinkClass::los);

  const auto built = scene_with({}, {{1, ObstacleKind::building, {40, -5, 60, 5}}});
  CHECK(classify_link({0, 0}, {100, 0}, built) == LinkClass::nlos_b);

  const auto blocked = scene_with({car(1, 0, 0), car(2, 100, 0), car(3, 50, 0, 1.5707963)});
  CHECK(classify_link({0, 0}, {100, 0}, blocked) == LinkClass::nlos_v);

  // Buildings dominate vehicles.
  auto both = blocked;
  both.obstacles = {{1, ObstacleKind::foliage, {70, -5, 80, 5}}};
  CHECK(classify_link({0, 0}, {100, 0}, both) == LinkClass::nlos_b);

  // The endpoints' own footprints never obstruct.
  const auto ends = scene_with({car(1, 0, 0), car(2, 100, 0)});
  CHECK(classify_link({0, 0}, {100, 0}, ends) == LinkClass::los);

  // Links to the base station ignore vehicles.
  CHECK(classify_link({0, 0}, {100, 0}, blocked, true) == LinkClass::los);
  CHECK(classify_link({0, 0}, {100, 0}, built, true) == LinkClass::nlos_b);
}

TEST_CASE("moving the building off the segment clears NLOSb") {
  auto s = scene_with({}, {{1, ObstacleKind::building, {40, -5, 60, 5}}});
  CHECK(classify_link({0, 0}, {100, 0}, s) == LinkClass::nlos_b);
  s.obstacles[0].box = {40, 20, 60, 30};
  CHECK(classify_link({0, 0}, {100, 0}, s) == LinkClass::los);
}

TEST_CASE("segment-rectangle intersection edge cases") {
  const Rect r{0, 0, 10, 10};
  CHECK(segment_intersects_rect({-5, 5}, {15, 5}, r));
  CHECK(segment_intersects_rect({2, 2}, {3, 3}, r));    // fully inside
  CHECK_FALSE(segment_intersects_rect({-5, -5}, {-1, 20}, r));
  CHECK_FALSE(segment_intersects_rect({-5, 11}, {15, 11}, r));
  CHECK(segment_intersects_rect({-5, -5}, {15, 15}, r));  // diagonal
  CHECK_FALSE(segment_intersects_rect({-5, 0}, {-1, 0}, r));
}

TEST_CASE("rotated vehicle footprint") {
  auto v = car(1, 0, 0, std::numbers::pi / 2);  // long axis along y
  CHECK(vehicle_contains(v, {0.0, 2.0}));
  CHECK_FALSE(vehicle_contains(v, {2.0, 0.0}));
  CHECK(segment_intersects_vehicle({-10, 0}, {10, 0}, v));
  CHECK_FALSE(segment_intersects_vehicle({-10, 3}, {10, 3}, v));
}

TEST_CASE("large-scale gain examples") {
  PropagationParams p;
  const double pl0 = fspl_1m(2e9);
  CHECK(pl0 == doctest::Approx(38.46).epsilon(0.0003));
  CHECK(free_space_loss_1m_db(2e9) == doctest::Approx(pl0).epsilon(1e-12));
  CHECK(large_scale_gain_db({0, 0}, {1, 0}, LinkClass::los, 0.0, p) ==
        doctest::Approx(-38.46).epsilon(0.0003));
  CHECK(large_scale_gain_db({0, 0}, {100, 0}, LinkClass::los, 0.0, p) ==
        doctest::Approx(-(pl0 + 40.0)).epsilon(1e-12));
  CHECK(large_scale_gain_db({0, 0}, {100, 0}, LinkClass::nlos_b, 0.0, p) ==
        doctest::Approx(-(pl0 + 58.0 + 15.0)).epsilon(1e-12));
  CHECK(large_scale_gain_db({0, 0}, {100, 0}, LinkClass::nlos_b, 0.0, p) ==
        doctest::Approx(-111.46).epsilon(0.0001));
  // Distance clamp at 1 m.
  CHECK(large_scale_gain_db({0, 0}, {0.2, 0}, LinkClass::los, 0.0, p) ==
        large_scale_gain_db({0, 0}, {1, 0}, LinkClass::los, 0.0, p));
  CHECK(large_scale_gain_db({0, 0}, {10, 0}, LinkClass::los, 2.5, p) ==
        doctest::Approx(-(pl0 + 20.0) + 2.5));
  CHECK_THROWS(large_scale_gain_db({0, 0}, {INFINITY, 0}, LinkClass::los, 0.0, p));
}

TEST_CASE("large-scale gain: monotone in distance, class ordering") {
  PropagationParams p;
  for (auto cls : {LinkClass::los, LinkClass::nlos_v, LinkClass::nlos_b}) {
    double prev = 0.0;
    for (double d = 1.0; d < 2000.0; d *= 1.37) {
      const double g = large_scale_gain_db({0, 0}, {d, 0}, cls, 0.0, p);
      if (d > 1.0) CHECK(g <= prev);
      prev = g;
    }
  }
  for (double d = 1.0; d < 2000.0; d *= 1.9) {
    const double los = large_scale_gain_db({0, 0}, {d, 0}, LinkClass::los, 0.0, p);
    const double v = large_scale_gain_db({0, 0}, {d, 0}, LinkClass::nlos_v, 0.0, p);
    const double b = large_scale_gain_db({0, 0}, {d, 0}, LinkClass::nlos_b, 0.0, p);
    CHECK(los >= v);
    CHECK(v >= b);
  }
}

TEST_CASE("shadowing process") {
  Rng rng(11);
  LinkShadow link;
  const double first = update_shadowing(link, {0, 0}, {10, 0}, 3.3, 25.0, rng);
  CHECK(std::isfinite(first));
  // No displacement: unchanged.
  CHECK(update_shadowing(link, {0, 0}, {10, 0}, 3.3, 25.0, rng) == first);
  // Huge displacement: fresh draw, matching an independent generator copy.
  Rng copy = rng;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double expected = 3.3 * normal(copy);
  CHECK(update_shadowing(link, {1e9, 0}, {1e9 + 10, 0}, 3.3, 25.0, rng) ==
        doctest::Approx(expected).epsilon(1e-12));
  // Zero sigma.
  LinkShadow flat;
  for (int i = 0; i < 5; ++i) {
    CHECK(update_shadowing(flat, {i * 7.0, 0}, {10, 0}, 0.0, 25.0, rng) == 0.0);
  }
  CHECK_THROWS(update_shadowing(flat, {0, 0}, {1, 0}, 1.0, 0.0, rng));
}

TEST_CASE("shadowing correlation follows exp(-d/dc)") {
  // Pairs of values separated by a fixed displacement; empirical correlation
  // against the model value.
  const double dc = 25.0;
  const double step = 10.0;
  Rng rng(5);
  double sxy = 0.0, sxx = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    LinkShadow link;
    const double a = update_shadowing(link, {0, 0}, {50, 0}, 1.0, dc, rng);
    const double b = update_shadowing(link, {step, 0}, {50 + step, 0}, 1.0, dc, rng);
    sxy += a * b;
    sxx += a * a;
  }
  CHECK(sxy / sxx == doctest::Approx(std::exp(-step / dc)).epsilon(0.05));
}

TEST_CASE("small-scale fading statistics") {
  Rng rng(2024);
  const int n = 1000000;
  double sum = 0.0;
  int above = 0;
  std::vector<double> xs;
  xs.reserve(100000);
  for (int i = 0; i < n; ++i) {
    const double h = sample_small_scale(rng);
    REQUIRE(h > 0.0);
    sum += h;
    above += h > 1.0;
    if (i < 100000) xs.push_back(h);
  }
  CHECK(sum / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(static_cast<double>(above) / n == doctest::Approx(std::exp(-1.0)).epsilon(0.01 / 0.368));
  CHECK(ks_exp1(xs) < 0.01);

  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) CHECK(sample_small_scale(a) == sample_small_scale(b));
}

TEST_CASE("link roles") {
  auto s = scene_with({car(0, 0, 0), car(1, 100, 0), car(2, 10, 0), car(3, 95, 0), car(4, 500, 0),
                       car(5, 300, 0)});
  const auto r = assign_links(s, 2, 2);
  CHECK(r.v2i_tx == std::vector<int>{0, 1});
  CHECK(r.v2v_tx == std::vector<int>{0, 1});
  CHECK(r.v2v_rx == std::vector<int>{2, 3});
  CHECK_THROWS_WITH(assign_links(s, 2, 4), doctest::Contains("insufficient vehicles"));
}

TEST_CASE("gain tensor shapes") {
  auto s = scene_with({car(0, 0, 0), car(1, 30, 0)});
  ShadowingState shadow;
  Rng rng(1);
  PropagationParams p;
  const auto g1 = channel_snapshot(s, assign_links(s, 1, 1), 1, shadow, p, rng);
  CHECK(g1.v2i_direct_count() == 1);
  CHECK(g1.v2v_direct_count() == 1);
  CHECK(g1.v2v_to_bs_count() == 1);
  CHECK(g1.v2i_to_v2v_count() == 1);
  CHECK(g1.v2v_cross_count() == 0);

  GridTraceParams gp;
  gp.seed = 2;
  const auto t = generate_grid_traces(gp);
  const auto g4 = channel_snapshot(t.snapshots[0], assign_links(t.snapshots[0], 4, 4), 4, shadow,
                                   p, rng);
  CHECK(g4.v2v_cross_count() == 48);
  CHECK(g4.v2v_direct_count() == 16);
  CHECK(g4.all().size() == 4 + 16 + 16 + 16 + 48);
}

TEST_CASE("gain decomposition is exact and flat across sub-bands") {
  GridTraceParams gp;
  gp.seed = 4;
  auto t = generate_grid_traces(gp);
  attach_environment(t, grid_buildings(gp.width_m, gp.height_m), t.snapshots[0].base_station);
  ShadowingState shadow;
  Rng rng(8);
  PropagationParams p;
  const auto& scene = t.snapshots[3];
  const auto roles = assign_links(scene, 4, 4);
  const auto large = compute_large_scale(scene, roles, 4, shadow, p, rng);
  const auto g = draw_gains(large, rng);
  for (const auto& e : g.all()) {
    CHECK(e.linear > 0.0);
    CHECK(std::isfinite(e.linear));
    CHECK(e.small_scale > 0.0);
    CHECK(e.linear == std::pow(10.0, e.alpha_db / 10.0) * e.small_scale);
    CHECK(make_gain(e.alpha_db, e.small_scale).linear == e.linear);
  }
  for (int k = 0; k < 4; ++k) {
    for (int m = 0; m < 4; ++m) {
      CHECK(g.v2v_direct(k, m).alpha_db == large.v2v_direct[k]);
      CHECK(g.v2v_to_bs(k, m).alpha_db == large.v2v_to_bs[k]);
      CHECK(g.v2i_to_v2v(m, k).alpha_db == large.v2i_to_v2v[m * 4 + k]);
    }
  }
  CHECK(make_gain(-60.0, 1.0).linear == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("coincident V2V endpoints are rejected") {
  auto s = scene_with({car(0, 0, 0), car(1, 0, 0)});
  ShadowingState shadow;
  Rng rng(1);
  CHECK_THROWS_WITH(channel_snapshot(s, assign_links(s, 1, 1), 1, shadow, PropagationParams{}, rng),
                    doctest::Contains("coincident"));
}

TEST_CASE("grid buildings leave the streets clear") {
  const auto b = grid_buildings(100.0, 100.0, 50.0, 10.0);
  CHECK(b.size() == 4);
  const auto s = scene_with({}, b);
  // Along a street: clear. Across a block: obstructed.
  CHECK(classify_link({0, 50}, {100, 50}, s) == LinkClass::los);
  CHECK(classify_link({0, 0}, {100, 100}, s) == LinkClass::nlos_b);
}
