#include "cssloc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>
#include <utility>

#include "cssloc/errors.hpp"
#include "cssloc/rng.hpp"

namespace cssloc::sim {

namespace {

struct PresetGeometry {
  double width, depth;
  int nx, ny;            // lattice counts
  double x0, y0;         // first lattice point
  Point tx;
  int path_count;
  double exponent;
  double direct_gain;
};

PresetGeometry geometry_for(Preset p) {
  switch (p) {
    case Preset::corridor:
      // one survey line along the corridor centre
      return {36.0, 3.0, 36, 1, 0.5, 1.5, {9.3, 0.2}, 6, 2.0, 1.0};
    case Preset::hall:
      return {11.0, 10.0, 5, 4, 3.5, 3.5, {0.5, 9.0}, 4, 2.0, 1.0};
    case Preset::lounge:
      return {12.0, 9.0, 7, 6, 2.5, 1.5, {11.5, 0.5}, 8, 3.5, 0.25};
    case Preset::custom:
      break;
  }
  throw ConfigError("no built-in geometry for custom preset");
}

std::vector<Scatterer> place_scatterers(double width, double depth, int count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5ca7}));
  std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, depth);
  std::uniform_real_distribution<double> refl(0.3, 0.8), ph(0.0, 2.0 * std::numbers::pi);
  std::vector<Scatterer> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    Scatterer sc;
    sc.position = {ux(rng), uy(rng)};
    sc.reflection = refl(rng);
    sc.phase = ph(rng);
    out.push_back(sc);
  }
  return out;
}

// Shifted lattice: midpoints between survey points along each populated axis.
std::vector<Point> midpoints(const std::vector<Point>& grid, double spacing) {
  std::set<std::pair<double, double>> present;
  for (auto p : grid) present.insert({p.x, p.y});
  bool has_y = false;
  for (auto p : grid) has_y = has_y || p.y != grid.front().y;
  std::vector<Point> out;
  for (auto p : grid) {
    Point nx{p.x + spacing, p.y};
    if (!present.count({nx.x, nx.y})) continue;
    if (!has_y) {
      out.push_back({p.x + 0.5 * spacing, p.y});
      continue;
    }
    Point ny{p.x, p.y + spacing}, nxy{p.x + spacing, p.y + spacing};
    if (present.count({ny.x, ny.y}) && present.count({nxy.x, nxy.y}))
      out.push_back({p.x + 0.5 * spacing, p.y + 0.5 * spacing});
  }
  return out;
}

double path_gain(double length, double exponent) {
  // reference distance 1 m; amplitude falls as d^(-n/2)
  return std::pow(std::max(length, 0.1), -0.5 * exponent);
}

}  // namespace

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

Preset parse_preset(const std::string& name) {
  if (name == "corridor") return Preset::corridor;
  if (name == "hall") return Preset::hall;
  if (name == "lounge") return Preset::lounge;
  if (name == "custom") return Preset::custom;
  throw ConfigError("unknown preset '" + name + "'");
}

std::string to_string(Preset p) {
  switch (p) {
    case Preset::corridor: return "corridor";
    case Preset::hall: return "hall";
    case Preset::lounge: return "lounge";
    case Preset::custom: return "custom";
  }
  return "custom";
}

void validate(const Scenario& s) {
  if (s.rp_grid.empty()) throw ConfigError("scenario '" + s.name + "' has no reference points");
  if (s.n_antennas < 1) throw ConfigError("n_antennas must be >= 1");
  if (s.n_subcarriers < 1) throw ConfigError("n_subcarriers must be >= 1");
  if (s.path_count < 1) throw ConfigError("path_count must be >= 1");
  if (s.tx_positions.empty()) throw ConfigError("scenario needs at least one transmitter");
  if (static_cast<int>(s.scatterers.size()) < s.path_count - 1)
    throw ConfigError("scatterer list shorter than path_count - 1");
  if (!(s.width > 0.0) || !(s.depth > 0.0)) throw ConfigError("extent must be positive");
  auto inside = [&](Point p) { return p.x >= 0.0 && p.x <= s.width && p.y >= 0.0 && p.y <= s.depth; };
  std::set<std::pair<double, double>> seen;
  for (auto p : s.rp_grid) {
    if (!inside(p)) throw ConfigError("reference point outside scenario extent");
    if (!seen.insert({p.x, p.y}).second) throw ConfigError("duplicate reference point");
  }
  for (auto p : s.test_points)
    if (!inside(p)) throw ConfigError("test point outside scenario extent");
}

Scenario build_scenario(const std::string& name, Preset preset, std::uint64_t seed) {
  if (preset == Preset::custom)
    throw ConfigError("custom preset requires an explicit RP list (use scenario_from_json)");
  const auto g = geometry_for(preset);
  Scenario s;
  s.name = name;
  s.width = g.width;
  s.depth = g.depth;
  s.grid_spacing = 1.0;
  for (int iy = 0; iy < g.ny; ++iy)
    for (int ix = 0; ix < g.nx; ++ix) {
      Point p{g.x0 + ix * s.grid_spacing, g.y0 + iy * s.grid_spacing};
      if (p.x <= s.width && p.y <= s.depth) s.rp_grid.push_back(p);
    }
  s.test_points = midpoints(s.rp_grid, s.grid_spacing);
  s.tx_positions = {g.tx};
  s.path_count = g.path_count;
  s.path_loss_exponent = g.exponent;
  s.direct_path_gain = g.direct_gain;
  s.seed = seed;
  s.scatterers = place_scatterers(s.width, s.depth, s.path_count - 1, seed);
  validate(s);
  return s;
}

Scenario reseed(const Scenario& s, std::uint64_t seed) {
  Scenario out = s;
  out.seed = seed;
  out.scatterers = place_scatterers(s.width, s.depth, s.path_count - 1, seed);
  return out;
}

namespace {

Point point_from_json(const nlohmann::json& j) {
  if (j.is_array()) return {j.at(0).get<double>(), j.at(1).get<double>()};
  return {j.at("x").get<double>(), j.at("y").get<double>()};
}

std::vector<Point> points_from_json(const nlohmann::json& j) {
  std::vector<Point> out;
  for (const auto& e : j) out.push_back(point_from_json(e));
  return out;
}

nlohmann::json points_to_json(const std::vector<Point>& pts) {
  auto arr = nlohmann::json::array();
  for (auto p : pts) arr.push_back({p.x, p.y});
  return arr;
}

}  // namespace

Scenario scenario_from_json(const nlohmann::json& j) {
  try {
    const auto preset = parse_preset(j.value("preset", std::string("custom")));
    const auto seed = j.value("seed", std::uint64_t{0});
    const auto name = j.value("name", to_string(preset));
    Scenario s;
    if (preset != Preset::custom) {
      s = build_scenario(name, preset, seed);
    } else {
      s.name = name;
      s.seed = seed;
    }
    if (j.contains("width")) s.width = j["width"].get<double>();
    if (j.contains("depth")) s.depth = j["depth"].get<double>();
    if (j.contains("rp_grid")) s.rp_grid = points_from_json(j["rp_grid"]);
    if (j.contains("grid_spacing")) s.grid_spacing = j["grid_spacing"].get<double>();
    if (j.contains("test_points")) {
      s.test_points = points_from_json(j["test_points"]);
    } else if (j.contains("rp_grid") || preset == Preset::custom) {
      s.test_points = midpoints(s.rp_grid, s.grid_spacing);
    }
    if (j.contains("tx_positions")) s.tx_positions = points_from_json(j["tx_positions"]);
    if (j.contains("n_antennas")) s.n_antennas = j["n_antennas"].get<int>();
    if (j.contains("n_subcarriers")) s.n_subcarriers = j["n_subcarriers"].get<int>();
    if (j.contains("path_loss_exponent")) s.path_loss_exponent = j["path_loss_exponent"].get<double>();
    if (j.contains("direct_path_gain")) s.direct_path_gain = j["direct_path_gain"].get<double>();
    bool regen = false;
    if (j.contains("path_count")) {
      s.path_count = j["path_count"].get<int>();
      regen = true;
    }
    if (j.contains("scatterers")) {
      s.scatterers.clear();
      for (const auto& e : j["scatterers"]) {
        Scatterer sc;
        sc.position = point_from_json(e.at("position"));
        sc.reflection = e.value("reflection", 0.5);
        sc.phase = e.value("phase", 0.0);
        s.scatterers.push_back(sc);
      }
    } else if (regen || preset == Preset::custom) {
      s.scatterers = place_scatterers(s.width, s.depth, s.path_count - 1, s.seed);
    }
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
}

nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["preset"] = "custom";
  j["width"] = s.width;
  j["depth"] = s.depth;
  j["rp_grid"] = points_to_json(s.rp_grid);
  j["test_points"] = points_to_json(s.test_points);
  j["tx_positions"] = points_to_json(s.tx_positions);
  j["n_antennas"] = s.n_antennas;
  j["n_subcarriers"] = s.n_subcarriers;
  j["path_count"] = s.path_count;
  j["path_loss_exponent"] = s.path_loss_exponent;
  j["direct_path_gain"] = s.direct_path_gain;
  j["grid_spacing"] = s.grid_spacing;
  auto sc = nlohmann::json::array();
  for (const auto& x : s.scatterers)
    sc.push_back({{"position", {x.position.x, x.position.y}}, {"reflection", x.reflection}, {"phase", x.phase}});
  j["scatterers"] = sc;
  j["seed"] = s.seed;
  return j;
}

void validate(const DynamicsProfile& d) {
  if (!(d.gain_drift_std >= 0.0) || !(d.noise_std >= 0.0) || !(d.extra_path_prob >= 0.0) ||
      d.extra_path_prob > 1.0)
    throw ConfigError("dynamics parameters must be non-negative (extra_path_prob <= 1)");
}

DynamicsProfile ambient_dynamics() { return {0.05, 0.003, 0.05}; }

DynamicsProfile parse_dynamics(const std::string& spec) {
  if (spec == "none") return {};
  if (spec == "ambient") return ambient_dynamics();
  DynamicsProfile d;
  char c1 = 0, c2 = 0;
  std::istringstream is(spec);
  if (!(is >> d.gain_drift_std >> c1 >> d.noise_std >> c2 >> d.extra_path_prob) || c1 != ',' || c2 != ',')
    throw ConfigError("dynamics must be 'none', 'ambient' or 'gain_drift,noise,extra_prob'");
  validate(d);
  return d;
}

double subcarrier_frequency(int k, int n_subcarriers) {
  if (n_subcarriers == 1) return kCenterFrequency;
  const double step = kBandwidth / (n_subcarriers - 1);
  return kCenterFrequency - 0.5 * kBandwidth + step * k;
}

std::uint64_t test_point_stream(std::size_t i) { return (std::uint64_t{1} << 32) + i; }

namespace {

struct Ray {
  double gain;
  double delay;
  double static_phase;
  double arrival_angle;  // direction of arrival at the receiver [rad]
};

}  // namespace

CsiSample sample_csi_at(const Scenario& s, Point rx, std::uint64_t stream, std::int64_t t,
                        const std::optional<DynamicsProfile>& dyn) {
  const Point tx = s.tx_positions.front();
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(s.path_count) + 1);
  {
    const double d = distance(tx, rx);
    rays.push_back({s.direct_path_gain * path_gain(d, s.path_loss_exponent), d / kSpeedOfLight, 0.0,
                    std::atan2(tx.y - rx.y, tx.x - rx.x)});
  }
  for (int l = 0; l + 1 < s.path_count; ++l) {
    const auto& sc = s.scatterers[static_cast<std::size_t>(l)];
    const double len = distance(tx, sc.position) + distance(sc.position, rx);
    rays.push_back({sc.reflection * path_gain(len, s.path_loss_exponent), len / kSpeedOfLight, sc.phase,
                    std::atan2(sc.position.y - rx.y, sc.position.x - rx.x)});
  }

  const bool active = dyn.has_value() && !dyn->is_null();
  Rng rng(derive_seed(s.seed, {stream, static_cast<std::uint64_t>(t)}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (active) {
    for (auto& r : rays) r.gain *= std::exp(dyn->gain_drift_std * normal(rng));
    if (unit(rng) < dyn->extra_path_prob) {
      // transient scatterer (person, door) somewhere in the room
      Point p{unit(rng) * s.width, unit(rng) * s.depth};
      const double len = distance(tx, p) + distance(p, rx);
      rays.push_back({(0.3 + 0.5 * unit(rng)) * path_gain(len, s.path_loss_exponent), len / kSpeedOfLight,
                      2.0 * std::numbers::pi * unit(rng), std::atan2(p.y - rx.y, p.x - rx.x)});
    }
  }

  CsiSample out;
  out.rp_index = -1;
  out.timestamp = t;
  out.n_antennas = s.n_antennas;
  out.n_subcarriers = s.n_subcarriers;
  const auto n = static_cast<std::size_t>(s.n_antennas) * static_cast<std::size_t>(s.n_subcarriers);
  out.h.assign(n, {0.0, 0.0});
  out.amplitude.assign(n, 0.0);
  for (int a = 0; a < s.n_antennas; ++a) {
    for (int k = 0; k < s.n_subcarriers; ++k) {
      const double fb = subcarrier_frequency(k, s.n_subcarriers) - kCenterFrequency;
      std::complex<double> acc{0.0, 0.0};
      for (const auto& r : rays) {
        const double steering = std::numbers::pi * a * std::cos(r.arrival_angle);
        acc += std::polar(r.gain, -2.0 * std::numbers::pi * fb * r.delay + r.static_phase + steering);
      }
      out.h[static_cast<std::size_t>(a * s.n_subcarriers + k)] = acc;
    }
  }
  if (active && dyn->noise_std > 0.0) {
    const double sd = dyn->noise_std / std::numbers::sqrt2;
    for (auto& v : out.h) v += std::complex<double>(sd * normal(rng), sd * normal(rng));
  }
  for (std::size_t i = 0; i < n; ++i) out.amplitude[i] = std::abs(out.h[i]);
  return out;
}

CsiSample sample_csi(const Scenario& s, int rp, std::int64_t t, const std::optional<DynamicsProfile>& dyn) {
  if (rp < 0 || static_cast<std::size_t>(rp) >= s.rp_grid.size())
    throw IndexError("rp index " + std::to_string(rp) + " out of range [0, " + std::to_string(s.rp_grid.size()) +
                     ")");
  auto out = sample_csi_at(s, s.rp_grid[static_cast<std::size_t>(rp)], static_cast<std::uint64_t>(rp), t, dyn);
  out.rp_index = rp;
  return out;
}

}  // namespace cssloc::sim
