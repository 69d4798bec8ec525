#pragma once

// Synthetic CSI for desk-scale indoor scenes.
//
// Each link is a sum of rays: one direct ray plus (path_count - 1) single-bounce
// rays off scatterers placed inside the room. Ray gain follows log-distance path
// loss over the unfolded ray length, delay is length / c, and each receive antenna
// sees a half-wavelength ULA steering phase plus a static per-ray phase. The
// carrier-phase term is folded into that static phase so CSI varies smoothly on
// the 1 m survey lattice (only the baseband subcarrier offset multiplies delay).

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cssloc::sim {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

double distance(Point a, Point b);

struct Scatterer {
  Point position;
  double reflection = 0.5;  // amplitude reflection coefficient
  double phase = 0.0;       // static phase of the bounce [rad]
  friend bool operator==(const Scatterer&, const Scatterer&) = default;
};

enum class Preset { corridor, hall, lounge, custom };

Preset parse_preset(const std::string& name);
std::string to_string(Preset p);

struct Scenario {
  std::string name;
  double width = 0.0;   // m, along x
  double depth = 0.0;   // m, along y
  std::vector<Point> rp_grid;
  std::vector<Point> test_points;  // held-out evaluation locations
  std::vector<Point> tx_positions;  // the first entry drives every link
  int n_antennas = 3;
  int n_subcarriers = 30;
  int path_count = 6;
  double path_loss_exponent = 2.0;
  double direct_path_gain = 1.0;  // < 1 models an obstructed (NLOS) direct ray
  double grid_spacing = 1.0;
  std::vector<Scatterer> scatterers;  // path_count - 1 entries
  std::uint64_t seed = 0;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// Checks every Scenario invariant; throws ConfigError on violation.
void validate(const Scenario& s);

Scenario build_scenario(const std::string& name, Preset preset, std::uint64_t seed);

// Copy with a new seed and scatterers redrawn from it; geometry is unchanged.
Scenario reseed(const Scenario& s, std::uint64_t seed);

// Preset (or custom) scenario with fields overridden from a JSON object. Keys
// mirror Scenario fields; "preset" and "seed" select the base.
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const Scenario& s);

struct DynamicsProfile {
  double gain_drift_std = 0.0;
  double noise_std = 0.0;
  double extra_path_prob = 0.0;

  bool is_null() const { return gain_drift_std == 0.0 && noise_std == 0.0 && extra_path_prob == 0.0; }
  friend bool operator==(const DynamicsProfile&, const DynamicsProfile&) = default;
};

void validate(const DynamicsProfile& d);

// Background fluctuation used for the default corpora.
DynamicsProfile ambient_dynamics();
DynamicsProfile parse_dynamics(const std::string& spec);  // "none" | "ambient" | "g,n,p"

struct CsiSample {
  int rp_index = -1;
  std::int64_t timestamp = 0;
  int n_antennas = 0;
  int n_subcarriers = 0;
  std::vector<std::complex<double>> h;  // row-major [antenna][subcarrier]
  std::vector<double> amplitude;        // |h|, same layout
};

// Subcarrier frequency in Hz (30 evenly spaced over 40 MHz around 5.32 GHz).
double subcarrier_frequency(int k, int n_subcarriers);

inline constexpr double kCenterFrequency = 5.32e9;
inline constexpr double kBandwidth = 40e6;
inline constexpr double kSpeedOfLight = 299792458.0;

// CSI at an arbitrary receiver location. `stream` separates independent sample
// streams at one location (RPs use their index, test points an offset range).
CsiSample sample_csi_at(const Scenario& s, Point rx, std::uint64_t stream, std::int64_t t,
                        const std::optional<DynamicsProfile>& dyn);

CsiSample sample_csi(const Scenario& s, int rp, std::int64_t t,
                     const std::optional<DynamicsProfile>& dyn);

// Stream id used for test point i; disjoint from RP streams.
std::uint64_t test_point_stream(std::size_t i);

}  // namespace cssloc::sim
