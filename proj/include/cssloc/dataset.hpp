#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cssloc/imaging.hpp"
#include "cssloc/rng.hpp"
#include "cssloc/sim.hpp"

namespace cssloc {

enum class MapKind { radio_map, queries };

struct RadioMapEntry {
  imaging::CsiImage image;
  int label = 0;
  friend bool operator==(const RadioMapEntry&, const RadioMapEntry&) = default;
};

// Labeled fingerprints. Labels index `coords`; for a query set the labels name
// held-out test points and `coords` holds their ground truth.
struct RadioMap {
  MapKind kind = MapKind::radio_map;
  std::string scenario_id;
  std::vector<sim::Point> coords;
  std::vector<int> source_rp;  // scenario RP (or test point) index per label
  std::vector<RadioMapEntry> entries;

  int rp_count() const { return static_cast<int>(coords.size()); }
  sim::Point location(const RadioMapEntry& e) const { return coords[static_cast<std::size_t>(e.label)]; }
  std::vector<imaging::CsiImage> images() const;
  friend bool operator==(const RadioMap&, const RadioMap&) = default;
};

// Throws ConfigError on non-contiguous labels or an out-of-range label.
void validate(const RadioMap& map);

// images_per_rp images per RP, each stitched from samples_per_image consecutive
// samples (timestamps image*samples_per_image + i).
RadioMap generate_dataset(const sim::Scenario& s, std::size_t images_per_rp, std::size_t samples_per_image,
                          const std::optional<sim::DynamicsProfile>& dyn);

// Same procedure at the scenario's held-out test points.
RadioMap generate_queries(const sim::Scenario& s, std::size_t images_per_point, std::size_t samples_per_image,
                          const std::optional<sim::DynamicsProfile>& dyn);

// Keeps ceil(density * R) RPs chosen by seeded uniform draw without replacement;
// labels are re-indexed to 0..r-1 in ascending original order.
RadioMap select_density(const RadioMap& map, double density, std::uint64_t seed);

// Keeps the first n images of every label.
RadioMap limit_images_per_rp(const RadioMap& map, std::size_t n);

}  // namespace cssloc
