#include "cssloc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cssloc/errors.hpp"

namespace cssloc {

std::vector<imaging::CsiImage> RadioMap::images() const {
  std::vector<imaging::CsiImage> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.image);
  return out;
}

void validate(const RadioMap& map) {
  if (map.source_rp.size() != map.coords.size()) throw ConfigError("radio map: source_rp/coords size mismatch");
  std::vector<bool> used(map.coords.size(), false);
  for (const auto& e : map.entries) {
    if (e.label < 0 || e.label >= map.rp_count()) throw ConfigError("radio map: label out of range");
    used[static_cast<std::size_t>(e.label)] = true;
  }
  if (map.kind == MapKind::radio_map && !map.entries.empty() &&
      std::find(used.begin(), used.end(), false) != used.end())
    throw ConfigError("radio map: labels are not contiguous");
}

namespace {

RadioMap generate(const sim::Scenario& s, const std::vector<sim::Point>& where, bool test_points,
                  std::size_t images_per_point, std::size_t samples_per_image,
                  const std::optional<sim::DynamicsProfile>& dyn) {
  if (samples_per_image < 1) throw ConfigError("samples_per_image must be >= 1");
  sim::validate(s);
  if (dyn) sim::validate(*dyn);
  RadioMap map;
  map.kind = test_points ? MapKind::queries : MapKind::radio_map;
  map.scenario_id = s.name;
  map.coords = where;
  map.source_rp.resize(where.size());
  std::iota(map.source_rp.begin(), map.source_rp.end(), 0);
  map.entries.resize(where.size() * images_per_point);

  // Every image is a pure function of (scenario, point, image index).
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(map.entries.size()); ++idx) {
    const auto p = static_cast<std::size_t>(idx) / images_per_point;
    const auto img = static_cast<std::size_t>(idx) % images_per_point;
    std::vector<sim::CsiSample> samples;
    samples.reserve(samples_per_image);
    for (std::size_t i = 0; i < samples_per_image; ++i) {
      const auto t = static_cast<std::int64_t>(img * samples_per_image + i);
      if (test_points) {
        auto smp = sim::sample_csi_at(s, where[p], sim::test_point_stream(p), t, dyn);
        smp.rp_index = static_cast<int>(p);
        samples.push_back(std::move(smp));
      } else {
        samples.push_back(sim::sample_csi(s, static_cast<int>(p), t, dyn));
      }
    }
    auto& e = map.entries[static_cast<std::size_t>(idx)];
    e.image = imaging::make_image(samples, samples_per_image, s.name);
    e.label = static_cast<int>(p);
  }
  return map;
}

}  // namespace

RadioMap generate_dataset(const sim::Scenario& s, std::size_t images_per_rp, std::size_t samples_per_image,
                          const std::optional<sim::DynamicsProfile>& dyn) {
  return generate(s, s.rp_grid, false, images_per_rp, samples_per_image, dyn);
}

RadioMap generate_queries(const sim::Scenario& s, std::size_t images_per_point, std::size_t samples_per_image,
                          const std::optional<sim::DynamicsProfile>& dyn) {
  if (s.test_points.empty()) throw ConfigError("scenario '" + s.name + "' has no test points");
  return generate(s, s.test_points, true, images_per_point, samples_per_image, dyn);
}

RadioMap select_density(const RadioMap& map, double density, std::uint64_t seed) {
  if (!(density > 0.0) || density > 1.0) throw ConfigError("density must lie in (0, 1]");
  const auto R = static_cast<std::size_t>(map.rp_count());
  const auto r = static_cast<std::size_t>(std::ceil(density * static_cast<double>(R) - 1e-9));
  std::vector<std::size_t> order(R);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0xde7517}));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(r);
  std::sort(order.begin(), order.end());

  std::vector<int> relabel(R, -1);
  RadioMap out;
  out.kind = map.kind;
  out.scenario_id = map.scenario_id;
  for (std::size_t i = 0; i < order.size(); ++i) {
    relabel[order[i]] = static_cast<int>(i);
    out.coords.push_back(map.coords[order[i]]);
    out.source_rp.push_back(map.source_rp[order[i]]);
  }
  for (const auto& e : map.entries) {
    const int nl = relabel[static_cast<std::size_t>(e.label)];
    if (nl < 0) continue;
    out.entries.push_back({e.image, nl});
  }
  return out;
}

RadioMap limit_images_per_rp(const RadioMap& map, std::size_t n) {
  RadioMap out = map;
  out.entries.clear();
  std::vector<std::size_t> seen(map.coords.size(), 0);
  for (const auto& e : map.entries)
    if (seen[static_cast<std::size_t>(e.label)]++ < n) out.entries.push_back(e);
  return out;
}

}  // namespace cssloc
