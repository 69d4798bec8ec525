#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "cssloc/dataset.hpp"
#include "cssloc/imaging.hpp"
#include "cssloc/sim.hpp"
#include "support.hpp"

using namespace cssloc;
using cssloc::testing::small_corridor;

namespace {

sim::Scenario single_path(double exponent) {
  auto s = small_corridor();
  s.path_count = 1;
  s.scatterers.clear();
  s.path_loss_exponent = exponent;
  return s;
}

double mean_amplitude(const sim::CsiSample& c) {
  double acc = 0.0;
  for (double a : c.amplitude) acc += a;
  return acc / static_cast<double>(c.amplitude.size());
}

sim::CsiSample constant_sample(int rp, double amp) {
  sim::CsiSample c;
  c.rp_index = rp;
  c.n_antennas = 3;
  c.n_subcarriers = 30;
  c.h.assign(90, {amp, 0.0});
  c.amplitude.assign(90, amp);
  return c;
}

}  // namespace

// ---- scenarios

TEST(Scenario, CorridorLattice) {
  const auto s = small_corridor();
  ASSERT_EQ(s.rp_grid.size(), 36u);
  EXPECT_DOUBLE_EQ(s.width, 36.0);
  EXPECT_DOUBLE_EQ(s.depth, 3.0);
  for (std::size_t i = 1; i < s.rp_grid.size(); ++i)
    EXPECT_DOUBLE_EQ(sim::distance(s.rp_grid[i - 1], s.rp_grid[i]), 1.0);
  EXPECT_FALSE(s.test_points.empty());
  for (const auto& t : s.test_points)
    for (const auto& r : s.rp_grid) EXPECT_FALSE(t == r);
}

TEST(Scenario, HallAntennasAndSubcarriers) {
  const auto s = sim::build_scenario("hall", sim::Preset::hall, 3);
  EXPECT_EQ(s.n_antennas, 3);
  EXPECT_EQ(s.n_subcarriers, 30);
  EXPECT_NO_THROW(sim::validate(s));
}

TEST(Scenario, Deterministic) {
  for (auto p : {sim::Preset::corridor, sim::Preset::hall, sim::Preset::lounge}) {
    EXPECT_EQ(sim::build_scenario("x", p, 42), sim::build_scenario("x", p, 42));
    EXPECT_NE(sim::build_scenario("x", p, 42).scatterers, sim::build_scenario("x", p, 43).scatterers);
  }
}

TEST(Scenario, ValidationErrors) {
  auto s = small_corridor();
  s.rp_grid.push_back(s.rp_grid.front());
  EXPECT_THROW(sim::validate(s), ConfigError);
  s = small_corridor();
  s.rp_grid.push_back({100.0, 1.0});
  EXPECT_THROW(sim::validate(s), ConfigError);
  s = small_corridor();
  s.rp_grid.clear();
  EXPECT_THROW(sim::validate(s), ConfigError);
  EXPECT_THROW(sim::build_scenario("c", sim::Preset::custom, 0), ConfigError);
  EXPECT_THROW(sim::parse_preset("atrium"), ConfigError);
}

TEST(Scenario, JsonRoundTrip) {
  const auto s = sim::build_scenario("lounge-a", sim::Preset::lounge, 5);
  EXPECT_EQ(sim::scenario_from_json(sim::scenario_to_json(s)), s);
}

TEST(Dynamics, Parsing) {
  EXPECT_TRUE(sim::parse_dynamics("none").is_null());
  EXPECT_EQ(sim::parse_dynamics("ambient"), sim::ambient_dynamics());
  const auto d = sim::parse_dynamics("0.1,0.02,0.5");
  EXPECT_DOUBLE_EQ(d.gain_drift_std, 0.1);
  EXPECT_DOUBLE_EQ(d.noise_std, 0.02);
  EXPECT_DOUBLE_EQ(d.extra_path_prob, 0.5);
  EXPECT_THROW(sim::parse_dynamics("0.1,0.02"), ConfigError);
  EXPECT_THROW(sim::parse_dynamics("0.1,-1,0"), ConfigError);
  EXPECT_THROW(sim::parse_dynamics("0,0,2"), ConfigError);
}

// ---- CSI samples

TEST(Csi, SinglePathIsFlat) {
  const auto s = single_path(2.0);
  for (int rp : {0, 9, 35}) {
    const auto c = sim::sample_csi(s, rp, 3, std::nullopt);
    for (double a : c.amplitude) EXPECT_NEAR(a, c.amplitude.front(), 1e-12);
  }
}

TEST(Csi, FreeSpaceAmplitudeRatio) {
  // Receivers at d and 2d from the transmitter, exponent 2: amplitude ~ 1/d.
  const auto s = single_path(2.0);
  const auto tx = s.tx_positions.front();
  const auto near = sim::sample_csi_at(s, {tx.x + 1.5, tx.y + 0.8}, 0, 0, std::nullopt);
  const auto far = sim::sample_csi_at(s, {tx.x + 3.0, tx.y + 1.6}, 1, 0, std::nullopt);
  EXPECT_NEAR(mean_amplitude(near) / mean_amplitude(far), 2.0, 1e-12);

  // With the multipath preset the ratio holds on average over positions.
  const auto m = small_corridor();
  double ratio = 0.0;
  int n = 0;
  for (double ang = 0.2; ang < 1.4; ang += 0.1) {
    const double d = 3.0;
    const sim::Point a{tx.x + d * std::cos(ang) * 0.3, tx.y + 0.4 * std::sin(ang)};
    const sim::Point b{tx.x + 2 * (a.x - tx.x), tx.y + 2 * (a.y - tx.y)};
    auto sa = sim::sample_csi_at(m, a, 0, 0, std::nullopt);
    auto sb = sim::sample_csi_at(m, b, 0, 0, std::nullopt);
    ratio += mean_amplitude(sa) / mean_amplitude(sb);
    ++n;
  }
  ratio /= n;
  EXPECT_GT(ratio, 1.4);
  EXPECT_LT(ratio, 2.8);
}

TEST(Csi, NullDynamicsMatchesNone) {
  const auto s = small_corridor();
  const sim::DynamicsProfile zero{};
  for (int rp : {0, 17}) {
    const auto a = sim::sample_csi(s, rp, 11, std::nullopt);
    const auto b = sim::sample_csi(s, rp, 11, zero);
    EXPECT_EQ(a.h, b.h);
    EXPECT_EQ(a.amplitude, b.amplitude);
  }
}

TEST(Csi, Deterministic) {
  const auto s = small_corridor();
  const auto dyn = sim::ambient_dynamics();
  const auto a = sim::sample_csi(s, 4, 123, dyn);
  const auto b = sim::sample_csi(s, 4, 123, dyn);
  EXPECT_EQ(a.h, b.h);
  const auto c = sim::sample_csi(s, 4, 124, dyn);
  EXPECT_NE(a.h, c.h);
}

TEST(Csi, RpOutOfRange) {
  const auto s = small_corridor();
  EXPECT_THROW(sim::sample_csi(s, 36, 0, std::nullopt), IndexError);
  EXPECT_THROW(sim::sample_csi(s, -1, 0, std::nullopt), IndexError);
}

TEST(Csi, NoiseVarianceOracle) {
  // h_noisy - h_clean is circular complex Gaussian with E|n|^2 = noise_std^2.
  const auto s = small_corridor();
  const double sigma = 0.02;
  const sim::DynamicsProfile dyn{0.0, sigma, 0.0};
  double power = 0.0, re = 0.0;
  std::size_t n = 0;
  for (int t = 0; t < 200; ++t) {
    const auto clean = sim::sample_csi(s, t % 36, t, std::nullopt);
    const auto noisy = sim::sample_csi(s, t % 36, t, dyn);
    for (std::size_t i = 0; i < clean.h.size(); ++i) {
      const auto d = noisy.h[i] - clean.h[i];
      power += std::norm(d);
      re += d.real();
      ++n;
    }
  }
  power /= static_cast<double>(n);
  re /= static_cast<double>(n);
  const double var = sigma * sigma;
  // |n|^2 is exponential with mean and std var.
  EXPECT_NEAR(power, var, 3.0 * var / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(re, 0.0, 3.0 * (sigma / std::sqrt(2.0)) / std::sqrt(static_cast<double>(n)));
}

TEST(Csi, NeighbouringRpsAreMoreSimilar) {
  // Fingerprints should vary smoothly: adjacent RPs closer than RPs 10 m apart.
  const auto s = small_corridor();
  double near = 0.0, far = 0.0;
  for (int rp = 5; rp < 25; ++rp) {
    const auto a = sim::sample_csi(s, rp, 0, std::nullopt);
    const auto b = sim::sample_csi(s, rp + 1, 0, std::nullopt);
    const auto c = sim::sample_csi(s, rp + 10, 0, std::nullopt);
    for (std::size_t i = 0; i < a.amplitude.size(); ++i) {
      near += std::pow(a.amplitude[i] - b.amplitude[i], 2);
      far += std::pow(a.amplitude[i] - c.amplitude[i], 2);
    }
  }
  EXPECT_LT(near, far);
}

// ---- images

TEST(Image, ShapeAndStitching) {
  const auto s = small_corridor();
  std::vector<sim::CsiSample> samples;
  for (int t = 0; t < 10; ++t) samples.push_back(sim::sample_csi(s, 3, t, sim::ambient_dynamics()));
  const auto img = imaging::make_image(samples, 10, "c");
  ASSERT_EQ(img.rows, 30);
  ASSERT_EQ(img.cols, 30);
  EXPECT_EQ(img.rp_index, 3);
  for (int a = 0; a < 3; ++a)
    for (int i = 0; i < 10; ++i)
      for (int k = 0; k < 30; ++k)
        EXPECT_EQ(img.at(a * 10 + i, k), static_cast<float>(samples[i].amplitude[a * 30 + k]));
}

TEST(Image, ZeroAndConstantSamples) {
  std::vector<sim::CsiSample> zero(10, constant_sample(0, 0.0)), con(10, constant_sample(0, 0.25));
  for (float p : imaging::make_image(zero, 10).pixels) EXPECT_EQ(p, 0.0f);
  for (float p : imaging::make_image(con, 10).pixels) EXPECT_EQ(p, 0.25f);
}

TEST(Image, Errors) {
  std::vector<sim::CsiSample> nine(9, constant_sample(0, 1.0));
  EXPECT_THROW(imaging::make_image(nine, 10), ShapeError);
  std::vector<sim::CsiSample> mixed(10, constant_sample(0, 1.0));
  mixed[4].rp_index = 1;
  EXPECT_THROW(imaging::make_image(mixed, 10), PairingError);
}

TEST(Normalize, Examples) {
  const auto map = generate_dataset(small_corridor(), 3, 10, sim::ambient_dynamics());
  const auto images = map.images();
  const auto stats = imaging::compute_stats(images);
  EXPECT_GT(stats.std, 0.0);

  imaging::CsiImage flat = images.front();
  for (auto& p : flat.pixels) p = static_cast<float>(stats.mean);
  for (float p : imaging::normalize(flat, stats).pixels) EXPECT_NEAR(p, 0.0f, 1e-6f);

  for (const auto& img : images) {
    const auto back = imaging::denormalize(imaging::normalize(img, stats), stats);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-6);
  }

  std::vector<imaging::CsiImage> normed;
  for (const auto& img : images) normed.push_back(imaging::normalize(img, stats));
  const auto after = imaging::compute_stats(normed);
  EXPECT_LT(std::abs(after.mean), 1e-6);
  EXPECT_NEAR(after.std, 1.0, 1e-6);
}

// ---- pre-training batches

TEST(Corpus, BatchPairsShareRp) {
  const auto map = generate_dataset(small_corridor(), 4, 10, sim::ambient_dynamics());
  imaging::Corpus corpus(map.images());
  Rng rng(1);
  const auto b = corpus.draw_batch(4, rng);
  ASSERT_EQ(b.queries.size(), 4u);
  ASSERT_EQ(b.positives.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(b.queries[i]->rp_index, b.positives[i]->rp_index);
    EXPECT_NE(b.queries[i], b.positives[i]);
  }
}

TEST(Corpus, TwoImagesForceTheOther) {
  const auto map = generate_dataset(small_corridor(), 2, 10, sim::ambient_dynamics());
  imaging::Corpus corpus(map.images());
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const auto b = corpus.draw_batch(16, rng);
    for (std::size_t i = 0; i < b.queries.size(); ++i) {
      const auto qi = static_cast<std::size_t>(b.queries[i] - corpus.images().data());
      const auto pi = static_cast<std::size_t>(b.positives[i] - corpus.images().data());
      EXPECT_EQ(corpus.group_of(qi), corpus.group_of(pi));
      EXPECT_NE(qi, pi);
    }
  }
}

TEST(Corpus, RejectsSingletonRp) {
  auto images = generate_dataset(small_corridor(), 2, 10, std::nullopt).images();
  images.pop_back();
  EXPECT_THROW(imaging::Corpus{images}, CorpusError);
}

TEST(Corpus, QueryFrequencyUniform) {
  // 10^4 query draws over 36 RPs: each count within 3 sigma of the binomial mean.
  const auto map = generate_dataset(small_corridor(), 2, 10, std::nullopt);
  imaging::Corpus corpus(map.images());
  Rng rng(3);
  std::vector<int> count(36, 0);
  int total = 0;
  while (total < 10000) {
    const auto b = corpus.draw_batch(50, rng);
    for (const auto* q : b.queries) ++count[static_cast<std::size_t>(q->rp_index)];
    total += 50;
  }
  const double p = 1.0 / 36.0, mean = total * p, sd = std::sqrt(total * p * (1 - p));
  for (int c : count) EXPECT_NEAR(c, mean, 3 * sd);
}

// ---- datasets

TEST(Dataset, CountsAndShapes) {
  const auto map = generate_dataset(small_corridor(), 10, 10, sim::ambient_dynamics());
  EXPECT_EQ(map.entries.size(), 360u);
  EXPECT_EQ(map.rp_count(), 36);
  for (const auto& e : map.entries) {
    EXPECT_EQ(e.image.rows, 30);
    EXPECT_EQ(e.image.cols, 30);
  }
  EXPECT_NO_THROW(validate(map));
}

TEST(Dataset, NoiseRaisesPerRpVariance) {
  const auto s = small_corridor();
  const auto clean = generate_dataset(s, 5, 10, std::nullopt);
  const auto noisy = generate_dataset(s, 5, 10, sim::DynamicsProfile{0.0, 0.01, 0.0});
  auto per_rp_var = [](const RadioMap& m, int label) {
    std::vector<const RadioMapEntry*> es;
    for (const auto& e : m.entries)
      if (e.label == label) es.push_back(&e);
    double acc = 0.0;
    for (std::size_t px = 0; px < 900; ++px) {
      double mu = 0.0, m2 = 0.0;
      for (const auto* e : es) mu += e->image.pixels[px];
      mu /= static_cast<double>(es.size());
      for (const auto* e : es) m2 += std::pow(e->image.pixels[px] - mu, 2);
      acc += m2 / static_cast<double>(es.size());
    }
    return acc;
  };
  for (int rp : {0, 12, 30}) EXPECT_GT(per_rp_var(noisy, rp), per_rp_var(clean, rp));
}

TEST(Dataset, DensitySelection) {
  const auto map = generate_dataset(small_corridor(), 2, 10, std::nullopt);
  const auto all = select_density(map, 1.0, 9);
  EXPECT_EQ(all.rp_count(), 36);
  for (double rho : {0.2, 0.5, 0.6}) {
    const auto sub = select_density(map, rho, 9);
    EXPECT_EQ(sub.rp_count(), static_cast<int>(std::ceil(rho * 36)));
    EXPECT_EQ(sub, select_density(map, rho, 9));
    EXPECT_TRUE(std::is_sorted(sub.source_rp.begin(), sub.source_rp.end()));
    std::set<int> uniq(sub.source_rp.begin(), sub.source_rp.end());
    EXPECT_EQ(uniq.size(), sub.source_rp.size());
    EXPECT_EQ(sub.entries.size(), 2u * static_cast<std::size_t>(sub.rp_count()));
    EXPECT_NO_THROW(validate(sub));
  }
  EXPECT_NE(select_density(map, 0.5, 1).source_rp, select_density(map, 0.5, 2).source_rp);
  EXPECT_THROW(select_density(map, 0.0, 1), ConfigError);
  EXPECT_THROW(select_density(map, 1.5, 1), ConfigError);
}

TEST(Dataset, QueriesAtHeldOutPoints) {
  const auto s = small_corridor();
  const auto q = generate_queries(s, 2, 10, sim::ambient_dynamics());
  EXPECT_EQ(q.kind, MapKind::queries);
  EXPECT_EQ(q.coords, s.test_points);
  EXPECT_EQ(q.entries.size(), 2 * s.test_points.size());
}
