#include "cssloc/imaging.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <utility>

#include "cssloc/errors.hpp"

namespace cssloc::imaging {

CsiImage make_image(std::span<const sim::CsiSample> samples, std::size_t samples_per_image,
                    const std::string& scenario_id) {
  if (samples_per_image == 0 || samples.size() != samples_per_image)
    throw ShapeError("make_image expects " + std::to_string(samples_per_image) + " samples, got " +
                     std::to_string(samples.size()));
  const int n_ant = samples.front().n_antennas;
  const int n_sub = samples.front().n_subcarriers;
  for (const auto& s : samples) {
    if (s.rp_index != samples.front().rp_index) throw PairingError("make_image: samples from different RPs");
    if (s.n_antennas != n_ant || s.n_subcarriers != n_sub ||
        s.amplitude.size() != static_cast<std::size_t>(n_ant * n_sub))
      throw ShapeError("make_image: non-uniform sample dimensions");
  }
  const int per = static_cast<int>(samples_per_image);
  CsiImage img;
  img.rows = n_ant * per;
  img.cols = n_sub;
  img.rp_index = samples.front().rp_index;
  img.scenario_id = scenario_id;
  img.pixels.resize(static_cast<std::size_t>(img.rows * img.cols));
  for (int a = 0; a < n_ant; ++a)
    for (int i = 0; i < per; ++i)
      for (int k = 0; k < n_sub; ++k)
        img.pixels[static_cast<std::size_t>((a * per + i) * n_sub + k)] =
            static_cast<float>(samples[static_cast<std::size_t>(i)].amplitude[static_cast<std::size_t>(a * n_sub + k)]);
  return img;
}

NormStats compute_stats(std::span<const CsiImage> corpus) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& img : corpus) {
    for (float p : img.pixels) sum += p;
    n += img.pixels.size();
  }
  if (n == 0) return {};
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& img : corpus)
    for (float p : img.pixels) ss += (p - mean) * (p - mean);
  return {mean, std::sqrt(ss / static_cast<double>(n))};
}

CsiImage normalize(const CsiImage& img, const NormStats& stats) {
  CsiImage out = img;
  const double scale = stats.std > 0.0 ? 1.0 / stats.std : 1.0;
  for (auto& p : out.pixels) p = static_cast<float>((p - stats.mean) * scale);
  return out;
}

CsiImage denormalize(const CsiImage& img, const NormStats& stats) {
  CsiImage out = img;
  const double scale = stats.std > 0.0 ? stats.std : 1.0;
  for (auto& p : out.pixels) p = static_cast<float>(p * scale + stats.mean);
  return out;
}

Corpus::Corpus(std::vector<CsiImage> images) : images_(std::move(images)) {
  std::map<std::pair<std::string, int>, std::size_t> index;
  group_of_.resize(images_.size());
  for (std::size_t i = 0; i < images_.size(); ++i) {
    auto key = std::make_pair(images_[i].scenario_id, images_[i].rp_index);
    auto [it, fresh] = index.try_emplace(key, groups_.size());
    if (fresh) groups_.emplace_back();
    groups_[it->second].push_back(i);
    group_of_[i] = it->second;
  }
  for (std::size_t g = 0; g < groups_.size(); ++g)
    if (groups_[g].size() < 2) {
      const auto& img = images_[groups_[g].front()];
      throw CorpusError("RP " + std::to_string(img.rp_index) + " of scenario '" + img.scenario_id +
                        "' has a single image; positives need at least two");
    }
  if (images_.empty()) throw CorpusError("empty pre-training corpus");
}

PretrainBatch Corpus::draw_batch(std::size_t batch_size, Rng& rng) const {
  PretrainBatch batch;
  batch.queries.reserve(batch_size);
  batch.positives.reserve(batch_size);
  std::vector<std::size_t> picks(batch_size);
  if (batch_size <= images_.size()) {
    // partial Fisher-Yates
    std::vector<std::size_t> pool(images_.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      picks[i] = pool[i];
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
    for (auto& p : picks) p = pick(rng);
  }
  for (auto q : picks) {
    const auto& members = groups_[group_of_[q]];
    // uniform over the group minus the query itself
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 2);
    std::size_t j = pick(rng);
    if (members[j] == q) j = members.size() - 1;
    batch.queries.push_back(&images_[q]);
    batch.positives.push_back(&images_[members[j]]);
  }
  return batch;
}

}  // namespace cssloc::imaging
