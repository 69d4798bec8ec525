#pragma once

// CSI images: per-antenna amplitude blocks of consecutive samples, stacked
// vertically in antenna order.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cssloc/rng.hpp"
#include "cssloc/sim.hpp"

namespace cssloc::imaging {

struct CsiImage {
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;  // row-major rows x cols
  int rp_index = -1;
  std::string scenario_id;

  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r * cols + c)]; }
  friend bool operator==(const CsiImage&, const CsiImage&) = default;
};

// Row a*n + i holds the amplitudes of sample i at antenna a.
CsiImage make_image(std::span<const sim::CsiSample> samples, std::size_t samples_per_image,
                    const std::string& scenario_id = {});

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// Global scalar mean and (population) std over every pixel of the corpus.
NormStats compute_stats(std::span<const CsiImage> corpus);

// (x - mean) / std; a non-positive std skips the scaling.
CsiImage normalize(const CsiImage& img, const NormStats& stats);
CsiImage denormalize(const CsiImage& img, const NormStats& stats);

struct PretrainBatch {
  std::vector<const CsiImage*> queries;
  std::vector<const CsiImage*> positives;
};

// Unlabeled pre-training pool grouped by (scenario, rp) for positive sampling.
// Construction fails with CorpusError when any group has fewer than two images.
class Corpus {
 public:
  explicit Corpus(std::vector<CsiImage> images);

  std::size_t size() const { return images_.size(); }
  const std::vector<CsiImage>& images() const { return images_; }
  std::size_t group_count() const { return groups_.size(); }
  std::size_t group_of(std::size_t image) const { return group_of_[image]; }

  // Queries are drawn without replacement when batch_size <= size(), with
  // replacement otherwise; each positive is a different image of the same group.
  PretrainBatch draw_batch(std::size_t batch_size, Rng& rng) const;

 private:
  std::vector<CsiImage> images_;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::size_t> group_of_;
};

}  // namespace cssloc::imaging
