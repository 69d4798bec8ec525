#pragma once

// Momentum-contrast pre-training: a query encoder trained by Adam on InfoNCE,
// a momentum (key) encoder tracking it by exponential moving average, and a
// FIFO queue of past keys serving as negatives.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cssloc/adam.hpp"
#include "cssloc/encoder.hpp"
#include "cssloc/imaging.hpp"
#include "cssloc/kernels.hpp"

namespace cssloc {

struct PretrainConfig {
  std::size_t batch_size = 256;
  int epochs = 150;
  double temperature = 0.03;
  double momentum = 0.99;
  std::size_t queue_capacity = 4096;
  double lr = 5e-3;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool projection = true;
  kernels::Backend backend = kernels::Backend::omp;
  // Statistics the corpus was normalised with; copied into both encoders.
  imaging::NormStats input_norm;
  // Lets tests pin the key encoder with m = 1; never set by the CLI.
  bool allow_unit_momentum = false;
};

void validate(const PretrainConfig& cfg);

// Fixed-capacity ring of unit-norm keys. Eviction is strictly FIFO. The
// pre-trainer fills it with encoded corpus keys before the first iteration.
class KeyQueue {
 public:
  KeyQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return fill_; }
  std::size_t head() const { return head_; }  // next slot to overwrite

  // Appends rows of `keys` ([n, dim] row-major) oldest first.
  void enqueue(std::span<const float> keys);
  // Stored keys in insertion order, oldest first: [size, dim].
  Tensor<float> contents() const;

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t head_ = 0;
  std::size_t fill_ = 0;
  std::vector<float> slots_;
};

// Scalar InfoNCE for one query: -log(e^{q.k+/t} / (e^{q.k+/t} + sum_k e^{q.n_k/t})).
// `negatives` is [K, d] row-major. Inputs are expected unit-norm.
template <typename T>
T info_nce(std::span<const T> query, std::span<const T> positive, std::span<const T> negatives, T temperature);

struct IterationLog {
  std::int64_t iteration = 0;
  int epoch = 0;
  double loss = 0.0;
  double mean_positive_sim = 0.0;
  double mean_negative_sim = 0.0;
  double embedding_variance = 0.0;  // mean per-dimension variance of the batch queries
};

struct EpochSummary {
  int epoch = 0;
  double loss = 0.0;
  double mean_positive_sim = 0.0;
  double mean_negative_sim = 0.0;
  double embedding_variance = 0.0;
};

struct PretrainResult {
  EncoderState<float> query;
  EncoderState<float> key;
  std::vector<IterationLog> iterations;
  std::vector<EpochSummary> epochs;
  bool collapsed = false;
  std::string collapse_reason;
};

class Pretrainer {
 public:
  Pretrainer(const imaging::Corpus& corpus, PretrainConfig cfg);
  // Starts from a given query encoder; the key encoder is a copy of it.
  Pretrainer(const imaging::Corpus& corpus, PretrainConfig cfg, EncoderState<float> init);

  const PretrainConfig& config() const { return cfg_; }
  const EncoderState<float>& query_encoder() const { return query_; }
  const EncoderState<float>& key_encoder() const { return key_; }
  const KeyQueue& queue() const { return queue_; }
  std::int64_t iteration() const { return iteration_; }
  std::size_t iterations_per_epoch() const;

  imaging::PretrainBatch draw_batch();

  // Loss of `batch` under the current state and queue; changes nothing.
  double batch_loss(const imaging::PretrainBatch& batch) const;

  // One iteration: loss, Adam on the query side, momentum update, enqueue keys.
  // Throws DivergenceError when the loss is not finite.
  IterationLog step(const imaging::PretrainBatch& batch);
  IterationLog step() { return step(draw_batch()); }

  // Gradient of the batch loss w.r.t. every key-encoder parameter, with the key
  // branch recorded as trainable so the stop-gradient on keys is exercised.
  std::vector<Tensor<float>> key_gradients(const imaging::PretrainBatch& batch) const;

 private:
  struct Forward;
  Forward forward(Tape<float>& tape, const imaging::PretrainBatch& batch, bool trainable,
                  bool track_keys = false) const;

  const imaging::Corpus& corpus_;
  PretrainConfig cfg_;
  EncoderState<float> query_;
  EncoderState<float> key_;
  Adam<float> adam_;
  KeyQueue queue_;
  Rng rng_;
  std::int64_t iteration_ = 0;
};

using EpochCallback = std::function<void(const EpochSummary&)>;

// Full run: epochs * ceil(|corpus| / B) iterations. Collapse (batch embedding
// variance < 1e-6 for 3 consecutive epochs) stops the run early and is flagged.
PretrainResult pretrain(const imaging::Corpus& corpus, const PretrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

inline constexpr double kCollapseVariance = 1e-6;
inline constexpr int kCollapseEpochs = 3;

}  // namespace cssloc
