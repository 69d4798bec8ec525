#pragma once

// Location predictor on top of a frozen feature encoder, probabilistic
// location estimates, and a raw-pixel kNN comparator.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cssloc/dataset.hpp"
#include "cssloc/encoder.hpp"
#include "cssloc/tape.hpp"

namespace cssloc {

struct PredictorState {
  Tensor<float> fc1_w{{kFeatureDim, kFeatureDim}};
  Tensor<float> fc1_b{{kFeatureDim}};
  Tensor<float> fc2_w{{kEmbeddingDim, kFeatureDim}};
  Tensor<float> fc2_b{{kEmbeddingDim}};
  Tensor<float> out_w;  // [r, 32], or [r, 100] for the linear probe
  Tensor<float> out_b;  // [r]
  bool linear_probe = false;

  static PredictorState random(int rp_count, bool linear_probe, std::uint64_t seed);
  int rp_count() const { return out_b.empty() ? 0 : static_cast<int>(out_b.dim(0)); }
  std::vector<Tensor<float>*> params();
  std::vector<const Tensor<float>*> params() const;
  std::vector<std::string> param_names() const;
  friend bool operator==(const PredictorState&, const PredictorState&) = default;
};

struct ProbeConfig {
  int epochs = 100;
  double lr = 5e-3;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool linear_probe = false;
  kernels::Backend backend = kernels::Backend::omp;
};

// Normalises raw images with enc.input_norm and returns backbone features [N,100].
Tensor<float> extract_features(const EncoderState<float>& enc, std::span<const imaging::CsiImage> raw,
                               kernels::Backend backend = kernels::Backend::omp);

// Predictor logits [N,r] on the tape; `features` is [N,100].
Tape<float>::Var predictor_forward(Tape<float>& tape, const PredictorState& pred, Tape<float>::Var features,
                                   bool trainable, std::vector<Tape<float>::Var>* params = nullptr);

struct ProbeGraph {
  Tape<float>::Var loss;
  std::vector<Tape<float>::Var> encoder_params;    // recorded as constants
  std::vector<Tape<float>::Var> predictor_params;  // trainable
};

// One predictor-training graph from raw images through the frozen encoder.
ProbeGraph record_probe_step(Tape<float>& tape, const EncoderState<float>& enc, const PredictorState& pred,
                             std::span<const imaging::CsiImage> raw, std::span<const int> labels);

// Cross-entropy training of the predictor with Adam; encoder is read-only.
PredictorState train_predictor(const EncoderState<float>& enc, const RadioMap& map, const ProbeConfig& cfg);

// Mean cross-entropy of the predictor over a labeled map.
double predictor_loss(const EncoderState<float>& enc, const PredictorState& pred, const RadioMap& map);

struct LocationEstimate {
  sim::Point coords;
  std::vector<double> posterior;
  int top_label = -1;
};

// Posterior-weighted centroid of `coords` under softmax(logits).
LocationEstimate estimate_from_logits(std::span<const double> logits, std::span<const sim::Point> coords);

// `img` is a raw image; it is normalised with the encoder's input statistics.
LocationEstimate localize(const EncoderState<float>& enc, const PredictorState& pred, const imaging::CsiImage& img,
                          const RadioMap& map);

std::vector<LocationEstimate> localize_all(const EncoderState<float>& enc, const PredictorState& pred,
                                           std::span<const imaging::CsiImage> imgs, const RadioMap& map,
                                           kernels::Backend backend = kernels::Backend::omp);

// Mean location of the k raw-pixel nearest fingerprints (ties broken by map order).
LocationEstimate knn_baseline(const RadioMap& map, const imaging::CsiImage& img, std::size_t k);

}  // namespace cssloc
