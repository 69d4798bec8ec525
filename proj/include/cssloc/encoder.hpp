#pragma once

// Feature encoder and projection head.
//
//   image 1x30x30 -> conv3x3(1->4) -> relu -> maxpool2 -> 4x15x15
//                 -> conv3x3(4->4) -> relu -> maxpool3 -> 4x5x5 -> feature[100]
//   feature -> fc(100->100) -> relu -> fc(100->32) -> l2 normalise -> embedding[32]
//
// The second pool uses a 3x3 window: two 2x2 pools would give 4x7x7 = 196,
// which does not match the 100-dimensional feature the architecture calls for.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cssloc/imaging.hpp"
#include "cssloc/tape.hpp"
#include "cssloc/tensor.hpp"

namespace cssloc {

inline constexpr std::size_t kImageSide = 30;
inline constexpr std::size_t kFeatureDim = 100;
inline constexpr std::size_t kEmbeddingDim = 32;
inline constexpr std::size_t kConvChannels = 4;

enum class EncoderRole { query, momentum };

template <typename T>
struct EncoderState {
  Tensor<T> conv1_w{{kConvChannels, 1, 3, 3}};
  Tensor<T> conv1_b{{kConvChannels}};
  Tensor<T> conv2_w{{kConvChannels, kConvChannels, 3, 3}};
  Tensor<T> conv2_b{{kConvChannels}};
  Tensor<T> proj1_w{{kFeatureDim, kFeatureDim}};
  Tensor<T> proj1_b{{kFeatureDim}};
  Tensor<T> proj2_w{{kEmbeddingDim, kFeatureDim}};
  Tensor<T> proj2_b{{kEmbeddingDim}};
  bool projection = true;
  EncoderRole role = EncoderRole::query;
  imaging::NormStats input_norm;  // applied to raw images before encoding

  // Kaiming-uniform (fan-in) weights, zero biases.
  static EncoderState random(std::uint64_t seed, bool projection = true);

  std::size_t embedding_dim() const { return projection ? kEmbeddingDim : kFeatureDim; }

  // Learnable tensors in a fixed order: conv1 w/b, conv2 w/b, then the head if present.
  std::vector<Tensor<T>*> params();
  std::vector<const Tensor<T>*> params() const;
  std::vector<std::string> param_names() const;
  // Feature-encoder tensors only (what is transferred downstream).
  std::vector<const Tensor<T>*> backbone_params() const;

  template <typename U>
  EncoderState<U> cast() const {
    EncoderState<U> out;
    out.conv1_w = conv1_w.template cast<U>();
    out.conv1_b = conv1_b.template cast<U>();
    out.conv2_w = conv2_w.template cast<U>();
    out.conv2_b = conv2_b.template cast<U>();
    out.proj1_w = proj1_w.template cast<U>();
    out.proj1_b = proj1_b.template cast<U>();
    out.proj2_w = proj2_w.template cast<U>();
    out.proj2_b = proj2_b.template cast<U>();
    out.projection = projection;
    out.role = role;
    out.input_norm = input_norm;
    return out;
  }

  friend bool operator==(const EncoderState&, const EncoderState&) = default;
};

// FNV-1a over the raw bytes of every parameter tensor.
template <typename T>
std::uint64_t checksum(const EncoderState<T>& enc);

template <typename T>
struct EncoderGraph {
  typename Tape<T>::Var feature;    // [N,100]
  typename Tape<T>::Var embedding;  // [N,d], unit rows
  std::vector<typename Tape<T>::Var> params;  // same order as EncoderState::params(); empty if frozen
};

// Records the encoder on `tape`. With trainable=false every weight is a tape
// constant, so nothing upstream of the input receives a gradient buffer.
// `images` is [N,1,30,30].
template <typename T>
EncoderGraph<T> encoder_forward(Tape<T>& tape, const EncoderState<T>& enc, typename Tape<T>::Var images,
                                bool trainable, bool with_head = true);

// Stacks already-normalised images into [N,1,30,30].
template <typename T>
Tensor<T> stack_images(std::span<const imaging::CsiImage* const> images);

// Normalises raw images with enc.input_norm and stacks them.
template <typename T>
Tensor<T> prepare_batch(const EncoderState<T>& enc, std::span<const imaging::CsiImage> raw);

struct Encoding {
  std::vector<float> feature;
  std::vector<float> embedding;
};

// Single normalised image -> (feature[100], embedding[d]).
Encoding encode(const EncoderState<float>& enc, const imaging::CsiImage& img,
                kernels::Backend backend = kernels::Backend::omp);

// Batched, gradient-free forward of already-stacked inputs: returns
// (features [N,100], embeddings [N,d]).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_batch(const EncoderState<T>& enc, Tensor<T> images,
                                             kernels::Backend backend = kernels::Backend::omp,
                                             bool with_head = true);

// xi <- m * xi + (1 - m) * theta over every parameter tensor.
template <typename T>
void momentum_update(EncoderState<T>& key, const EncoderState<T>& query, double m);

}  // namespace cssloc
