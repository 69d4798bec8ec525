#include "cssloc/encoder.hpp"

#include <cmath>
#include <cstring>

#include "cssloc/rng.hpp"

namespace cssloc {

namespace {

template <typename T>
void kaiming_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : w.data()) v = static_cast<T>(u(rng));
}

}  // namespace

template <typename T>
EncoderState<T> EncoderState<T>::random(std::uint64_t seed, bool projection) {
  EncoderState<T> e;
  e.projection = projection;
  Rng rng(derive_seed(seed, {0xe7c0de}));
  kaiming_uniform(e.conv1_w, 1 * 9, rng);
  kaiming_uniform(e.conv2_w, kConvChannels * 9, rng);
  if (projection) {
    kaiming_uniform(e.proj1_w, kFeatureDim, rng);
    kaiming_uniform(e.proj2_w, kFeatureDim, rng);
  }
  return e;
}

template <typename T>
std::vector<Tensor<T>*> EncoderState<T>::params() {
  std::vector<Tensor<T>*> p{&conv1_w, &conv1_b, &conv2_w, &conv2_b};
  if (projection) p.insert(p.end(), {&proj1_w, &proj1_b, &proj2_w, &proj2_b});
  return p;
}

template <typename T>
std::vector<const Tensor<T>*> EncoderState<T>::params() const {
  std::vector<const Tensor<T>*> p{&conv1_w, &conv1_b, &conv2_w, &conv2_b};
  if (projection) p.insert(p.end(), {&proj1_w, &proj1_b, &proj2_w, &proj2_b});
  return p;
}

template <typename T>
std::vector<std::string> EncoderState<T>::param_names() const {
  std::vector<std::string> n{"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"};
  if (projection) n.insert(n.end(), {"proj1.weight", "proj1.bias", "proj2.weight", "proj2.bias"});
  return n;
}

template <typename T>
std::vector<const Tensor<T>*> EncoderState<T>::backbone_params() const {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b};
}

template <typename T>
std::uint64_t checksum(const EncoderState<T>& enc) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto* t : enc.params()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data().data());
    for (std::size_t i = 0; i < t->size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

template <typename T>
EncoderGraph<T> encoder_forward(Tape<T>& tape, const EncoderState<T>& enc, typename Tape<T>::Var images,
                                bool trainable, bool with_head) {
  using Var = typename Tape<T>::Var;
  EncoderGraph<T> g;
  auto bind = [&](const Tensor<T>& t) {
    Var v = trainable ? tape.parameter(t) : tape.constant(t);
    if (trainable) g.params.push_back(v);
    return v;
  };
  const auto& in = tape.value(images);
  if (in.rank() != 4 || in.dim(1) != 1 || in.dim(2) != kImageSide || in.dim(3) != kImageSide)
    throw ShapeError("encoder expects [N,1,30,30] input, got " + shape_string(in.shape()));
  Var w1 = bind(enc.conv1_w), b1 = bind(enc.conv1_b), w2 = bind(enc.conv2_w), b2 = bind(enc.conv2_b);
  Var h = tape.maxpool2d(tape.relu(tape.conv2d(images, w1, b1)), 2);
  h = tape.maxpool2d(tape.relu(tape.conv2d(h, w2, b2)), 3);
  g.feature = tape.flatten(h);
  if (!with_head) return g;
  if (enc.projection) {
    Var p1w = bind(enc.proj1_w), p1b = bind(enc.proj1_b), p2w = bind(enc.proj2_w), p2b = bind(enc.proj2_b);
    Var z = tape.linear(tape.relu(tape.linear(g.feature, p1w, p1b)), p2w, p2b);
    g.embedding = tape.l2_normalize(z);
  } else {
    g.embedding = tape.l2_normalize(g.feature);
  }
  return g;
}

template <typename T>
Tensor<T> stack_images(std::span<const imaging::CsiImage* const> images) {
  Tensor<T> out({images.size(), 1, kImageSide, kImageSide});
  const std::size_t px = kImageSide * kImageSide;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = *images[i];
    if (img.rows != static_cast<int>(kImageSide) || img.cols != static_cast<int>(kImageSide))
      throw ShapeError("encoder input must be 30x30, got " + std::to_string(img.rows) + "x" +
                       std::to_string(img.cols));
    for (std::size_t p = 0; p < px; ++p) out[i * px + p] = static_cast<T>(img.pixels[p]);
  }
  return out;
}

template <typename T>
Tensor<T> prepare_batch(const EncoderState<T>& enc, std::span<const imaging::CsiImage> raw) {
  std::vector<imaging::CsiImage> norm;
  norm.reserve(raw.size());
  for (const auto& img : raw) norm.push_back(imaging::normalize(img, enc.input_norm));
  std::vector<const imaging::CsiImage*> ptrs;
  for (const auto& img : norm) ptrs.push_back(&img);
  return stack_images<T>(ptrs);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_batch(const EncoderState<T>& enc, Tensor<T> images, kernels::Backend backend,
                                             bool with_head) {
  Tape<T> tape(backend);
  auto in = tape.constant(std::move(images));
  auto g = encoder_forward(tape, enc, in, false, with_head);
  Tensor<T> feat = tape.value(g.feature);
  Tensor<T> emb = with_head ? tape.value(g.embedding) : Tensor<T>();
  return {std::move(feat), std::move(emb)};
}

Encoding encode(const EncoderState<float>& enc, const imaging::CsiImage& img, kernels::Backend backend) {
  const imaging::CsiImage* p = &img;
  auto [f, z] = encode_batch(enc, stack_images<float>(std::span<const imaging::CsiImage* const>(&p, 1)), backend);
  return {f.storage(), z.storage()};
}

template <typename T>
void momentum_update(EncoderState<T>& key, const EncoderState<T>& query, double m) {
  auto kp = key.params();
  auto qp = query.params();
  if (kp.size() != qp.size()) throw ShapeError("momentum_update: encoders differ in structure");
  for (std::size_t i = 0; i < kp.size(); ++i) require_shape(*qp[i], kp[i]->shape(), "momentum_update");
  if (m == 1.0) return;
  if (m == 0.0) {
    for (std::size_t i = 0; i < kp.size(); ++i) *kp[i] = *qp[i];
    return;
  }
  const T mm = static_cast<T>(m), om = static_cast<T>(1.0 - m);
  for (std::size_t i = 0; i < kp.size(); ++i) {
    auto& k = *kp[i];
    const auto& q = *qp[i];
    for (std::size_t j = 0; j < k.size(); ++j) k[j] = mm * k[j] + om * q[j];
  }
}

#define CSSLOC_INSTANTIATE_ENCODER(T)                                                                        \
  template struct EncoderState<T>;                                                                           \
  template std::uint64_t checksum<T>(const EncoderState<T>&);                                                \
  template EncoderGraph<T> encoder_forward<T>(Tape<T>&, const EncoderState<T>&, Tape<T>::Var, bool, bool);   \
  template Tensor<T> stack_images<T>(std::span<const imaging::CsiImage* const>);                             \
  template Tensor<T> prepare_batch<T>(const EncoderState<T>&, std::span<const imaging::CsiImage>);           \
  template std::pair<Tensor<T>, Tensor<T>> encode_batch<T>(const EncoderState<T>&, Tensor<T>, kernels::Backend, \
                                                           bool);                                            \
  template void momentum_update<T>(EncoderState<T>&, const EncoderState<T>&, double);

CSSLOC_INSTANTIATE_ENCODER(float)
CSSLOC_INSTANTIATE_ENCODER(double)

}  // namespace cssloc
