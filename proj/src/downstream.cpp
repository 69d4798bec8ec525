#include "cssloc/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cssloc/adam.hpp"
#include "cssloc/errors.hpp"
#include "cssloc/rng.hpp"

namespace cssloc {

namespace {

void kaiming_uniform(Tensor<float>& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : w.data()) v = static_cast<float>(u(rng));
}

}  // namespace

PredictorState PredictorState::random(int rp_count, bool linear_probe, std::uint64_t seed) {
  if (rp_count < 2) throw ConfigError("location predictor needs at least 2 RPs");
  PredictorState p;
  p.linear_probe = linear_probe;
  Rng rng(derive_seed(seed, {0x9ed1c7}));
  const std::size_t in = linear_probe ? kFeatureDim : kEmbeddingDim;
  p.out_w = Tensor<float>({static_cast<std::size_t>(rp_count), in});
  p.out_b = Tensor<float>({static_cast<std::size_t>(rp_count)});
  if (linear_probe) {
    p.fc1_w = p.fc1_b = p.fc2_w = p.fc2_b = Tensor<float>();
  } else {
    kaiming_uniform(p.fc1_w, kFeatureDim, rng);
    kaiming_uniform(p.fc2_w, kFeatureDim, rng);
  }
  kaiming_uniform(p.out_w, in, rng);
  return p;
}

std::vector<Tensor<float>*> PredictorState::params() {
  if (linear_probe) return {&out_w, &out_b};
  return {&fc1_w, &fc1_b, &fc2_w, &fc2_b, &out_w, &out_b};
}

std::vector<const Tensor<float>*> PredictorState::params() const {
  if (linear_probe) return {&out_w, &out_b};
  return {&fc1_w, &fc1_b, &fc2_w, &fc2_b, &out_w, &out_b};
}

std::vector<std::string> PredictorState::param_names() const {
  if (linear_probe) return {"out.weight", "out.bias"};
  return {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias", "out.weight", "out.bias"};
}

Tensor<float> extract_features(const EncoderState<float>& enc, std::span<const imaging::CsiImage> raw,
                               kernels::Backend backend) {
  return encode_batch(enc, prepare_batch(enc, raw), backend, false).first;
}

Tape<float>::Var predictor_forward(Tape<float>& tape, const PredictorState& pred, Tape<float>::Var features,
                                   bool trainable, std::vector<Tape<float>::Var>* params) {
  auto bind = [&](const Tensor<float>& t) {
    auto v = trainable ? tape.parameter(t) : tape.constant(t);
    if (trainable && params) params->push_back(v);
    return v;
  };
  auto h = features;
  if (!pred.linear_probe) {
    auto w1 = bind(pred.fc1_w), b1 = bind(pred.fc1_b), w2 = bind(pred.fc2_w), b2 = bind(pred.fc2_b);
    h = tape.relu(tape.linear(h, w1, b1));
    h = tape.relu(tape.linear(h, w2, b2));
  }
  auto wo = bind(pred.out_w), bo = bind(pred.out_b);
  return tape.linear(h, wo, bo);
}

ProbeGraph record_probe_step(Tape<float>& tape, const EncoderState<float>& enc, const PredictorState& pred,
                             std::span<const imaging::CsiImage> raw, std::span<const int> labels) {
  ProbeGraph g;
  auto in = tape.constant(prepare_batch(enc, raw));
  auto eg = encoder_forward(tape, enc, in, false, false);
  for (const auto* t : enc.backbone_params()) g.encoder_params.push_back(tape.constant(*t));
  auto logits = predictor_forward(tape, pred, eg.feature, true, &g.predictor_params);
  g.loss = tape.softmax_cross_entropy(logits, labels);
  return g;
}

namespace {

Tensor<float> gather_rows(const Tensor<float>& src, std::span<const std::size_t> rows) {
  const std::size_t d = src.dim(1);
  Tensor<float> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.storage().begin() + static_cast<std::ptrdiff_t>(i * d));
  return out;
}

}  // namespace

PredictorState train_predictor(const EncoderState<float>& enc, const RadioMap& map, const ProbeConfig& cfg) {
  validate(map);
  if (map.entries.empty()) throw ConfigError("train_predictor: empty radio map");
  if (map.rp_count() < 2) throw ConfigError("train_predictor: need at least 2 RPs (degenerate task)");
  if (cfg.batch_size == 0) throw ConfigError("train_predictor: batch size must be positive");
  PredictorState pred = PredictorState::random(map.rp_count(), cfg.linear_probe, cfg.seed);

  const auto images = map.images();
  // The encoder is frozen, so its features are computed once.
  const Tensor<float> features = extract_features(enc, images, cfg.backend);
  std::vector<int> labels;
  for (const auto& e : map.entries) labels.push_back(e.label);

  Adam<float> adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}, std::as_const(pred).params());
  Rng rng(derive_seed(cfg.seed, {0x7a41}));
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> lab;
      for (auto r : rows) lab.push_back(labels[r]);
      Tape<float> tape(cfg.backend);
      std::vector<Tape<float>::Var> vars;
      auto x = tape.constant(gather_rows(features, rows));
      auto loss = tape.softmax_cross_entropy(predictor_forward(tape, pred, x, true, &vars), lab);
      if (!std::isfinite(tape.value(loss)[0])) throw DivergenceError("predictor loss became non-finite", epoch);
      tape.backward(loss);
      std::vector<const Tensor<float>*> grads;
      for (auto v : vars) grads.push_back(&tape.grad(v));
      adam.step(pred.params(), grads);
    }
  }
  return pred;
}

double predictor_loss(const EncoderState<float>& enc, const PredictorState& pred, const RadioMap& map) {
  const auto images = map.images();
  Tape<float> tape;
  auto x = tape.constant(extract_features(enc, images));
  std::vector<int> labels;
  for (const auto& e : map.entries) labels.push_back(e.label);
  return tape.value(tape.softmax_cross_entropy(predictor_forward(tape, pred, x, false), labels))[0];
}

LocationEstimate estimate_from_logits(std::span<const double> logits, std::span<const sim::Point> coords) {
  if (logits.size() != coords.size())
    throw ShapeError("predictor has " + std::to_string(logits.size()) + " outputs but the radio map has " +
                     std::to_string(coords.size()) + " RPs");
  LocationEstimate est;
  est.posterior = softmax<double>(logits);
  est.top_label = static_cast<int>(std::max_element(est.posterior.begin(), est.posterior.end()) -
                                   est.posterior.begin());
  for (std::size_t y = 0; y < coords.size(); ++y) {
    est.coords.x += est.posterior[y] * coords[y].x;
    est.coords.y += est.posterior[y] * coords[y].y;
  }
  return est;
}

std::vector<LocationEstimate> localize_all(const EncoderState<float>& enc, const PredictorState& pred,
                                           std::span<const imaging::CsiImage> imgs, const RadioMap& map,
                                           kernels::Backend backend) {
  if (pred.rp_count() != map.rp_count())
    throw ShapeError("predictor/radio map RP count mismatch: " + std::to_string(pred.rp_count()) + " vs " +
                     std::to_string(map.rp_count()));
  Tape<float> tape(backend);
  auto x = tape.constant(extract_features(enc, imgs, backend));
  const auto& logits = tape.value(predictor_forward(tape, pred, x, false));
  const std::size_t r = static_cast<std::size_t>(map.rp_count());
  std::vector<LocationEstimate> out;
  out.reserve(imgs.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    std::vector<double> row(logits.data().begin() + static_cast<std::ptrdiff_t>(i * r),
                            logits.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * r));
    out.push_back(estimate_from_logits(row, map.coords));
  }
  return out;
}

LocationEstimate localize(const EncoderState<float>& enc, const PredictorState& pred, const imaging::CsiImage& img,
                          const RadioMap& map) {
  return localize_all(enc, pred, std::span<const imaging::CsiImage>(&img, 1), map).front();
}

LocationEstimate knn_baseline(const RadioMap& map, const imaging::CsiImage& img, std::size_t k) {
  if (map.entries.empty()) throw ConfigError("knn_baseline: empty radio map");
  if (k == 0 || k > map.entries.size()) throw ConfigError("knn_baseline: k must lie in [1, |map|]");
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(map.entries.size());
  for (std::size_t i = 0; i < map.entries.size(); ++i) {
    const auto& px = map.entries[i].image.pixels;
    if (px.size() != img.pixels.size()) throw ShapeError("knn_baseline: image size mismatch");
    double d = 0.0;
    for (std::size_t p = 0; p < px.size(); ++p) {
      const double diff = static_cast<double>(px[p]) - img.pixels[p];
      d += diff * diff;
    }
    dist.push_back({d, i});
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  LocationEstimate est;
  est.posterior.assign(static_cast<std::size_t>(map.rp_count()), 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& e = map.entries[dist[i].second];
    const auto p = map.location(e);
    est.coords.x += p.x / static_cast<double>(k);
    est.coords.y += p.y / static_cast<double>(k);
    est.posterior[static_cast<std::size_t>(e.label)] += 1.0 / static_cast<double>(k);
  }
  est.top_label = static_cast<int>(std::max_element(est.posterior.begin(), est.posterior.end()) -
                                   est.posterior.begin());
  return est;
}

}  // namespace cssloc
