#include "cssloc/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cssloc/errors.hpp"

namespace cssloc {

void validate(const PretrainConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  const bool m_ok = cfg.momentum >= 0.0 && (cfg.momentum < 1.0 || (cfg.allow_unit_momentum && cfg.momentum == 1.0));
  if (!m_ok) throw ConfigError("momentum must lie in [0, 1)");
  if (cfg.batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (cfg.queue_capacity < cfg.batch_size) throw ConfigError("queue capacity must be >= batch size");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
}

KeyQueue::KeyQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), slots_(capacity * dim, 0.0f) {
  if (capacity == 0 || dim == 0) throw ConfigError("key queue needs positive capacity and dimension");
}

void KeyQueue::enqueue(std::span<const float> keys) {
  if (keys.size() % dim_ != 0) throw ShapeError("enqueue: key block is not a whole number of rows");
  const std::size_t n = keys.size() / dim_;
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(keys.begin() + static_cast<std::ptrdiff_t>(r * dim_), dim_,
                slots_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
    head_ = (head_ + 1) % capacity_;
    fill_ = std::min(fill_ + 1, capacity_);
  }
}

Tensor<float> KeyQueue::contents() const {
  Tensor<float> out({fill_, dim_});
  const std::size_t oldest = fill_ < capacity_ ? 0 : head_;
  for (std::size_t r = 0; r < fill_; ++r) {
    const std::size_t slot = (oldest + r) % capacity_;
    std::copy_n(slots_.begin() + static_cast<std::ptrdiff_t>(slot * dim_), dim_,
                out.storage().begin() + static_cast<std::ptrdiff_t>(r * dim_));
  }
  return out;
}

template <typename T>
T info_nce(std::span<const T> query, std::span<const T> positive, std::span<const T> negatives, T temperature) {
  if (!(temperature > T{0})) throw ConfigError("info_nce: temperature must be positive");
  const std::size_t d = query.size();
  if (positive.size() != d || d == 0 || negatives.size() % d != 0) throw ShapeError("info_nce: dimension mismatch");
  const std::size_t k = negatives.size() / d;
  const T l0 = dot(query, positive) / temperature;
  std::vector<T> logits(k);
  T mx = l0;
  for (std::size_t j = 0; j < k; ++j) {
    logits[j] = dot(query, negatives.subspan(j * d, d)) / temperature;
    mx = std::max(mx, logits[j]);
  }
  T rest{0};
  for (auto l : logits) rest += std::exp(l - mx);
  if (mx == l0) return std::log1p(rest);
  return std::log(std::exp(l0 - mx) + rest) + mx - l0;
}

template float info_nce<float>(std::span<const float>, std::span<const float>, std::span<const float>, float);
template double info_nce<double>(std::span<const double>, std::span<const double>, std::span<const double>, double);

struct Pretrainer::Forward {
  Tape<float>::Var loss;
  Tape<float>::Var query_embedding;
  std::vector<Tape<float>::Var> params;
  std::vector<Tape<float>::Var> key_params;
  Tensor<float> keys;
};

Pretrainer::Pretrainer(const imaging::Corpus& corpus, PretrainConfig cfg)
    : Pretrainer(corpus, cfg, EncoderState<float>::random(derive_seed(cfg.seed, {1}), cfg.projection)) {}

Pretrainer::Pretrainer(const imaging::Corpus& corpus, PretrainConfig cfg, EncoderState<float> init)
    : corpus_(corpus),
      cfg_(cfg),
      query_(std::move(init)),
      queue_(std::max<std::size_t>(cfg.queue_capacity, 1), query_.embedding_dim()),
      rng_(derive_seed(cfg.seed, {2})) {
  validate(cfg_);
  if (query_.projection != cfg_.projection) throw ConfigError("initial encoder projection flag differs from config");
  query_.input_norm = cfg_.input_norm;
  query_.role = EncoderRole::query;
  key_ = query_;
  key_.role = EncoderRole::momentum;
  const auto qp = std::as_const(query_).params();
  adam_ = Adam<float>(AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}, qp);

  // Start from a full queue of keys encoded by the initial key encoder, so
  // every iteration contrasts against K real negatives.
  Rng fill_rng(derive_seed(cfg_.seed, {3}));
  while (queue_.size() < queue_.capacity()) {
    const auto batch = corpus_.draw_batch(std::min(cfg_.batch_size, corpus_.size()), fill_rng);
    const auto keys = encode_batch(key_, stack_images<float>(batch.positives), cfg_.backend).second;
    const std::size_t take = std::min(keys.dim(0), queue_.capacity() - queue_.size());
    queue_.enqueue(keys.data().first(take * keys.dim(1)));
  }
}

std::size_t Pretrainer::iterations_per_epoch() const {
  return (corpus_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
}

imaging::PretrainBatch Pretrainer::draw_batch() { return corpus_.draw_batch(cfg_.batch_size, rng_); }

Pretrainer::Forward Pretrainer::forward(Tape<float>& tape, const imaging::PretrainBatch& batch, bool trainable,
                                       bool track_keys) const {
  Forward f;
  auto kin = tape.constant(stack_images<float>(batch.positives));
  auto kg = encoder_forward(tape, key_, kin, track_keys);
  auto pos = tape.detach(kg.embedding);
  auto in = tape.constant(stack_images<float>(batch.queries));
  auto g = encoder_forward(tape, query_, in, trainable);
  auto neg = tape.constant(queue_.contents());
  f.loss = tape.info_nce(g.embedding, pos, neg, static_cast<float>(cfg_.temperature));
  f.query_embedding = g.embedding;
  f.params = std::move(g.params);
  f.key_params = std::move(kg.params);
  f.keys = tape.value(pos);
  return f;
}

double Pretrainer::batch_loss(const imaging::PretrainBatch& batch) const {
  Tape<float> tape(cfg_.backend);
  auto f = forward(tape, batch, false);
  return tape.value(f.loss)[0];
}

std::vector<Tensor<float>> Pretrainer::key_gradients(const imaging::PretrainBatch& batch) const {
  Tape<float> tape(cfg_.backend);
  auto f = forward(tape, batch, true, true);
  tape.backward(f.loss);
  std::vector<Tensor<float>> out;
  for (auto v : f.key_params) out.push_back(tape.grad(v));
  return out;
}

IterationLog Pretrainer::step(const imaging::PretrainBatch& batch) {
  Tape<float> tape(cfg_.backend);
  auto f = forward(tape, batch, true);
  const double loss = tape.value(f.loss)[0];
  if (!std::isfinite(loss))
    throw DivergenceError("pre-training loss became non-finite at iteration " + std::to_string(iteration_),
                          iteration_);

  IterationLog log;
  log.iteration = iteration_;
  log.loss = loss;
  {
    const auto& q = tape.value(f.query_embedding);
    const std::size_t n = q.dim(0), d = q.dim(1);
    double pos = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      pos += dot<float>(q.data().subspan(i * d, d), f.keys.data().subspan(i * d, d));
    log.mean_positive_sim = pos / static_cast<double>(n);
    const Tensor<float> negs = queue_.contents();
    double neg = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < negs.dim(0); ++j) {
        neg += dot<float>(q.data().subspan(i * d, d), negs.data().subspan(j * d, d));
        ++count;
      }
    log.mean_negative_sim = count ? neg / static_cast<double>(count) : 0.0;
    double var = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += q[i * d + t];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) sq += (q[i * d + t] - mean) * (q[i * d + t] - mean);
      var += sq / static_cast<double>(n);
    }
    log.embedding_variance = var / static_cast<double>(d);
  }

  tape.backward(f.loss);
  std::vector<const Tensor<float>*> grads;
  for (auto v : f.params) grads.push_back(&tape.grad(v));
  const auto params = query_.params();
  adam_.step(params, grads);
  momentum_update(key_, query_, cfg_.momentum);
  queue_.enqueue(f.keys.data());
  ++iteration_;
  return log;
}

PretrainResult pretrain(const imaging::Corpus& corpus, const PretrainConfig& cfg, const EpochCallback& on_epoch) {
  Pretrainer trainer(corpus, cfg);
  PretrainResult result;
  const std::size_t per_epoch = trainer.iterations_per_epoch();
  int low_variance_epochs = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochSummary summary;
    summary.epoch = epoch + 1;
    bool degenerate = false;
    for (std::size_t it = 0; it < per_epoch; ++it) {
      IterationLog log;
      try {
        log = trainer.step();
      } catch (const DegenerateVectorError& e) {
        // every activation of some embedding died: the strongest form of collapse
        result.collapsed = true;
        result.collapse_reason = std::string("embedding degenerated to a zero vector: ") + e.what();
        degenerate = true;
        break;
      }
      log.epoch = epoch + 1;
      summary.loss += log.loss;
      summary.mean_positive_sim += log.mean_positive_sim;
      summary.mean_negative_sim += log.mean_negative_sim;
      summary.embedding_variance = log.embedding_variance;
      result.iterations.push_back(log);
    }
    if (degenerate) break;
    summary.loss /= static_cast<double>(per_epoch);
    summary.mean_positive_sim /= static_cast<double>(per_epoch);
    summary.mean_negative_sim /= static_cast<double>(per_epoch);
    result.epochs.push_back(summary);
    if (on_epoch) on_epoch(summary);
    low_variance_epochs = summary.embedding_variance < kCollapseVariance ? low_variance_epochs + 1 : 0;
    if (low_variance_epochs >= kCollapseEpochs) {
      result.collapsed = true;
      result.collapse_reason = "embedding variance below 1e-6 for " + std::to_string(kCollapseEpochs) +
                               " consecutive epochs (epoch " + std::to_string(epoch + 1) + ")";
      break;
    }
  }
  result.query = trainer.query_encoder();
  result.key = trainer.key_encoder();
  return result;
}

}  // namespace cssloc
