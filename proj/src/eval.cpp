#include "cssloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cssloc/errors.hpp"

namespace cssloc::eval {

ErrorReport compute_report(std::span<const sim::Point> estimates, std::span<const sim::Point> truth) {
  if (estimates.size() != truth.size()) throw ShapeError("compute_report: estimate/truth count mismatch");
  if (estimates.empty()) throw ConfigError("compute_report: no estimates");
  ErrorReport r;
  r.errors.reserve(estimates.size());
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (!std::isfinite(estimates[i].x) || !std::isfinite(estimates[i].y) || !std::isfinite(truth[i].x) ||
        !std::isfinite(truth[i].y))
      throw ConfigError("compute_report: non-finite coordinate at query " + std::to_string(i));
    r.errors.push_back(sim::distance(estimates[i], truth[i]));
  }
  const double n = static_cast<double>(r.errors.size());
  double sum = 0.0, sq = 0.0;
  for (double e : r.errors) {
    sum += e;
    sq += e * e;
  }
  r.mae = sum / n;
  r.rmse = std::sqrt(sq / n);
  double var = 0.0;
  for (double e : r.errors) var += (e - r.mae) * (e - r.mae);
  r.std = std::sqrt(var / n);
  std::vector<double> sorted = r.errors;
  std::sort(sorted.begin(), sorted.end());
  r.median = quantile(sorted, 0.5);
  r.p80 = quantile(sorted, 0.8);
  for (std::size_t i = 0; i < sorted.size(); ++i)
    r.cdf.emplace_back(sorted[i], static_cast<double>(i + 1) / n);
  return r;
}

double quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ConfigError("quantile of empty sample");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

nlohmann::json to_json(const ErrorReport& r, bool with_errors) {
  nlohmann::json j{{"rmse", r.rmse}, {"mae", r.mae}, {"std", r.std}, {"median", r.median}, {"p80", r.p80},
                   {"count", r.errors.size()}};
  if (with_errors) j["errors"] = r.errors;
  return j;
}

double silhouette(const Tensor<float>& points, std::span<const int> labels) {
  if (points.rank() != 2 || points.dim(0) != labels.size()) throw ShapeError("silhouette: label count mismatch");
  const std::size_t n = points.dim(0), d = points.dim(1);
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw ConfigError("silhouette: negative label");
    max_label = std::max(max_label, l);
  }
  const auto c = static_cast<std::size_t>(max_label + 1);
  std::vector<std::size_t> counts(c, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  const auto clusters = std::count_if(counts.begin(), counts.end(), [](std::size_t k) { return k > 0; });
  if (clusters < 2) throw ConfigError("silhouette is undefined with fewer than two clusters");

  std::vector<double> score(n, 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto li = static_cast<std::size_t>(labels[i]);
    if (counts[li] < 2) continue;
    std::vector<double> total(c, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = static_cast<double>(points[i * d + t]) - points[j * d + t];
        s += diff * diff;
      }
      total[static_cast<std::size_t>(labels[j])] += std::sqrt(s);
    }
    const double a = total[li] / static_cast<double>(counts[li] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k)
      if (k != li && counts[k] > 0) b = std::min(b, total[k] / static_cast<double>(counts[k]));
    const double m = std::max(a, b);
    score[i] = m > 0.0 ? (b - a) / m : 0.0;
  }
  double sum = 0.0;
  for (double s : score) sum += s;
  return sum / static_cast<double>(n);
}

double cluster_quality(const EncoderState<float>& enc, const RadioMap& map) {
  const auto images = map.images();
  auto emb = encode_batch(enc, prepare_batch(enc, images)).second;
  std::vector<int> labels;
  for (const auto& e : map.entries) labels.push_back(e.label);
  return silhouette(emb, labels);
}

ExperimentSetup default_setup(sim::Preset preset) {
  ExperimentSetup s;
  s.scenario = sim::build_scenario(sim::to_string(preset), preset, 0);
  return s;
}

ExperimentData make_experiment(const ExperimentSetup& setup, std::uint64_t seed) {
  ExperimentData d;
  d.scenario = setup.reseed_scenario ? sim::reseed(setup.scenario, seed) : setup.scenario;
  d.train = generate_dataset(d.scenario, setup.images_per_rp, setup.samples_per_image, setup.dynamics);
  d.queries = generate_queries(d.scenario, setup.query_images_per_point, setup.samples_per_image, setup.dynamics);
  const auto images = d.train.images();
  d.stats = imaging::compute_stats(images);
  return d;
}

imaging::Corpus make_corpus(const RadioMap& map, const imaging::NormStats& stats) {
  std::vector<imaging::CsiImage> images;
  images.reserve(map.entries.size());
  for (const auto& e : map.entries) {
    auto img = imaging::normalize(e.image, stats);
    img.rp_index = map.source_rp[static_cast<std::size_t>(e.label)];
    img.scenario_id = map.scenario_id;
    images.push_back(std::move(img));
  }
  return imaging::Corpus(std::move(images));
}

namespace {

std::vector<sim::Point> truth_of(const RadioMap& queries) {
  std::vector<sim::Point> t;
  t.reserve(queries.entries.size());
  for (const auto& e : queries.entries) t.push_back(queries.location(e));
  return t;
}

}  // namespace

ErrorReport evaluate(const EncoderState<float>& enc, const PredictorState& pred, const RadioMap& map,
                     const RadioMap& queries) {
  const auto images = queries.images();
  const auto est = localize_all(enc, pred, images, map);
  std::vector<sim::Point> pts;
  pts.reserve(est.size());
  for (const auto& e : est) pts.push_back(e.coords);
  return compute_report(pts, truth_of(queries));
}

ErrorReport evaluate_knn(const RadioMap& map, const RadioMap& queries, std::size_t k) {
  std::vector<sim::Point> pts(queries.entries.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(pts.size()); ++i)
    pts[static_cast<std::size_t>(i)] = knn_baseline(map, queries.entries[static_cast<std::size_t>(i)].image, k).coords;
  return compute_report(pts, truth_of(queries));
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "density") return SweepAxis::density;
  if (name == "images") return SweepAxis::images;
  if (name == "batch") return SweepAxis::batch;
  if (name == "momentum") return SweepAxis::momentum;
  if (name == "temperature") return SweepAxis::temperature;
  if (name == "projection") return SweepAxis::projection;
  throw ConfigError("unknown sweep axis '" + name + "'");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::density: return "density";
    case SweepAxis::images: return "images";
    case SweepAxis::batch: return "batch";
    case SweepAxis::momentum: return "momentum";
    case SweepAxis::temperature: return "temperature";
    case SweepAxis::projection: return "projection";
  }
  return "?";
}

nlohmann::json to_json(const SweepResult& r) {
  auto rm = nlohmann::json::array();
  for (double v : r.rmse) rm.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  nlohmann::json per = nlohmann::json::array();
  for (const auto& row : r.per_seed_rmse) {
    auto a = nlohmann::json::array();
    for (double v : row) a.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
    per.push_back(a);
  }
  return {{"axis", r.axis},         {"values", r.values},       {"rmse", rm},
          {"collapsed", r.collapsed}, {"per_seed_rmse", per},   {"per_seed_collapsed", r.per_seed_collapsed},
          {"metadata", r.metadata}};
}

namespace {

double finite_mean(const std::vector<double>& xs) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : xs)
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

SweepResult run_density_sweep(std::span<const double> densities, const ExperimentData& data,
                              const EncoderState<float>& enc, std::span<const std::uint64_t> seeds,
                              const ProbeConfig& probe) {
  if (seeds.empty()) throw ConfigError("density sweep needs at least one seed");
  SweepResult r;
  r.axis = "density";
  r.values.assign(densities.begin(), densities.end());
  for (double rho : densities) {
    std::vector<double> per;
    for (auto seed : seeds) {
      const auto sub = select_density(data.train, rho, seed);
      ProbeConfig pc = probe;
      pc.seed = seed;
      const auto pred = train_predictor(enc, sub, pc);
      per.push_back(evaluate(enc, pred, sub, data.queries).rmse);
    }
    r.rmse.push_back(finite_mean(per));
    r.collapsed.push_back(false);
    r.per_seed_collapsed.emplace_back(per.size(), false);
    r.per_seed_rmse.push_back(std::move(per));
  }
  r.metadata = {{"operating_density", kOperatingDensity},
                {"rp_total", data.train.rp_count()},
                {"probe_epochs", probe.epochs},
                {"linear_probe", probe.linear_probe},
                {"seeds", std::vector<std::uint64_t>(seeds.begin(), seeds.end())}};
  return r;
}

ErrorReport run_robustness(const ExperimentSetup& setup, const ExperimentData& data, const sim::DynamicsProfile& dyn,
                           const EncoderState<float>& enc, const PredictorState& pred) {
  const auto drifted = generate_queries(data.scenario, setup.query_images_per_point, setup.samples_per_image, dyn);
  return evaluate(enc, pred, data.train, drifted);
}

ErrorReport run_robustness_knn(const ExperimentSetup& setup, const ExperimentData& data,
                               const sim::DynamicsProfile& dyn) {
  const auto drifted = generate_queries(data.scenario, setup.query_images_per_point, setup.samples_per_image, dyn);
  return evaluate_knn(data.train, drifted, setup.knn_k);
}

RunOutcome pretrain_and_probe(const ExperimentData& data, const PretrainConfig& cfg, const ProbeConfig& probe) {
  RunOutcome out;
  PretrainConfig c = cfg;
  c.input_norm = data.stats;
  const auto corpus = make_corpus(data.train, data.stats);
  PretrainResult res;
  try {
    res = pretrain(corpus, c);
  } catch (const DivergenceError& e) {
    out.collapsed = true;
    out.reason = e.what();
    out.rmse = std::numeric_limits<double>::quiet_NaN();
    out.silhouette = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.collapsed = res.collapsed;
  out.reason = res.collapse_reason;
  const auto pred = train_predictor(res.query, data.train, probe);
  out.rmse = evaluate(res.query, pred, data.train, data.queries).rmse;
  try {
    out.silhouette = cluster_quality(res.query, data.train);
  } catch (const DegenerateVectorError&) {
    out.silhouette = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

SweepResult run_param_sweep(SweepAxis axis, std::span<const double> values, const ExperimentSetup& setup,
                            const SweepOptions& opts) {
  if (axis == SweepAxis::density) throw ConfigError("density sweeps need a trained encoder (run_density_sweep)");
  if (opts.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  SweepResult r;
  r.axis = to_string(axis);
  r.values.assign(values.begin(), values.end());
  for (double v : values) {
    ExperimentSetup su = setup;
    PretrainConfig cfg = opts.pretrain;
    cfg.epochs = opts.sweep_epochs;
    switch (axis) {
      case SweepAxis::images:
        if (v < 2 || v != std::floor(v)) throw ConfigError("images per RP must be an integer >= 2");
        su.images_per_rp = static_cast<std::size_t>(v);
        break;
      case SweepAxis::batch:
        if (v < 2 || v != std::floor(v)) throw ConfigError("batch size must be an integer >= 2");
        cfg.batch_size = static_cast<std::size_t>(v);
        cfg.queue_capacity = std::max(cfg.queue_capacity, cfg.batch_size);
        break;
      case SweepAxis::momentum: cfg.momentum = v; break;
      case SweepAxis::temperature: cfg.temperature = v; break;
      case SweepAxis::projection:
        if (v != 0.0 && v != 1.0) throw ConfigError("projection axis takes 0 (off) or 1 (on)");
        cfg.projection = v != 0.0;
        break;
      case SweepAxis::density: break;
    }
    validate(cfg);
    std::vector<double> per;
    std::vector<bool> flags;
    for (auto seed : opts.seeds) {
      const auto data = make_experiment(su, seed);
      cfg.seed = seed;
      ProbeConfig pc = opts.probe;
      pc.seed = seed;
      const auto out = pretrain_and_probe(data, cfg, pc);
      per.push_back(out.rmse);
      flags.push_back(out.collapsed);
    }
    r.rmse.push_back(finite_mean(per));
    r.collapsed.push_back(std::any_of(flags.begin(), flags.end(), [](bool b) { return b; }));
    r.per_seed_rmse.push_back(std::move(per));
    r.per_seed_collapsed.push_back(std::move(flags));
  }
  r.metadata = {{"sweep_epochs", opts.sweep_epochs},
                {"default_epochs", PretrainConfig{}.epochs},
                {"reduced_budget", opts.sweep_epochs < PretrainConfig{}.epochs},
                {"linear_probe", opts.probe.linear_probe},
                {"seeds", opts.seeds},
                {"scenario", setup.scenario.name}};
  return r;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("invalid grid value '" + item + "'");
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (used != item.size() || !std::isfinite(v)) throw ConfigError("invalid grid value '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty grid");
  return out;
}

std::string cdf_svg(const std::vector<std::pair<std::string, ErrorReport>>& curves) {
  const double w = 640, h = 400, m = 50;
  double xmax = 1e-9;
  for (const auto& [name, rep] : curves)
    if (!rep.cdf.empty()) xmax = std::max(xmax, rep.cdf.back().first);
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">error (m), max "
     << xmax << "</text>\n";
  os << "<text x=\"15\" y=\"" << h / 2 << "\" transform=\"rotate(-90 15 " << h / 2
     << ")\" text-anchor=\"middle\">CDF</text>\n";
  std::size_t idx = 0;
  for (const auto& [name, rep] : curves) {
    const char* col = colors[idx % 5];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" points=\"";
    double prev = 0.0;
    os << m << "," << h - m << " ";
    for (const auto& [e, f] : rep.cdf) {
      const double x = m + (w - 2 * m) * e / xmax;
      os << x << "," << h - m - (h - 2 * m) * prev << " " << x << "," << h - m - (h - 2 * m) * f << " ";
      prev = f;
    }
    os << "\"/>\n";
    os << "<text x=\"" << w - m - 120 << "\" y=\"" << m + 20 * (idx + 1) << "\" fill=\"" << col << "\">" << name
       << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace cssloc::eval
