#pragma once

// Error statistics and the experiment protocols: density sweep, robustness
// under drifted test conditions, and pre-training parameter sweeps.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cssloc/dataset.hpp"
#include "cssloc/downstream.hpp"
#include "cssloc/pretrain.hpp"

namespace cssloc::eval {

struct ErrorReport {
  std::vector<double> errors;  // per query, metres, input order
  double rmse = 0.0;
  double mae = 0.0;
  double std = 0.0;  // population std of the errors
  double median = 0.0;
  double p80 = 0.0;
  std::vector<std::pair<double, double>> cdf;  // (error, fraction <= error), sorted
};

ErrorReport compute_report(std::span<const sim::Point> estimates, std::span<const sim::Point> truth);

// Linear interpolation between order statistics at rank q * (n - 1).
double quantile(std::span<const double> sorted, double q);

nlohmann::json to_json(const ErrorReport& r, bool with_errors = false);

// Mean silhouette (Euclidean) of rows of `points` [N,d] grouped by label.
// Singleton clusters score 0. Throws ConfigError with fewer than two clusters.
double silhouette(const Tensor<float>& points, std::span<const int> labels);

// Silhouette of the encoder's embeddings over a labeled map.
double cluster_quality(const EncoderState<float>& enc, const RadioMap& map);

struct ExperimentSetup {
  sim::Scenario scenario;
  bool reseed_scenario = true;  // rebuild the scatterers from each run seed
  std::size_t images_per_rp = 10;
  std::size_t samples_per_image = 10;
  std::size_t query_images_per_point = 4;
  sim::DynamicsProfile dynamics = sim::ambient_dynamics();
  std::size_t knn_k = 3;
};

ExperimentSetup default_setup(sim::Preset preset = sim::Preset::corridor);

struct ExperimentData {
  sim::Scenario scenario;
  RadioMap train;    // labeled fingerprints at every RP (also the unlabeled corpus)
  RadioMap queries;  // held-out test points
  imaging::NormStats stats;
};

ExperimentData make_experiment(const ExperimentSetup& setup, std::uint64_t seed);

// Normalised, unlabeled pre-training corpus from a radio map.
imaging::Corpus make_corpus(const RadioMap& map, const imaging::NormStats& stats);

ErrorReport evaluate(const EncoderState<float>& enc, const PredictorState& pred, const RadioMap& map,
                     const RadioMap& queries);
ErrorReport evaluate_knn(const RadioMap& map, const RadioMap& queries, std::size_t k);

enum class SweepAxis { density, images, batch, momentum, temperature, projection };
SweepAxis parse_axis(const std::string& name);
std::string to_string(SweepAxis a);

struct SweepResult {
  std::string axis;
  std::vector<double> values;
  std::vector<double> rmse;  // seed mean; NaN when every seed collapsed
  std::vector<bool> collapsed;  // any seed flagged collapse at this value
  std::vector<std::vector<double>> per_seed_rmse;
  std::vector<std::vector<bool>> per_seed_collapsed;
  nlohmann::json metadata;
};

nlohmann::json to_json(const SweepResult& r);

inline constexpr double kOperatingDensity = 0.6;

// Trains one predictor per density on the seeded RP subset and evaluates on
// the common query set. rmse is averaged over seeds.
SweepResult run_density_sweep(std::span<const double> densities, const ExperimentData& data,
                              const EncoderState<float>& enc, std::span<const std::uint64_t> seeds,
                              const ProbeConfig& probe);

// Fresh query set under `dyn`; encoder and predictor are used as-is.
ErrorReport run_robustness(const ExperimentSetup& setup, const ExperimentData& data, const sim::DynamicsProfile& dyn,
                           const EncoderState<float>& enc, const PredictorState& pred);

// Same query set, kNN comparator.
ErrorReport run_robustness_knn(const ExperimentSetup& setup, const ExperimentData& data,
                               const sim::DynamicsProfile& dyn);

struct SweepOptions {
  PretrainConfig pretrain;  // base config; the swept field is overridden
  ProbeConfig probe;        // linear probe unless overridden
  int sweep_epochs = 30;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct RunOutcome {
  double rmse = 0.0;  // NaN if the run diverged
  bool collapsed = false;
  std::string reason;
  double silhouette = 0.0;
};

// One pre-train + linear-probe evaluation; divergence and collapse are caught
// and reported through the flag.
RunOutcome pretrain_and_probe(const ExperimentData& data, const PretrainConfig& cfg, const ProbeConfig& probe);

SweepResult run_param_sweep(SweepAxis axis, std::span<const double> values, const ExperimentSetup& setup,
                            const SweepOptions& opts);

// Comma-separated numbers; throws ConfigError on anything else.
std::vector<double> parse_grid(const std::string& text);

// Minimal SVG step plot of one or more CDF curves.
std::string cdf_svg(const std::vector<std::pair<std::string, ErrorReport>>& curves);

}  // namespace cssloc::eval
