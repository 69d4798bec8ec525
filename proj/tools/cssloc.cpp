// cssloc: simulate -> pretrain -> probe -> localize -> evaluate, plus sweeps.
//
// Exit codes: 0 ok, 2 usage, 3 invalid configuration or grid, 4 file format
// rejected, 5 I/O failure, 6 training diverged, 1 anything else.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cssloc/errors.hpp"
#include "cssloc/eval.hpp"
#include "cssloc/persistence.hpp"

#ifndef CSSLOC_GIT_DESCRIBE
#define CSSLOC_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cssloc;

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kConfig = 3, kFormat = 4, kIo = 5, kDiverged = 6 };

struct Common {
  std::string out;
  std::int64_t seed = -1;  // -1: CSSLOC_SEED, else 0
  int threads = 0;
  std::string backend = "omp";
};

std::uint64_t resolve_seed(std::int64_t flag) {
  if (flag >= 0) return static_cast<std::uint64_t>(flag);
  if (const char* env = std::getenv("CSSLOC_SEED")) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError(std::string("CSSLOC_SEED is not an integer: '") + env + "'");
    return v;
  }
  return 0;
}

kernels::Backend parse_backend(const std::string& s) {
  if (s == "serial") return kernels::Backend::serial;
  if (s == "omp") return kernels::Backend::omp;
  throw ConfigError("unknown backend '" + s + "'");
}

void write_text(const fs::path& p, const std::string& text) { io::atomic_write(p, text); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

class Run {
 public:
  Run(std::string sub, const Common& c) : sub_(std::move(sub)), out_(c.out), start_(std::chrono::steady_clock::now()) {
    if (out_.empty()) throw ConfigError("--out is required");
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create output directory '" + out_.string() + "': " + ec.message());
    if (c.threads < 0) throw ConfigError("--threads must be >= 0");
    if (c.threads > 0) omp_set_num_threads(c.threads);
    seed_ = resolve_seed(c.seed);
    backend_ = parse_backend(c.backend);
    config_["threads"] = c.threads;
    config_["backend"] = c.backend;
  }

  std::uint64_t seed() const { return seed_; }
  kernels::Backend backend() const { return backend_; }
  json& config() { return config_; }
  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return out_ / name;
  }

  void echo_config() const { std::cout << json{{"subcommand", sub_}, {"seed", seed_}, {"config", config_}}.dump(2) << "\n"; }

  void finish() {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    json m{{"subcommand", sub_},
           {"config", config_},
           {"seed", seed_},
           {"git_describe", CSSLOC_GIT_DESCRIBE},
           {"finished_at", stamp},
           {"wall_time_s", wall},
           {"outputs", outputs_}};
    write_text(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string sub_;
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  std::uint64_t seed_ = 0;
  kernels::Backend backend_ = kernels::Backend::omp;
  json config_ = json::object();
  std::vector<std::string> outputs_;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--out", c.out, "Output directory (created if missing)")->required();
  app->add_option("--seed", c.seed, "Run seed; falls back to $CSSLOC_SEED, then 0");
  app->add_option("--threads", c.threads, "Cap on worker threads (0 = OpenMP default)");
  app->add_option("--backend", c.backend, "Kernel backend: omp or serial");
}

sim::Scenario load_scenario(const std::string& preset, const std::string& config, std::uint64_t seed) {
  if (!config.empty()) {
    json j;
    try {
      j = json::parse(io::read_file(config));
    } catch (const json::exception& e) {
      throw ConfigError("scenario config '" + config + "': " + e.what());
    }
    if (!j.contains("seed")) j["seed"] = seed;
    if (!j.contains("preset")) j["preset"] = preset;
    return sim::scenario_from_json(j);
  }
  return sim::build_scenario(preset, sim::parse_preset(preset), seed);
}

// ---- simulate

struct SimulateOpts {
  Common c;
  std::string preset = "corridor";
  std::string config;
  int rps = 0;
  int images_per_rp = 10;
  int samples_per_image = 10;
  int queries_per_point = 4;
  std::string dynamics = "ambient";
};

int cmd_simulate(const SimulateOpts& o) {
  Run run("simulate", o.c);
  auto s = load_scenario(o.preset, o.config, run.seed());
  if (o.rps < 0) throw ConfigError("--rps must be positive");
  if (o.rps > 0) {
    if (static_cast<std::size_t>(o.rps) > s.rp_grid.size())
      throw ConfigError("--rps " + std::to_string(o.rps) + " exceeds the scenario's " +
                        std::to_string(s.rp_grid.size()) + " reference points");
    s.rp_grid.resize(static_cast<std::size_t>(o.rps));
  }
  sim::validate(s);
  if (o.images_per_rp < 2) throw ConfigError("--images-per-rp must be >= 2 (pre-training needs positive pairs)");
  if (o.samples_per_image < 1 || o.queries_per_point < 1) throw ConfigError("sample counts must be positive");
  const auto dyn = sim::parse_dynamics(o.dynamics);

  auto& cfg = run.config();
  cfg["preset"] = o.preset;
  cfg["scenario_config"] = o.config;
  cfg["rps"] = s.rp_grid.size();
  cfg["images_per_rp"] = o.images_per_rp;
  cfg["samples_per_image"] = o.samples_per_image;
  cfg["queries_per_point"] = o.queries_per_point;
  cfg["dynamics"] = {{"gain_drift_std", dyn.gain_drift_std},
                     {"noise_std", dyn.noise_std},
                     {"extra_path_prob", dyn.extra_path_prob}};
  run.echo_config();

  io::DatasetFile train;
  train.map = generate_dataset(s, static_cast<std::size_t>(o.images_per_rp),
                               static_cast<std::size_t>(o.samples_per_image), dyn);
  const auto images = train.map.images();
  train.stats = imaging::compute_stats(images);
  train.meta = {{"scenario", sim::scenario_to_json(s)}, {"generator", cfg}, {"seed", run.seed()}};

  io::DatasetFile queries;
  queries.map = generate_queries(s, static_cast<std::size_t>(o.queries_per_point),
                                 static_cast<std::size_t>(o.samples_per_image), dyn);
  queries.stats = train.stats;
  queries.meta = train.meta;

  io::write_dataset(run.path("dataset.cssd"), train);
  io::write_dataset(run.path("queries.cssd"), queries);
  write_text(run.path("scenario.json"), sim::scenario_to_json(s).dump(2) + "\n");
  std::cout << "simulated " << train.map.entries.size() << " fingerprints at " << train.map.rp_count() << " RPs, "
            << queries.map.entries.size() << " queries\n";
  run.finish();
  return kOk;
}

// ---- pretrain

struct PretrainOpts {
  Common c;
  std::string data;
  PretrainConfig p;
  bool no_projection = false;
};

int cmd_pretrain(PretrainOpts o) {
  Run run("pretrain", o.c);
  const auto ds = io::read_dataset(o.data);
  if (ds.map.kind != MapKind::radio_map) throw ConfigError("--data must be a radio map, not a query set");
  auto cfg = o.p;
  cfg.seed = run.seed();
  cfg.projection = !o.no_projection;
  cfg.backend = run.backend();
  cfg.input_norm = ds.stats;
  validate(cfg);

  auto& j = run.config();
  j["data"] = o.data;
  j["batch"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["tau"] = cfg.temperature;
  j["momentum"] = cfg.momentum;
  j["queue"] = cfg.queue_capacity;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["projection"] = cfg.projection;
  run.echo_config();

  const auto corpus = eval::make_corpus(ds.map, ds.stats);
  const auto res = pretrain(corpus, cfg, [](const EpochSummary& e) {
    std::cout << "epoch " << e.epoch << " loss " << fmt(e.loss) << " pos " << fmt(e.mean_positive_sim) << " neg "
              << fmt(e.mean_negative_sim) << "\n";
  });

  std::ostringstream log;
  log << "iteration,epoch,loss,mean_positive_sim,mean_negative_sim,embedding_variance\n";
  for (const auto& it : res.iterations)
    log << it.iteration << ',' << it.epoch << ',' << fmt(it.loss) << ',' << fmt(it.mean_positive_sim) << ','
        << fmt(it.mean_negative_sim) << ',' << fmt(it.embedding_variance) << '\n';
  write_text(run.path("train_log.csv"), log.str());

  j["collapsed"] = res.collapsed;
  j["collapse_reason"] = res.collapse_reason;
  const int epochs_done = res.epochs.empty() ? 0 : res.epochs.back().epoch;
  io::write_checkpoint(run.path("encoder.cssc"), io::encoder_checkpoint(res.query, j, epochs_done));
  io::write_checkpoint(run.path("key_encoder.cssc"), io::encoder_checkpoint(res.key, j, epochs_done));
  if (res.collapsed) std::cout << "collapse: " << res.collapse_reason << "\n";
  run.finish();
  return kOk;
}

// ---- probe

struct ProbeOpts {
  Common c;
  std::string encoder;
  std::string data;
  double density = 1.0;
  ProbeConfig p;
};

int cmd_probe(ProbeOpts o) {
  Run run("probe", o.c);
  const auto enc = io::encoder_from_checkpoint(io::read_checkpoint(o.encoder));
  const auto ds = io::read_dataset(o.data);
  if (ds.map.kind != MapKind::radio_map) throw ConfigError("--data must be a radio map, not a query set");
  const auto map = select_density(ds.map, o.density, run.seed());
  auto cfg = o.p;
  cfg.seed = run.seed();
  cfg.backend = run.backend();

  auto& j = run.config();
  j["encoder"] = o.encoder;
  j["data"] = o.data;
  j["density"] = o.density;
  j["rps_used"] = map.rp_count();
  j["rps_total"] = ds.map.rp_count();
  j["epochs"] = cfg.epochs;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["batch"] = cfg.batch_size;
  j["linear_probe"] = cfg.linear_probe;
  run.echo_config();

  const auto pred = train_predictor(enc, map, cfg);
  const double loss = predictor_loss(enc, pred, map);
  std::cout << "trained on " << map.rp_count() << " of " << ds.map.rp_count() << " RPs, final loss " << fmt(loss)
            << "\n";
  j["final_loss"] = loss;
  io::write_checkpoint(run.path("predictor.cssc"), io::predictor_checkpoint(pred, map, j));
  run.finish();
  return kOk;
}

// ---- localize

struct LocalizeOpts {
  Common c;
  std::string encoder;
  std::string predictor;
  std::string queries;
};

int cmd_localize(const LocalizeOpts& o) {
  Run run("localize", o.c);
  const auto enc = io::encoder_from_checkpoint(io::read_checkpoint(o.encoder));
  const auto ck = io::read_checkpoint(o.predictor);
  const auto pred = io::predictor_from_checkpoint(ck);
  const auto map = io::predictor_radio_map(ck);
  const auto qs = io::read_dataset(o.queries);
  auto& j = run.config();
  j["encoder"] = o.encoder;
  j["predictor"] = o.predictor;
  j["queries"] = o.queries;
  run.echo_config();

  const auto imgs = qs.map.images();
  const auto est = localize_all(enc, pred, imgs, map, run.backend());
  std::ostringstream csv;
  csv << "id,x_hat,y_hat,error,top_label\n";
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double err = sim::distance(est[i].coords, qs.map.location(qs.map.entries[i]));
    sq += err * err;
    csv << i << ',' << fmt(est[i].coords.x) << ',' << fmt(est[i].coords.y) << ',' << fmt(err) << ','
        << est[i].top_label << '\n';
  }
  write_text(run.path("estimates.csv"), csv.str());
  if (!est.empty()) std::cout << "rmse " << fmt(std::sqrt(sq / static_cast<double>(est.size()))) << " m\n";
  run.finish();
  return kOk;
}

// ---- evaluate

struct EvaluateOpts {
  Common c;
  std::string estimates;
  std::string truth;
};

std::vector<std::pair<std::size_t, sim::Point>> read_estimates(const std::string& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("id,x_hat,y_hat", 0) != 0)
    throw FormatError("estimates file '" + path + "' lacks the id,x_hat,y_hat header", 0);
  std::vector<std::pair<std::size_t, sim::Point>> rows;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, x, y;
    if (!std::getline(ls, id, ',') || !std::getline(ls, x, ',') || !std::getline(ls, y, ','))
      throw FormatError("malformed estimates row", offset);
    try {
      rows.push_back({std::stoul(id), {std::stod(x), std::stod(y)}});
    } catch (const std::exception&) {
      throw FormatError("malformed estimates row", offset);
    }
    offset += line.size() + 1;
  }
  return rows;
}

int cmd_evaluate(const EvaluateOpts& o) {
  Run run("evaluate", o.c);
  const auto rows = read_estimates(o.estimates);
  const auto qs = io::read_dataset(o.truth);
  if (rows.empty()) throw ConfigError("no estimates to evaluate");
  std::vector<sim::Point> est, truth;
  for (const auto& [id, p] : rows) {
    if (id >= qs.map.entries.size())
      throw ConfigError("estimate id " + std::to_string(id) + " has no ground truth in '" + o.truth + "'");
    est.push_back(p);
    truth.push_back(qs.map.location(qs.map.entries[id]));
  }
  auto& j = run.config();
  j["estimates"] = o.estimates;
  j["truth"] = o.truth;
  run.echo_config();

  const auto rep = eval::compute_report(est, truth);
  std::ostringstream cdf;
  cdf << "error,fraction\n";
  for (const auto& [e, f] : rep.cdf) cdf << fmt(e) << ',' << fmt(f) << '\n';
  write_text(run.path("cdf.csv"), cdf.str());
  write_text(run.path("cdf.svg"), eval::cdf_svg({{"cssloc", rep}}));
  json summary{{"config", j}, {"seed", run.seed()}, {"metrics", eval::to_json(rep)}};
  write_text(run.path("summary.json"), summary.dump(2) + "\n");
  std::cout << "rmse " << fmt(rep.rmse) << " mae " << fmt(rep.mae) << " median " << fmt(rep.median) << " p80 "
            << fmt(rep.p80) << "\n";
  run.finish();
  return kOk;
}

// ---- sweep

struct SweepOpts {
  Common c;
  std::string axis;
  std::string grid;
  int seeds = 5;
  std::string preset = "corridor";
  std::string encoder;
  int epochs = 30;
  int probe_epochs = 100;
};

int cmd_sweep(const SweepOpts& o) {
  Run run("sweep", o.c);
  const auto axis = eval::parse_axis(o.axis);
  const auto values = eval::parse_grid(o.grid);
  if (o.seeds < 1) throw ConfigError("--seeds must be >= 1");
  if (o.epochs < 1 || o.probe_epochs < 1) throw ConfigError("epoch counts must be positive");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < o.seeds; ++i) seeds.push_back(run.seed() + static_cast<std::uint64_t>(i));

  auto setup = eval::default_setup(sim::parse_preset(o.preset));
  eval::SweepOptions so;
  so.sweep_epochs = o.epochs;
  so.seeds = seeds;
  so.pretrain.backend = run.backend();
  so.probe.backend = run.backend();
  so.probe.linear_probe = true;
  so.probe.epochs = o.probe_epochs;

  auto& j = run.config();
  j["axis"] = o.axis;
  j["grid"] = values;
  j["seeds"] = seeds;
  j["preset"] = o.preset;
  j["encoder"] = o.encoder;
  j["sweep_epochs"] = o.epochs;
  j["probe_epochs"] = o.probe_epochs;
  j["linear_probe"] = true;
  run.echo_config();

  eval::SweepResult res;
  std::string table;
  if (axis == eval::SweepAxis::density) {
    const auto data = eval::make_experiment(setup, run.seed());
    EncoderState<float> enc;
    if (!o.encoder.empty()) {
      enc = io::encoder_from_checkpoint(io::read_checkpoint(o.encoder));
    } else {
      PretrainConfig pc = so.pretrain;
      pc.epochs = o.epochs;
      pc.seed = run.seed();
      pc.input_norm = data.stats;
      enc = pretrain(eval::make_corpus(data.train, data.stats), pc).query;
    }
    res = eval::run_density_sweep(values, data, enc, seeds, so.probe);
    table = "density.csv";
  } else {
    res = eval::run_param_sweep(axis, values, setup, so);
    table = "sweeps.csv";
  }

  std::ostringstream csv;
  csv << "axis,value,seed,rmse,collapsed\n";
  for (std::size_t v = 0; v < res.values.size(); ++v) {
    for (std::size_t s = 0; s < res.per_seed_rmse[v].size(); ++s)
      csv << res.axis << ',' << fmt(res.values[v]) << ',' << seeds[s] << ',' << fmt(res.per_seed_rmse[v][s]) << ','
          << (res.per_seed_collapsed[v][s] ? 1 : 0) << '\n';
    csv << res.axis << ',' << fmt(res.values[v]) << ",mean," << fmt(res.rmse[v]) << ','
        << (res.collapsed[v] ? 1 : 0) << '\n';
    std::cout << res.axis << " " << fmt(res.values[v]) << ": rmse " << fmt(res.rmse[v])
              << (res.collapsed[v] ? " (collapse)" : "") << "\n";
  }
  write_text(run.path(table), csv.str());
  write_text(run.path("summary.json"),
             json{{"config", j}, {"seed", run.seed()}, {"result", eval::to_json(res)}}.dump(2) + "\n");
  run.finish();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cssloc: self-supervised CSI fingerprint localization on simulated channels"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.footer(
      "Exit codes: 0 ok, 2 usage, 3 invalid config or grid, 4 file format rejected, 5 I/O failure,\n"
      "6 training diverged. $CSSLOC_SEED supplies the seed when --seed is absent.");

  SimulateOpts so;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a radio map and held-out query set");
  add_common(sim_cmd, so.c);
  sim_cmd->add_option("--preset", so.preset, "Scenario preset: corridor, hall, lounge");
  sim_cmd->add_option("--config", so.config, "Scenario JSON overriding preset fields");
  sim_cmd->add_option("--rps", so.rps, "Keep only the first N reference points (0 = all)");
  sim_cmd->add_option("--images-per-rp", so.images_per_rp, "CSI images per reference point");
  sim_cmd->add_option("--samples-per-image", so.samples_per_image, "CSI samples stitched into one image");
  sim_cmd->add_option("--queries-per-point", so.queries_per_point, "Query images per held-out test point");
  sim_cmd->add_option("--dynamics", so.dynamics, "none, ambient, or gain_drift,noise,extra_path_prob");

  PretrainOpts po;
  auto* pre_cmd = app.add_subcommand("pretrain", "Contrastive pre-training of the feature encoder");
  add_common(pre_cmd, po.c);
  pre_cmd->add_option("--data", po.data, "Radio map dataset (.cssd)")->required();
  pre_cmd->add_option("--batch", po.p.batch_size, "Batch size");
  pre_cmd->add_option("--epochs", po.p.epochs, "Training epochs");
  pre_cmd->add_option("--tau", po.p.temperature, "InfoNCE temperature");
  pre_cmd->add_option("--momentum", po.p.momentum, "Key encoder momentum, in [0, 1)");
  pre_cmd->add_option("--queue", po.p.queue_capacity, "Key queue capacity (>= batch)");
  pre_cmd->add_option("--lr", po.p.lr, "Adam learning rate");
  pre_cmd->add_option("--weight-decay", po.p.weight_decay, "Decoupled weight decay");
  pre_cmd->add_flag("--no-projection", po.no_projection, "Drop the projection head");

  ProbeOpts pr;
  auto* probe_cmd = app.add_subcommand("probe", "Train a location predictor on a frozen encoder");
  add_common(probe_cmd, pr.c);
  probe_cmd->add_option("--encoder", pr.encoder, "Encoder checkpoint (.cssc)")->required();
  probe_cmd->add_option("--data", pr.data, "Labeled radio map (.cssd)")->required();
  probe_cmd->add_option("--density", pr.density, "Fraction of RPs used for training, in (0, 1]");
  probe_cmd->add_option("--epochs", pr.p.epochs, "Predictor training epochs");
  probe_cmd->add_option("--lr", pr.p.lr, "Adam learning rate");
  probe_cmd->add_option("--weight-decay", pr.p.weight_decay, "Decoupled weight decay");
  probe_cmd->add_option("--batch", pr.p.batch_size, "Minibatch size");
  probe_cmd->add_flag("--linear-probe", pr.p.linear_probe, "Single softmax layer instead of the 100-32 MLP");

  LocalizeOpts lo;
  auto* loc_cmd = app.add_subcommand("localize", "Estimate query locations; writes estimates.csv");
  add_common(loc_cmd, lo.c);
  loc_cmd->add_option("--encoder", lo.encoder, "Encoder checkpoint (.cssc)")->required();
  loc_cmd->add_option("--predictor", lo.predictor, "Predictor checkpoint (.cssc)")->required();
  loc_cmd->add_option("--queries", lo.queries, "Query dataset (.cssd) with ground truth")->required();

  EvaluateOpts eo;
  auto* eval_cmd = app.add_subcommand("evaluate", "Error statistics, CDF table and plot");
  add_common(eval_cmd, eo.c);
  eval_cmd->add_option("--estimates", eo.estimates, "estimates.csv from localize")->required();
  eval_cmd->add_option("--truth", eo.truth, "Query dataset (.cssd) holding ground truth")->required();

  SweepOpts sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Density or pre-training parameter sweep");
  add_common(sweep_cmd, sw.c);
  sweep_cmd->add_option("--axis", sw.axis, "density, images, batch, momentum, temperature, projection")->required();
  sweep_cmd->add_option("--grid", sw.grid, "Comma-separated axis values")->required();
  sweep_cmd->add_option("--seeds", sw.seeds, "Number of seeds, counted up from --seed");
  sweep_cmd->add_option("--preset", sw.preset, "Scenario preset");
  sweep_cmd->add_option("--encoder", sw.encoder, "Encoder for the density axis (pre-trained here if absent)");
  sweep_cmd->add_option("--epochs", sw.epochs, "Pre-training epochs per grid point");
  sweep_cmd->add_option("--probe-epochs", sw.probe_epochs, "Linear-probe epochs per grid point");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*sim_cmd) return cmd_simulate(so);
    if (*pre_cmd) return cmd_pretrain(po);
    if (*probe_cmd) return cmd_probe(pr);
    if (*loc_cmd) return cmd_localize(lo);
    if (*eval_cmd) return cmd_evaluate(eo);
    if (*sweep_cmd) return cmd_sweep(sw);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFormat;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << " (iteration " << e.iteration() << ")\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kUsage;
}
