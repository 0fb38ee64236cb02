// aismerge: generate data, train predictors, run closed-loop simulations and
// Monte-Carlo safety evaluations from one JSON config plus flag overrides.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aismerge/aismerge.hpp"
#include "aismerge/config.hpp"

namespace fs = std::filesystem;
using namespace aismerge;

namespace {

// Output files are written under a temporary name and renamed only once the
// whole subcommand has succeeded; otherwise they are removed.
class Outputs {
 public:
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : paths_) fs::remove(p + ".partial", ec);
  }

  std::string add(const std::string& path) {
    paths_.push_back(path);
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) {
      std::error_code ec;
      fs::create_directories(parent, ec);
      if (ec) throw IoError(parent.string(), "cannot create directory: " + ec.message());
    }
    return path + ".partial";
  }

  void commit() {
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::rename(p + ".partial", p, ec);
      if (ec) throw IoError(p, "cannot finalize output: " + ec.message());
    }
    committed_ = true;
  }

  const std::vector<std::string>& paths() const { return paths_; }

 private:
  std::vector<std::string> paths_;
  bool committed_ = false;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = default_jobs();
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) {
    c.seed = *g.seed;
    c.train.seed = *g.seed;
  }
  if (!g.out.empty()) c.paths.out_dir = g.out;
  c.validate();
  return c;
}

Metadata metadata(const RunConfig& c, const std::string& command) {
  return {{"tool", std::string("aismerge ") + kToolVersion},
          {"command", command},
          {"seed", std::to_string(c.seed)},
          {"config_hash", config_hash(c)}};
}

std::string out_path(const RunConfig& c, const std::string& name) {
  return (fs::path(c.paths.out_dir) / name).string();
}

std::string require_path(const std::string& flag_value, const std::string& config_value,
                         const char* what) {
  const std::string p = flag_value.empty() ? config_value : flag_value;
  if (p.empty()) throw UsageError(std::string("missing ") + what + " path");
  return p;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw IoError(path, "no such file");
}

template <class Fn>
void write_to(Outputs& outs, const std::string& path, Fn&& fn) {
  write_file(outs.add(path), fn);
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string mode = "safe";
  std::size_t n = 0;  // 0: config value
  std::string file;
};

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  RunConfig c = resolve_config(g);
  const GeneratorMode mode = generator_mode_from_string(a.mode);
  const std::size_t n = a.n ? a.n : c.episodes;
  const GeneratedDataset gen = generate_dataset(mode, n, c.seed, c.scenario, c.style, g.jobs,
                                                c.evaluation.tau_safe);
  const std::string path = a.file.empty() ? out_path(c, "dataset_" + a.mode + ".csv") : a.file;
  Outputs outs;
  Metadata meta = metadata(c, "generate");
  meta.emplace_back("mode", a.mode);
  meta.emplace_back("episodes", std::to_string(n));
  write_to(outs, path, [&](std::ostream& o) { write_trajectory_csv(o, gen.dataset, meta); });
  outs.commit();
  std::printf("episodes: %zu\nunsafe fraction: %.4f\nstep-capped: %zu\nwrote %s\n", n,
              gen.unsafe_fraction(), gen.capped, path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string variant = "merge";
  std::string model_out;
  int epochs = 0;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig c = resolve_config(g);
  if (a.epochs > 0) c.train.epochs = a.epochs;
  const std::string data_path = require_path(a.dataset, c.paths.dataset, "dataset");
  require_file(data_path);
  const Variant v = variant_from_string(a.variant);
  const Dataset data = load_trajectory_csv(data_path);
  if (!data.empty() && data.episodes.front().schema != schema_of(v)) {
    throw ConfigError("variant mismatch: " + to_string(v) + " model cannot train on " +
                      data_path);
  }
  const double dt = data.empty() ? c.scenario.dt : data.episodes.front().dt;
  const TrainResult res = train(data, v, c.train, dt, [](const EpochRecord& r) {
    if (r.epoch % 10 == 0) {
      std::printf("epoch %4d  train %.6g  validation %.6g\n", r.epoch, r.train_shifted,
                  r.validation_shifted);
      std::fflush(stdout);
    }
  });
  for (const auto& w : res.report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  const std::string model_path = a.model_out.empty() ? out_path(c, "model.json") : a.model_out;
  const std::string loss_path =
      (fs::path(model_path).parent_path() / (fs::path(model_path).stem().string() + "_loss.csv"))
          .string();
  Outputs outs;
  write_to(outs, model_path, [&](std::ostream& o) { o << model_to_json(res.model).dump(1) << '\n'; });
  write_to(outs, loss_path, [&](std::ostream& o) {
    Metadata meta = metadata(c, "train");
    meta.emplace_back("dataset", data_path);
    meta.emplace_back("best_epoch", std::to_string(res.report.best_epoch));
    meta.emplace_back("skipped_episodes", std::to_string(res.report.skipped_episodes));
    write_metadata(o, meta);
    o << "epoch,train_loss,train_shifted,validation_loss,validation_shifted\n";
    for (const auto& r : res.report.epochs) {
      o << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_shifted)
        << ',' << format_double(r.validation_loss) << ',' << format_double(r.validation_shifted)
        << '\n';
    }
  });
  outs.commit();
  const auto& rep = res.report;
  std::printf("train episodes: %zu, validation episodes: %zu, skipped: %zu\n", rep.train_episodes,
              rep.validation_episodes, rep.skipped_episodes);
  std::printf("validation squared error: %.6g -> %.6g (best epoch %d)\nwrote %s\n",
              rep.initial_validation_shifted(), rep.best_validation_shifted(), rep.best_epoch,
              model_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string model;
  std::string dataset;
  bool stub_oracle = false;
  std::string variant = "merge";  // for the oracle stub
};

nlohmann::json rmse_json(const RmseReport& r, Variant v) {
  nlohmann::json j{{"variant", to_string(v)},
                   {"episodes", r.episodes},
                   {"predictions", r.predictions},
                   {"position_rmse", r.position},
                   {"position_rmse_per_step", r.position_per_step}};
  if (v == Variant::kNgsim) {
    j["lateral_rmse"] = r.lateral;
  } else {
    j["speed_rmse"] = r.speed;
    j["speed_rmse_per_step"] = r.speed_per_step;
  }
  return j;
}

template <Predictor P>
void write_predictions(std::ostream& o, const P& model, const Dataset& data, const Metadata& meta) {
  write_metadata(o, meta);
  const Variant v = model.variant();
  const int H = model.horizon();
  if (v == Variant::kNgsim) {
    o << "episode_id,t,lat_ref,lat_pred,lon_ref,lon_pred\n";
  } else {
    o << "episode_id,t,k,z_ref,z_pred,v_ref,v_pred\n";
  }
  for (std::size_t e = 0; e < data.size(); ++e) {
    const Episode& ep = data.episodes[e];
    const std::string id = ep.meta.id.empty() ? std::to_string(e) : ep.meta.id;
    auto s = model.init_state();
    const std::size_t ahead = v == Variant::kNgsim ? 1 : static_cast<std::size_t>(H);
    for (std::size_t t = 0; t < ep.length(); ++t) {
      s = model.encode(s, ep.observations[t], ep.previous_action(t));
      if (ep.future(t) < ahead) continue;
      const HorizonPrediction p = model.decode(s, ep.decoder_action(t));
      const std::string time = format_double(static_cast<double>(t) * ep.dt);
      if (v == Variant::kNgsim) {
        const Observation& y = ep.observations[t + 1];
        o << id << ',' << time << ',' << format_double(y[ngsim_obs::kRampLat]) << ','
          << format_double(p.lateral[0]) << ',' << format_double(y[ngsim_obs::kRampLon]) << ','
          << format_double(p.z_hat[0]) << '\n';
        continue;
      }
      for (int k = 1; k <= H; ++k) {
        const Observation& y = ep.observations[t + static_cast<std::size_t>(k)];
        o << id << ',' << time << ',' << k << ',' << format_double(y[merge_obs::kZ2]) << ','
          << format_double(p.z_hat[k - 1]) << ',' << format_double(y[merge_obs::kV2]) << ','
          << format_double(p.v_hat[k - 1]) << '\n';
      }
    }
  }
}

template <Predictor P>
int run_predict(const RunConfig& c, const P& model, const Dataset& data, const std::string& label,
                const std::string& data_path) {
  for (const auto& ep : data.episodes) require_schema(ep, model.variant());
  const RmseReport rep = evaluate_rmse(model, data);
  Metadata meta = metadata(c, "predict");
  meta.emplace_back("model", label);
  meta.emplace_back("dataset", data_path);
  nlohmann::json report{{"metadata", metadata_json(meta)}, {"rmse", rmse_json(rep, model.variant())}};
  if (is_merge(model.variant())) {
    const ApBounds b = estimate_ap_bounds(model, data, c.scenario);
    report["ap_bounds"] = {{"epsilon_hat", b.epsilon_hat}, {"delta_hat", b.delta_hat}, {"steps", b.steps}};
  }
  Outputs outs;
  write_to(outs, out_path(c, "predictions.csv"),
           [&](std::ostream& o) { write_predictions(o, model, data, meta); });
  write_to(outs, out_path(c, "rmse.json"), [&](std::ostream& o) { o << report.dump(2) << '\n'; });
  outs.commit();
  std::printf("position RMSE: %.6g m\n", rep.position);
  if (is_merge(model.variant())) {
    std::printf("speed RMSE: %.6g m/s\n", rep.speed);
    std::printf("epsilon_hat: %.6g  delta_hat: %.6g\n", report["ap_bounds"]["epsilon_hat"].get<double>(),
                report["ap_bounds"]["delta_hat"].get<double>());
  } else {
    std::printf("lateral RMSE: %.6g m\n", rep.lateral);
  }
  std::printf("wrote %s\n", out_path(c, "rmse.json").c_str());
  return 0;
}

int cmd_predict(const Globals& g, const PredictArgs& a) {
  RunConfig c = resolve_config(g);
  const std::string data_path = require_path(a.dataset, c.paths.dataset, "dataset");
  require_file(data_path);
  const Dataset data = load_trajectory_csv(data_path);
  if (a.stub_oracle) {
    const OracleModel oracle(data, variant_from_string(a.variant), c.scenario.H);
    return run_predict(c, oracle, data, "oracle", data_path);
  }
  const std::string model_path = require_path(a.model, c.paths.model, "model");
  require_file(model_path);
  const AisModel model = load_model(model_path);
  return run_predict(c, model, data, model_path, data_path);
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string model;
  std::string preset = "aggressive";
  std::vector<double> weights;  // custom: theta_accel theta_speed theta_prox v_des lookahead
  std::optional<double> rho;
  int j_max = 0;
  std::string file;
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  RunConfig c = resolve_config(g);
  if (a.rho) c.scenario.rho = *a.rho;
  const int j_max = a.j_max > 0 ? a.j_max : c.evaluation.j_max;
  const std::string model_path = require_path(a.model, c.paths.model, "model");
  require_file(model_path);
  const AisModel model = load_model(model_path);

  DriverPreset p;
  if (a.preset == "custom") {
    if (a.weights.size() != 5) {
      throw UsageError("--weights needs 5 values: theta_accel theta_speed theta_prox v_des lookahead");
    }
    p = c.preset("aggressive");
    p.name = "custom";
    p.weights = {a.weights[0], a.weights[1], a.weights[2], a.weights[3],
                 static_cast<int>(std::lround(a.weights[4]))};
  } else {
    p = c.preset(a.preset);
  }
  c.scenario.validate();
  const InitialConditions ic = preset_initial_conditions(p, c.seed);
  MpcController<AisModel> ctrl(model, c.scenario, j_max);
  const EpisodeLog log = run_episode(ctrl, p.weights, ic, c.scenario, c.seed, c.evaluation.tau_safe);

  const std::string path = a.file.empty() ? out_path(c, "episode_" + p.name + ".csv") : a.file;
  Outputs outs;
  Metadata meta = metadata(c, "simulate");
  meta.emplace_back("model", model_path);
  meta.emplace_back("preset", p.name);
  meta.emplace_back("j_max", std::to_string(j_max));
  write_to(outs, path, [&](std::ostream& o) { write_episode_csv(o, log, meta); });
  outs.commit();
  std::printf("preset: %s\nCAV crossing: %s s\nHDV crossing: %s s\nfirst: %s\nsafe: %s\nwrote %s\n",
              p.name.c_str(), format_optional(log.cav_crossing).c_str(),
              format_optional(log.hdv_crossing).c_str(),
              !log.cav_crossing || !log.hdv_crossing ? "n/a"
              : *log.cav_crossing < *log.hdv_crossing ? "CAV"
                                                      : "HDV",
              log.safe ? "yes" : "no", path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> models;
  std::size_t n = 0;
  std::vector<double> rho;
  int j_max = 0;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
  RunConfig c = resolve_config(g);
  if (a.n) c.evaluation.n = a.n;
  if (!a.rho.empty()) c.evaluation.rho = a.rho;
  if (a.j_max > 0) c.evaluation.j_max = a.j_max;
  c.validate();
  std::vector<std::string> paths = a.models;
  if (paths.empty() && !c.paths.model.empty()) paths.push_back(c.paths.model);
  if (paths.empty()) throw UsageError("missing model path");
  std::vector<std::pair<std::string, AisModel>> models;
  for (const auto& p : paths) {
    require_file(p);
    models.emplace_back(fs::path(p).stem().string(), load_model(p));
  }
  SafetyTable all;
  for (const auto& [label, m] : models) {
    MonteCarloOptions opt;
    opt.j_max = c.evaluation.j_max;
    opt.tau_safe = c.evaluation.tau_safe;
    opt.jobs = g.jobs;
    opt.label = label;
    const SafetyTable t = monte_carlo(m, c.evaluation.rho, c.evaluation.n, c.seed, c.scenario, c.style, opt);
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
  }
  Metadata meta = metadata(c, "evaluate");
  meta.emplace_back("n", std::to_string(c.evaluation.n));
  meta.emplace_back("tau_safe", format_double(c.evaluation.tau_safe));
  meta.emplace_back("j_max", std::to_string(c.evaluation.j_max));
  Outputs outs;
  write_to(outs, out_path(c, "safety_table.json"),
           [&](std::ostream& o) { o << table_json(all, meta).dump(2) << '\n'; });
  write_to(outs, out_path(c, "safety_table.txt"), [&](std::ostream& o) {
    write_metadata(o, meta);
    o << table_text(all);
  });
  outs.commit();
  std::fputs(table_text(all).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned-predictor MPC for a two-vehicle highway merge"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.set_version_flag("--version", std::string(kToolVersion));

  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration (flags override it)")
      ->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { g.seed = s; },
                                         "Master seed (default: config seed, 7)");
  app.add_option("--out", g.out, "Output directory (default: config paths.out_dir, .)");
  app.add_option("--jobs", g.jobs, "Worker threads for episode loops")
      ->capture_default_str()
      ->check(CLI::Range(1u, 1024u));

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Simulate episodes and write a merge trajectory CSV");
  gen->add_option("--mode", ga.mode, "Data-collection strategy")
      ->capture_default_str()
      ->check(CLI::IsMember({"safe", "exploratory"}));
  gen->add_option("--n", ga.n, "Number of episodes (default: config episodes, 2000)")
      ->check(CLI::PositiveNumber);
  gen->add_option("--file", ga.file, "Output file (default: OUT/dataset_MODE.csv)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train an encoder-decoder predictor");
  tr->add_option("--dataset", ta.dataset, "Trajectory CSV (default: config paths.dataset)");
  tr->add_option("--variant", ta.variant, "Model architecture")
      ->capture_default_str()
      ->check(CLI::IsMember({"merge", "merge-positions", "ngsim"}));
  tr->add_option("--model-out", ta.model_out, "Model file (default: OUT/model.json)");
  tr->add_option("--epochs", ta.epochs, "Epochs (default: config train.epochs, 100)")
      ->check(CLI::PositiveNumber);

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Replay a dataset through a model and report RMSE");
  pr->add_option("--model", pa.model, "Model file (default: config paths.model)");
  pr->add_option("--dataset", pa.dataset, "Trajectory CSV (default: config paths.dataset)");
  pr->add_flag("--stub-oracle", pa.stub_oracle, "Use a ground-truth oracle instead of a model");
  pr->add_option("--variant", pa.variant, "Oracle variant when --stub-oracle is set")
      ->capture_default_str()
      ->check(CLI::IsMember({"merge", "merge-positions", "ngsim"}));

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run one closed-loop episode with iterative MPC");
  sim->add_option("--model", sa.model, "Model file (default: config paths.model)");
  sim->add_option("--preset", sa.preset, "Human driver style")
      ->capture_default_str()
      ->check(CLI::IsMember({"aggressive", "conservative", "custom"}));
  sim->add_option("--weights", sa.weights,
                  "Custom style: theta_accel theta_speed theta_prox v_des lookahead")
      ->expected(5);
  sim->add_option_function<double>("--rho", [&](const double& r) { sa.rho = r; },
                                   "Reaction-delay parameter, s (default: config, 1.0)");
  sim->add_option("--j-max", sa.j_max, "Predict-solve iterations per step (default: config, 3)")
      ->check(CLI::PositiveNumber);
  sim->add_option("--file", sa.file, "Output file (default: OUT/episode_PRESET.csv)");

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Monte-Carlo safety table over rho values");
  ev->add_option("--model", ea.models, "Model file(s); repeat for several models");
  ev->add_option("--n", ea.n, "Episodes per rho value (default: config, 500)")
      ->check(CLI::PositiveNumber);
  ev->add_option("--rho", ea.rho, "Rho values (default: config, 0.6 0.8 1.0)");
  ev->add_option("--j-max", ea.j_max, "Predict-solve iterations per step (default: config, 3)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_generate(g, ga);
    if (*tr) return cmd_train(g, ta);
    if (*pr) return cmd_predict(g, pa);
    if (*sim) return cmd_simulate(g, sa);
    if (*ev) return cmd_evaluate(g, ea);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
