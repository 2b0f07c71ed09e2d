// Command-line entry point: training, evaluation, dynamics diagnostics and
// default-config inspection for the TIDE engine.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "tide/checkpoint.hpp"
#include "tide/config.hpp"
#include "tide/data.hpp"
#include "tide/metrics.hpp"
#include "tide/model.hpp"
#include "tide/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitCheckpoint = 4;

std::string resolve_data_dir(const std::string& from_config, const std::string& from_cli) {
  if (!from_cli.empty()) return from_cli;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv("TIDE_DATA_DIR")) return env;
  return "data/mnist-subset";
}

tide::Dataset load_split(const tide::RunConfig& cfg, const std::string& data_dir, bool train) {
  using namespace tide;
  Dataset ds;
  if (cfg.data.dataset == "mnist" || cfg.data.dataset == "fashion-mnist") {
    const std::string img = train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const std::string lab = train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    ds = load_idx((fs::path(data_dir) / img).string(), (fs::path(data_dir) / lab).string());
    ds.classes = 10;
  } else if (cfg.data.dataset == "blobs" || cfg.data.dataset == "bars") {
    const SyntheticKind kind =
        cfg.data.dataset == "blobs" ? SyntheticKind::blobs : SyntheticKind::bars;
    const int n = train ? (cfg.data.train_count > 0 ? cfg.data.train_count : 512)
                        : (cfg.data.test_count > 0 ? cfg.data.test_count : 256);
    ds = synthetic_task(kind, n, cfg.train.seed + (train ? 0 : 1));
  } else {
    throw std::runtime_error("unknown dataset: " + cfg.data.dataset);
  }
  const int limit = train ? cfg.data.train_count : cfg.data.test_count;
  if (limit > 0 && limit < ds.size()) {
    Dataset cut;
    cut.classes = ds.classes;
    cut.split = ds.split;
    cut.labels.assign(ds.labels.begin(), ds.labels.begin() + limit);
    const int64_t stride = ds.images.size() / ds.size();
    cut.images = Tensor({limit, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
    for (int64_t i = 0; i < limit * stride; ++i) cut.images[i] = ds.images[i];
    ds = cut;
  }
  ds.split = train ? "train" : "test";
  return ds;
}

int cmd_train(const std::string& config_path, const std::string& resume, long long seed_override,
              const std::string& data_dir_cli) {
  using namespace tide;
  RunConfig cfg;
  try {
    cfg = parse_config_file(config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (seed_override >= 0) {
    cfg.train.seed = static_cast<uint64_t>(seed_override);
    cfg.model.seed = cfg.train.seed;
  }

  Dataset train_ds, test_ds;
  try {
    const std::string dir = resolve_data_dir(cfg.data.data_dir, data_dir_cli);
    train_ds = load_split(cfg, dir, true);
    test_ds = load_split(cfg, dir, false);
    train_ds = normalize(train_ds, cfg.data.mean, cfg.data.std_dev);
    test_ds = normalize(test_ds, cfg.data.mean, cfg.data.std_dev);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  if (cfg.model.classes != train_ds.classes) {
    std::cerr << "error: config classes (" << cfg.model.classes << ") != dataset classes ("
              << train_ds.classes << ")\n";
    return kExitConfig;
  }

  TideModel model(cfg.model);
  Trainer trainer(model, cfg.loss, cfg.train);
  long long start_step = 0;
  if (!resume.empty()) {
    try {
      CheckpointMeta meta = load_checkpoint(resume, model.registry, &trainer.optimizer);
      start_step = meta.step;
      std::cerr << "resumed from " << resume << " at step " << start_step << "\n";
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitCheckpoint;
    }
  }

  fs::create_directories(cfg.train.out_dir);
  const std::string hash = config_hash(cfg);
  MetricsWriter metrics;
  metrics.open((fs::path(cfg.train.out_dir) / "metrics.jsonl").string(), hash);
  {
    std::ofstream cfg_out(fs::path(cfg.train.out_dir) / "config.ini");
    cfg_out << "# config_hash=" << hash << "\n" << dump_config(cfg);
  }

  Batcher batcher(train_ds.size(), cfg.train.batch, cfg.train.seed);
  const auto t0 = std::chrono::steady_clock::now();
  for (long long step = start_step + 1; step <= cfg.train.total_steps; ++step) {
    auto idx = batcher.next();
    StepMetrics m =
        trainer.train_step(gather_batch(train_ds, idx), gather_labels(train_ds, idx), step);
    metrics.append(m);
    if (auto report = trainer.stability_monitor(step, cfg.train.monitor_interval))
      metrics.append_spectral(*report);
    if (cfg.train.eval_interval > 0 && step % cfg.train.eval_interval == 0) {
      EvalSummary ev = evaluate(model, test_ds, cfg.train.batch);
      metrics.append_eval(step, ev, "test");
      const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
      std::cerr << "step " << step << " loss " << m.loss_total << " test-acc " << ev.accuracy
                << " rho " << m.rho_ei << " (" << dt.count() << "s)\n";
    }
    if (cfg.train.checkpoint_interval > 0 && step % cfg.train.checkpoint_interval == 0) {
      CheckpointMeta meta{dump_config(cfg), cfg.train.seed, step};
      save_checkpoint(
          (fs::path(cfg.train.out_dir) / ("ckpt_" + std::to_string(step) + ".tide")).string(),
          meta, model.registry, &trainer.optimizer);
    }
    metrics.flush();
  }
  CheckpointMeta meta{dump_config(cfg), cfg.train.seed, cfg.train.total_steps};
  save_checkpoint((fs::path(cfg.train.out_dir) / "ckpt_final.tide").string(), meta,
                  model.registry, &trainer.optimizer);
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& corrupt_list, const std::string& out_path,
             long long seed_override, const std::string& split) {
  using namespace tide;
  RunConfig cfg;
  TideModel* model_ptr = nullptr;
  try {
    // the checkpoint carries its config snapshot
    std::ifstream probe(ckpt_path, std::ios::binary);
    if (!probe) throw CheckpointError("checkpoint: cannot open " + ckpt_path);
    probe.close();
    // two-phase: read meta first (needs a registry, so construct after parse)
    ParamRegistry empty;
    CheckpointMeta meta;
    {
      // lightweight header read: config text only
      std::ifstream in(ckpt_path, std::ios::binary);
      char magic[8];
      in.read(magic, 8);
      uint32_t version;
      in.read(reinterpret_cast<char*>(&version), 4);
      uint64_t seed;
      in.read(reinterpret_cast<char*>(&seed), 8);
      int64_t step;
      in.read(reinterpret_cast<char*>(&step), 8);
      uint32_t len;
      in.read(reinterpret_cast<char*>(&len), 4);
      std::string text(len, '\0');
      in.read(text.data(), len);
      if (!in) throw CheckpointError("checkpoint: truncated header");
      meta.config_text = text;
    }
    cfg = parse_config_string(meta.config_text);
    if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
    model_ptr = new TideModel(cfg.model);
    load_checkpoint(ckpt_path, model_ptr->registry, nullptr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    delete model_ptr;
    return kExitCheckpoint;
  }
  TideModel& model = *model_ptr;

  Dataset test_ds;
  try {
    const std::string dir = resolve_data_dir(cfg.data.data_dir, data_dir);
    test_ds = load_split(cfg, dir, split == "train");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    delete model_ptr;
    return kExitData;
  }

  const std::string hash = config_hash(cfg);
  json report;
  report["config_hash"] = hash;
  report["checkpoint"] = ckpt_path;
  report["split"] = split;

  Dataset clean = normalize(test_ds, cfg.data.mean, cfg.data.std_dev);
  EvalSummary summary = evaluate(model, clean, cfg.train.batch);
  report["clean"] = {{"accuracy", summary.accuracy},
                     {"mean_certainty", summary.mean_certainty},
                     {"mean_certainty_correct", summary.mean_certainty_correct},
                     {"mean_certainty_incorrect", summary.mean_certainty_incorrect},
                     {"certainty_curve", summary.certainty_curve}};
  std::cerr << "clean accuracy " << summary.accuracy << "\n";

  std::string corr = corrupt_list.empty() ? cfg.data.corruptions : corrupt_list;
  if (!corr.empty()) {
    json per_corruption = json::object();
    std::stringstream ss(corr);
    std::string kind_name;
    while (std::getline(ss, kind_name, ',')) {
      if (kind_name.empty()) continue;
      CorruptionKind kind = parse_corruption_kind(kind_name);
      json severities = json::object();
      for (int severity = 1; severity <= 5; ++severity) {
        Dataset corrupted = test_ds;
        const int64_t stride = test_ds.images.size() / test_ds.size();
        for (int i = 0; i < test_ds.size(); ++i) {
          Tensor img = test_ds.image(i);
          Tensor out = corrupt(img, {kind, severity},
                               cfg.train.seed * 1000003ULL + static_cast<uint64_t>(i));
          for (int64_t j = 0; j < stride; ++j) corrupted.images[i * stride + j] = out[j];
        }
        corrupted = normalize(corrupted, cfg.data.mean, cfg.data.std_dev);
        EvalSummary es = evaluate(model, corrupted, cfg.train.batch);
        severities[std::to_string(severity)] = {{"accuracy", es.accuracy},
                                                {"mean_certainty", es.mean_certainty}};
        std::cerr << kind_name << " severity " << severity << " accuracy " << es.accuracy
                  << "\n";
      }
      per_corruption[kind_name] = severities;
    }
    report["corruptions"] = per_corruption;
  }

  const std::string out = out_path.empty() ? "eval_report.json" : out_path;
  std::ofstream of(out);
  of << report.dump(2) << "\n";
  // plot-ready CSV of the certainty curve
  const std::string csv_path = out.substr(0, out.find_last_of('.')) + "_certainty.csv";
  std::ofstream csv(csv_path);
  csv << "# config_hash=" << hash << "\n";
  csv << "step,certainty\n";
  for (size_t t = 0; t < summary.certainty_curve.size(); ++t)
    csv << (t + 1) << "," << summary.certainty_curve[t] << "\n";
  std::cerr << "report written to " << out << " and " << csv_path << "\n";
  delete model_ptr;
  return kExitOk;
}

int cmd_diagnose(const std::string& ckpt_path, int dim, long long seed,
                 const std::string& out_csv) {
  using namespace tide;
  DaleWeightSet weights;
  RunConfig cfg;
  TideModel* model_ptr = nullptr;
  std::string hash = "none";
  if (!ckpt_path.empty()) {
    try {
      std::ifstream in(ckpt_path, std::ios::binary);
      char magic[8];
      in.read(magic, 8);
      uint32_t version;
      in.read(reinterpret_cast<char*>(&version), 4);
      uint64_t s;
      in.read(reinterpret_cast<char*>(&s), 8);
      int64_t step;
      in.read(reinterpret_cast<char*>(&step), 8);
      uint32_t len;
      in.read(reinterpret_cast<char*>(&len), 4);
      std::string text(len, '\0');
      in.read(text.data(), len);
      cfg = parse_config_string(text);
      model_ptr = new TideModel(cfg.model);
      load_checkpoint(ckpt_path, model_ptr->registry, nullptr);
      weights = model_ptr->weights();
      hash = config_hash(cfg);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      delete model_ptr;
      return kExitCheckpoint;
    }
  } else {
    Rng rng(static_cast<uint64_t>(seed));
    const int ne = excitatory_count(dim);
    weights = make_dale_weights(rng, ne, dim - ne, 16);
    // scale into a stable regime so the trajectory dump is informative
    EffectiveMatrix probe = compose_effective(weights);
    LdsResult lds = lds_test(probe);
    if (!lds.is_lds) {
      const double shrink = 0.5 / (lds.lambda_max + 1.0 + 1e-9);
      for (Tensor* b : {&weights.w_ee, &weights.w_ei, &weights.w_ie, &weights.w_ii})
        for (int64_t i = 0; i < b->size(); ++i) (*b)[i] *= shrink;
    }
  }

  json report;
  report["config_hash"] = hash;
  const SpectralReport sr = spectral_report(weights, 0);
  report["perron_ee"] = sr.perron_ee;
  report["perron_ii"] = sr.perron_ii;
  report["lds_lambda_max"] = sr.lds_lambda_max;
  report["is_lds"] = sr.is_lds;
  report["sigma_max_ei"] = sr.sigma_max_ei;
  report["sigma_max_ie"] = sr.sigma_max_ie;

  // isolated-block bounds
  const EulerConfig euler = model_ptr ? cfg.model.euler() : EulerConfig();
  report["isolated_e_bound"] = 1.0;
  report["isolated_i_bound"] = 2.0 / euler.alpha_i() - 1.0;
  report["isolated_e_stable"] = sr.perron_ee < 1.0;
  report["isolated_i_stable"] = sr.perron_ii < 2.0 / euler.alpha_i() - 1.0;

  // Schur step bound from the symmetrized linearization J = tau^-1 (W - I):
  // its real spectrum lies within the power-iteration endpoints
  EffectiveMatrix eff = compose_effective(weights);
  const int d = eff.w_eff.dim(0);
  Tensor jsym({d, d});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double tau_i_ = i < eff.n_e ? euler.tau_e : euler.tau_i;
      const double tau_j_ = j < eff.n_e ? euler.tau_e : euler.tau_i;
      const double a = (eff.w_eff.at(i, j) - (i == j ? 1.0 : 0.0)) / tau_i_;
      const double b = (eff.w_eff.at(j, i) - (i == j ? 1.0 : 0.0)) / tau_j_;
      jsym.at(i, j) = 0.5 * (a + b);
    }
  const double lmax = symmetric_lambda_max(jsym);
  const double lmin = symmetric_lambda_min(jsym);
  if (lmax < 0.0) {
    report["schur_dt_bound"] = schur_dt_bound({{lmin, 0.0}, {lmax, 0.0}});
  } else {
    report["schur_dt_bound"] = nullptr;  // symmetrized linearization not stable
  }

  // E-I activity ratio on a probe batch
  if (model_ptr) {
    Dataset probe = synthetic_task(SyntheticKind::blobs, 8, cfg.train.seed, 28);
    if (cfg.data.dataset == "mnist" || cfg.data.dataset == "fashion-mnist")
      probe = normalize(probe, cfg.data.mean, cfg.data.std_dev);
    std::vector<int> idx = {0, 1, 2, 3, 4, 5, 6, 7};
    Tape tape;
    ForwardOptions opt;
    ForwardResult fwd = model_ptr->forward(tape, gather_batch(probe, idx), opt);
    double rho = 0.0;
    for (double r : fwd.rho_final_values) rho += r;
    report["rho_ei_probe"] = rho / 8.0;
  }

  // trajectory dump of the linearized simulation
  const std::string csv_path = out_csv.empty() ? "diagnose_trajectory.csv" : out_csv;
  {
    Rng rng(static_cast<uint64_t>(seed) + 1);
    Tensor b = rng.normal_tensor({d});
    Tensor x0 = rng.normal_tensor({d});
    const double dt = sr.is_lds ? 0.05 : 0.01;
    auto traj = simulate_linear(eff, b, x0, dt, 400);
    std::ofstream csv(csv_path);
    csv << "# config_hash=" << hash << "\n";
    csv << "step";
    for (int i = 0; i < d; ++i) csv << ",x" << i;
    csv << "\n";
    for (size_t k = 0; k < traj.size(); ++k) {
      csv << k;
      for (int i = 0; i < d; ++i) csv << "," << traj[k][i];
      csv << "\n";
    }
  }
  std::cout << report.dump(2) << "\n";
  std::cerr << "trajectory written to " << csv_path << "\n";
  delete model_ptr;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TIDE: Dale-constrained Wilson-Cowan engine"};
  app.require_subcommand(1);

  std::string config_path, resume, data_dir, ckpt_path, corrupt_list, out_path;
  long long seed = -1;
  int dim = 32;

  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--seed", seed, "seed override");
  train->add_option("--data-dir", data_dir, "dataset directory (default: TIDE_DATA_DIR)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory");
  eval->add_option("--corrupt", corrupt_list, "comma list of corruption kinds");
  eval->add_option("--out", out_path, "report path (JSON)");
  eval->add_option("--seed", seed, "seed override");
  std::string split = "test";
  eval->add_option("--split", split, "dataset split to evaluate (test|train)");

  auto* diagnose = app.add_subcommand("diagnose", "spectral and dynamics diagnostics");
  diagnose->add_option("--ckpt", ckpt_path, "checkpoint file");
  diagnose->add_option("--dim", dim, "random-spec model dimension");
  diagnose->add_option("--seed", seed, "random-spec seed");
  diagnose->add_option("--out", out_path, "trajectory CSV path");

  auto* print_config = app.add_subcommand("print-config", "dump the default configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, resume, seed, data_dir);
    if (eval->parsed()) return cmd_eval(ckpt_path, data_dir, corrupt_list, out_path, seed, split);
    if (diagnose->parsed())
      return cmd_diagnose(ckpt_path, dim, seed < 0 ? 42 : seed, out_path);
    if (print_config->parsed()) {
      tide::RunConfig cfg;
      std::cout << "# config_hash=" << tide::config_hash(cfg) << "\n" << tide::dump_config(cfg);
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
