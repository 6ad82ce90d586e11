#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedscan/data.hpp"
#include "fedscan/errors.hpp"
#include "fedscan/fed.hpp"
#include "fedscan/gradcheck.hpp"
#include "fedscan/metrics.hpp"
#include "fedscan/model.hpp"
#include "fedscan/run_config.hpp"

namespace {

using namespace fedscan;

std::vector<VolumeSample> obtain_dataset(const RunConfig& cfg,
                                         const std::string& data_dir) {
  std::vector<VolumeSample> dataset;
  if (data_dir.empty()) {
    dataset = generate_dataset(cfg.data.n, cfg.model, cfg.data.seed);
  } else {
    dataset = load_dataset(data_dir);
    if (static_cast<int>(dataset.size()) != cfg.data.n) {
      throw ConfigError("data directory holds " +
                        std::to_string(dataset.size()) +
                        " volumes but the config expects data.n=" +
                        std::to_string(cfg.data.n));
    }
  }
  for (const VolumeSample& s : dataset) {
    if (s.slices() != cfg.model.slices || s.height() != cfg.model.input_hw ||
        s.width() != cfg.model.input_hw) {
      throw ConfigError("dataset geometry " + shape_str(s.volume.shape()) +
                        " does not match the model config");
    }
  }
  return dataset;
}

void write_training_outputs(const RunConfig& cfg, const FedResult& res) {
  echo_resolved_config(cfg, cfg.output_dir);
  const std::string report_path = cfg.output_dir + "/reports.txt";
  std::error_code ec;
  std::filesystem::remove(report_path, ec);
  for (const RoundReport& r : res.reports) {
    append_report(r, report_path);
    std::printf("%s\n", format_report_line(r).c_str());
  }
  CheckpointMeta meta;
  meta.config_hash = model_config_hash(cfg.model);
  meta.round_index = cfg.federation.rounds;
  meta.param_count = res.final_params.coord_count();
  meta.creation_seed = cfg.federation.seed;
  save_checkpoint(res.final_params, meta,
                  cfg.output_dir + "/checkpoint_final.fsk");
}

int cmd_gen_data(const std::string& config_path,
                 const std::vector<std::string>& sets,
                 const std::string& out_dir) {
  const RunConfig cfg = load_run_config(config_path, sets);
  const std::vector<VolumeSample> dataset =
      generate_dataset(cfg.data.n, cfg.model, cfg.data.seed);
  save_dataset(out_dir, dataset);
  echo_resolved_config(cfg, out_dir);
  std::printf("wrote %d volumes to %s\n", cfg.data.n, out_dir.c_str());
  return 0;
}

int cmd_partition(const std::string& config_path,
                  const std::vector<std::string>& sets,
                  const std::string& out_dir) {
  const RunConfig cfg = load_run_config(config_path, sets);
  const std::vector<VolumeSample> dataset =
      generate_dataset(cfg.data.n, cfg.model, cfg.data.seed);
  const std::vector<std::vector<int>> shards =
      partition_dirichlet(dataset, cfg.partition);
  echo_resolved_config(cfg, out_dir);
  save_partition(out_dir + "/partition.txt", shards);
  std::printf("wrote %zu shards to %s/partition.txt\n", shards.size(),
              out_dir.c_str());
  return 0;
}

int cmd_train_central(const std::string& config_path,
                      const std::vector<std::string>& sets,
                      const std::string& data_dir) {
  const RunConfig cfg = load_run_config(config_path, sets);
  const std::vector<VolumeSample> dataset = obtain_dataset(cfg, data_dir);
  const FedResult res =
      run_centralized(dataset, cfg.train_indices(), cfg.eval_indices(),
                      cfg.model, cfg.fed_options());
  write_training_outputs(cfg, res);
  return 0;
}

int cmd_train_fed(const std::string& config_path,
                  const std::vector<std::string>& sets,
                  const std::string& data_dir) {
  const RunConfig cfg = load_run_config(config_path, sets);
  const std::vector<VolumeSample> dataset = obtain_dataset(cfg, data_dir);
  const std::vector<int> train = cfg.train_indices();
  std::vector<std::array<std::uint8_t, 6>> train_labels;
  train_labels.reserve(train.size());
  for (int idx : train) {
    train_labels.push_back(dataset[static_cast<std::size_t>(idx)].volume_labels);
  }
  const std::vector<std::vector<int>> shards =
      partition_dirichlet(train_labels, cfg.partition);
  const FedResult res = run_federated(dataset, shards, cfg.eval_indices(),
                                      cfg.model, cfg.fed_options());
  write_training_outputs(cfg, res);
  return 0;
}

int cmd_evaluate(const std::string& config_path,
                 const std::vector<std::string>& sets,
                 const std::string& checkpoint_path,
                 const std::string& data_dir) {
  const RunConfig cfg = load_run_config(config_path, sets);
  const LoadedCheckpoint ck =
      load_checkpoint(checkpoint_path, model_config_hash(cfg.model));
  const std::vector<VolumeSample> dataset = obtain_dataset(cfg, data_dir);
  const EvalMetrics em =
      evaluate_model(ck.params, cfg.model, dataset, cfg.eval_indices());
  RoundReport r;
  r.round_index = ck.meta.round_index;
  r.mean_loss = std::numeric_limits<double>::quiet_NaN();
  r.accuracy = em.accuracy;
  r.ap = em.ap;
  r.mean_ap = em.mean_ap;
  r.ap_defined = em.ap_defined;
  std::printf("%s\n", format_report_line(r).c_str());
  return 0;
}

int cmd_gradcheck(const std::string& config_path,
                  const std::vector<std::string>& sets, double eps,
                  double threshold, std::uint64_t seed, int samples, int batch,
                  bool corrupt) {
  ModelConfig mc;
  if (!config_path.empty()) {
    mc = load_run_config(config_path, sets).model;
  } else {
    mc.slices = 3;  // reference check geometry
  }
  mc.validate();
  if (batch < 1) {
    throw DomainError("gradcheck batch must be >= 1");
  }
  if (samples < 1) {
    throw DomainError("gradcheck samples must be >= 1");
  }
  const std::vector<VolumeSample> data = generate_dataset(batch, mc, seed);
  std::vector<const VolumeSample*> batch_ptrs;
  batch_ptrs.reserve(data.size());
  for (const VolumeSample& s : data) {
    batch_ptrs.push_back(&s);
  }
  const ModelParams params = build_model(mc, seed);
  LossFn fn = [&](const ModelParams& p) {
    LossAndGrad lg = batch_loss_and_grad(p, batch_ptrs, mc);
    if (corrupt) {
      for (auto& entry : lg.grads.entries()) {
        for (std::size_t i = 0; i < entry.value.size(); ++i) {
          entry.value[i] += 1.0;
        }
      }
    }
    return lg;
  };
  const double err = gradient_check(fn, params, eps,
                                    static_cast<std::size_t>(samples), seed);
  std::printf("max_rel_err=%.17g\n", err);
  if (!(err < threshold)) {
    std::fprintf(stderr, "gradient check failed: %.17g >= %.17g\n", err,
                 threshold);
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic hemorrhage-detection training simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint_path;
  std::vector<std::string> sets;
  double eps = 1e-5, threshold = 1e-4;
  std::uint64_t seed = 0;
  int samples = 200, batch = 2;
  bool corrupt = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "run config JSON")->required();
  gen->add_option("--set", sets, "override a config key (a.b.c=value)");
  gen->add_option("--out", out_dir, "output directory")->required();

  CLI::App* part = app.add_subcommand("partition", "write client shards");
  part->add_option("--config", config_path, "run config JSON")->required();
  part->add_option("--set", sets, "override a config key (a.b.c=value)");
  part->add_option("--out", out_dir, "output directory")->required();

  CLI::App* central =
      app.add_subcommand("train-central", "single-worker baseline training");
  central->add_option("--config", config_path, "run config JSON")->required();
  central->add_option("--set", sets, "override a config key (a.b.c=value)");
  central->add_option("--data", data_dir,
                      "dataset directory (generated from config when absent)");

  CLI::App* fed = app.add_subcommand("train-fed", "federated training");
  fed->add_option("--config", config_path, "run config JSON")->required();
  fed->add_option("--set", sets, "override a config key (a.b.c=value)");
  fed->add_option("--data", data_dir,
                  "dataset directory (generated from config when absent)");

  CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval->add_option("--config", config_path, "run config JSON")->required();
  eval->add_option("--set", sets, "override a config key (a.b.c=value)");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();
  eval->add_option("--data", data_dir,
                   "dataset directory (generated from config when absent)");

  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "finite-difference gradient validation");
  gc->add_option("--config", config_path,
                 "run config JSON (reference tiny model when absent)");
  gc->add_option("--set", sets, "override a config key (a.b.c=value)");
  gc->add_option("--eps", eps, "finite-difference step");
  gc->add_option("--threshold", threshold, "max relative error accepted");
  gc->add_option("--seed", seed, "data and parameter seed");
  gc->add_option("--samples", samples, "coordinates to probe");
  gc->add_option("--batch", batch, "volumes in the probe batch");
  gc->add_flag("--corrupt-gradient", corrupt,
               "perturb one analytic gradient (negative-control hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(config_path, sets, out_dir);
    }
    if (part->parsed()) {
      return cmd_partition(config_path, sets, out_dir);
    }
    if (central->parsed()) {
      return cmd_train_central(config_path, sets, data_dir);
    }
    if (fed->parsed()) {
      return cmd_train_fed(config_path, sets, data_dir);
    }
    if (eval->parsed()) {
      return cmd_evaluate(config_path, sets, checkpoint_path, data_dir);
    }
    if (gc->parsed()) {
      return cmd_gradcheck(config_path, sets, eps, threshold, seed, samples,
                           batch, corrupt);
    }
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
