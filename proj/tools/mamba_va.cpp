#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "mva/bench.hpp"
#include "mva/checkpoint.hpp"
#include "mva/config.hpp"
#include "mva/data_io.hpp"
#include "mva/gradcheck.hpp"
#include "mva/metrics.hpp"
#include "mva/training.hpp"

namespace fs = std::filesystem;
using namespace mva;

namespace {

// Resolution order: defaults < MAMBA_VA_SEED env < config file < CLI flags.
RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (const char* env_seed = std::getenv("MAMBA_VA_SEED")) {
    set_config_key(cfg, "seed", env_seed);
  }
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw IoError("cannot open config file: " + config_path);
    std::stringstream buf;
    buf << f.rdbuf();
    apply_config_text(cfg, buf.str(), config_path);
  }
  for (const auto& [key, value] : overrides) set_config_key(cfg, key, value);
  return cfg;
}

void require_data_dir(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("data_dir is required (--data)");
  const fs::path feat = fs::path(cfg.data_dir) / "features";
  if (!fs::is_directory(feat)) {
    throw IoError("feature directory does not exist: " + feat.string());
  }
}

std::vector<std::string> read_id_list(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open id list: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::vector<int> make_folds(const RunConfig& cfg, const Dataset& ds) {
  std::vector<std::string> official;
  if (!cfg.official_val_list.empty()) official = read_id_list(cfg.official_val_list);
  auto fold_of = kfold_split(ds.ids(), cfg.k_folds, cfg.seed, official);
  if (cfg.fold < 0 || cfg.fold >= cfg.k_folds) {
    throw ConfigError("fold must lie in [0, " + std::to_string(cfg.k_folds) + "), got " +
                      std::to_string(cfg.fold));
  }
  return fold_of;
}

void write_report(const RunConfig& cfg, const FoldReport& report) {
  if (!cfg.out_dir.empty()) {
    std::ofstream csv(fs::path(cfg.out_dir) / "report.csv");
    csv << report.to_csv();
    std::ofstream txt(fs::path(cfg.out_dir) / "report.txt");
    txt << report.to_text();
  }
  std::cout << report.to_text();
}

void write_resolved_config(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  std::ofstream f(fs::path(cfg.out_dir) / "resolved.cfg");
  f << serialize_config(cfg);
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is required (--out)");
  require_data_dir(cfg);
  write_resolved_config(cfg);
  Dataset ds = load_dataset(cfg.data_dir);
  const auto fold_of = make_folds(cfg, ds);

  FitOptions options;
  options.model = cfg.model_config();
  options.train = cfg.train_config();
  options.window = cfg.window;
  options.stride = cfg.stride;
  options.scan_variant = cfg.variant();
  options.out_dir = cfg.out_dir;
  options.resume_from = cfg.resume;
  options.extra_config["data.k_folds"] = std::to_string(cfg.k_folds);

  FitResult result = fit(ds, fold_of, cfg.fold, options);
  std::cerr << "best epoch " << result.best_epoch << ": p_va " << result.best_p_va << "\n";

  // final fold report from the best checkpoint
  ModelParams<float> best = unpack_model(load_checkpoint(result.best_checkpoint));
  ConcatEvaluator ev;
  for (size_t i = 0; i < ds.videos.size(); ++i) {
    if (fold_of[i] != cfg.fold) continue;
    ev.add(predict_video(best, ds.videos[i].features, cfg.window, cfg.stride, cfg.variant()),
           ds.videos[i].labels);
  }
  write_report(cfg, fold_report({{cfg.fold, ev.report()}}));
  return 0;
}

int cmd_evaluate(RunConfig cfg, const std::string& checkpoint_path,
                 const std::vector<std::string>& explicit_keys) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  // checkpoint values are the defaults for anything not given explicitly
  auto maybe = [&](const std::string& cli_key, const std::string& ckpt_key) {
    if (std::find(explicit_keys.begin(), explicit_keys.end(), cli_key) != explicit_keys.end())
      return;
    auto it = ckpt.config.find(ckpt_key);
    if (it != ckpt.config.end()) set_config_key(cfg, cli_key, it->second);
  };
  maybe("window", "data.window");
  maybe("stride", "data.stride");
  maybe("fold", "data.val_fold");
  maybe("k_folds", "data.k_folds");
  maybe("seed", "train.seed");
  require_data_dir(cfg);
  write_resolved_config(cfg);
  ModelParams<float> params = unpack_model(ckpt);
  Dataset ds = load_dataset(cfg.data_dir);
  const auto fold_of = make_folds(cfg, ds);
  ConcatEvaluator ev;
  for (size_t i = 0; i < ds.videos.size(); ++i) {
    if (fold_of[i] != cfg.fold) continue;
    ev.add(predict_video(params, ds.videos[i].features, cfg.window, cfg.stride, cfg.variant()),
           ds.videos[i].labels);
  }
  write_report(cfg, fold_report({{cfg.fold, ev.report()}}));
  return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& features_path,
                const std::string& out_path, int64_t window, int64_t stride, int workers) {
#ifdef _OPENMP
  omp_set_num_threads(workers);
#endif
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  ModelParams<float> params = unpack_model(ckpt);
  const int64_t w = window > 0 ? window : std::stoll(ckpt.config.at("data.window"));
  const int64_t s = stride > 0 ? stride : std::stoll(ckpt.config.at("data.stride"));
  FeatureSequence video = load_features(features_path);
  Tensor<float> pred = predict_video(params, video, w, s, ScanVariant::Sequential);
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw IoError("cannot open prediction output: " + out_path);
    out = &file;
  }
  (*out) << "frame,valence,arousal\n";
  char line[80];
  for (int64_t t = 0; t < video.n; ++t) {
    std::snprintf(line, sizeof(line), "%lld,%.6f,%.6f\n", static_cast<long long>(t + 1),
                  pred(t, 0), pred(t, 1));
    (*out) << line;
  }
  return 0;
}

int cmd_gen_synthetic(const SynthConfig& synth, const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("out_dir is required (--out)");
  generate_synthetic_dataset(out_dir, synth);
  std::cout << "wrote " << synth.n_videos << " videos (dim " << synth.dim << ") under " << out_dir
            << "\n";
  return 0;
}

int cmd_grad_check(const std::string& scope, uint64_t seed) {
  const auto reports = run_gradcheck_suite(seed, scope);
  if (reports.empty()) throw ConfigError("grad-check: unknown scope '" + scope + "'");
  bool all_pass = true;
  for (const auto& r : reports) {
    std::printf("%-26s %-7s max_rel_err %.3e (tol %.0e)  %s\n", r.name.c_str(), r.scope.c_str(),
                r.max_rel_err, r.tol, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_bench_scan(std::vector<int64_t> t_lens, std::vector<int64_t> d_inners,
                   std::vector<int64_t> n_states, int reps, int workers,
                   const std::string& out_path, uint64_t seed) {
#ifdef _OPENMP
  omp_set_num_threads(workers);
#endif
  const auto rows = bench_scan(t_lens, d_inners, n_states, reps, seed);
  const std::string csv = bench_csv(rows);
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot open benchmark output: " + out_path);
    f << csv;
  } else {
    std::cout << csv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mamba-VA: temporal valence-arousal regression over precomputed frame features"};
  app.require_subcommand(1);

  // --- shared config plumbing for train/evaluate ---
  struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::string>> flag_overrides;
    std::vector<std::string> explicit_keys;
  };
  auto add_config_options = [](CLI::App* cmd, CommonArgs& args,
                               const std::vector<std::pair<std::string, std::string>>& flags) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--set", args.sets, "override any config key, e.g. --set lr=0.001");
    for (const auto& [flag, key] : flags) {
      const std::string k = key;
      cmd->add_option_function<std::string>(
             flag,
             [&args, k](const std::string& v) {
               args.flag_overrides.emplace_back(k, v);
               args.explicit_keys.push_back(k);
             },
             "sets " + k)
          ->type_name("VALUE");
    }
  };
  // --set overrides apply before the dedicated flags, so flags win.
  auto finish_overrides = [](CommonArgs& args) {
    std::vector<std::pair<std::string, std::string>> ordered;
    for (const auto& s : args.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      ordered.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      args.explicit_keys.push_back(s.substr(0, eq));
    }
    ordered.insert(ordered.end(), args.flag_overrides.begin(), args.flag_overrides.end());
    args.flag_overrides = std::move(ordered);
  };

  const std::vector<std::pair<std::string, std::string>> train_flags = {
      {"--data", "data_dir"},     {"--out", "out_dir"},         {"--fold", "fold"},
      {"--k-folds", "k_folds"},   {"--window", "window"},       {"--stride", "stride"},
      {"--in-dim", "in_dim"},     {"--hidden", "hidden"},       {"--epochs", "epochs"},
      {"--lr", "lr"},             {"--batch", "batch"},         {"--seed", "seed"},
      {"--workers", "workers"},   {"--dropout", "dropout"},     {"--scan-variant", "scan_variant"},
      {"--resume", "resume"},     {"--official-val-list", "official_val_list"},
      {"--clip-norm", "clip_norm"}};

  CLI::App* train = app.add_subcommand("train", "train a model and report the validation fold");
  CommonArgs train_args;
  add_config_options(train, train_args, train_flags);

  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on one fold");
  CommonArgs eval_args;
  std::string eval_checkpoint;
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  add_config_options(evaluate, eval_args, train_flags);

  CLI::App* predict = app.add_subcommand("predict", "per-frame predictions for one feature file");
  std::string pred_checkpoint, pred_features, pred_out;
  int64_t pred_window = 0, pred_stride = 0;
  int pred_workers = 1;
  predict->add_option("--checkpoint", pred_checkpoint, "checkpoint file")->required();
  predict->add_option("--features", pred_features, "input .fvec file")->required();
  predict->add_option("--out", pred_out, "output csv (default stdout)");
  predict->add_option("--window", pred_window, "window override (default from checkpoint)");
  predict->add_option("--stride", pred_stride, "stride override (default from checkpoint)");
  predict->add_option("--workers", pred_workers, "thread count");

  CLI::App* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset");
  SynthConfig synth;
  std::string gen_out;
  bool gen_seed_given = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option_function<uint64_t>(
         "--seed", [&](uint64_t s) { synth.seed = s; gen_seed_given = true; }, "generator seed");
  gen->add_option("--videos", synth.n_videos, "number of videos");
  gen->add_option("--frames-min", synth.frames_min, "minimum frames per video");
  gen->add_option("--frames-max", synth.frames_max, "maximum frames per video");
  gen->add_option("--dim", synth.dim, "feature dimension");

  CLI::App* gradcheck = app.add_subcommand("grad-check", "finite-difference check of every op");
  std::string gc_scope = "all";
  uint64_t gc_seed = 42;
  gradcheck->add_option("--scope", gc_scope, "all | core | scan | layers | loss");
  gradcheck->add_option("--seed", gc_seed, "instance seed");

  CLI::App* bench = app.add_subcommand("bench-scan", "time sequential vs parallel scan");
  std::vector<int64_t> bench_t = {64, 256, 1024, 2048};
  std::vector<int64_t> bench_d = {4, 64, 256};
  std::vector<int64_t> bench_n = {8};
  int bench_reps = 3;
#ifdef _OPENMP
  int bench_workers = omp_get_max_threads();
#else
  int bench_workers = 1;
#endif
  std::string bench_out;
  uint64_t bench_seed = 42;
  bench->add_option("--T", bench_t, "sequence lengths")->delimiter(',');
  bench->add_option("--d-inner", bench_d, "channel counts")->delimiter(',');
  bench->add_option("--N", bench_n, "state dimensions")->delimiter(',');
  bench->add_option("--reps", bench_reps, "repetitions per cell (best kept)");
  bench->add_option("--workers", bench_workers, "thread count");
  bench->add_option("--out", bench_out, "output csv (default stdout)");
  bench->add_option("--seed", bench_seed, "input seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      finish_overrides(train_args);
      RunConfig cfg = resolve_config(train_args.config_path, train_args.flag_overrides);
#ifdef _OPENMP
      omp_set_num_threads(cfg.workers);
#endif
      return cmd_train(cfg);
    }
    if (evaluate->parsed()) {
      finish_overrides(eval_args);
      RunConfig cfg = resolve_config(eval_args.config_path, eval_args.flag_overrides);
#ifdef _OPENMP
      omp_set_num_threads(cfg.workers);
#endif
      return cmd_evaluate(cfg, eval_checkpoint, eval_args.explicit_keys);
    }
    if (predict->parsed()) {
      return cmd_predict(pred_checkpoint, pred_features, pred_out, pred_window, pred_stride,
                         pred_workers);
    }
    if (gen->parsed()) {
      if (!gen_seed_given) {
        if (const char* env_seed = std::getenv("MAMBA_VA_SEED")) synth.seed = std::stoull(env_seed);
      }
      return cmd_gen_synthetic(synth, gen_out);
    }
    if (gradcheck->parsed()) return cmd_grad_check(gc_scope, gc_seed);
    if (bench->parsed()) {
      return cmd_bench_scan(bench_t, bench_d, bench_n, bench_reps, bench_workers, bench_out,
                            bench_seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
