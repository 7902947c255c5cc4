#ifndef EKD_CLI_HPP
#define EKD_CLI_HPP

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ekd/config.hpp"
#include "ekd/pipeline.hpp"

namespace ekd::cli {

/// Process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kRuntimeError = 3;

namespace detail {

inline std::string flag_name(std::string_view key) {
  std::string s = "--" + std::string(key);
  for (auto &c : s)
    if (c == '_')
      c = '-';
  return s;
}

/// Options shared by every config-driven subcommand: --config, --run-root,
/// --run-dir and one flag per config key.
struct ConfigOptions {
  std::string config_file;
  std::string run_root;
  std::string run_dir;
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option *> options;

  void attach(CLI::App *sub, bool with_run_dir) {
    sub->add_option("--config", config_file, "key = value config file")
        ->check(CLI::ExistingFile);
    sub->add_option("--run-root", run_root, "output root (default: $EKD_RUN_ROOT or ./runs)");
    if (with_run_dir)
      sub->add_option("--run-dir", run_dir, "run directory (default: <run-root>/<run_name>)");
    for (const auto &k : kConfigKeys) {
      const std::string key(k.name);
      options[key] = sub->add_option(flag_name(key), overrides[key], std::string(k.help));
    }
  }

  std::filesystem::path root() const {
    return run_root.empty() ? default_run_root() : std::filesystem::path(run_root);
  }

  /// defaults <- [run-dir config echo] <- --config <- flags.
  RunConfig resolve(const std::filesystem::path *existing_run_dir) const {
    RunConfig cfg;
    if (existing_run_dir && std::filesystem::exists(*existing_run_dir / layout::config))
      cfg.merge_file(*existing_run_dir / layout::config);
    if (!config_file.empty())
      cfg.merge_file(config_file);
    for (const auto &[key, opt] : options)
      if (opt->count() > 0)
        cfg.set(key, overrides.at(key));
    cfg.validate();
    return cfg;
  }

  std::filesystem::path dir_for(const RunConfig &cfg) const {
    return run_dir.empty() ? root() / cfg.str("run_name") : std::filesystem::path(run_dir);
  }
};

} // namespace detail

/// Entry point shared by the `ekd` binary and the CLI tests.
inline int run(std::vector<std::string> args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Energy-based knowledge distillation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  // gen-data ------------------------------------------------------------------
  auto *gen = app.add_subcommand("gen-data", "generate a synthetic train/test split");
  std::string gen_kind, gen_out;
  BlobParams gen_params;
  double gen_imbalance = 0.5;
  gen->add_option("--kind", gen_kind, "blobs | longtail")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", gen_params.classes, "number of classes");
  gen->add_option("--per-class", gen_params.per_class, "training samples per class (n_max for longtail)");
  gen->add_option("--test-per-class", gen_params.test_per_class, "test samples per class");
  gen->add_option("--dim", gen_params.dim, "feature dimension");
  gen->add_option("--separation", gen_params.separation, "minimum center distance");
  gen->add_option("--noise", gen_params.noise, "noise sigma");
  gen->add_option("--imbalance", gen_imbalance, "longtail imbalance factor");
  gen->add_option("--seed", gen_params.seed, "generation seed");

  // config-driven subcommands --------------------------------------------------
  struct Stage {
    const char *name;
    const char *help;
  };
  const Stage stages[] = {
      {"pipeline", "run every stage into <run-root>/<run_name>"},
      {"pretrain", "train the teacher on train.ekds"},
      {"score", "recompute the teacher logit dump"},
      {"partition", "rank energies and write the energy manifest"},
      {"augment", "append augmented high-energy samples"},
      {"distill", "distill a student with per-sample temperatures"},
      {"eval", "evaluate and export metrics"},
  };
  std::map<std::string, detail::ConfigOptions> stage_opts;
  std::map<std::string, CLI::App *> stage_apps;
  for (const auto &s : stages) {
    auto *sub = app.add_subcommand(s.name, s.help);
    stage_opts[s.name].attach(sub, std::string(s.name) != "pipeline");
    stage_apps[s.name] = sub;
  }

  auto *sweep = app.add_subcommand("sweep-r", "pipeline per (r, seed) with a constant-T baseline");
  detail::ConfigOptions sweep_opts;
  sweep_opts.attach(sweep, false);
  std::vector<double> sweep_r{0.1, 0.2, 0.3, 0.4, 0.5};
  std::size_t sweep_seeds = 5;
  std::size_t sweep_jobs = 1;
  sweep->add_option("--r-values", sweep_r, "comma-separated r values")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "seeds per r (1..S)");
  sweep->add_option("--jobs", sweep_jobs, "cells run concurrently");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg;
      cfg.set("data_kind", gen_kind);
      cfg.set("classes", std::to_string(gen_params.classes));
      cfg.set("per_class", std::to_string(gen_params.per_class));
      cfg.set("test_per_class", std::to_string(gen_params.test_per_class));
      cfg.set("dim", std::to_string(gen_params.dim));
      cfg.set("separation", text::fmt_double(gen_params.separation));
      cfg.set("noise", text::fmt_double(gen_params.noise));
      cfg.set("imbalance", text::fmt_double(gen_imbalance));
      cfg.set("data_seed", std::to_string(gen_params.seed));
      cfg.validate();
      std::filesystem::create_directories(gen_out);
      stage_data(cfg, gen_out);
      out << "wrote " << (std::filesystem::path(gen_out) / layout::train).string() << "\n";
      return kOk;
    }

    if (sweep->parsed()) {
      const auto cfg = sweep_opts.resolve(nullptr);
      const auto table = run_sweep(cfg, sweep_r, sweep_seeds, sweep_opts.root(), sweep_jobs, err);
      out << format_sweep_table(table);
      return kOk;
    }

    for (const auto &s : stages) {
      if (!stage_apps[s.name]->parsed())
        continue;
      auto &opts = stage_opts[s.name];
      const std::string name = s.name;
      RunConfig cfg;
      std::filesystem::path dir;
      if (name == "pipeline") {
        cfg = opts.resolve(nullptr);
        dir = opts.dir_for(cfg);
      } else {
        // Stage subcommands pick up the run's echoed config if one exists.
        std::filesystem::path probe = opts.run_dir;
        if (probe.empty()) {
          const auto pre = opts.resolve(nullptr);
          probe = opts.dir_for(pre);
        }
        cfg = opts.resolve(&probe);
        dir = probe;
      }
      if (name == "pipeline") {
        const auto summary = run_pipeline(cfg, dir, out);
        out << "run directory: " << dir.string() << "\n"
            << "student test accuracy: " << summary.student_test_accuracy << "\n";
        return kOk;
      }
      std::filesystem::create_directories(dir);
      if (!std::filesystem::exists(dir / layout::config))
        io::write_text(dir / layout::config, cfg.echo());
      if (name == "pretrain")
        run_stage(name, dir, [&] { stage_pretrain(cfg, dir, out); });
      else if (name == "score")
        run_stage(name, dir, [&] { stage_score(cfg, dir); });
      else if (name == "partition")
        run_stage(name, dir, [&] { stage_partition(cfg, dir); });
      else if (name == "augment")
        run_stage(name, dir, [&] { stage_augment(cfg, dir); });
      else if (name == "distill")
        run_stage(name, dir, [&] { stage_distill(cfg, dir, out); });
      else if (name == "eval")
        run_stage(name, dir, [&] { stage_eval(cfg, dir, out); });
      return kOk;
    }
  } catch (const StageError &e) {
    err << "error: stage " << e.what() << "\n";
    return kRuntimeError;
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::invalid_argument || e.code() == ErrorCode::parse
               ? kConfigError
               : kRuntimeError;
  }
  return kOk;
}

} // namespace ekd::cli

#endif // EKD_CLI_HPP
