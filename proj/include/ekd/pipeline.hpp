#ifndef EKD_PIPELINE_HPP
#define EKD_PIPELINE_HPP

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ekd/augment.hpp"
#include "ekd/config.hpp"
#include "ekd/data.hpp"
#include "ekd/energy.hpp"
#include "ekd/io.hpp"
#include "ekd/models.hpp"
#include "ekd/report.hpp"

namespace ekd {

/// Fixed file names inside a run directory.
namespace layout {
inline constexpr const char *config = "config.txt";
inline constexpr const char *train = "train.ekds";
inline constexpr const char *test = "test.ekds";
inline constexpr const char *data_meta = "data.meta";
inline constexpr const char *teacher = "teacher.ekdm";
inline constexpr const char *teacher_logits = "teacher_logits.ekdl";
inline constexpr const char *manifest = "energy_manifest.csv";
inline constexpr const char *heda = "heda.ekds";
inline constexpr const char *heda_provenance = "heda_provenance.csv";
inline constexpr const char *student = "student.ekdm";
inline constexpr const char *metrics = "metrics.jsonl";
inline constexpr const char *bucket_confidence = "bucket_confidence.csv";
inline constexpr const char *correlation_disparity = "correlation_disparity.csv";
inline constexpr const char *failed = "FAILED";
} // namespace layout

/// Output root: `EKD_RUN_ROOT` if set, otherwise ./runs.
inline std::filesystem::path default_run_root() {
  if (const char *env = std::getenv("EKD_RUN_ROOT"); env && *env)
    return env;
  return "runs";
}

class StageError : public Error {
public:
  StageError(std::string stage, const Error &cause)
      : Error(cause.code(), stage + ": " + cause.what()), stage_(std::move(stage)) {}
  const std::string &stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

namespace detail {

inline void append_metrics(const std::filesystem::path &dir, const MetricsLog &log) {
  std::ofstream out(dir / layout::metrics, std::ios::binary | std::ios::app);
  require(static_cast<bool>(out), ErrorCode::io, "cannot append metrics");
  out << log.str();
}

inline Dataset *maybe(std::optional<Dataset> &d) { return d ? &*d : nullptr; }

inline std::optional<Dataset> load_optional(const std::filesystem::path &p) {
  if (!std::filesystem::exists(p))
    return std::nullopt;
  return load_dataset(p);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

/// Rebuilds the partition a manifest was written from.
inline PartitionPlan plan_from_manifest(const EnergyManifest &m) {
  std::vector<ManifestRow> rows = m.rows;
  std::sort(rows.begin(), rows.end(), [](const auto &a, const auto &b) { return a.rank < b.rank; });
  PartitionPlan plan;
  plan.r = m.r;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require(rows[i].rank == i + 1, ErrorCode::parse, "manifest ranks are not 1..N");
    plan.entries.push_back({rows[i].sample_id, rows[i].energy, rows[i].rank, rows[i].bucket});
  }
  plan.n_boundary = plan.count(Bucket::low);
  detail::require(plan.n_boundary >= 1 && plan.n_boundary == plan.count(Bucket::high),
                  ErrorCode::parse, "manifest LOW/HIGH buckets are inconsistent");
  plan.e_low = plan.entries[plan.n_boundary - 1].energy;
  plan.e_high = plan.entries[plan.size() - plan.n_boundary].energy;
  plan.index();
  return plan;
}

// ---- Stages ------------------------------------------------------------------
//
// Each stage reads its inputs from and writes its outputs to a run directory
// using the fixed layout above, so stages can run separately from the CLI.

inline void stage_data(const RunConfig &cfg, const std::filesystem::path &dir) {
  std::vector<std::pair<std::string, std::string>> meta;
  DataSplit split;
  if (!cfg.str("train_data").empty()) {
    split.train = load_dataset(cfg.str("train_data"));
    detail::require(!cfg.str("test_data").empty(), ErrorCode::invalid_argument,
                    "train_data given without test_data");
    split.test = load_dataset(cfg.str("test_data"));
    meta = {{"source", "files"}, {"train_data", cfg.str("train_data")},
            {"test_data", cfg.str("test_data")}};
  } else {
    const auto params = cfg.blob_params();
    if (cfg.str("data_kind") == "longtail") {
      LongTailSpec spec{params.classes, params.per_class, cfg.num("imbalance")};
      split = make_long_tail_split(spec, params);
    } else {
      split = make_blobs_split(params);
    }
    for (auto key : {"data_kind", "classes", "per_class", "test_per_class", "dim",
                     "separation", "noise", "imbalance", "data_seed"})
      meta.emplace_back(key, cfg.str(key));
  }
  meta.emplace_back("train_N", std::to_string(split.train.size()));
  meta.emplace_back("test_N", std::to_string(split.test.size()));
  save_dataset(dir / layout::train, split.train);
  save_dataset(dir / layout::test, split.test);
  io::write_text(dir / layout::data_meta, io::comment_header(meta));
}

inline void stage_pretrain(const RunConfig &cfg, const std::filesystem::path &dir,
                           std::ostream &log) {
  const auto train = load_dataset(dir / layout::train);
  auto test = detail::load_optional(dir / layout::test);
  const auto tc = cfg.train_config(true);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = pretrain_teacher(train, cfg.size_list("teacher_hidden"), tc, detail::maybe(test));
  log << "pretrain: " << tc.epochs << " epochs in " << detail::seconds_since(t0) << " s, "
      << "train acc " << res.history.back().train_accuracy << "\n";
  save_model(dir / layout::teacher, res.model);
  save_logits(dir / layout::teacher_logits, res.logits);
  MetricsLog m;
  m.add({{"type", "teacher_history"}, {"history", to_json(res.history)}});
  detail::append_metrics(dir, m);
}

/// Recomputes the teacher logit dump from the saved checkpoint.
inline void stage_score(const RunConfig &, const std::filesystem::path &dir) {
  const auto teacher = load_model(dir / layout::teacher);
  const auto train = load_dataset(dir / layout::train);
  save_logits(dir / layout::teacher_logits, logits(teacher, train));
}

inline void stage_partition(const RunConfig &cfg, const std::filesystem::path &dir) {
  const auto z = load_logits(dir / layout::teacher_logits);
  const auto teacher = load_model(dir / layout::teacher);
  const double t_e = cfg.num("t_e");
  const auto records = rank_dataset(z, t_e);
  const auto plan = partition(records, cfg.num("r"));
  const auto manifest = build_manifest(plan, records, cfg.policy(),
                                       {z.cols(), t_e, io::hex64(teacher.checksum())});
  save_manifest(dir / layout::manifest, manifest);
  MetricsLog m;
  m.add({{"type", "partition"},
         {"N", plan.size()},
         {"r", plan.r},
         {"n_boundary", plan.n_boundary},
         {"e_low", plan.e_low},
         {"e_high", plan.e_high},
         {"policy", manifest.policy}});
  detail::append_metrics(dir, m);
}

inline void stage_augment(const RunConfig &cfg, const std::filesystem::path &dir) {
  const auto method = cfg.heda_method();
  detail::require(method.has_value(), ErrorCode::invalid_argument,
                  "augment stage needs heda = cutmix | mixup");
  const auto train = load_dataset(dir / layout::train);
  const auto plan = plan_from_manifest(load_manifest(dir / layout::manifest));
  HedaOptions opt;
  opt.method = *method;
  opt.source = parse_aug_source(cfg.str("heda_source"));
  opt.seed = Rng::derive(cfg.u64("seed"), 31).next_u64();
  opt.shape = cfg.image_shape();
  const auto ads = build_heda_dataset(train, plan, opt);
  save_augmented(dir / layout::heda, dir / layout::heda_provenance, ads);
  MetricsLog m;
  m.add({{"type", "augment"},
         {"method", to_string(*method)},
         {"source", to_string(opt.source)},
         {"original_N", ads.original_size},
         {"augmented", ads.augmented_count()},
         {"total_N", ads.data.size()}});
  detail::append_metrics(dir, m);
}

inline void stage_distill(const RunConfig &cfg, const std::filesystem::path &dir,
                          std::ostream &log) {
  AugmentedDataset train = cfg.heda_method()
                               ? load_augmented(dir / layout::heda, dir / layout::heda_provenance)
                               : plain_training_set(load_dataset(dir / layout::train));
  auto test = detail::load_optional(dir / layout::test);
  const auto teacher = load_model(dir / layout::teacher);
  const auto manifest = load_manifest(dir / layout::manifest);
  const auto checksum = teacher.checksum();
  const auto tc = cfg.train_config(false);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = distill_student(train, teacher, manifest, cfg.size_list("student_hidden"),
                                   tc, detail::maybe(test));
  const double secs = detail::seconds_since(t0);
  detail::require(teacher.checksum() == checksum, ErrorCode::invalid_argument,
                  "teacher parameters changed during distillation");
  log << "distill: " << tc.epochs << " epochs on " << train.data.size() << " samples in "
      << secs << " s (" << secs / static_cast<double>(tc.epochs) << " s/epoch)\n";
  save_model(dir / layout::student, res.model);
  MetricsLog m;
  m.add({{"type", "student_history"}, {"history", to_json(res.history)}});
  detail::append_metrics(dir, m);
}

struct EvalSummary {
  double teacher_test_accuracy = 0.0;
  double student_test_accuracy = 0.0;
  double disparity = 0.0;
  double cost_increase = 0.0;
};

inline EvalSummary stage_eval(const RunConfig &cfg, const std::filesystem::path &dir,
                              std::ostream &log) {
  const auto teacher = load_model(dir / layout::teacher);
  const auto student = load_model(dir / layout::student);
  const auto test = load_dataset(dir / layout::test);
  const auto manifest = load_manifest(dir / layout::manifest);
  const auto plan = plan_from_manifest(manifest);
  const auto zt_train = load_logits(dir / layout::teacher_logits);
  const auto zt_test = logits(teacher, test);
  const auto zs_test = logits(student, test);

  EvalSummary s;
  s.teacher_test_accuracy = accuracy(zt_test, test.labels);
  s.student_test_accuracy = accuracy(zs_test, test.labels);
  const auto conf = bucket_confidence(zt_train, plan);
  const auto disp = correlation_disparity(zs_test, zt_test);
  s.disparity = disp.mean_off_diagonal;
  const double aug_r = cfg.heda_method() ? plan.r : 0.0;
  s.cost_increase = cost_report(plan.size(), aug_r);

  io::write_text(dir / layout::bucket_confidence, bucket_confidence_csv(conf));
  io::write_text(dir / layout::correlation_disparity, correlation_disparity_csv(disp));
  MetricsLog m;
  m.add({{"type", "bucket_confidence"}, {"stats", to_json(conf)}});
  m.add({{"type", "correlation_disparity"}, {"mean_off_diagonal", s.disparity}});
  m.add({{"type", "cost"}, {"base_N", plan.size()}, {"r", aug_r},
         {"relative_step_increase", s.cost_increase}});
  m.add({{"type", "summary"},
         {"teacher_test_accuracy", s.teacher_test_accuracy},
         {"student_test_accuracy", s.student_test_accuracy},
         {"policy", cfg.str("policy")},
         {"r", cfg.num("r")},
         {"heda", cfg.str("heda")},
         {"seed", cfg.u64("seed")}});
  detail::append_metrics(dir, m);
  log << "eval: teacher " << s.teacher_test_accuracy << ", student "
      << s.student_test_accuracy << ", disparity " << s.disparity << "\n";
  return s;
}

/// Runs `fn` as stage `name`; on failure leaves a FAILED marker naming the
/// stage and rethrows as StageError.
template <typename Fn>
auto run_stage(const std::string &name, const std::filesystem::path &dir, Fn &&fn) {
  try {
    return fn();
  } catch (const Error &e) {
    io::write_text(dir / layout::failed, name + ": " + e.what() + "\n");
    throw StageError(name, e);
  } catch (const std::exception &e) {
    const Error wrapped(ErrorCode::io, e.what());
    io::write_text(dir / layout::failed, name + ": " + e.what() + "\n");
    throw StageError(name, wrapped);
  }
}

/// Full pipeline into `dir`: data, pretrain, score, partition, [augment],
/// distill, eval. The resolved config is echoed first.
inline EvalSummary run_pipeline(const RunConfig &cfg, const std::filesystem::path &dir,
                                std::ostream &log) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  for (auto f : {layout::failed, layout::metrics})
    std::filesystem::remove(dir / f);
  io::write_text(dir / layout::config, cfg.echo());
  run_stage("data", dir, [&] { stage_data(cfg, dir); });
  run_stage("pretrain", dir, [&] { stage_pretrain(cfg, dir, log); });
  run_stage("score", dir, [&] { stage_score(cfg, dir); });
  run_stage("partition", dir, [&] { stage_partition(cfg, dir); });
  if (cfg.heda_method())
    run_stage("augment", dir, [&] { stage_augment(cfg, dir); });
  else
    for (auto f : {layout::heda, layout::heda_provenance})
      std::filesystem::remove(dir / f);
  run_stage("distill", dir, [&] { stage_distill(cfg, dir, log); });
  return run_stage("eval", dir, [&] { return stage_eval(cfg, dir, log); });
}

// ---- Sweep over r ------------------------------------------------------------

struct SweepRow {
  std::string label; ///< "r=0.2" or "baseline"
  double r = 0.0;
  std::vector<double> accuracies; ///< successful cells only
  std::size_t failed = 0;

  double mean() const {
    if (accuracies.empty())
      return std::nan("");
    double s = 0.0;
    for (double a : accuracies)
      s += a;
    return s / static_cast<double>(accuracies.size());
  }
  /// Sample standard deviation (0 for a single cell).
  double sd() const {
    if (accuracies.size() < 2)
      return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double a : accuracies)
      s += (a - m) * (a - m);
    return std::sqrt(s / static_cast<double>(accuracies.size() - 1));
  }
};

struct SweepTable {
  std::vector<SweepRow> rows;
};

inline std::string format_sweep_table(const SweepTable &t) {
  std::ostringstream os;
  os << "row        mean_acc   sd_acc     ok  failed\n";
  for (const auto &r : t.rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-10s %-10.4f %-10.4f %-3zu %zu\n", r.label.c_str(),
                  r.mean(), r.sd(), r.accuracies.size(), r.failed);
    os << buf;
  }
  return os.str();
}

inline std::string sweep_table_csv(const SweepTable &t) {
  std::string out = "row,r,mean_accuracy,sd_accuracy,ok,failed\n";
  for (const auto &r : t.rows)
    out += r.label + "," + text::fmt_double(r.r) + "," + text::fmt_double(r.mean()) + "," +
           text::fmt_double(r.sd()) + "," + std::to_string(r.accuracies.size()) + "," +
           std::to_string(r.failed) + "\n";
  return out;
}

/// One pipeline per (r, seed) plus a constant-temperature baseline per seed.
/// Cells are independent runs under `root/<run_name>/`; with jobs > 1 they
/// run concurrently, and results are collected in a fixed order.
inline SweepTable run_sweep(const RunConfig &base, const std::vector<double> &r_values,
                            std::size_t seeds, const std::filesystem::path &root,
                            std::size_t jobs, std::ostream &log) {
  detail::require(!r_values.empty(), ErrorCode::invalid_argument, "sweep needs r values");
  detail::require(seeds >= 1, ErrorCode::invalid_argument, "sweep needs at least one seed");
  base.validate();
  struct Cell {
    std::size_t row;
    RunConfig cfg;
    std::filesystem::path dir;
  };
  SweepTable table;
  std::vector<Cell> cells;
  const auto sweep_dir = root / base.str("run_name");
  auto add_row = [&](std::string label, double r, bool baseline) {
    table.rows.push_back({label, r, {}, 0});
    for (std::size_t s = 1; s <= seeds; ++s) {
      RunConfig c = base;
      c.set("seed", std::to_string(s));
      if (baseline) {
        c.set("policy", "constant");
      } else {
        c.set("r", text::fmt_double(r));
      }
      const std::string name = label + "_seed" + std::to_string(s);
      c.set("run_name", base.str("run_name") + "/" + name);
      cells.push_back({table.rows.size() - 1, c, sweep_dir / name});
    }
  };
  add_row("baseline", base.num("r"), true);
  for (double r : r_values)
    add_row("r=" + text::fmt_double(r), r, false);

  auto run_cell = [](const Cell &cell) -> std::optional<double> {
    std::ostringstream quiet;
    try {
      return run_pipeline(cell.cfg, cell.dir, quiet).student_test_accuracy;
    } catch (const Error &) {
      return std::nullopt;
    }
  };
  std::vector<std::optional<double>> results(cells.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      results[i] = run_cell(cells[i]);
  } else {
    for (std::size_t start = 0; start < cells.size(); start += jobs) {
      std::vector<std::future<std::optional<double>>> fut;
      for (std::size_t i = start; i < std::min(cells.size(), start + jobs); ++i)
        fut.push_back(std::async(std::launch::async, run_cell, std::cref(cells[i])));
      for (std::size_t i = 0; i < fut.size(); ++i)
        results[start + i] = fut[i].get();
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto &row = table.rows[cells[i].row];
    if (results[i]) {
      row.accuracies.push_back(*results[i]);
    } else {
      ++row.failed;
      log << "sweep: cell " << cells[i].dir.string() << " FAILED\n";
    }
  }
  std::filesystem::create_directories(sweep_dir);
  io::write_text(sweep_dir / "sweep_summary.csv", sweep_table_csv(table));
  return table;
}

} // namespace ekd

#endif // EKD_PIPELINE_HPP
