#pragma once

// The four CLI commands as library functions. Each returns a process exit
// code; errors are mapped to codes in run_command.

#include <cstdio>
#include <iostream>
#include <optional>

#include "dista/checkpoint.hpp"
#include "dista/train.hpp"

namespace dista {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitNumeric = 2,
  kExitIo = 3,
  kExitCompat = 4,
  kExitGradcheck = 5,
};

struct CommandOptions {
  std::filesystem::path config;  // empty → built-in defaults
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> until_epoch;  // stop after this many completed epochs
  std::string axis;
  std::string values;
};

inline const char* metrics_header() {
  return "epoch,train_loss,train_acc,test_loss,test_acc,lr,tau_mean,tau_min,tau_max";
}

/// One metrics.csv line. Wall-clock time is kept out so the file is
/// reproducible byte for byte; it goes to timing.csv instead.
inline std::string metrics_line(const MetricsRow& r) {
  using detail::format_double;
  return std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.train_acc) + "," +
         format_double(r.test_loss) + "," + format_double(r.test_acc) + "," + format_double(r.lr) + "," +
         format_double(r.tau_mean) + "," + format_double(r.tau_min) + "," + format_double(r.tau_max);
}

/// Exclusive marker file guarding an output directory.
class OutputLock {
 public:
  explicit OutputLock(std::filesystem::path dir) : path_(std::move(dir) / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw IoError("output directory is locked or not writable: " + path_.string());
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

inline RunConfig resolve_config(const CommandOptions& opt) {
  RunConfig cfg = opt.config.empty() ? parse_config("") : load_config(opt.config);
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (opt.out_dir) cfg.out_dir = opt.out_dir->string();
  cfg.finalize();
  return cfg;
}

inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.dataset == DatasetKind::cifar10) return load_cifar10(cfg.data_dir, cfg.cifar);
  return gen_temporal_synthetic(cfg.synthetic);
}

/// Shuffles are derived from (seed, epoch), so this pair is the whole
/// random state a resumed run needs.
inline std::string rng_descriptor(std::uint64_t seed, std::uint64_t next_epoch) {
  return "batch_iter seed=" + std::to_string(seed) + " next_epoch=" + std::to_string(next_epoch);
}

/// Configuration text with the output directory blanked, used to decide
/// whether a checkpoint belongs to a run.
inline std::string run_identity(RunConfig cfg) {
  cfg.out_dir.clear();
  return render_config(cfg);
}

struct TrainOutcome {
  std::vector<MetricsRow> rows;  // epochs run by this invocation
  std::filesystem::path checkpoint;
  double best_test_acc = 0;
};

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << line << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

/// Trains from scratch, or resumes when `checkpoint` names an existing file.
inline TrainOutcome train_run(const RunConfig& cfg, std::optional<std::filesystem::path> checkpoint,
                              std::optional<std::size_t> until_epoch, std::ostream& log) {
  namespace fs = std::filesystem;
  const fs::path out = cfg.out_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  OutputLock lock(out);

  Model<float> model(cfg.model, cfg.train.seed);
  OptimState<float> optim;
  optim.init(model.params());
  TrainOutcome outcome;
  outcome.checkpoint = checkpoint.value_or(out / "checkpoint.bin");
  const fs::path metrics = out / "metrics.csv";
  const fs::path timing = out / "timing.csv";
  const std::string config_text = render_config(cfg);

  std::size_t start = 0;
  if (checkpoint && fs::exists(*checkpoint)) {
    const Checkpoint ck = load_checkpoint(*checkpoint);
    const RunConfig saved = parse_config(ck.config);
    if (run_identity(saved) != run_identity(cfg))
      throw CompatError("checkpoint " + checkpoint->string() + " was written with a different configuration");
    restore_checkpoint(ck, model, optim);
    start = ck.epoch;
    if (ck.rng != rng_descriptor(cfg.train.seed, start))
      throw CompatError("checkpoint random state '" + ck.rng + "' does not match its epoch counter");
    log << "resuming at epoch " << start << " of " << cfg.train.epochs << "\n";
  }

  // Rows past the resume point belong to an abandoned continuation.
  if (start == 0 || !fs::exists(metrics)) {
    detail::write_lines(metrics, {metrics_header()});
    detail::write_lines(timing, {"epoch,wall_seconds"});
  } else {
    auto lines = detail::read_lines(metrics);
    if (lines.empty() || lines.front() != metrics_header())
      throw IoError(metrics.string() + " does not start with the metrics header");
    if (lines.size() < start + 1)
      throw IoError(metrics.string() + " has fewer rows than the checkpoint's epoch count");
    lines.resize(start + 1);
    detail::write_lines(metrics, lines);
    if (fs::exists(timing)) {
      auto t = detail::read_lines(timing);
      t.resize(std::min(t.size(), start + 1));
      detail::write_lines(timing, t);
    }
  }

  const Dataset ds = load_dataset(cfg);
  const std::size_t end = std::min(cfg.train.epochs, until_epoch.value_or(cfg.train.epochs));
  for (std::size_t e = start; e < end; ++e) {
    MetricsRow row = train_epoch(model, ds, cfg.train, optim, e);
    const EvalResult ev = evaluate(model, ds, ds.test, cfg.eval_batch_size);
    row.test_acc = ev.accuracy;
    row.test_loss = ev.loss;
    detail::append_line(metrics, metrics_line(row));
    detail::append_line(timing, std::to_string(row.epoch) + "," + detail::format_double(row.wall_seconds));
    outcome.rows.push_back(row);
    outcome.best_test_acc = std::max(outcome.best_test_acc, row.test_acc);
    log << "epoch " << e + 1 << "/" << cfg.train.epochs << " loss=" << row.train_loss << " train_acc=" << row.train_acc
        << " test_acc=" << row.test_acc << " lr=" << row.lr << " tau_mean=" << row.tau_mean << "\n";
    if ((e + 1) % cfg.checkpoint_every == 0 || e + 1 == end)
      save_checkpoint(outcome.checkpoint,
                      make_checkpoint(model, optim, config_text, e + 1, rng_descriptor(cfg.train.seed, e + 1)));
  }
  return outcome;
}

inline int cmd_train(const CommandOptions& opt, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = resolve_config(opt);
  const TrainOutcome r = train_run(cfg, opt.checkpoint, opt.until_epoch, log);
  out << "metrics=" << (std::filesystem::path(cfg.out_dir) / "metrics.csv").string()
      << " checkpoint=" << r.checkpoint.string() << "\n";
  return kExitOk;
}

inline int cmd_eval(const CommandOptions& opt, std::ostream& out, std::ostream& log) {
  if (!opt.checkpoint) {
    log << "eval: --checkpoint is required\n";
    return kExitUsage;
  }
  const RunConfig cfg = resolve_config(opt);
  const Checkpoint ck = load_checkpoint(*opt.checkpoint);
  Model<float> model(cfg.model, cfg.train.seed);
  OptimState<float> optim;
  restore_checkpoint(ck, model, optim);
  const Dataset ds = load_dataset(cfg);
  const EvalResult ev = evaluate(model, ds, ds.test, cfg.eval_batch_size);
  out << "test_acc=" << detail::format_double(ev.accuracy) << " test_loss=" << detail::format_double(ev.loss) << "\n";
  return kExitOk;
}

inline int cmd_gradcheck(const CommandOptions& opt, std::ostream& out, std::ostream& log) {
  const RunConfig cfg = resolve_config(opt);
  GradcheckOptions g;
  g.model = cfg.model;
  // Finite differences are only meaningful away from the denoising
  // threshold, so the check runs with denoising off.
  g.model.attention.adn_enabled = false;
  g.model.adn_blocks = 0;
  g.seed = cfg.train.seed;
  g.step = cfg.gradcheck_step;
  g.corrupt_tau_grad = cfg.gradcheck_inject_tau_fault;
  const GradcheckReport report = run_gradcheck(g);
  for (const auto& grp : report.groups)
    out << "group=" << grp.group << " max_rel_error=" << grp.max_rel_error << " checked=" << grp.checked
        << " worst=" << grp.worst << "\n";
  if (report.passed()) {
    out << "gradcheck passed (tolerance " << report.tolerance << ")\n";
    return kExitOk;
  }
  log << "gradcheck failed; offending parameters:";
  for (const auto& name : report.offenders) log << " " << name;
  log << "\n";
  return kExitGradcheck;
}

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes{"timesteps", "taw_size", "denoise_threshold", "adn_blocks"};
  return axes;
}

inline int cmd_ablate(const CommandOptions& opt, std::ostream& out, std::ostream& log) {
  const auto& axes = ablation_axes();
  if (std::find(axes.begin(), axes.end(), opt.axis) == axes.end()) {
    log << "ablate: --axis must be one of timesteps, taw_size, denoise_threshold, adn_blocks\n";
    return kExitUsage;
  }
  std::vector<std::string> values;
  for (std::size_t start = 0; start <= opt.values.size();) {
    const auto comma = opt.values.find(',', start);
    const std::string v = detail::trim(opt.values.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!v.empty()) values.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (values.empty()) {
    log << "ablate: --values needs at least one value\n";
    return kExitUsage;
  }
  const RunConfig base = resolve_config(opt);
  // Validate every setting before spending time on training.
  std::vector<RunConfig> runs;
  for (const auto& v : values) {
    RunConfig c = base;
    set_config_value(c, opt.axis, v);
    c.out_dir = (std::filesystem::path(base.out_dir) / (opt.axis + "_" + v)).string();
    c.finalize();
    runs.push_back(std::move(c));
  }
  std::filesystem::create_directories(base.out_dir);
  std::vector<std::string> lines{"axis,value,epochs,test_acc,test_loss,best_test_acc,train_acc,tau_mean"};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    log << "ablate " << opt.axis << "=" << values[i] << "\n";
    const TrainOutcome r = train_run(runs[i], std::nullopt, std::nullopt, log);
    const MetricsRow& last = r.rows.back();
    lines.push_back(opt.axis + "," + values[i] + "," + std::to_string(r.rows.size()) + "," +
                    detail::format_double(last.test_acc) + "," + detail::format_double(last.test_loss) + "," +
                    detail::format_double(r.best_test_acc) + "," + detail::format_double(last.train_acc) + "," +
                    detail::format_double(last.tau_mean));
  }
  const auto path = std::filesystem::path(base.out_dir) / "ablation.csv";
  detail::write_lines(path, lines);
  out << "ablation=" << path.string() << "\n";
  return kExitOk;
}

/// Runs a command by name and maps failures to exit codes.
inline int run_command(std::string_view name, const CommandOptions& opt, std::ostream& out = std::cout,
                       std::ostream& log = std::cerr) {
  try {
    if (name == "train") return cmd_train(opt, out, log);
    if (name == "eval") return cmd_eval(opt, out, log);
    if (name == "gradcheck") return cmd_gradcheck(opt, out, log);
    if (name == "ablate") return cmd_ablate(opt, out, log);
    log << "unknown command " << name << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    log << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DomainError& e) {
    log << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CompatError& e) {
    log << "incompatible checkpoint: " << e.what() << "\n";
    return kExitCompat;
  } catch (const IoError& e) {
    log << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    log << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    log << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace dista
