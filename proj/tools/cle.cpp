#include <Eigen/Core>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "cle/bench.hpp"
#include "cle/checkpoint.hpp"
#include "cle/gradcheck.hpp"
#include "cle/io_util.hpp"
#include "cle/run_config.hpp"
#include "cle/synthetic.hpp"

namespace fs = std::filesystem;
using namespace cle;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kData = 3 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::uint64_t fallback_seed(std::uint64_t dflt) {
  const char* env = std::getenv("CLE_SEED");
  if (!env || !*env) return dflt;
  try {
    return parse_u64(env);
  } catch (const std::exception&) {
    throw UsageError(std::string("CLE_SEED is not an unsigned integer: ") + env);
  }
}

// Shared by train, lr-range and eval.
struct ConfigFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string model, manifest, out;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "INI run config");
    cmd->add_option("--set", sets, "override a config key, e.g. --set train.epochs=5");
    cmd->add_option("--model", model, "stateless | stateful (overrides model.arch)");
    cmd->add_option("--manifest", manifest, "overrides data.manifest");
    cmd->add_option("--out", out, "overrides run.out_dir");
    seed_opt = cmd->add_option("--seed", seed, "overrides run.seed");
    cmd->footer(config_help());
  }

  RunConfig resolve() const {
    RunConfig rc = config.empty() ? RunConfig{} : load_run_config(config);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      set_key(rc, trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    if (!model.empty()) set_key(rc, "model.arch", model);
    if (!manifest.empty()) set_key(rc, "data.manifest", manifest);
    if (!out.empty()) set_key(rc, "run.out_dir", out);
    if (seed_opt && seed_opt->count()) {
      set_key(rc, "run.seed", std::to_string(seed));
    } else if (!rc.explicit_keys.count("run.seed")) {
      rc.seed = fallback_seed(rc.seed);
    }
    return rc;
  }
};

struct Splits {
  DatasetManifest manifest;
  std::vector<std::size_t> train, val, test;
};

Splits make_splits(const RunConfig& rc) {
  if (rc.manifest.empty()) throw UsageError("no manifest: set data.manifest or pass --manifest");
  Splits s;
  s.manifest = read_manifest(rc.manifest);
  const Split outer = split_manifest(s.manifest, split_spec(rc));
  s.test = outer.test;
  if (rc.val_fraction > 0.0) {
    const Split inner = carve_validation(s.manifest, outer.train, rc.val_fraction, rc.seed);
    s.train = inner.train;
    s.val = inner.test;
  } else {
    s.train = outer.train;
    s.val = outer.test;
  }
  return s;
}

void apply_threads(std::size_t threads) {
  if (threads == 0) throw UsageError("--threads must be >= 1");
  Eigen::setNbThreads(static_cast<int>(threads));
}

int cmd_synth(const SyntheticSpec& spec, const fs::path& out, bool force) {
  spec.validate();
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw UsageError(out.string() + " exists and is not empty (use --force)");
    fs::remove_all(out);
  }
  generate_synthetic_dataset(spec, out);
  std::cout << (out / "manifest.csv").string() << "\n";
  return kOk;
}

int cmd_stats(const fs::path& manifest_path, const std::string& edges_text, const std::string& out) {
  const auto edges = parse_size_list(edges_text);
  if (edges.empty()) throw UsageError("--edges must list at least one bin");
  BinSchedule bins;
  bins.edges = edges;
  bins.validate();
  const DatasetManifest m = read_manifest(manifest_path);
  const auto counts = length_histogram(m, edges);
  std::string csv = "class";
  for (auto e : edges) csv += "," + std::to_string(e);
  csv += ",total\n";
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::size_t total = 0;
    csv += std::to_string(c);
    for (auto n : counts[c]) {
      csv += "," + std::to_string(n);
      total += n;
    }
    csv += "," + std::to_string(total) + "\n";
  }
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_file_atomic(out, csv);
    std::cout << out << "\n";
  }
  return kOk;
}

int cmd_train(const ConfigFlags& flags, bool resume) {
  const RunConfig rc = flags.resolve();
  apply_threads(rc.threads);
  const Splits s = make_splits(rc);
  const ModelConfig mc = model_config(rc, s.manifest.num_classes());
  const PreprocessConfig pc = preprocess_config(rc, mc.height);
  TrainConfig tc = train_config(rc);
  tc.resume = resume;
  tc.progress = &std::cout;
  fs::create_directories(tc.out_dir);
  write_file_atomic(tc.out_dir / "config.ini", to_ini(rc));
  std::cout << to_ini(rc) << "\n";
  const Dataset train = load_dataset(s.manifest, s.train, pc, mc.num_classes);
  const Dataset val = load_dataset(s.manifest, s.val, pc, mc.num_classes);
  std::cout << "train " << train.size() << " videos, val " << val.size() << " videos\n";
  Model net(mc, mix_seed(rc.seed, 0xbeef));
  std::cout << to_string(mc.arch) << " network, " << net.parameter_count() << " parameters\n";
  const TrainResult r = cle::train(net, train, val, tc);
  std::cout << "best val accuracy " << format_double(r.best_val_acc) << " at epoch " << r.best_epoch << "\n";
  return kOk;
}

int cmd_lr_range(const ConfigFlags& flags, const RangeTestConfig& rt, const std::string& csv) {
  const RunConfig rc = flags.resolve();
  apply_threads(rc.threads);
  const Splits s = make_splits(rc);
  const ModelConfig mc = model_config(rc, s.manifest.num_classes());
  const Dataset train = load_dataset(s.manifest, s.train, preprocess_config(rc, mc.height), mc.num_classes);
  Model net(mc, mix_seed(rc.seed, 0xbeef));
  const auto rows = lr_range_test(make_range_step(net, train, train_config(rc)), rt);
  const fs::path path = csv.empty() ? fs::path(rc.out_dir) / "lr_range.csv" : fs::path(csv);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_range_csv(rows, path);
  const auto best = std::min_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.smoothed_loss < b.smoothed_loss;
  });
  std::cout << rows.size() << " iterations, lowest smoothed loss " << format_double(best->smoothed_loss)
            << " at lr " << format_double(best->lr) << "\n"
            << path.string() << "\n";
  return kOk;
}

int cmd_eval(ConfigFlags flags, const fs::path& ckpt_path, const std::string& which, const std::string& out,
             double min_accuracy) {
  if (flags.config.empty() && fs::exists(ckpt_path.parent_path() / "config.ini")) {
    flags.config = (ckpt_path.parent_path() / "config.ini").string();
  }
  const RunConfig rc = flags.resolve();
  apply_threads(rc.threads);
  auto net = load_model(ckpt_path);
  const ModelConfig& mc = net->config();
  const Splits s = make_splits(rc);
  if (s.manifest.num_classes() > mc.num_classes) {
    throw FormatError("split mismatch: manifest has " + std::to_string(s.manifest.num_classes()) +
                      " classes, checkpoint predicts " + std::to_string(mc.num_classes));
  }
  const std::vector<std::size_t>* ids = nullptr;
  if (which == "train") ids = &s.train;
  else if (which == "val") ids = &s.val;
  else if (which == "test") ids = &s.test;
  else throw UsageError("--split must be train, val or test");
  if (ids->empty()) throw FormatError("split mismatch: the " + which + " split is empty");
  const Dataset data = load_dataset(s.manifest, *ids, preprocess_config(rc, mc.height), mc.num_classes);
  TrainConfig tc = train_config(rc);
  tc.clip_len = mc.frames;
  const MetricsReport r = evaluate(*net, data, EvalConfig::from(tc));
  const fs::path dir = out.empty() ? ckpt_path.parent_path() / ("eval_" + which) : fs::path(out);
  fs::create_directories(dir);
  write_file_atomic(dir / "confusion.csv", confusion_csv(r));
  write_file_atomic(dir / "per_class.csv", per_class_csv(r));
  write_file_atomic(dir / "summary.txt", pairs_summary(r));
  std::cout << pairs_summary(r) << "loss " << format_double(r.loss) << "\n" << dir.string() << "\n";
  return r.accuracy >= min_accuracy ? kOk : kFailed;
}

int cmd_bench(const std::vector<std::string>& ckpts, const std::string& videos, std::size_t count,
              std::size_t frames, std::size_t reps, std::size_t warmup, std::uint64_t seed) {
  std::vector<VideoSample> raw;
  if (!videos.empty()) {
    const DatasetManifest m = read_manifest(videos);
    for (const auto& r : m.records) raw.push_back(load_video(m.resolve(r)));
  } else {
    SyntheticSpec spec;
    spec.len_min = spec.len_max = frames;
    spec.seed = seed;
    for (std::size_t i = 0; i < count; ++i) {
      raw.push_back(synthesize_video(spec, static_cast<int>(i % spec.num_classes), i));
    }
  }
  if (raw.empty()) throw FormatError("no videos to benchmark");
  for (const auto& path : ckpts) {
    auto net = load_model(path);
    Dataset data;
    data.num_classes = net->config().num_classes;
    PreprocessConfig pc;
    pc.size = net->config().height;
    for (const auto& v : raw) data.videos.push_back(prepare_video(v, pc));
    EvalConfig ec;
    ec.clip_len = net->config().frames;
    const LatencyStats st = bench_inference(*net, data, reps, ec, warmup);
    std::cout << latency_report(std::string(to_string(net->config().arch)) + " (" + path + ")", st);
  }
  return kOk;
}

int cmd_gradcheck(const GradCheckOptions& opt, const std::string& precision) {
  if (precision != "double") throw UsageError("gradcheck runs in double precision only");
  const auto rows = run_gradcheck_suite(opt);
  bool ok = true;
  std::printf("%-28s %6s %14s  %s\n", "op", "seeds", "max_rel_err", "result");
  for (const auto& r : rows) {
    std::printf("%-28s %6d %14.3e  %s\n", r.name.c_str(), r.seeds, r.max_relative_error,
                r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("%s\n", ok ? "all ops pass" : "gradient check FAILED");
  return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cle: ConvLSTM action recognition on depth video"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "cap on internal parallelism (1 is bitwise reproducible)")
      ->capture_default_str();
  std::function<int()> run;

  auto* synth = app.add_subcommand("synth", "write a synthetic depth-video dataset");
  SyntheticSpec spec;
  std::string synth_out;
  bool force = false;
  CLI::Option* synth_seed = nullptr;
  synth->add_option("--classes", spec.num_classes, "class count (<= 64)")->capture_default_str();
  synth->add_option("--per-class", spec.videos_per_class, "videos per class")->capture_default_str();
  synth->add_option("--len-min", spec.len_min, "shortest video in frames")->capture_default_str();
  synth->add_option("--len-max", spec.len_max, "longest video in frames")->capture_default_str();
  synth->add_option("--frame-size", spec.frame_size, "frame side in pixels")->capture_default_str();
  synth->add_flag("--late-cue", spec.late_cue, "class motion only in the second half");
  synth_seed = synth->add_option("--seed", spec.seed, "generator seed (CLE_SEED is the fallback)")
                   ->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_flag("--force", force, "replace a non-empty output directory");
  synth->callback([&] {
    if (!synth_seed->count()) spec.seed = fallback_seed(spec.seed);
    run = [&] { return cmd_synth(spec, synth_out, force); };
  });

  auto* stats = app.add_subcommand("stats", "class x bin histogram of reduced lengths");
  std::string stats_manifest, stats_out;
  std::string edges = join_sizes(BinSchedule::defaults().edges);
  stats->add_option("--manifest", stats_manifest, "manifest.csv")->required();
  stats->add_option("--edges", edges, "comma-separated bin edges")->capture_default_str();
  stats->add_option("--out", stats_out, "CSV path (default: stdout)");
  stats->callback([&] { run = [&] { return cmd_stats(stats_manifest, edges, stats_out); }; });

  auto* train_cmd = app.add_subcommand("train", "train a network");
  ConfigFlags train_flags;
  bool resume = false;
  train_flags.add(train_cmd);
  train_cmd->add_flag("--resume", resume, "continue from <out_dir>/last.ckpt");
  train_cmd->callback([&] { run = [&] { return cmd_train(train_flags, resume); }; });

  auto* range = app.add_subcommand("lr-range", "learning-rate range test");
  ConfigFlags range_flags;
  RangeTestConfig rt;
  std::string range_csv;
  range_flags.add(range);
  range->add_option("--start", rt.lr_start, "first learning rate")->capture_default_str();
  range->add_option("--end", rt.lr_end, "last learning rate")->capture_default_str();
  range->add_option("--iters", rt.iters, "iterations (>= 10)")->capture_default_str();
  range->add_option("--csv", range_csv, "output CSV (default: <out_dir>/lr_range.csv)");
  range->callback([&] { run = [&] { return cmd_lr_range(range_flags, rt, range_csv); }; });

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ConfigFlags eval_flags;
  std::string eval_ckpt, which = "test", eval_out;
  double min_acc = 0.0;
  eval_flags.add(eval);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--split", which, "train | val | test")->capture_default_str();
  eval->add_option("--report", eval_out, "report directory (default: beside the checkpoint)");
  eval->add_option("--min-accuracy", min_acc, "exit 1 below this accuracy")->capture_default_str();
  eval->callback([&] {
    run = [&] { return cmd_eval(eval_flags, eval_ckpt, which, eval_out, min_acc); };
  });

  auto* bench = app.add_subcommand("bench", "per-video inference latency");
  std::vector<std::string> bench_ckpts;
  std::string bench_videos;
  std::size_t count = 8, frames = 100, reps = 3, warmup = 3;
  std::uint64_t bench_seed = 7;
  bench->add_option("--checkpoint", bench_ckpts, "checkpoint(s) to time")->required();
  bench->add_option("--videos", bench_videos, "manifest of videos (default: synthetic)");
  bench->add_option("--count", count, "synthetic video count")->capture_default_str();
  bench->add_option("--frames", frames, "synthetic video length")->capture_default_str();
  bench->add_option("--reps", reps, "timed passes over the videos")->capture_default_str();
  bench->add_option("--warmup", warmup, "untimed predictions first")->capture_default_str();
  auto* bench_seed_opt = bench->add_option("--seed", bench_seed, "synthetic video seed")->capture_default_str();
  bench->callback([&] {
    if (!bench_seed_opt->count()) bench_seed = fallback_seed(bench_seed);
    run = [&] { return cmd_bench(bench_ckpts, bench_videos, count, frames, reps, warmup, bench_seed); };
  });

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op");
  GradCheckOptions gopt;
  std::string precision = "double";
  auto* gseed = grad->add_option("--seed", gopt.seed, "base seed")->capture_default_str();
  grad->add_option("--seeds", gopt.seeds, "random draws per op")->capture_default_str();
  grad->add_option("--tolerance", gopt.tolerance, "max relative error")->capture_default_str();
  grad->add_option("--precision", precision, "double")->capture_default_str();
  grad->add_flag("--corrupt-backward", gopt.corrupt_backward, "sabotage one backward pass (self-test)");
  grad->callback([&] {
    if (!gseed->count()) gopt.seed = fallback_seed(gopt.seed);
    run = [&] { return cmd_gradcheck(gopt, precision); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  try {
    apply_threads(threads);
    return run();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
}
