#include "cle/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <ostream>

#include "cle/checkpoint.hpp"

namespace cle {

TrainConfig TrainConfig::stateless_defaults() {
  TrainConfig c;
  c.batch_size = 12;
  c.schedule = ScheduleSpec::paper_stateless();
  return c;
}

TrainConfig TrainConfig::stateful_defaults() {
  TrainConfig c;
  c.batch_size = 6;
  c.schedule = ScheduleSpec::paper_stateful();
  return c;
}

EvalConfig EvalConfig::from(const TrainConfig& t) {
  EvalConfig e;
  e.batch_size = t.batch_size;
  e.clip_len = t.clip_len;
  e.bins = t.bins;
  e.weight_exponent = t.weight_exponent;
  e.carry_state = t.carry_state;
  return e;
}

void WindowOrderGuard::accept(const ClipBatch& b) {
  if (b.t < 1 || b.t > b.T) throw std::logic_error("window index outside 1..T");
  if (b.t == 1) {
    if (open_ && t_ != T_) throw std::logic_error("batch group abandoned before its last window");
    open_ = true;
    group_ = b.group;
    t_ = 1;
    T_ = b.T;
    return;
  }
  if (!open_ || b.group != group_ || b.t != t_ + 1 || b.T != T_) {
    throw std::logic_error("out-of-order window: got t=" + std::to_string(b.t) + " of group " +
                           std::to_string(b.group) + " after t=" + std::to_string(t_) + " of group " +
                           std::to_string(group_));
  }
  t_ = b.t;
}

std::string log_csv(const std::vector<EpochRecord>& log) {
  std::string out = "epoch,lr,train_loss,train_acc,val_loss,val_acc,seconds\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "," + format_double(r.lr) + "," + format_double(r.train_loss) + "," +
           format_double(r.train_acc) + "," + format_double(r.val_loss) + "," + format_double(r.val_acc) + "," +
           format_double(r.seconds) + "\n";
  }
  return out;
}

std::vector<EpochRecord> read_log_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  if (trim(line) != "epoch,lr,train_loss,train_acc,val_loss,val_acc,seconds") {
    throw FormatError(path.string() + ": unexpected log header");
  }
  std::vector<EpochRecord> out;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    const auto c = split(trim(line), ',');
    if (c.size() != 7) throw FormatError(path.string() + ": malformed log row");
    out.push_back({parse_u64(c[0]), parse_double(c[1]), parse_double(c[2]), parse_double(c[3]),
                   parse_double(c[4]), parse_double(c[5]), parse_double(c[6])});
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<double> row_probs(const Tensor& probs, std::size_t i) {
  const std::size_t k = probs.dim(1);
  std::vector<double> p(k);
  for (std::size_t j = 0; j < k; ++j) p[j] = probs[i * k + j];
  return p;
}

int argmax(const std::vector<double>& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

double nll(const std::vector<double>& p, int label) {
  return -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-12));
}

std::size_t total_epochs(const TrainConfig& cfg) {
  if (cfg.epochs) {
    if (cfg.schedule.end_epoch && cfg.epochs > cfg.schedule.end_epoch) {
      throw std::invalid_argument("requested epochs exceed the schedule");
    }
    return cfg.epochs;
  }
  if (!cfg.schedule.end_epoch) throw std::invalid_argument("open-ended schedule needs an epoch count");
  return cfg.schedule.end_epoch;
}

// Shared epoch loop: checkpoints, logging, plateau bookkeeping and resume.
class Session {
 public:
  Session(Model& net, const TrainConfig& cfg) : net_(net), cfg_(cfg) {
    cfg.schedule.validate();
    if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");
    epochs_ = total_epochs(cfg);
    if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
    if (cfg.resume) load_resume();
  }

  std::size_t first_epoch() const { return start_; }
  std::size_t epochs() const { return epochs_; }
  AdamState<float>& adam() { return adam_; }
  TrainResult& result() { return result_; }

  double lr(std::size_t epoch, std::size_t iter, std::size_t iters) const {
    return lr_at(cfg_.schedule, epoch, iter, iters, &plateau_);
  }

  /// Returns false when training should stop.
  bool finish_epoch(EpochRecord rec) {
    const ScheduleSpec& phase = active_phase(cfg_.schedule, rec.epoch);
    if (phase.kind == ScheduleSpec::Kind::Plateau) {
      if (plateau_.lr <= 0.0) plateau_.lr = phase.initial_lr;
      plateau_.update(rec.val_acc, phase.patience, phase.factor);
    }
    result_.log.push_back(rec);
    result_.adam_steps = adam_.step;
    const bool improved = rec.val_acc > result_.best_val_acc;
    if (improved) {
      result_.best_val_acc = rec.val_acc;
      result_.best_epoch = rec.epoch;
    }
    if (!cfg_.out_dir.empty()) {
      Metadata meta = common_meta(rec.epoch);
      if (improved) {
        save_checkpoint(snapshot(net_, meta), cfg_.out_dir / "best.ckpt");
      }
      Checkpoint last = snapshot(net_, meta);
      store_adam(adam_, last);
      last.metadata["train.plateau_lr"] = format_double(plateau_.lr);
      last.metadata["train.plateau_best"] = format_double(plateau_.best);
      last.metadata["train.plateau_wait"] = std::to_string(plateau_.wait);
      last.metadata["train.best_epoch"] = std::to_string(result_.best_epoch);
      last.metadata["train.warmup_windows"] = std::to_string(result_.warmup_windows);
      last.metadata["train.update_windows"] = std::to_string(result_.update_windows);
      save_checkpoint(last, cfg_.out_dir / "last.ckpt");
      write_file_atomic(cfg_.out_dir / "log.csv", log_csv(result_.log));
    }
    if (cfg_.progress) {
      *cfg_.progress << "epoch " << rec.epoch << " lr " << rec.lr << " loss " << rec.train_loss << " acc "
                     << rec.train_acc << " val_loss " << rec.val_loss << " val_acc " << rec.val_acc << " ("
                     << rec.seconds << " s)\n";
      cfg_.progress->flush();
    }
    return !cfg_.on_epoch || cfg_.on_epoch(rec);
  }

 private:
  Metadata common_meta(std::size_t epoch) const {
    return {
        {"train.epoch", std::to_string(epoch)},
        {"train.val_accuracy", format_double(result_.best_val_acc)},
        {"train.seed", std::to_string(cfg_.seed)},
        {"train.schedule", to_string(cfg_.schedule.kind)},
    };
  }

  void load_resume() {
    const auto path = cfg_.out_dir / "last.ckpt";
    if (!std::filesystem::exists(path)) throw FormatError("nothing to resume: " + path.string() + " is missing");
    const Checkpoint ckpt = load_checkpoint(path);
    restore(net_, ckpt);
    if (parse_u64(ckpt.meta("train.seed")) != cfg_.seed) {
      throw std::invalid_argument("resume seed differs from the interrupted run");
    }
    adam_ = load_adam(ckpt);
    plateau_.lr = parse_double(ckpt.meta("train.plateau_lr"));
    plateau_.best = parse_double(ckpt.meta("train.plateau_best"));
    plateau_.wait = parse_u64(ckpt.meta("train.plateau_wait"));
    const std::size_t done = parse_u64(ckpt.meta("train.epoch"));
    start_ = done + 1;
    result_.best_val_acc = parse_double(ckpt.meta("train.val_accuracy"));
    result_.best_epoch = parse_u64(ckpt.meta("train.best_epoch"));
    result_.warmup_windows = parse_u64(ckpt.meta("train.warmup_windows"));
    result_.update_windows = parse_u64(ckpt.meta("train.update_windows"));
    result_.adam_steps = adam_.step;
    for (const auto& r : read_log_csv(cfg_.out_dir / "log.csv")) {
      if (r.epoch <= done) result_.log.push_back(r);
    }
  }

  Model& net_;
  const TrainConfig& cfg_;
  std::size_t epochs_ = 0, start_ = 0;
  AdamState<float> adam_;
  PlateauState plateau_;
  TrainResult result_;
};

void check_arch(const Model& net, Architecture want) {
  if (net.config().arch != want) {
    throw std::invalid_argument(std::string("expected a ") + to_string(want) + " network, got " +
                                to_string(net.config().arch));
  }
}

void check_data(const Model& net, const Dataset& d, const char* what) {
  if (d.size() == 0) throw std::invalid_argument(std::string(what) + " split is empty");
  if (d.num_classes > net.config().num_classes) {
    throw std::invalid_argument(std::string(what) + " has more classes than the network outputs");
  }
  for (const auto& v : d.videos) {
    if (v.size != net.config().height || v.size != net.config().width) {
      throw ShapeError(std::string(what) + " frames are " + std::to_string(v.size) + " px, the network expects " +
                       std::to_string(net.config().height));
    }
  }
}

}  // namespace

TrainResult train(Model& net, const Dataset& train_set, const Dataset& val, const TrainConfig& cfg) {
  return net.config().arch == Architecture::Stateless ? train_stateless(net, train_set, val, cfg)
                                                      : train_stateful(net, train_set, val, cfg);
}

TrainResult train_stateless(Model& net, const Dataset& train_set, const Dataset& val, const TrainConfig& cfg) {
  check_arch(net, Architecture::Stateless);
  check_data(net, train_set, "training");
  check_data(net, val, "validation");
  Session s(net, cfg);
  const std::size_t d = net.config().frames;
  const std::size_t n = train_set.size();
  const std::size_t iters = (n + cfg.batch_size - 1) / cfg.batch_size;
  const EvalConfig ecfg = EvalConfig::from(cfg);
  for (std::size_t epoch = s.first_epoch(); epoch < s.epochs(); ++epoch) {
    const auto t0 = Clock::now();
    Rng rng(mix_seed(cfg.seed, epoch, 0x5eed));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t it = 0; it < iters; ++it) {
      const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(it * cfg.batch_size),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (it + 1) * cfg.batch_size)));
      ClipBatch b = stateless_batch(train_set, ids, d, &rng);
      net.zero_grad();
      net.set_dropout_seed(mix_seed(cfg.seed, epoch, it + 1));
      const Tensor logits = net.forward_logits(b.clips, Mode::Train, true);
      const auto ce = softmax_cross_entropy(logits, b.labels);
      net.backward(ce.grad_logits);
      net.clear_cache();
      adam_step(net.parameters(), s.adam(), s.lr(epoch, it, iters));
      loss_sum += ce.loss * static_cast<double>(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        correct += argmax(row_probs(ce.probabilities, i)) == b.labels[i];
      }
    }
    const MetricsReport vr = evaluate(net, val, ecfg);
    EpochRecord rec{epoch, s.lr(epoch, 0, iters), loss_sum / static_cast<double>(n),
                    static_cast<double>(correct) / static_cast<double>(n), vr.loss, vr.accuracy,
                    std::chrono::duration<double>(Clock::now() - t0).count()};
    if (!s.finish_epoch(rec)) break;
  }
  return s.result();
}

TrainResult train_stateful(Model& net, const Dataset& train_set, const Dataset& val, const TrainConfig& cfg) {
  check_arch(net, Architecture::Stateful);
  check_data(net, train_set, "training");
  check_data(net, val, "validation");
  if (cfg.clip_len != net.config().frames) {
    throw std::invalid_argument("clip length differs from the network's window length");
  }
  BinSchedule bins = cfg.bins;
  bins.clip_len = cfg.clip_len;
  Session s(net, cfg);
  std::vector<std::size_t> all(train_set.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  EvalConfig ecfg = EvalConfig::from(cfg);
  ecfg.bins = bins;
  for (std::size_t epoch = s.first_epoch(); epoch < s.epochs(); ++epoch) {
    const auto t0 = Clock::now();
    Rng rng(mix_seed(cfg.seed, epoch, 0x5eed));
    const auto groups = plan_stateful_groups(train_set, all, cfg.batch_size, bins, &rng);
    auto stream = make_stateful_schedule(groups, train_set, bins);
    std::size_t iters = 0;
    for (const auto& b : stream) iters += b.update_weights;
    WindowOrderGuard guard;
    double loss_sum = 0.0;
    std::size_t loss_n = 0, correct = 0, rows = 0, it = 0, step = 0;
    std::vector<std::vector<std::vector<double>>> window_probs;  // [row][t]
    for (auto& b : stream) {
      guard.accept(b);
      if (b.t == 1) window_probs.assign(b.videos.size(), {});
      if (b.reset_before.front() || !cfg.carry_state) net.reset_state();
      assemble_stateful_clips(b, train_set, cfg.clip_len);
      net.set_dropout_seed(mix_seed(cfg.seed, epoch, ++step));
      Tensor probs;
      if (!b.update_weights) {
        probs = activation(net.forward_logits(b.clips, Mode::Train, false), Activation::softmax(-1));
        ++s.result().warmup_windows;
      } else {
        net.zero_grad();
        const Tensor logits = net.forward_logits(b.clips, Mode::Train, true);
        const auto ce = softmax_cross_entropy(logits, b.labels);
        net.backward(ce.grad_logits);
        net.clear_cache();
        adam_step(net.parameters(), s.adam(), s.lr(epoch, it++, iters));
        ++s.result().update_windows;
        loss_sum += ce.loss * static_cast<double>(b.labels.size());
        loss_n += b.labels.size();
        probs = ce.probabilities;
      }
      b.clips = Tensor();
      for (std::size_t i = 0; i < b.videos.size(); ++i) window_probs[i].push_back(row_probs(probs, i));
      if (b.t == b.T) {
        for (std::size_t i = 0; i < b.videos.size(); ++i) {
          correct += argmax(aggregate_predictions(window_probs[i], cfg.weight_exponent)) == b.labels[i];
          ++rows;
        }
      }
    }
    net.reset_state();
    const MetricsReport vr = evaluate(net, val, ecfg);
    EpochRecord rec{epoch, s.lr(epoch, 0, std::max<std::size_t>(iters, 1)),
                    loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0,
                    static_cast<double>(correct) / static_cast<double>(rows), vr.loss, vr.accuracy,
                    std::chrono::duration<double>(Clock::now() - t0).count()};
    if (!s.finish_epoch(rec)) break;
  }
  return s.result();
}

std::function<double(double)> make_range_step(Model& net, const Dataset& data, const TrainConfig& cfg) {
  check_data(net, data, "training");
  struct State {
    AdamState<float> adam;
    Rng rng;
    std::vector<ClipBatch> stream;
    std::size_t next = 0, step = 0;
  };
  auto st = std::make_shared<State>(State{{}, Rng(mix_seed(cfg.seed, 0, 0x7a11)), {}, 0, 0});
  BinSchedule bins = cfg.bins;
  bins.clip_len = cfg.clip_len;
  return [&net, &data, cfg, bins, st](double lr) -> double {
    const bool stateless = net.config().arch == Architecture::Stateless;
    for (;;) {
      ClipBatch b;
      if (stateless) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) ids.push_back(static_cast<std::size_t>(uniform_int(st->rng, 0, static_cast<std::int64_t>(data.size()) - 1)));
        b = stateless_batch(data, ids, net.config().frames, &st->rng);
      } else {
        if (st->next == st->stream.size()) {
          std::vector<std::size_t> all(data.size());
          for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
          st->stream = make_stateful_schedule(plan_stateful_groups(data, all, cfg.batch_size, bins, &st->rng),
                                              data, bins);
          st->next = 0;
        }
        b = st->stream[st->next];
        st->stream[st->next++] = ClipBatch();
        if (b.reset_before.front() || !cfg.carry_state) net.reset_state();
        assemble_stateful_clips(b, data, cfg.clip_len);
      }
      net.set_dropout_seed(mix_seed(cfg.seed, 0, ++st->step));
      if (!b.update_weights) {
        net.forward_logits(b.clips, Mode::Train, false);
        continue;
      }
      net.zero_grad();
      const Tensor logits = net.forward_logits(b.clips, Mode::Train, true);
      const auto ce = softmax_cross_entropy(logits, b.labels);
      net.backward(ce.grad_logits);
      net.clear_cache();
      adam_step(net.parameters(), st->adam, lr);
      return ce.loss;
    }
  };
}

MetricsReport evaluate(Model& net, const Dataset& data, const EvalConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("evaluation split is empty");
  const std::size_t k = net.config().num_classes;
  std::vector<int> truth, pred;
  double loss = 0.0;
  if (net.config().arch == Architecture::Stateless) {
    for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
      std::vector<std::size_t> ids;
      for (std::size_t i = start; i < std::min(data.size(), start + cfg.batch_size); ++i) ids.push_back(i);
      const ClipBatch b = stateless_batch(data, ids, net.config().frames, nullptr);
      const Tensor probs = net.forward(b.clips, Mode::Infer);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto p = row_probs(probs, i);
        truth.push_back(b.labels[i]);
        pred.push_back(argmax(p));
        loss += nll(p, b.labels[i]);
      }
    }
  } else {
    BinSchedule bins = cfg.bins;
    bins.clip_len = cfg.clip_len;
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto stream = make_stateful_schedule(plan_stateful_groups(data, all, cfg.batch_size, bins, nullptr), data, bins);
    std::vector<std::vector<std::vector<double>>> window_probs;
    for (auto& b : stream) {
      if (b.t == 1) window_probs.assign(b.videos.size(), {});
      if (b.reset_before.front() || !cfg.carry_state) net.reset_state();
      assemble_stateful_clips(b, data, cfg.clip_len);
      const Tensor probs = net.forward(b.clips, Mode::Infer);
      b.clips = Tensor();
      for (std::size_t i = 0; i < b.videos.size(); ++i) window_probs[i].push_back(row_probs(probs, i));
      if (b.t == b.T) {
        for (std::size_t i = 0; i < b.videos.size(); ++i) {
          const auto p = aggregate_predictions(window_probs[i], cfg.weight_exponent);
          truth.push_back(b.labels[i]);
          pred.push_back(argmax(p));
          loss += nll(p, b.labels[i]);
        }
      }
    }
    net.reset_state();
  }
  MetricsReport r = make_report(truth, pred, k);
  r.loss = loss / static_cast<double>(truth.size());
  return r;
}

std::vector<double> predict_video(Model& net, const PreparedVideo& video, const EvalConfig& cfg) {
  Dataset one;
  one.videos.push_back(video);
  one.num_classes = net.config().num_classes;
  if (net.config().arch == Architecture::Stateless) {
    const ClipBatch b = stateless_batch(one, {0}, net.config().frames, nullptr);
    return row_probs(net.forward(b.clips, Mode::Infer), 0);
  }
  BinSchedule bins = cfg.bins;
  bins.clip_len = cfg.clip_len;
  auto stream = make_stateful_schedule(plan_stateful_groups(one, {0}, 1, bins, nullptr), one, bins);
  std::vector<std::vector<double>> per_window;
  for (auto& b : stream) {
    if (b.reset_before.front() || !cfg.carry_state) net.reset_state();
    assemble_stateful_clips(b, one, cfg.clip_len);
    per_window.push_back(row_probs(net.forward(b.clips, Mode::Infer), 0));
  }
  net.reset_state();
  return aggregate_predictions(per_window, cfg.weight_exponent);
}

}  // namespace cle
