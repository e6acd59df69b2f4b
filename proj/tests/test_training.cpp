#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cle/bench.hpp"
#include "cle/checkpoint.hpp"
#include "cle/metrics.hpp"
#include "cle/optim.hpp"
#include "cle/schedule.hpp"
#include "cle/synthetic.hpp"
#include "cle/trainer.hpp"
#include "test_util.hpp"

using namespace cle;
using cle::testing::temp_dir;

namespace {

Dataset synthetic_dataset(std::size_t classes, std::size_t per_class, std::size_t len_min, std::size_t len_max,
                          const std::string& name, std::uint64_t seed = 7) {
  SyntheticSpec s;
  s.num_classes = classes;
  s.videos_per_class = per_class;
  s.len_min = len_min;
  s.len_max = len_max;
  s.frame_size = 24;
  s.seed = seed;
  const auto m = generate_synthetic_dataset(s, temp_dir(name));
  std::vector<std::size_t> all(m.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return load_dataset(m, all, {16, 4500.0, 0.05}, classes);
}

Dataset fixed_length_dataset(std::size_t n, std::size_t length, std::size_t classes) {
  Rng rng(3);
  Dataset d;
  d.num_classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    PreparedVideo v;
    v.length = length;
    v.size = 16;
    v.label = static_cast<int>(i % classes);
    v.pixels.resize(length * 256);
    for (auto& p : v.pixels) p = static_cast<float>(uniform01(rng));
    d.videos.push_back(std::move(v));
  }
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientLeavesParametersAlmostFixed) {
  TensorD w({3}, 1.5);
  w.grad();
  AdamState<double> st;
  for (int i = 0; i < 10; ++i) adam_step<double>({{"w", &w}}, st, 1e-2);
  for (double x : w.values()) EXPECT_EQ(x, 1.5);
  EXPECT_EQ(st.step, 10u);
}

TEST(Adam, UnitStepProperty) {
  for (double g : {1e-3, 0.3, 50.0, -2.0}) {
    TensorD w({1}, 0.0);
    AdamState<double> st;
    const double lr = 1e-3;
    for (int i = 0; i < 1000; ++i) {
      const double before = w[0];
      w.grad()[0] = g;
      adam_step<double>({{"w", &w}}, st, lr);
      const double step = std::abs(w[0] - before);
      ASSERT_GE(step, 0.9 * lr);
      ASSERT_LE(step, lr * (1.0 + 1e-12));
    }
  }
}

TEST(Adam, QuadraticBowl) {
  TensorD x({1}, 1.0);
  AdamState<double> st;
  for (int i = 0; i < 2000; ++i) {
    x.grad()[0] = 2.0 * x[0];
    adam_step<double>({{"x", &x}}, st, 1e-2);
  }
  EXPECT_LT(std::abs(x[0]), 1e-3);
}

TEST(Adam, RejectsNonFiniteGradientWithoutUpdating) {
  TensorD w({2}, 1.0);
  w.grad()[1] = NAN;
  AdamState<double> st;
  EXPECT_THROW(adam_step<double>({{"w", &w}}, st, 1e-2), NonFiniteError);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(st.step, 0u);
  EXPECT_THROW(adam_step<double>({{"w", &w}}, st, 0.0), std::invalid_argument);
}

TEST(Adam, CheckpointRoundTrip) {
  Tensor w({4}, 1.0f);
  w.grad()[2] = 0.5f;
  AdamState<float> st;
  adam_step<float>({{"w", &w}}, st, 1e-3);
  Checkpoint c;
  store_adam(st, c);
  const auto back = load_adam(decode_checkpoint(encode_checkpoint(c)));
  EXPECT_EQ(back.step, 1u);
  EXPECT_EQ(back.m.at("w"), st.m.at("w"));
  EXPECT_EQ(back.v.at("w"), st.v.at("w"));
}

// ---------------------------------------------------------------------------
// Schedules

TEST(Schedule, StatefulStepTable) {
  const auto s = ScheduleSpec::paper_stateful();
  const double expect[25] = {9e-5, 9e-5, 9e-5, 9e-5, 3e-5, 3e-5, 3e-5, 3e-5, 8e-6, 8e-6, 8e-6, 8e-6, 8e-6,
                             8e-6, 8e-6, 4e-6, 4e-6, 4e-6, 4e-6, 2e-6, 2e-6, 2e-6, 2e-6, 1e-6, 1e-6};
  for (std::size_t e = 0; e < 25; ++e) EXPECT_EQ(lr_at(s, e), expect[e]) << e;
  EXPECT_THROW(lr_at(s, 25), ScheduleDomainError);
}

TEST(Schedule, StatelessPhases) {
  const auto s = ScheduleSpec::paper_stateless();
  EXPECT_EQ(lr_at(s, 0), 8e-5);
  EXPECT_EQ(lr_at(s, 3), 9.8e-4);
  EXPECT_EQ(lr_at(s, 6), 8e-5);
  EXPECT_EQ(lr_at(s, 18), 8e-5);
  EXPECT_EQ(lr_at(s, 21), 1e-5);
  EXPECT_EQ(lr_at(s, 24), 1e-4);
  EXPECT_EQ(lr_at(s, 27), 1e-5);
  for (std::size_t e = 0; e < 21; ++e) {
    EXPECT_GE(lr_at(s, e, 5, 10), 8e-5);
    EXPECT_LE(lr_at(s, e, 5, 10), 9.8e-4);
  }
  for (std::size_t e = 21; e < 44; ++e) EXPECT_LE(lr_at(s, e, 5, 10), 1e-4);
  for (std::size_t e = 44; e < 48; ++e) EXPECT_EQ(lr_at(s, e, 3, 10), 1e-5);
  EXPECT_EQ(lr_at(s, 48), 2e-4);
  PlateauState p{5e-5};
  EXPECT_EQ(lr_at(s, 60, 0, 1, &p), 5e-5);
  EXPECT_THROW(lr_at(s, 75), ScheduleDomainError);
  EXPECT_EQ(active_phase(s, 50).kind, ScheduleSpec::Kind::Plateau);
}

TEST(Schedule, CyclicalBoundaries) {
  const auto s = ScheduleSpec::cyclical(1e-4, 1e-3, 2.0);
  EXPECT_EQ(lr_at(s, 0), 1e-4);
  EXPECT_EQ(lr_at(s, 2), 1e-3);
  EXPECT_EQ(lr_at(s, 4), 1e-4);
  EXPECT_EQ(lr_at(s, 6), 1e-3);
  EXPECT_NEAR(lr_at(s, 1), 5.5e-4, 1e-15);
  EXPECT_NEAR(lr_at(s, 0, 1, 4), 1e-4 + 0.125 * 9e-4, 1e-15);
}

TEST(Schedule, Plateau) {
  EXPECT_EQ(plateau_update(2e-4, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}), 2e-4);
  EXPECT_EQ(plateau_update(2e-4, {0.5, 0.5, 0.5, 0.5, 0.5}), 1e-4);
  EXPECT_EQ(plateau_update(2e-4, {0.5, 0.4, 0.4, 0.4, 0.5, 0.5, 0.4, 0.3, 0.2}), 5e-5);
  EXPECT_EQ(plateau_update(2e-4, {0.5, 0.4, 0.4, 0.6, 0.4, 0.4}), 2e-4);
  EXPECT_THROW(plateau_update(2e-4, {}), std::invalid_argument);
}

TEST(Schedule, Validation) {
  EXPECT_THROW(ScheduleSpec::step_table({{1, 1e-3}}).validate(), std::invalid_argument);
  EXPECT_THROW(ScheduleSpec::cyclical(1e-3, 1e-4).validate(), std::invalid_argument);
  EXPECT_THROW(ScheduleSpec::plateau(1e-3, 4, 1.5).validate(), std::invalid_argument);
  EXPECT_THROW(ScheduleSpec::constant(0.0).validate(), std::invalid_argument);
}

TEST(Schedule, PureFunction) {
  const auto s = ScheduleSpec::paper_stateless();
  for (std::size_t e = 0; e < 48; ++e) EXPECT_EQ(lr_at(s, e, 7, 13), lr_at(s, e, 7, 13));
}

// ---------------------------------------------------------------------------
// Range test

TEST(RangeTest, GeometricRamp) {
  RangeTestConfig cfg;
  cfg.iters = 50;
  const auto rows = lr_range_test([](double) { return 1.0; }, cfg);
  ASSERT_EQ(rows.size(), 50u);
  EXPECT_EQ(rows.front().lr, 1e-6);
  EXPECT_NEAR(rows.back().lr, 1e-1, 1e-15);
  const double ratio = rows[1].lr / rows[0].lr;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GT(rows[i].lr, rows[i - 1].lr);
    EXPECT_NEAR(rows[i].lr / rows[i - 1].lr, ratio, 1e-9);
    EXPECT_NEAR(rows[i].smoothed_loss, 1.0, 1e-12);
  }
}

TEST(RangeTest, InteriorMinimumOnSeparableBlobs) {
  // least-squares linear classifier on two separable blobs, plain SGD
  Rng rng(11);
  std::vector<std::array<double, 3>> pts;
  for (int i = 0; i < 64; ++i) {
    const double y = i % 2 ? 1.0 : -1.0;
    pts.push_back({2.0 * y + 0.5 * normal(rng), y + 0.5 * normal(rng), y});
  }
  double w0 = 0.0, w1 = 0.0, b = 0.0;
  auto step = [&](double lr) {
    double g0 = 0, g1 = 0, gb = 0, loss = 0;
    for (const auto& p : pts) {
      const double r = w0 * p[0] + w1 * p[1] + b - p[2];
      loss += r * r;
      g0 += 2 * r * p[0], g1 += 2 * r * p[1], gb += 2 * r;
    }
    const double n = static_cast<double>(pts.size());
    w0 -= lr * g0 / n, w1 -= lr * g1 / n, b -= lr * gb / n;
    return loss / n;
  };
  RangeTestConfig cfg;
  cfg.lr_start = 1e-4;
  cfg.lr_end = 10.0;
  cfg.iters = 200;
  const auto rows = lr_range_test(step, cfg);
  std::size_t best = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].smoothed_loss < rows[best].smoothed_loss) best = i;
  }
  EXPECT_GT(best, 0u);
  EXPECT_LT(best + 1, rows.size());
  EXPECT_LT(rows.size(), 200u);  // stopped early on the blow-up
  EXPECT_GT(rows.back().smoothed_loss, 4.0 * rows[best].smoothed_loss);
}

TEST(RangeTest, DivergenceBeforeMinimumIterations) {
  RangeTestConfig cfg;
  int calls = 0;
  EXPECT_THROW(lr_range_test([&](double) { return ++calls < 3 ? 1.0 : NAN; }, cfg), RangeTestDiverged);
  cfg.iters = 9;
  EXPECT_THROW(lr_range_test([](double) { return 1.0; }, cfg), std::invalid_argument);
}

TEST(RangeTest, CsvHeader) {
  const auto dir = temp_dir("range_csv");
  write_range_csv({{0, 1e-6, 2.0, 2.0}}, dir / "r.csv");
  std::ifstream f(dir / "r.csv");
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "iter,lr,smoothed_loss,raw_loss");
}

// ---------------------------------------------------------------------------
// Window weighting

TEST(WindowWeight, Values) {
  EXPECT_EQ(window_weight(14, 14), 1.0);
  EXPECT_EQ(window_weight(7, 14), 0.125);
  EXPECT_EQ(window_weight(1, 2), 0.125);
  for (std::size_t t = 1; t <= 10; ++t) EXPECT_EQ(window_weight(t, 10, 0.0), 1.0);
  for (std::size_t t = 2; t <= 20; ++t) EXPECT_GT(window_weight(t, 20), window_weight(t - 1, 20));
}

TEST(WindowWeight, Aggregation) {
  const auto p = aggregate_predictions({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_NEAR(p[0], 1.0 / 9.0, 1e-15);
  EXPECT_NEAR(p[1], 8.0 / 9.0, 1e-15);
  const auto q = aggregate_predictions({{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}});
  EXPECT_NEAR(q[0], 0.2, 1e-15);
  EXPECT_NEAR(q[2], 0.5, 1e-15);
}

TEST(WindowWeight, ArgmaxInvariantToRescaling) {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t T = 1 + uniform_int(rng, 0, 12);
    std::vector<std::vector<double>> w(T, std::vector<double>(5));
    for (auto& row : w) {
      double s = 0;
      for (auto& x : row) s += (x = uniform01(rng));
      for (auto& x : row) x /= s;
    }
    const auto p = aggregate_predictions(w);
    const double scale = uniform(rng, 0.01, 100.0);
    std::vector<double> manual(5, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < 5; ++k) manual[k] += scale * window_weight(t + 1, T) * w[t][k];
    EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(),
              std::max_element(manual.begin(), manual.end()) - manual.begin());
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, Report) {
  const std::vector<int> truth{0, 0, 0, 0, 1, 1, 2, 2, 2, 2};
  const std::vector<int> pred{0, 0, 0, 1, 1, 1, 1, 1, 2, 0};
  const auto r = make_report(truth, pred, 3);
  EXPECT_EQ(r.total, 10u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(r.per_class[0], 0.75);
  EXPECT_DOUBLE_EQ(r.per_class[1], 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[2], 0.25);
  EXPECT_EQ(r.confusion[2][1], 2u);
  ASSERT_GE(r.confused_pairs.size(), 2u);
  EXPECT_EQ(r.confused_pairs[0].truth, 2);
  EXPECT_EQ(r.confused_pairs[0].predicted, 1);
  EXPECT_EQ(r.confused_pairs[0].count, 2u);
  EXPECT_NE(pairs_summary(r).find("class 2 → class 1"), std::string::npos) << pairs_summary(r);
  const std::string csv = confusion_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

// ---------------------------------------------------------------------------
// Training loops

TEST(WindowOrder, RejectsOutOfOrderWindows) {
  auto header = [](std::size_t g, std::size_t t, std::size_t T) {
    ClipBatch b;
    b.group = g;
    b.t = t;
    b.T = T;
    return b;
  };
  WindowOrderGuard a;
  a.accept(header(0, 1, 3));
  EXPECT_THROW(a.accept(header(0, 3, 3)), std::logic_error);
  WindowOrderGuard b;
  b.accept(header(0, 1, 3));
  EXPECT_THROW(b.accept(header(1, 1, 2)), std::logic_error);
  WindowOrderGuard c;
  EXPECT_THROW(c.accept(header(0, 2, 3)), std::logic_error);
  WindowOrderGuard d;
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t t = 1; t <= 4; ++t) EXPECT_NO_THROW(d.accept(header(g, t, 4)));
}

TEST(Training, InitialLossIsLogK) {
  const Dataset d = synthetic_dataset(4, 3, 24, 40, "init_loss");
  for (auto mc : {ModelConfig::scaled_stateless(4), ModelConfig::scaled_stateful(4)}) {
    Model net(mc, 2);
    const auto r = evaluate(net, d, EvalConfig{});
    EXPECT_NEAR(r.loss, std::log(4.0), 0.02 * std::log(4.0));
  }
}

TEST(Training, StatefulUpdatesSecondHalfOnly) {
  const Dataset d = fixed_length_dataset(4, 112, 2);
  Model net(ModelConfig::scaled_stateful(2), 1);
  auto cfg = TrainConfig::stateful_defaults();
  cfg.batch_size = 2;
  cfg.epochs = 1;
  cfg.schedule = ScheduleSpec::constant(1e-3);
  const auto r = train_stateful(net, d, d, cfg);
  EXPECT_EQ(r.update_windows, 14u);
  EXPECT_EQ(r.warmup_windows, 14u);
  EXPECT_EQ(r.adam_steps, 14u);
}

TEST(Training, CheckpointsTrackBestValidationAccuracy) {
  const Dataset train_set = synthetic_dataset(3, 6, 24, 40, "ckpt_train", 1);
  const Dataset val_set = synthetic_dataset(3, 3, 24, 40, "ckpt_val", 2);
  const auto dir = temp_dir("ckpt_run");
  Model net(ModelConfig::scaled_stateless(3), 1);
  auto cfg = TrainConfig::stateless_defaults();
  cfg.batch_size = 6;
  cfg.epochs = 4;
  cfg.schedule = ScheduleSpec::constant(2e-3);
  cfg.out_dir = dir;
  const auto r = train(net, train_set, val_set, cfg);
  ASSERT_EQ(r.log.size(), 4u);
  double best = -1.0;
  for (const auto& e : r.log) best = std::max(best, e.val_acc);
  EXPECT_EQ(r.best_val_acc, best);
  EXPECT_EQ(r.log[r.best_epoch].val_acc, best);
  EXPECT_EQ(std::stod(load_checkpoint(dir / "last.ckpt").meta("train.val_accuracy")), best);
  EXPECT_EQ(std::stod(load_checkpoint(dir / "best.ckpt").meta("train.val_accuracy")), best);

  std::ifstream f(dir / "log.csv");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "epoch,lr,train_loss,train_acc,val_loss,val_acc,seconds");
  const auto log = read_log_csv(dir / "log.csv");
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[2].train_loss, r.log[2].train_loss);
  EXPECT_EQ(log[3].epoch, 3u);
}

TEST(Training, SeededRunsAreIdentical) {
  const Dataset d = synthetic_dataset(3, 4, 24, 40, "determinism");
  std::vector<std::vector<EpochRecord>> logs;
  for (int run = 0; run < 2; ++run) {
    Model net(ModelConfig::scaled_stateful(3), 9);
    auto cfg = TrainConfig::stateful_defaults();
    cfg.epochs = 2;
    cfg.seed = 4;
    logs.push_back(train(net, d, d, cfg).log);
  }
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(logs[0][e].lr, logs[1][e].lr);
    EXPECT_EQ(logs[0][e].train_loss, logs[1][e].train_loss);
    EXPECT_EQ(logs[0][e].val_loss, logs[1][e].val_loss);
    EXPECT_EQ(logs[0][e].train_acc, logs[1][e].train_acc);
  }
}

TEST(Training, FrameSizeMismatchIsReported) {
  const Dataset d = synthetic_dataset(2, 2, 24, 30, "mismatch");
  Model net(ModelConfig::stateless(2), 1);
  auto cfg = TrainConfig::stateless_defaults();
  cfg.epochs = 1;
  EXPECT_THROW(train(net, d, d, cfg), ShapeError);
}

TEST(Training, RangeStepReducesLoss) {
  const Dataset d = synthetic_dataset(2, 6, 24, 40, "range_step");
  Model net(ModelConfig::scaled_stateless(2), 1);
  auto cfg = TrainConfig::stateless_defaults();
  cfg.batch_size = 4;
  auto step = make_range_step(net, d, cfg);
  const double first = step(1e-3);
  EXPECT_NEAR(first, std::log(2.0), 1e-5);
  double last = first;
  for (int i = 0; i < 15; ++i) last = step(1e-3);
  EXPECT_LT(last, first);
}

// ---------------------------------------------------------------------------
// Latency

TEST(Bench, DegenerateStats) {
  const auto s = latency_stats({0.25}, 100.0);
  EXPECT_EQ(s.count, 1u);
  EXPECT_EQ(s.mean, 0.25);
  EXPECT_EQ(s.p50, 0.25);
  EXPECT_EQ(s.p95, 0.25);
  EXPECT_EQ(s.fps, 400.0);
  EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 50), 3.0);
  EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 95), 5.0);
  EXPECT_EQ(percentile({5, 1, 4, 2, 3}, 20), 1.0);
}

TEST(Bench, StatefulLatencyGrowsWithLength) {
  Dataset short_set = fixed_length_dataset(2, 40, 2), long_set = fixed_length_dataset(2, 208, 2);
  Model sf(ModelConfig::scaled_stateful(2), 1);
  const auto a = bench_inference(sf, short_set, 2, EvalConfig{}, 1);
  const auto b = bench_inference(sf, long_set, 2, EvalConfig{}, 1);
  EXPECT_GT(b.mean, a.mean);
  EXPECT_EQ(a.count, 4u);
  EXPECT_NEAR(b.fps, 208.0 / b.mean, 1e-9 * b.fps);
}
