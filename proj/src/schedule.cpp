#include "cle/schedule.hpp"

#include <cmath>

#include "cle/io_util.hpp"
#include "cle/tensor.hpp"

namespace cle {

ScheduleSpec ScheduleSpec::constant(double lr) {
  ScheduleSpec s;
  s.kind = Kind::Constant;
  s.lr = lr;
  return s;
}

ScheduleSpec ScheduleSpec::cyclical(double min_lr, double max_lr, double half_cycle) {
  ScheduleSpec s;
  s.kind = Kind::Cyclical;
  s.min_lr = min_lr;
  s.max_lr = max_lr;
  s.half_cycle = half_cycle;
  return s;
}

ScheduleSpec ScheduleSpec::step_table(std::vector<std::pair<std::size_t, double>> steps) {
  ScheduleSpec s;
  s.kind = Kind::Step;
  s.steps = std::move(steps);
  return s;
}

ScheduleSpec ScheduleSpec::plateau(double initial_lr, std::size_t patience, double factor) {
  ScheduleSpec s;
  s.kind = Kind::Plateau;
  s.initial_lr = initial_lr;
  s.patience = patience;
  s.factor = factor;
  return s;
}

ScheduleSpec ScheduleSpec::range_test(double start, double end, std::size_t iters) {
  ScheduleSpec s;
  s.kind = Kind::RangeTest;
  s.lr_start = start;
  s.lr_end = end;
  s.total_iters = iters;
  return s;
}

ScheduleSpec ScheduleSpec::paper_stateless() {
  ScheduleSpec s;
  s.kind = Kind::Piecewise;
  s.phases = {
      {0, cyclical(8e-5, 9.8e-4, 3.0)},
      {21, cyclical(1e-5, 1e-4, 3.0)},
      {44, constant(1e-5)},
      {48, plateau(2e-4, 4, 0.5)},
  };
  s.end_epoch = 75;
  return s;
}

ScheduleSpec ScheduleSpec::paper_stateful() {
  ScheduleSpec s = step_table({{0, 9e-5}, {4, 3e-5}, {8, 8e-6}, {15, 4e-6}, {19, 2e-6}, {23, 1e-6}});
  s.end_epoch = 25;
  return s;
}

const char* to_string(ScheduleSpec::Kind k) {
  switch (k) {
    case ScheduleSpec::Kind::Constant: return "constant";
    case ScheduleSpec::Kind::Cyclical: return "cyclical";
    case ScheduleSpec::Kind::Step: return "step";
    case ScheduleSpec::Kind::Plateau: return "plateau";
    case ScheduleSpec::Kind::RangeTest: return "range-test";
    case ScheduleSpec::Kind::Piecewise: return "piecewise";
  }
  return "?";
}

void ScheduleSpec::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be > 0");
  };
  switch (kind) {
    case Kind::Constant: positive(lr, "lr"); break;
    case Kind::Cyclical:
      positive(min_lr, "min_lr");
      positive(max_lr, "max_lr");
      positive(half_cycle, "half_cycle");
      if (max_lr < min_lr) throw std::invalid_argument("max_lr below min_lr");
      break;
    case Kind::Step:
      if (steps.empty() || steps.front().first != 0) {
        throw std::invalid_argument("step table must start at epoch 0");
      }
      for (std::size_t i = 0; i < steps.size(); ++i) {
        positive(steps[i].second, "step lr");
        if (i > 0 && steps[i].first <= steps[i - 1].first) {
          throw std::invalid_argument("step epochs must increase");
        }
      }
      break;
    case Kind::Plateau:
      positive(initial_lr, "initial_lr");
      if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("plateau factor must be in (0,1)");
      if (patience == 0) throw std::invalid_argument("plateau patience must be >= 1");
      break;
    case Kind::RangeTest:
      positive(lr_start, "lr_start");
      positive(lr_end, "lr_end");
      if (total_iters < 2) throw std::invalid_argument("range test needs >= 2 iterations");
      break;
    case Kind::Piecewise:
      if (phases.empty() || phases.front().first != 0) {
        throw std::invalid_argument("piecewise schedule must start at epoch 0");
      }
      for (std::size_t i = 0; i < phases.size(); ++i) {
        if (phases[i].second.kind == Kind::Piecewise) throw std::invalid_argument("nested piecewise phase");
        if (i > 0 && phases[i].first <= phases[i - 1].first) {
          throw std::invalid_argument("phases must be ordered and non-overlapping");
        }
        phases[i].second.validate();
      }
      if (end_epoch != 0 && end_epoch <= phases.back().first) {
        throw std::invalid_argument("schedule ends before its last phase starts");
      }
      break;
  }
}

double PlateauState::update(double val_accuracy, std::size_t patience, double factor) {
  if (val_accuracy > best) {
    best = val_accuracy;
    wait = 0;
  } else if (++wait >= patience) {
    lr *= factor;
    wait = 0;
  }
  return lr;
}

double plateau_update(double initial_lr, const std::vector<double>& history, std::size_t patience,
                      double factor) {
  if (history.empty()) throw std::invalid_argument("plateau history is empty");
  PlateauState s;
  s.lr = initial_lr;
  for (double a : history) s.update(a, patience, factor);
  return s.lr;
}

const ScheduleSpec& active_phase(const ScheduleSpec& s, std::size_t epoch) {
  if (s.kind != ScheduleSpec::Kind::Piecewise) return s;
  const ScheduleSpec* out = &s.phases.front().second;
  for (const auto& [start, phase] : s.phases) {
    if (start <= epoch) out = &phase;
  }
  return *out;
}

double lr_at(const ScheduleSpec& s, std::size_t epoch, std::size_t iter, std::size_t iters_per_epoch,
             const PlateauState* plateau) {
  if (s.end_epoch != 0 && epoch >= s.end_epoch) {
    throw ScheduleDomainError("epoch " + std::to_string(epoch) + " is outside the schedule (ends at " +
                              std::to_string(s.end_epoch) + ")");
  }
  if (iters_per_epoch == 0) throw std::invalid_argument("iters_per_epoch must be positive");
  switch (s.kind) {
    case ScheduleSpec::Kind::Constant:
      return s.lr;
    case ScheduleSpec::Kind::Cyclical: {
      const double p = static_cast<double>(epoch) +
                       static_cast<double>(iter) / static_cast<double>(iters_per_epoch);
      const double h = s.half_cycle;
      const double u = std::fmod(p, 2.0 * h);
      const double frac = u <= h ? u / h : (2.0 * h - u) / h;
      return (1.0 - frac) * s.min_lr + frac * s.max_lr;
    }
    case ScheduleSpec::Kind::Step: {
      double lr = s.steps.front().second;
      for (const auto& [e, v] : s.steps) {
        if (e <= epoch) lr = v;
      }
      return lr;
    }
    case ScheduleSpec::Kind::Plateau:
      return plateau && plateau->lr > 0.0 ? plateau->lr : s.initial_lr;
    case ScheduleSpec::Kind::RangeTest: {
      if (iter >= s.total_iters) throw ScheduleDomainError("range-test iteration beyond the ramp");
      const double a = static_cast<double>(iter) / static_cast<double>(s.total_iters - 1);
      return s.lr_start * std::pow(s.lr_end / s.lr_start, a);
    }
    case ScheduleSpec::Kind::Piecewise: {
      std::size_t start = 0;
      const ScheduleSpec* phase = &s.phases.front().second;
      for (const auto& [st, ph] : s.phases) {
        if (st <= epoch) {
          start = st;
          phase = &ph;
        }
      }
      return lr_at(*phase, epoch - start, iter, iters_per_epoch, plateau);
    }
  }
  return 0.0;
}

std::vector<RangeTestRow> lr_range_test(const std::function<double(double)>& train_step,
                                        const RangeTestConfig& cfg) {
  if (cfg.iters < kRangeTestMinIters) {
    throw std::invalid_argument("range test needs at least " + std::to_string(kRangeTestMinIters) + " iterations");
  }
  const ScheduleSpec ramp = ScheduleSpec::range_test(cfg.lr_start, cfg.lr_end, cfg.iters);
  ramp.validate();
  std::vector<RangeTestRow> rows;
  double avg = 0.0, best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cfg.iters; ++i) {
    const double lr = lr_at(ramp, 0, i, 1);
    double loss;
    try {
      loss = train_step(lr);
    } catch (const NonFiniteError&) {
      loss = std::numeric_limits<double>::infinity();
    }
    const bool blown = !std::isfinite(loss);
    if (!blown) {
      avg = cfg.smoothing * avg + (1.0 - cfg.smoothing) * loss;
      const double smoothed = avg / (1.0 - std::pow(cfg.smoothing, static_cast<double>(i + 1)));
      rows.push_back({i, lr, smoothed, loss});
      best = std::min(best, smoothed);
      if (smoothed <= cfg.stop_factor * best) continue;
    }
    if (i + 1 < kRangeTestMinIters) {
      throw RangeTestDiverged("loss diverged after " + std::to_string(i + 1) + " iterations (lr " +
                              format_double(lr) + "); lower lr_start");
    }
    break;
  }
  return rows;
}

void write_range_csv(const std::vector<RangeTestRow>& rows, const std::filesystem::path& path) {
  std::string out = "iter,lr,smoothed_loss,raw_loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iter) + "," + format_double(r.lr) + "," + format_double(r.smoothed_loss) + "," +
           format_double(r.raw_loss) + "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace cle
