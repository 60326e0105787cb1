#pragma once

// Learning-rate halving and early stopping driven by the development-set
// error rate recorded at each checkpoint.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

namespace hmctc::train {

struct ScheduleConfig {
  long long checkpoint_interval = 500;
  // The learning rate is frozen for this many updates.
  long long warm_updates = 25000;
  // Halve when the current error is worse than the worst of this many
  // preceding checkpoints.
  int lr_window = 3;
  // Stop after this many consecutive checkpoints without a new best.
  int patience = 10;
  // Hard budget; zero means unlimited.
  long long max_updates = 0;
  int max_epochs = 0;
};

struct ScheduleState {
  double lr = 0.001;
  long long updates = 0;
  std::vector<double> history;
  std::optional<std::size_t> best;
  int no_improve = 0;
  int halvings = 0;

  double best_value() const { return best ? history[*best] : 0.0; }
};

// Appends a checkpoint's error rate. Returns true if it is a new best
// (strictly lower than everything before it).
inline bool record_checkpoint(ScheduleState& s, double error_rate) {
  s.history.push_back(error_rate);
  if (!s.best || error_rate < s.history[*s.best]) {
    s.best = s.history.size() - 1;
    s.no_improve = 0;
    return true;
  }
  ++s.no_improve;
  return false;
}

// At most one halving per checkpoint, and none during the warm period.
inline bool lr_update(ScheduleState& s, const ScheduleConfig& cfg) {
  if (s.updates <= cfg.warm_updates) return false;
  const auto w = static_cast<std::size_t>(cfg.lr_window);
  if (s.history.size() < w + 1) return false;
  const auto end = s.history.end() - 1;
  const double worst_prev = *std::max_element(end - static_cast<std::ptrdiff_t>(w), end);
  if (s.history.back() > worst_prev) {
    s.lr *= 0.5;
    ++s.halvings;
    return true;
  }
  return false;
}

inline bool should_stop(const ScheduleState& s, const ScheduleConfig& cfg) { return s.no_improve >= cfg.patience; }

}  // namespace hmctc::train
