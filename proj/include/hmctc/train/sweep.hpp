#pragma once

// Grids of seeded training runs along one axis, reported as TSV rows in the
// layout of the result tables: one row per (cell, seed), "X" for runs that
// did not converge.

#include "hmctc/train/run.hpp"

#include <iomanip>
#include <sstream>

namespace hmctc::train {

enum class SweepAxis { lambda, layer, fraction, regime };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::layer: return "layer";
    case SweepAxis::fraction: return "fraction";
    case SweepAxis::regime: return "regime";
  }
  return "?";
}

inline std::optional<SweepAxis> parse_axis(std::string_view s) {
  for (auto a : {SweepAxis::lambda, SweepAxis::layer, SweepAxis::fraction, SweepAxis::regime}) {
    if (s == to_string(a)) return a;
  }
  return std::nullopt;
}

struct SweepCell {
  std::string value;  // grid value as written
  RunConfig config;   // seed filled in per run
};

inline double parse_grid_number(const std::string& v, SweepAxis axis) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw multitask::SpecError(to_string(axis) + " grid value '" + v + "' is not a number");
  return x;
}

// Expands a grid into run configurations and validates every cell before
// anything is trained. The fraction axis runs the baseline and the
// multitask model of `base` at each fraction; the regime axis runs each
// listed regime with the base lambda (forced to 1 where the regime
// requires it).
inline std::vector<SweepCell> expand_grid(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& grid) {
  using multitask::Regime;
  if (grid.empty()) throw multitask::SpecError("empty " + to_string(axis) + " grid");
  std::vector<SweepCell> cells;
  for (const auto& v : grid) {
    RunConfig c = base;
    switch (axis) {
      case SweepAxis::lambda:
        c.multitask.lambda = parse_grid_number(v, axis);
        c.multitask.regime = Regime::multitask;
        cells.push_back({v, c});
        break;
      case SweepAxis::layer: {
        const double i = parse_grid_number(v, axis);
        if (i != std::floor(i)) throw multitask::SpecError("layer grid value '" + v + "' is not an integer");
        c.multitask.aux_layer = static_cast<int>(i);
        c.multitask.regime = Regime::multitask;
        cells.push_back({v, c});
        break;
      }
      case SweepAxis::fraction: {
        c.fraction = parse_grid_number(v, axis);
        RunConfig b = c;
        b.multitask.regime = Regime::baseline;
        b.multitask.lambda = 1.0;
        c.multitask.regime = Regime::multitask;
        cells.push_back({v, b});
        cells.push_back({v, c});
        break;
      }
      case SweepAxis::regime: {
        const auto r = multitask::parse_regime(v);
        if (!r) throw multitask::SpecError("unknown regime '" + v + "'");
        c.multitask.regime = *r;
        if (*r == Regime::baseline || *r == Regime::pretrain) c.multitask.lambda = 1.0;
        cells.push_back({v, c});
        break;
      }
    }
  }
  for (auto& cell : cells) cell.config.validate();
  return cells;
}

struct SweepRow {
  std::string axis;
  std::string value;
  std::string regime;
  double lambda = 1.0;
  int aux_layer = 0;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::string status;
  std::optional<double> dev_wer;
  std::optional<double> dev_per;
  std::optional<double> pretrain_per;
  long long updates = 0;
  std::string note;

  bool converged() const { return status == kStatusOk; }
};

struct SweepObserver {
  std::function<void(const SweepRow&)> on_row;
  std::function<void(const SweepRow&, const RunResult&)> on_run;
};

// Every cell runs once per seed. A failing cell is recorded in its row and
// the sweep carries on. The pretraining phase is shared between the
// pretrain and pretrain_multitask cells of the same seed.
inline std::vector<SweepRow> run_sweep(const std::vector<SweepCell>& cells, SweepAxis axis,
                                       const std::vector<std::uint64_t>& seeds, const PreparedData& data,
                                       const SweepObserver& obs = {}) {
  std::vector<SweepRow> rows;
  for (auto seed : seeds) {
    std::map<std::pair<int, double>, multitask::PretrainCheckpoint> pretrained;
    for (const auto& cell : cells) {
      RunConfig cfg = cell.config;
      cfg.seed = seed;
      SweepRow row;
      row.axis = to_string(axis);
      row.value = cell.value;
      row.regime = multitask::to_string(cfg.multitask.regime);
      row.lambda = cfg.multitask.lambda;
      row.aux_layer = cfg.multitask.aux_layer;
      row.fraction = cfg.fraction;
      row.seed = seed;
      try {
        const bool pre = cfg.multitask.regime == multitask::Regime::pretrain ||
                         cfg.multitask.regime == multitask::Regime::pretrain_multitask;
        const auto key = std::make_pair(cfg.multitask.aux_layer, cfg.fraction);
        const multitask::PretrainCheckpoint* shared = nullptr;
        if (pre && pretrained.count(key)) shared = &pretrained.at(key);
        auto res = run_training(cfg, data, {}, shared);
        if (pre && !shared && res.pretrained) pretrained.emplace(key, *res.pretrained);
        row.status = res.status;
        row.dev_wer = res.dev_wer;
        row.dev_per = res.dev_per;
        if (res.pretrained) row.pretrain_per = res.pretrained->dev_per;
        row.updates = res.log.empty() ? 0 : res.log.back().updates;
        row.note = res.stop_reason;
        if (obs.on_run) obs.on_run(row, res);
      } catch (const std::exception& e) {
        row.status = "error";
        row.note = e.what();
      }
      if (obs.on_row) obs.on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline constexpr const char* kNonConverged = "X";

inline std::string format_rate(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *v;
  return os.str();
}

inline std::string sweep_header() {
  return "axis\tvalue\tregime\tlambda\taux_layer\tfraction\tseed\tstatus\tdev_wer\tdev_per\tpretrain_per\tupdates\tnote";
}

// WER is "X" for a run that did not converge (or failed); PER columns keep
// their numbers when a phone head produced them.
inline std::string sweep_line(const SweepRow& r) {
  std::ostringstream os;
  std::string note = r.note;
  for (auto& ch : note) {
    if (ch == '\t' || ch == '\n') ch = ' ';
  }
  os << r.axis << '\t' << r.value << '\t' << r.regime << '\t' << r.lambda << '\t' << r.aux_layer << '\t' << r.fraction
     << '\t' << r.seed << '\t' << r.status << '\t' << (r.converged() ? format_rate(r.dev_wer) : kNonConverged) << '\t'
     << format_rate(r.dev_per) << '\t' << format_rate(r.pretrain_per) << '\t' << r.updates << '\t' << note;
  return os.str();
}

}  // namespace hmctc::train
