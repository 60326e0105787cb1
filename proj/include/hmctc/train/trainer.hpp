#pragma once

// Minibatch training loop: bucketed batches, Adam, checkpoint evaluation on
// the development set, learning-rate halving, early stopping and best
// checkpoint selection.

#include "hmctc/train/adam.hpp"
#include "hmctc/train/metrics.hpp"
#include "hmctc/train/schedule.hpp"

#include <json.hpp>

#include <chrono>
#include <functional>

namespace hmctc::train {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kStatusOk = "ok";
inline constexpr const char* kStatusDiverged = "did not converge";

struct TrainConfig {
  AdamConfig adam;
  ScheduleConfig schedule;
  data::BatchSizes batch_sizes = data::kDefaultBatchSizes;
};

struct CheckpointRecord {
  std::string phase;
  int index = 0;
  long long updates = 0;
  int epoch = 0;
  double lr = 0.0;
  std::optional<double> train_loss;
  std::optional<double> train_loss_subword;
  std::optional<double> train_loss_phone;
  std::optional<double> dev_wer;
  std::optional<double> dev_per;
  // Kept out of the metrics log, which must be reproducible byte for byte.
  double wall_seconds = 0.0;
};

inline nlohmann::ordered_json to_json(const CheckpointRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["checkpoint"] = r.index;
  j["updates"] = r.updates;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train_loss"] = opt(r.train_loss);
  j["train_loss_subword"] = opt(r.train_loss_subword);
  j["train_loss_phone"] = opt(r.train_loss_phone);
  j["dev_wer"] = opt(r.dev_wer);
  j["dev_per"] = opt(r.dev_per);
  return j;
}

inline std::string metrics_line(const CheckpointRecord& r) { return to_json(r).dump(); }

inline std::string timing_line(const CheckpointRecord& r) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["checkpoint"] = r.index;
  j["wall_seconds"] = r.wall_seconds;
  return j.dump();
}

// State visible at a checkpoint, after the schedule has been updated. The
// model holds the parameters that were just evaluated.
struct CheckpointEvent {
  const CheckpointRecord& record;
  multitask::Model& model;
  const ScheduleState& schedule;
  const AdamState& adam;
  bool is_best;
};

struct PhaseHooks {
  std::function<void(const CheckpointEvent&)> on_checkpoint;
};

struct PhaseResult {
  std::string status = kStatusOk;
  std::string stop_reason;
  std::vector<CheckpointRecord> log;
  std::optional<std::size_t> best;
  std::vector<data::SkippedUtterance> skipped;
  ScheduleState schedule;

  const CheckpointRecord* best_record() const { return best ? &log[*best] : nullptr; }
};

// Trains `model` in place under loss weights `w` and leaves it holding the
// best checkpoint's parameters. Selection uses dev WER when the subword loss
// is active, dev PER otherwise.
inline PhaseResult train_phase(multitask::Model& model, const data::Dataset& train, const data::Dataset& dev,
                               const data::BucketPlan& plan, const tokenize::WordpieceVocab* vocab,
                               multitask::LossWeights w, const TrainConfig& cfg, std::uint64_t seed,
                               const std::string& phase, const PhaseHooks& hooks = {}) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const bool word_metric = w.subword > 0;
  const bool phone_metric = w.phone > 0;
  if (word_metric && !vocab) throw std::invalid_argument("training the subword head needs the vocabulary");
  if (cfg.schedule.checkpoint_interval < 1) throw std::invalid_argument("checkpoint interval must be positive");

  PhaseResult res;
  std::vector<const data::Utterance*> usable;
  std::vector<std::size_t> assignment;
  for (const auto& u : train) {
    try {
      multitask::check_feasible(u, w);
      usable.push_back(&u);
      assignment.push_back(plan.bucket_of(u.frames()));
    } catch (const ctc::AlignmentInfeasible& e) {
      res.skipped.push_back({u.id, e.what()});
    }
  }
  if (usable.empty()) throw DataError("no trainable utterances: every target is infeasible");

  auto params = model.parameters();
  AdamState adam;
  ScheduleState& st = res.schedule;
  st.lr = cfg.adam.lr;
  auto shuffle_rng = make_stream(seed, phase + "/shuffle");
  auto dropout_rng = make_stream(seed, phase + "/dropout");
  std::vector<Tensor> best_params = model.snapshot();

  double loss_sum = 0, sub_sum = 0, ph_sum = 0;
  long long loss_batches = 0;
  long long last_checkpoint_update = 0;
  int epoch = 0;
  bool stop = false;

  auto checkpoint = [&] {
    CheckpointRecord r;
    r.phase = phase;
    r.index = static_cast<int>(res.log.size());
    r.updates = st.updates;
    r.epoch = epoch;
    r.lr = st.lr;
    if (loss_batches) {
      const auto n = static_cast<double>(loss_batches);
      r.train_loss = loss_sum / n;
      if (word_metric) r.train_loss_subword = sub_sum / n;
      if (phone_metric) r.train_loss_phone = ph_sum / n;
    }
    const auto m = evaluate(model, dev, vocab ? *vocab : tokenize::WordpieceVocab(), word_metric, phone_metric);
    r.dev_wer = m.dev_wer;
    r.dev_per = m.dev_per;
    r.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    loss_sum = sub_sum = ph_sum = 0;
    loss_batches = 0;
    last_checkpoint_update = st.updates;

    res.log.push_back(r);
    const bool is_best = record_checkpoint(st, word_metric ? *r.dev_wer : *r.dev_per);
    if (is_best) {
      res.best = res.log.size() - 1;
      best_params = model.snapshot();
    }
    lr_update(st, cfg.schedule);
    if (hooks.on_checkpoint) hooks.on_checkpoint({res.log.back(), model, st, adam, is_best});
    if (should_stop(st, cfg.schedule)) {
      res.stop_reason = "early stop";
      stop = true;
    }
  };

  while (!stop) {
    if (cfg.schedule.max_epochs > 0 && epoch >= cfg.schedule.max_epochs) {
      res.stop_reason = "budget";
      break;
    }
    const auto batches = data::epoch_batches(assignment, cfg.batch_sizes, shuffle_rng);
    for (const auto& b : batches) {
      std::vector<const data::Utterance*> batch;
      batch.reserve(b.size());
      for (auto k : b) batch.push_back(usable[k]);
      zero_grads(params);
      const auto bl = multitask::combined_loss(model, batch, w, encoder::Mode::train, &dropout_rng);
      bool diverged = !std::isfinite(bl.total);
      if (!diverged) {
        try {
          adam_step(params, adam, cfg.adam, st.lr, phase + " update " + std::to_string(st.updates + 1));
        } catch (const NonFiniteGradient&) {
          diverged = true;
        }
      }
      if (diverged) {
        res.status = kStatusDiverged;
        res.stop_reason = "diverged at update " + std::to_string(st.updates + 1);
        stop = true;
        break;
      }
      ++st.updates;
      loss_sum += bl.total;
      if (bl.subword) sub_sum += *bl.subword;
      if (bl.phone) ph_sum += *bl.phone;
      ++loss_batches;
      if (st.updates % cfg.schedule.checkpoint_interval == 0) checkpoint();
      if (stop) break;
      if (cfg.schedule.max_updates > 0 && st.updates >= cfg.schedule.max_updates) {
        res.stop_reason = "budget";
        stop = true;
        break;
      }
    }
    ++epoch;
  }
  if (res.status == kStatusOk && st.updates > last_checkpoint_update) checkpoint();

  model.restore(best_params);
  // A run whose best checkpoint is no better than emitting nothing at all
  // has not learned the task.
  if (res.status == kStatusOk && (!res.best || st.best_value() >= 100.0)) res.status = kStatusDiverged;
  return res;
}

}  // namespace hmctc::train
