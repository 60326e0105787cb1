#pragma once

// End-to-end runs for the four training regimes.

#include "hmctc/multitask/pretrain.hpp"
#include "hmctc/tokenize/lexicon.hpp"
#include "hmctc/train/trainer.hpp"

namespace hmctc::train {

// Labelled, normalized training and development sets sharing one vocabulary
// and lexicon, with the bucket plan of the full training set.
struct PreparedData {
  tokenize::WordpieceVocab vocab;
  tokenize::Lexicon lexicon;
  data::Dataset train;
  data::Dataset dev;
  data::BucketPlan plan;
  std::vector<data::SkippedUtterance> skipped;
};

inline PreparedData prepare_data(data::Dataset train, data::Dataset dev, tokenize::WordpieceVocab vocab,
                                 tokenize::Lexicon lexicon, data::BatchSizes batch_sizes = data::kDefaultBatchSizes,
                                 std::size_t dedupe = 300) {
  PreparedData p{std::move(vocab), std::move(lexicon), {}, {}, {}, {}};
  train = data::dedupe_cap(std::move(train), dedupe);
  p.skipped = data::attach_labels(train, p.vocab, p.lexicon);
  auto dev_skipped = data::attach_labels(dev, p.vocab, p.lexicon);
  p.skipped.insert(p.skipped.end(), dev_skipped.begin(), dev_skipped.end());
  if (train.size() < data::kNumBuckets) throw DataError("too few labelled training utterances");
  if (dev.empty()) throw DataError("no labelled development utterances");
  p.train = data::normalize_per_speaker(std::move(train));
  p.dev = data::normalize_per_speaker(std::move(dev));
  p.plan = data::plan_buckets(p.train, batch_sizes);
  return p;
}

struct RunConfig {
  encoder::EncoderConfig encoder;
  multitask::MultitaskSpec multitask;
  TrainConfig train;
  double fraction = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    encoder.validate();
    multitask.validate(encoder.num_layers);
    if (!(fraction > 0.0 && fraction <= 1.0)) throw tokenize::ConfigError("data fraction must be in (0, 1]");
  }
};

struct RunHooks {
  std::function<void(const CheckpointEvent&)> on_checkpoint;
};

struct RunResult {
  std::string status = kStatusOk;
  std::string stop_reason;
  multitask::Model model;
  std::vector<CheckpointRecord> log;  // every phase, in order
  std::optional<double> dev_wer;      // at the selected checkpoint
  std::optional<double> dev_per;
  long long selected_updates = 0;
  std::optional<multitask::PretrainCheckpoint> pretrained;
  std::vector<data::SkippedUtterance> skipped;
};

inline std::uint64_t model_seed(std::uint64_t seed) { return derive_seed(seed, "model"); }

// Trains an i-layer encoder with the phone head on top and keeps the
// checkpoint with the best dev PER.
inline multitask::PretrainCheckpoint pretrain_phase(const data::Dataset& train, const PreparedData& data,
                                                    const encoder::EncoderConfig& cfg, int aux_layer,
                                                    const TrainConfig& tcfg, std::uint64_t seed,
                                                    PhaseResult* result = nullptr, const PhaseHooks& hooks = {}) {
  if (aux_layer < 1 || aux_layer > cfg.num_layers) throw multitask::SpecError("aux_layer outside the encoder");
  auto truncated = cfg;
  truncated.num_layers = aux_layer;
  multitask::Model m(truncated, 0, data.lexicon.num_phones(), aux_layer, model_seed(seed));
  auto res = train_phase(m, train, data.dev, data.plan, nullptr, {0.0, 1.0}, tcfg, seed, "pretrain", hooks);
  auto ck = multitask::make_pretrain_checkpoint(m, res.best_record() ? res.best_record()->dev_per : std::nullopt, seed);
  if (result) *result = std::move(res);
  return ck;
}

// Runs one regime. `pretrained` lets callers share a pretraining phase
// across the two pretraining regimes; it must come from the same data,
// config and seed.
inline RunResult run_training(const RunConfig& cfg, const PreparedData& data, const RunHooks& hooks = {},
                              const multitask::PretrainCheckpoint* pretrained = nullptr) {
  using multitask::Regime;
  cfg.validate();
  const auto& spec = cfg.multitask;
  if (cfg.encoder.input_dim != static_cast<int>(data.train.front().features.cols())) {
    throw multitask::CompatibilityError("encoder input_dim " + std::to_string(cfg.encoder.input_dim) +
                                        " does not match feature dimension " +
                                        std::to_string(data.train.front().features.cols()));
  }
  const auto train = data::subsample_fraction(data.train, data.plan, cfg.fraction, derive_seed(cfg.seed, "subsample"));
  RunResult out;
  PhaseHooks phase_hooks{hooks.on_checkpoint};

  multitask::LossWeights w{1.0, 0.0};
  if (spec.regime == Regime::pretrain || spec.regime == Regime::pretrain_multitask) {
    if (pretrained) {
      if (pretrained->aux_layer != spec.aux_layer || pretrained->seed != cfg.seed) {
        throw multitask::CompatibilityError("shared pretraining checkpoint was made for a different run");
      }
      out.pretrained = *pretrained;
    } else {
      PhaseResult pr;
      out.pretrained = pretrain_phase(train, data, cfg.encoder, spec.aux_layer, cfg.train, cfg.seed, &pr, phase_hooks);
      out.log = pr.log;
      out.skipped = pr.skipped;
      if (pr.status != kStatusOk) {
        out.status = pr.status;
        out.stop_reason = "pretraining: " + pr.stop_reason;
      }
    }
    out.model = multitask::init_from_pretrained(*out.pretrained, cfg.encoder, spec.regime, data.vocab.size(),
                                                model_seed(cfg.seed));
    if (spec.regime == Regime::pretrain_multitask) w = multitask::LossWeights::from_lambda(spec.lambda);
  } else {
    const bool phone = spec.regime == Regime::multitask;
    out.model = multitask::Model(cfg.encoder, data.vocab.size(), phone ? data.lexicon.num_phones() : 0,
                                 spec.aux_layer, model_seed(cfg.seed));
    if (phone) w = multitask::LossWeights::from_lambda(spec.lambda);
  }

  auto res = train_phase(out.model, train, data.dev, data.plan, &data.vocab, w, cfg.train, cfg.seed, "train",
                         phase_hooks);
  out.log.insert(out.log.end(), res.log.begin(), res.log.end());
  out.skipped.insert(out.skipped.end(), res.skipped.begin(), res.skipped.end());
  if (res.status != kStatusOk) {
    out.status = res.status;
    out.stop_reason = res.stop_reason;
  } else if (out.stop_reason.empty()) {
    out.stop_reason = res.stop_reason;
  }
  if (const auto* best = res.best_record()) {
    out.dev_wer = best->dev_wer;
    out.dev_per = best->dev_per;
    out.selected_updates = best->updates;
  }
  return out;
}

}  // namespace hmctc::train
