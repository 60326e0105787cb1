#pragma once

// Subword CTC model with an optional auxiliary phone CTC head attached to an
// intermediate encoder layer. The training objective is
//
//   L = lambda * L_subword(h^N) + (1 - lambda) * L_phone(h^i)
//
// and only the subword head is used for decoding.

#include "hmctc/ctc/ctc.hpp"
#include "hmctc/data/dataset.hpp"
#include "hmctc/encoder/encoder.hpp"
#include "hmctc/numeric/autodiff.hpp"
#include "hmctc/numeric/rng.hpp"

#include <set>

namespace hmctc::multitask {

enum class Regime { baseline, multitask, pretrain, pretrain_multitask };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::baseline: return "baseline";
    case Regime::multitask: return "multitask";
    case Regime::pretrain: return "pretrain";
    case Regime::pretrain_multitask: return "pretrain_multitask";
  }
  return "?";
}

inline std::optional<Regime> parse_regime(std::string_view s) {
  for (auto r : {Regime::baseline, Regime::multitask, Regime::pretrain, Regime::pretrain_multitask}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CompatibilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct MultitaskSpec {
  double lambda = 1.0;
  int aux_layer = 3;
  Regime regime = Regime::baseline;

  void validate(int num_layers) const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw SpecError("lambda must lie in [0, 1]");
    if (aux_layer < 1 || aux_layer > num_layers) {
      throw SpecError("aux_layer " + std::to_string(aux_layer) + " outside 1.." + std::to_string(num_layers));
    }
    if ((regime == Regime::baseline || regime == Regime::pretrain) && lambda != 1.0) {
      throw SpecError("regime " + to_string(regime) + " trains the subword loss alone and requires lambda = 1");
    }
  }

  bool has_phone_head() const { return regime == Regime::multitask || regime == Regime::pretrain_multitask; }
};

// Interpolation weights of the two CTC terms.
struct LossWeights {
  double subword = 1.0;
  double phone = 0.0;

  static LossWeights from_lambda(double lambda) { return {lambda, 1.0 - lambda}; }
};

inline double combine(double lambda, double subword_loss, double phone_loss) {
  return lambda * subword_loss + (1.0 - lambda) * phone_loss;
}

// Affine projection from a tap to class logits, followed by log-softmax.
struct HeadParams {
  Parameter w;  // [tap_width x classes]
  Parameter b;  // [1 x classes]

  std::size_t classes() const { return w.value.cols(); }
  ParameterRefs parameters() { return {&w, &b}; }
};

inline HeadParams make_head(const std::string& name, std::size_t width, std::size_t classes, std::mt19937_64& rng) {
  HeadParams h{Parameter(name + ".w", Tensor::zeros(width, classes)), Parameter(name + ".b", Tensor::zeros(1, classes))};
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& x : h.w.value.values()) x = u(rng);
  return h;
}

inline Tensor head_log_probs(const HeadParams& head, const Tensor& tap) {
  Tensor logits = matmul(tap, head.w.value);
  logits.mat().rowwise() += head.b.value.mat().row(0);
  return log_softmax_rows(logits);
}

class Model {
 public:
  Model() = default;

  // Builds a model with fresh parameters drawn from streams derived from
  // `seed`. A zero class count omits that head.
  Model(encoder::EncoderConfig cfg, std::size_t subword_classes, std::size_t phone_classes, int aux_layer,
        std::uint64_t seed)
      : encoder_(cfg), aux_layer_(aux_layer) {
    auto enc_rng = make_stream(seed, "encoder");
    encoder_.init(enc_rng);
    if (subword_classes) {
      auto rng = make_stream(seed, "head.subword");
      subword_ = make_head("head.subword", static_cast<std::size_t>(cfg.tap_width()), subword_classes, rng);
    }
    if (phone_classes) {
      if (aux_layer < 1 || aux_layer > cfg.num_layers) throw SpecError("phone head layer outside the encoder");
      auto rng = make_stream(seed, "head.phone");
      phone_ = make_head("head.phone", static_cast<std::size_t>(cfg.tap_width()), phone_classes, rng);
    }
  }

  const encoder::EncoderConfig& config() const { return encoder_.config(); }
  int num_layers() const { return encoder_.num_layers(); }
  int aux_layer() const { return aux_layer_; }
  encoder::Encoder& encoder() { return encoder_; }
  const encoder::Encoder& encoder() const { return encoder_; }
  std::optional<HeadParams>& subword_head() { return subword_; }
  const std::optional<HeadParams>& subword_head() const { return subword_; }
  std::optional<HeadParams>& phone_head() { return phone_; }
  const std::optional<HeadParams>& phone_head() const { return phone_; }
  bool has_subword_head() const { return subword_.has_value(); }
  bool has_phone_head() const { return phone_.has_value(); }

  ParameterRefs parameters() {
    ParameterRefs out = encoder_.parameters();
    if (subword_) {
      auto p = subword_->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    if (phone_) {
      auto p = phone_->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  std::vector<Tensor> snapshot() {
    std::vector<Tensor> out;
    for (auto* p : parameters()) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    auto params = parameters();
    if (values.size() != params.size()) throw CompatibilityError("snapshot does not match model parameters");
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = values[k];
  }

  // Decoding path: encoder layers 1..N and the subword head only.
  Tensor subword_log_probs(const Tensor& features) const {
    if (!subword_) throw CapabilityError("model has no subword head");
    const auto pass = encoder_.forward(features, encoder::Mode::eval);
    return head_log_probs(*subword_, pass.taps.back());
  }

  Tensor phone_log_probs(const Tensor& features) const {
    if (!phone_) throw CapabilityError("model has no phone head; phone error rate is unavailable");
    const auto pass = encoder_.forward(features, encoder::Mode::eval, nullptr, aux_layer_);
    return head_log_probs(*phone_, pass.taps.back());
  }

 private:
  encoder::Encoder encoder_;
  std::optional<HeadParams> subword_;
  std::optional<HeadParams> phone_;
  int aux_layer_ = 0;
};

inline std::size_t encoded_frames(const data::Utterance& u) {
  return (u.frames() + encoder::EncoderConfig::kTimeReduction - 1) / encoder::EncoderConfig::kTimeReduction;
}

// Per-utterance CTC negative log-likelihoods of the heads that were
// evaluated (weight > 0); the others stay empty.
struct UtteranceLoss {
  std::optional<double> subword;
  std::optional<double> phone;
  double total = 0.0;
};

// Throws AlignmentInfeasible naming the head and utterance when a weighted
// target cannot fit the encoded frames.
inline void check_feasible(const data::Utterance& u, LossWeights w) {
  const std::size_t frames = encoded_frames(u);
  if (w.subword > 0 && !ctc::feasible(u.subword, frames)) {
    throw ctc::AlignmentInfeasible(frames, ctc::min_frames(u.subword), "utterance " + u.id + ", subword head");
  }
  if (w.phone > 0 && !ctc::feasible(u.phones, frames)) {
    throw ctc::AlignmentInfeasible(frames, ctc::min_frames(u.phones), "utterance " + u.id + ", phone head");
  }
}

namespace detail {

// One head's CTC loss on a tap; accumulates scale * dL/d(params) into the
// head and returns (loss, scale * dL/d(tap)).
inline std::pair<double, Tensor> head_loss(HeadParams& head, const Tensor& tap, const ctc::LabelSequence& z,
                                           double scale, const std::string& context) {
  Tape t;
  auto h = t.leaf(tap);
  auto logits = t.add_row(t.matmul(h, t.param(head.w)), t.param(head.b));
  auto nll = ctc::nll(t, t.log_softmax_rows(logits), z, context);
  auto root = t.scale(nll, scale);
  t.backward(root);
  return {t.value(nll)[0], t.grad(h)};
}

}  // namespace detail

// Forward and backward for one utterance. Gradients of
// grad_scale * (w.subword * L_subword + w.phone * L_phone) are accumulated
// into the model's parameters. Heads with zero weight are not evaluated, so
// their parameters (and any encoder layers only they depend on) receive no
// gradient at all.
inline UtteranceLoss forward_backward(Model& model, const data::Utterance& u, LossWeights w, encoder::Mode mode,
                                      std::mt19937_64* rng, double grad_scale = 1.0,
                                      const std::vector<Tensor>* replay_masks = nullptr,
                                      encoder::EncoderPass* pass_out = nullptr) {
  const bool use_sub = w.subword > 0;
  const bool use_ph = w.phone > 0;
  if (use_sub && !model.has_subword_head()) throw CapabilityError("subword loss requested without a subword head");
  if (use_ph && !model.has_phone_head()) throw CapabilityError("phone loss requested without a phone head");
  if (!use_sub && !use_ph) throw SpecError("both loss weights are zero");
  check_feasible(u, w);

  const int depth = use_sub ? model.num_layers() : model.aux_layer();
  auto pass = model.encoder().forward(u.features, mode, rng, depth, replay_masks);
  std::vector<Tensor> upstream(static_cast<std::size_t>(depth));
  UtteranceLoss out;
  if (use_sub) {
    auto [loss, g] = detail::head_loss(*model.subword_head(), pass.taps.back(), u.subword, grad_scale * w.subword,
                                       "utterance " + u.id + ", subword head");
    out.subword = loss;
    upstream.back() = std::move(g);
  }
  if (use_ph) {
    const auto i = static_cast<std::size_t>(model.aux_layer() - 1);
    auto [loss, g] = detail::head_loss(*model.phone_head(), pass.taps[i], u.phones, grad_scale * w.phone,
                                       "utterance " + u.id + ", phone head");
    out.phone = loss;
    if (upstream[i].empty()) {
      upstream[i] = std::move(g);
    } else {
      for (std::size_t k = 0; k < g.size(); ++k) upstream[i][k] += g[k];
    }
  }
  out.total = (use_sub ? w.subword * *out.subword : 0.0) + (use_ph ? w.phone * *out.phone : 0.0);
  model.encoder().backward(pass, upstream);
  if (pass_out) *pass_out = std::move(pass);
  return out;
}

struct BatchLoss {
  double total = 0.0;
  std::optional<double> subword;
  std::optional<double> phone;
  std::size_t utterances = 0;
};

// Batch-averaged combined loss. Each head's per-utterance CTC loss is
// averaged over the batch before interpolation, and gradients are scaled to
// match. Utterances must already be known feasible.
inline BatchLoss combined_loss(Model& model, std::span<const data::Utterance* const> batch, LossWeights w,
                               encoder::Mode mode, std::mt19937_64* rng) {
  BatchLoss out;
  if (batch.empty()) return out;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double sub = 0, ph = 0;
  for (const auto* u : batch) {
    const auto l = forward_backward(model, *u, w, mode, rng, scale);
    if (l.subword) sub += *l.subword;
    if (l.phone) ph += *l.phone;
    out.total += l.total * scale;
  }
  if (w.subword > 0) out.subword = sub * scale;
  if (w.phone > 0) out.phone = ph * scale;
  out.utterances = batch.size();
  return out;
}

// Unweighted per-head CTC losses of one utterance in eval mode, without
// touching gradients.
inline std::pair<double, double> head_losses(const Model& model, const data::Utterance& u) {
  const auto pass = model.encoder().forward(u.features, encoder::Mode::eval);
  const auto lsub = ctc::log_likelihood(head_log_probs(*model.subword_head(), pass.taps.back()), u.subword);
  const auto lph = ctc::log_likelihood(
      head_log_probs(*model.phone_head(), pass.taps[static_cast<std::size_t>(model.aux_layer() - 1)]), u.phones);
  return {-lsub, -lph};
}

// Parameters whose gradient is identically zero under the given weights.
inline std::set<std::string> dead_gradient_set(Model& model, LossWeights w) {
  std::set<std::string> dead;
  const bool use_sub = w.subword > 0 && model.has_subword_head();
  const bool use_ph = w.phone > 0 && model.has_phone_head();
  const int live_depth = use_sub ? model.num_layers() : use_ph ? model.aux_layer() : 0;
  for (int l = live_depth; l < model.num_layers(); ++l) {
    for (auto* p : model.encoder().layers()[static_cast<std::size_t>(l)].parameters()) dead.insert(p->name);
  }
  if (model.has_subword_head() && !use_sub) {
    for (auto* p : model.subword_head()->parameters()) dead.insert(p->name);
  }
  if (model.has_phone_head() && !use_ph) {
    for (auto* p : model.phone_head()->parameters()) dead.insert(p->name);
  }
  return dead;
}

}  // namespace hmctc::multitask
