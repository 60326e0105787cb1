#pragma once

#include "hmctc/multitask/model.hpp"
#include "hmctc/tokenize/bpe.hpp"

namespace hmctc::train {

// Levenshtein distance with unit costs.
template <class Seq>
std::size_t edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = std::size(ref), m = std::size(hyp);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  auto r = std::begin(ref);
  for (std::size_t i = 1; i <= n; ++i, ++r) {
    cur[0] = i;
    auto h = std::begin(hyp);
    for (std::size_t j = 1; j <= m; ++j, ++h) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (*r == *h ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

struct ErrorCount {
  std::size_t errors = 0;
  std::size_t reference = 0;

  void add(std::size_t e, std::size_t r) {
    errors += e;
    reference += r;
  }
  // Corpus-level rate in percent.
  double rate() const { return reference ? 100.0 * static_cast<double>(errors) / static_cast<double>(reference) : 0.0; }
};

enum class Level { word, phone };

// Greedy-decodes every utterance and scores against its references.
inline ErrorCount count_errors(const multitask::Model& model, const data::Dataset& ds, Level level,
                               const tokenize::WordpieceVocab* vocab) {
  if (level == Level::phone && !model.has_phone_head()) {
    throw multitask::CapabilityError("phone error rate requested from a model without a phone head");
  }
  if (level == Level::word && !vocab) throw std::invalid_argument("word error rate needs the wordpiece vocabulary");
  ErrorCount c;
  for (const auto& u : ds) {
    if (level == Level::word) {
      const auto hyp = vocab->decode(ctc::greedy_decode(model.subword_log_probs(u.features)));
      c.add(edit_distance(u.words, hyp), u.words.size());
    } else {
      const auto hyp = ctc::greedy_decode(model.phone_log_probs(u.features));
      c.add(edit_distance(u.phones, hyp), u.phones.size());
    }
  }
  return c;
}

struct MetricsReport {
  std::optional<double> dev_wer;
  std::optional<double> dev_per;
  std::optional<double> loss;
  std::optional<double> loss_subword;
  std::optional<double> loss_phone;
  long long updates = 0;
  double wall_seconds = 0.0;
};

// Word error rate from the subword head; phone error rate from the phone
// head when `with_phone` is set.
inline MetricsReport evaluate(const multitask::Model& model, const data::Dataset& ds,
                              const tokenize::WordpieceVocab& vocab, bool with_word, bool with_phone) {
  if (with_phone && !model.has_phone_head()) {
    throw multitask::CapabilityError("phone error rate requested from a model without a phone head");
  }
  MetricsReport r;
  if (with_word) r.dev_wer = count_errors(model, ds, Level::word, &vocab).rate();
  if (with_phone) r.dev_per = count_errors(model, ds, Level::phone, nullptr).rate();
  return r;
}

// Mean per-utterance CTC loss of each head present, over the utterances whose
// targets fit; the total interpolates the two with `lambda` when both exist.
inline void add_losses(MetricsReport& r, const multitask::Model& model, const data::Dataset& ds, double lambda) {
  auto mean_nll = [&](bool phone) -> std::optional<double> {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& u : ds) {
      const auto& z = phone ? u.phones : u.subword;
      const Tensor lp = phone ? model.phone_log_probs(u.features) : model.subword_log_probs(u.features);
      if (!ctc::feasible(z, lp.rows())) continue;
      sum -= ctc::log_likelihood(lp, z);
      ++n;
    }
    if (!n) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  if (model.has_subword_head()) r.loss_subword = mean_nll(false);
  if (model.has_phone_head()) r.loss_phone = mean_nll(true);
  if (r.loss_subword && r.loss_phone) {
    r.loss = lambda * *r.loss_subword + (1.0 - lambda) * *r.loss_phone;
  } else {
    r.loss = r.loss_subword ? r.loss_subword : r.loss_phone;
  }
}

}  // namespace hmctc::train
