#pragma once

#include "hmctc/ctc/ctc.hpp"
#include "hmctc/tokenize/bpe.hpp"
#include "hmctc/tokenize/lexicon.hpp"

#include <array>
#include <map>
#include <random>

namespace hmctc::data {

// Input-frame range [begin, end) covered by one transcript word.
struct WordSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

struct Utterance {
  std::string id;
  std::string speaker;
  Tensor features;  // [T x d]
  std::vector<std::string> words;
  ctc::LabelSequence subword;
  ctc::LabelSequence phones;
  // Present only when the producer knows the frame-level word alignment.
  std::vector<WordSpan> word_spans;

  std::size_t frames() const { return features.rows(); }
};

using Dataset = std::vector<Utterance>;

struct SkippedUtterance {
  std::string id;
  std::string reason;
};

// Encodes subword and phone targets. Utterances with out-of-lexicon words or
// unencodable characters are removed and reported.
inline std::vector<SkippedUtterance> attach_labels(Dataset& ds, const tokenize::WordpieceVocab& vocab,
                                                   const tokenize::Lexicon& lexicon) {
  std::vector<SkippedUtterance> skipped;
  Dataset kept;
  kept.reserve(ds.size());
  for (auto& u : ds) {
    try {
      u.subword = vocab.encode_words(u.words);
      u.phones = lexicon.phones_for(u.words);
      kept.push_back(std::move(u));
    } catch (const std::exception& e) {
      skipped.push_back({u.id, e.what()});
    }
  }
  ds = std::move(kept);
  return skipped;
}

// Per speaker and feature dimension: subtract the mean and divide by the
// standard deviation. Dimensions with stddev below 1e-8 are only centered.
inline Dataset normalize_per_speaker(Dataset ds) {
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < ds.size(); ++i) by_speaker[ds[i].speaker].push_back(i);
  for (const auto& [spk, idx] : by_speaker) {
    const std::size_t d = ds[idx.front()].features.cols();
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    std::size_t n = 0;
    for (auto i : idx) {
      const Tensor& f = ds[i].features;
      if (f.cols() != d) throw ShapeError("speaker " + spk + " has utterances with different feature widths");
      for (std::size_t t = 0; t < f.rows(); ++t) {
        for (std::size_t k = 0; k < d; ++k) sum[k] += f(t, k);
      }
      n += f.rows();
    }
    std::vector<double> mean(d), scale(d);
    for (std::size_t k = 0; k < d; ++k) mean[k] = sum[k] / static_cast<double>(n);
    for (auto i : idx) {
      const Tensor& f = ds[i].features;
      for (std::size_t t = 0; t < f.rows(); ++t) {
        for (std::size_t k = 0; k < d; ++k) sq[k] += (f(t, k) - mean[k]) * (f(t, k) - mean[k]);
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      const double sd = std::sqrt(sq[k] / static_cast<double>(n));
      scale[k] = sd < 1e-8 ? 1.0 : 1.0 / sd;
    }
    for (auto i : idx) {
      Tensor& f = ds[i].features;
      for (std::size_t t = 0; t < f.rows(); ++t) {
        for (std::size_t k = 0; k < d; ++k) f(t, k) = (f(t, k) - mean[k]) * scale[k];
      }
    }
  }
  return ds;
}

// Keeps at most `cap` utterances per distinct transcript, first occurrences
// in corpus order.
inline Dataset dedupe_cap(Dataset ds, std::size_t cap = 300) {
  std::map<std::vector<std::string>, std::size_t> seen;
  Dataset out;
  out.reserve(ds.size());
  for (auto& u : ds) {
    if (seen[u.words]++ < cap) out.push_back(std::move(u));
  }
  return out;
}

inline constexpr std::size_t kNumBuckets = 5;
using BatchSizes = std::array<std::size_t, kNumBuckets>;

// Linear from 128 (shortest bucket) to 32 (longest).
inline constexpr BatchSizes kDefaultBatchSizes{128, 104, 80, 56, 32};

struct BucketPlan {
  // Inclusive upper length bound of each bucket; the last is the longest
  // utterance seen when planning.
  std::array<std::size_t, kNumBuckets> upper{};
  BatchSizes batch_sizes = kDefaultBatchSizes;

  std::size_t bucket_of(std::size_t frames) const {
    for (std::size_t b = 0; b + 1 < kNumBuckets; ++b) {
      if (frames <= upper[b]) return b;
    }
    return kNumBuckets - 1;
  }

  std::vector<std::size_t> assign(const Dataset& ds) const {
    std::vector<std::size_t> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) out[i] = bucket_of(ds[i].frames());
    return out;
  }
};

// Boundaries at the 20/40/60/80th length percentiles (nearest rank).
inline BucketPlan plan_buckets(const Dataset& ds, BatchSizes batch_sizes = kDefaultBatchSizes) {
  if (ds.size() < kNumBuckets) throw std::invalid_argument("bucketing needs at least 5 utterances");
  std::vector<std::size_t> len(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) len[i] = ds[i].frames();
  std::sort(len.begin(), len.end());
  BucketPlan plan;
  plan.batch_sizes = batch_sizes;
  const std::size_t n = len.size();
  for (std::size_t b = 0; b + 1 < kNumBuckets; ++b) {
    const std::size_t rank = ((b + 1) * n + kNumBuckets - 1) / kNumBuckets;  // ceil(p * n)
    plan.upper[b] = len[rank - 1];
  }
  plan.upper[kNumBuckets - 1] = len.back();
  return plan;
}

inline std::array<std::size_t, kNumBuckets> bucket_counts(const std::vector<std::size_t>& assignment) {
  std::array<std::size_t, kNumBuckets> c{};
  for (auto b : assignment) ++c[b];
  return c;
}

// Samples floor(frac * |bucket|) utterances per bucket, uniformly without
// replacement; the result keeps corpus order.
inline Dataset subsample_fraction(const Dataset& ds, const BucketPlan& plan, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac <= 1.0)) {
    throw tokenize::ConfigError("data fraction must be in (0, 1], got " + std::to_string(frac));
  }
  if (frac == 1.0) return ds;
  const auto assignment = plan.assign(ds);
  std::array<std::vector<std::size_t>, kNumBuckets> members;
  for (std::size_t i = 0; i < ds.size(); ++i) members[assignment[i]].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (auto& m : members) {
    const auto k = static_cast<std::size_t>(std::floor(frac * static_cast<double>(m.size())));
    std::shuffle(m.begin(), m.end(), rng);
    keep.insert(keep.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(keep.begin(), keep.end());
  Dataset out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(ds[i]);
  return out;
}

// One epoch of minibatches (indices into the dataset). Utterances are
// shuffled within their bucket, chunked by the bucket's batch size, and the
// batch order is shuffled; batches never mix buckets.
inline std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& assignment,
                                                           const BatchSizes& batch_sizes, std::mt19937_64& rng) {
  std::array<std::vector<std::size_t>, kNumBuckets> members;
  for (std::size_t i = 0; i < assignment.size(); ++i) members[assignment[i]].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < kNumBuckets; ++b) {
    auto& m = members[b];
    std::shuffle(m.begin(), m.end(), rng);
    const std::size_t bs = std::max<std::size_t>(1, batch_sizes[b]);
    for (std::size_t k = 0; k < m.size(); k += bs) {
      batches.emplace_back(m.begin() + static_cast<std::ptrdiff_t>(k),
                           m.begin() + static_cast<std::ptrdiff_t>(std::min(m.size(), k + bs)));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

inline tokenize::WordCounts word_counts(const Dataset& ds) {
  tokenize::WordCounts c;
  for (const auto& u : ds) {
    for (const auto& w : u.words) ++c[w];
  }
  return c;
}

}  // namespace hmctc::data
