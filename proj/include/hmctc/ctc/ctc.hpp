#pragma once

// Connectionist temporal classification: loss, gradient, collapsing map,
// greedy decoding and an exhaustive-enumeration reference.
//
// Blank is always token id 0. All lattice arithmetic is in log space with
// -inf as the "unreachable" sentinel.

#include "hmctc/numeric/autodiff.hpp"
#include "hmctc/numeric/ops.hpp"

#include <cstdint>
#include <optional>

namespace hmctc::ctc {

inline constexpr int kBlank = 0;

// Target labels, never containing the blank.
using LabelSequence = std::vector<int>;
// Blank-interleaved form [_, z1, _, z2, ..., zL, _] of length 2L+1.
using ExtendedSequence = std::vector<int>;

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a label sequence cannot be aligned to the available frames.
class AlignmentInfeasible : public std::runtime_error {
 public:
  AlignmentInfeasible(std::size_t frames, std::size_t needed, std::string context = {})
      : std::runtime_error(message(frames, needed, context)), frames_(frames), needed_(needed) {}

  std::size_t frames() const { return frames_; }
  std::size_t needed() const { return needed_; }

 private:
  static std::string message(std::size_t frames, std::size_t needed, const std::string& ctx) {
    std::string m = "CTC target needs at least " + std::to_string(needed) + " frames but only " +
                    std::to_string(frames) + " are available";
    if (!ctx.empty()) m += " (" + ctx + ")";
    return m;
  }
  std::size_t frames_;
  std::size_t needed_;
};

inline LabelSequence collapse(std::span<const int> path) {
  LabelSequence out;
  int prev = -1;
  for (int p : path) {
    if (p != prev && p != kBlank) out.push_back(p);
    prev = p;
  }
  return out;
}

inline ExtendedSequence extend_with_blanks(std::span<const int> z) {
  ExtendedSequence ext(2 * z.size() + 1, kBlank);
  for (std::size_t k = 0; k < z.size(); ++k) ext[2 * k + 1] = z[k];
  return ext;
}

// Fewest frames any alignment of z can occupy: one per label plus a blank
// between each pair of equal neighbours.
inline std::size_t min_frames(std::span<const int> z) {
  std::size_t n = z.size();
  for (std::size_t k = 1; k < z.size(); ++k) n += z[k] == z[k - 1] ? 1 : 0;
  return n;
}

inline bool feasible(std::span<const int> z, std::size_t frames) { return min_frames(z) <= frames; }

inline void validate_labels(std::span<const int> z, std::size_t num_classes) {
  for (int id : z) {
    if (id == kBlank) throw ValidationError("label sequence contains the blank id");
    if (id < 0 || static_cast<std::size_t>(id) >= num_classes) {
      throw ValidationError("label id " + std::to_string(id) + " outside alphabet of size " +
                            std::to_string(num_classes));
    }
  }
}

inline void validate_log_probs(const Tensor& log_probs, double tol = 1e-6) {
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    const double lse = log_sum_exp(log_probs.row(t));
    if (!(std::abs(lse) <= tol)) {
      throw ValidationError("row " + std::to_string(t) + " of log_probs is not normalized (logsumexp = " +
                            std::to_string(lse) + ")");
    }
  }
}

namespace detail {

inline bool can_skip(const ExtendedSequence& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

// alpha(t, s) includes the emission at frame t.
inline RowMatrix forward_lattice(const Tensor& lp, const ExtendedSequence& ext) {
  const std::size_t T = lp.rows();
  const std::size_t S = ext.size();
  RowMatrix alpha = RowMatrix::Constant(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(S), kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  if (S > 1) alpha(0, 1) = lp(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    // States that cannot still reach the end are left at -inf implicitly by
    // the final read; no pruning needed for correctness.
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(ext, s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, ext[s]);
    }
  }
  return alpha;
}

// beta(t, s) also includes the emission at frame t.
inline RowMatrix backward_lattice(const Tensor& lp, const ExtendedSequence& ext) {
  const std::size_t T = lp.rows();
  const std::size_t S = ext.size();
  RowMatrix beta = RowMatrix::Constant(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(S), kNegInf);
  beta(T - 1, S - 1) = lp(T - 1, ext[S - 1]);
  if (S > 1) beta(T - 1, S - 2) = lp(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(ext, s + 2)) b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + lp(t, ext[s]);
    }
  }
  return beta;
}

inline double final_log_likelihood(const RowMatrix& alpha) {
  const auto T = alpha.rows();
  const auto S = alpha.cols();
  double ll = alpha(T - 1, S - 1);
  if (S > 1) ll = log_add(ll, alpha(T - 1, S - 2));
  return ll;
}

}  // namespace detail

// log p(z | x) = log sum over all frame paths pi with collapse(pi) == z of
// prod_t p(pi_t). Returns -inf when z cannot fit in the available frames.
inline double log_likelihood(const Tensor& log_probs, std::span<const int> z) {
  validate_log_probs(log_probs);
  validate_labels(z, log_probs.cols());
  if (log_probs.rows() == 0) return z.empty() ? 0.0 : kNegInf;
  if (!feasible(z, log_probs.rows())) return kNegInf;
  return detail::final_log_likelihood(detail::forward_lattice(log_probs, extend_with_blanks(z)));
}

struct Occupancy {
  double log_likelihood = kNegInf;
  // gamma(t, c): posterior probability of emitting class c at frame t.
  Tensor gamma;
};

// Posterior label occupancies from the forward/backward recursions. Input
// rows must already be log-normalized.
inline Occupancy occupancy(const Tensor& log_probs, std::span<const int> z, const std::string& context = {}) {
  validate_labels(z, log_probs.cols());
  const std::size_t T = log_probs.rows();
  if (!feasible(z, T) || T == 0) throw AlignmentInfeasible(T, min_frames(z), context);
  const auto ext = extend_with_blanks(z);
  const RowMatrix alpha = detail::forward_lattice(log_probs, ext);
  const RowMatrix beta = detail::backward_lattice(log_probs, ext);
  Occupancy occ;
  occ.log_likelihood = detail::final_log_likelihood(alpha);
  if (occ.log_likelihood == kNegInf) throw AlignmentInfeasible(T, min_frames(z), context);
  occ.gamma = Tensor::zeros(T, log_probs.cols());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < ext.size(); ++s) {
      const double a = alpha(t, s);
      const double b = beta(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      occ.gamma(t, ext[s]) += std::exp(a + b - log_probs(t, ext[s]) - occ.log_likelihood);
    }
  }
  return occ;
}

struct CtcResult {
  double log_likelihood = kNegInf;
  // Gradient of -log p(z|x) with respect to the pre-softmax logits.
  Tensor grad_logits;
};

inline CtcResult grad(const Tensor& logits, std::span<const int> z, const std::string& context = {}) {
  if (!logits.all_finite()) throw ValidationError("ctc grad: logits are not finite");
  const Tensor lp = log_softmax_rows(logits);
  Occupancy occ = occupancy(lp, z, context);
  CtcResult r;
  r.log_likelihood = occ.log_likelihood;
  r.grad_logits = Tensor(lp.shape());
  for (std::size_t i = 0; i < lp.size(); ++i) r.grad_logits[i] = std::exp(lp[i]) - occ.gamma[i];
  return r;
}

// Tape node: -log p(z|x) from log-normalized rows. Its gradient with respect
// to log_probs is -gamma, which composed with log_softmax gives
// softmax - gamma.
inline Tape::Var nll(Tape& tape, Tape::Var log_probs, std::span<const int> z, const std::string& context = {}) {
  Occupancy occ = occupancy(tape.value(log_probs), z, context);
  Tensor out({1, 1}, std::vector<double>{-occ.log_likelihood});
  return tape.custom({log_probs}, std::move(out), [log_probs, gamma = std::move(occ.gamma)](Tape& t, const Tensor& g) {
    Tensor gl(gamma.shape());
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] = -g[0] * gamma[i];
    t.accumulate(log_probs, gl);
  });
}

// Reference implementation by enumeration of every frame path. Only for
// tiny problems: C^T is capped at `max_paths`.
inline double brute_force_log_likelihood(const Tensor& log_probs, std::span<const int> z,
                                         std::uint64_t max_paths = 1'000'000) {
  const std::size_t T = log_probs.rows();
  const std::size_t C = log_probs.cols();
  std::uint64_t paths = 1;
  for (std::size_t t = 0; t < T; ++t) {
    if (paths > max_paths / std::max<std::size_t>(C, 1)) {
      throw SizeError("brute force CTC would enumerate more than " + std::to_string(max_paths) + " paths");
    }
    paths *= C;
  }
  if (paths > max_paths) throw SizeError("brute force CTC path count exceeds guard");
  const LabelSequence target(z.begin(), z.end());
  std::vector<int> path(T, 0);
  double acc = kNegInf;
  for (std::uint64_t n = 0; n < paths; ++n) {
    std::uint64_t k = n;
    double lp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = static_cast<int>(k % C);
      k /= C;
      lp += log_probs(t, path[t]);
    }
    if (collapse(path) == target) acc = log_add(acc, lp);
  }
  return acc;
}

// Per-frame argmax; ties go to the lowest id.
inline std::vector<int> best_path(const Tensor& scores) {
  std::vector<int> path(scores.rows());
  for (std::size_t t = 0; t < scores.rows(); ++t) {
    auto row = scores.row(t);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    path[t] = static_cast<int>(best);
  }
  return path;
}

inline LabelSequence greedy_decode(const Tensor& log_probs) { return collapse(best_path(log_probs)); }

}  // namespace hmctc::ctc
