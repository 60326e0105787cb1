#pragma once

// Stacked bidirectional LSTM encoder with 2x frame pairing at the input and
// every layer's output retained as a tap for attaching output heads.
//
// Forward and backward passes are written out by hand (backprop through
// time) rather than recorded on a tape; the per-step work is a single
// H x 4H recurrent product, everything else is batched over time.

#include "hmctc/numeric/ops.hpp"

#include <optional>
#include <random>

namespace hmctc::encoder {

struct EncoderConfig {
  int num_layers = 5;
  // 320 per direction at full scale.
  int hidden = 32;
  double dropout = 0.1;
  int input_dim = 40;
  static constexpr int kTimeReduction = 2;

  int paired_dim() const { return input_dim * kTimeReduction; }
  int tap_width() const { return 2 * hidden; }

  void validate() const {
    if (num_layers < 1) throw std::invalid_argument("encoder needs at least one layer");
    if (hidden < 1) throw std::invalid_argument("encoder hidden size must be positive");
    if (input_dim < 1) throw std::invalid_argument("encoder input dimension must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  }
};

// Gate blocks are laid out [input | forget | candidate | output] along the
// 4H axis.
struct DirectionParams {
  Parameter wx;  // [in x 4H]
  Parameter wh;  // [H x 4H]
  Parameter b;   // [1 x 4H]
};

struct LstmLayerParams {
  DirectionParams fwd;
  DirectionParams bwd;

  std::size_t input_width() const { return fwd.wx.value.rows(); }
  std::size_t hidden() const { return fwd.wh.value.rows(); }

  ParameterRefs parameters() {
    return {&fwd.wx, &fwd.wh, &fwd.b, &bwd.wx, &bwd.wh, &bwd.b};
  }
};

inline DirectionParams make_direction(const std::string& prefix, std::size_t in, std::size_t hidden) {
  return {Parameter(prefix + ".wx", Tensor::zeros(in, 4 * hidden)),
          Parameter(prefix + ".wh", Tensor::zeros(hidden, 4 * hidden)),
          Parameter(prefix + ".b", Tensor::zeros(1, 4 * hidden))};
}

inline LstmLayerParams make_layer(int layer_index, std::size_t in, std::size_t hidden) {
  const std::string prefix = "encoder.layer" + std::to_string(layer_index);
  return {make_direction(prefix + ".fwd", in, hidden), make_direction(prefix + ".bwd", in, hidden)};
}

// Uniform(-0.05, 0.05) weights, zero biases, forget-gate bias 1.
inline void init_direction(DirectionParams& d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& x : d.wx.value.values()) x = u(rng);
  for (auto& x : d.wh.value.values()) x = u(rng);
  const std::size_t h = d.wh.value.rows();
  d.b.value.fill(0.0);
  for (std::size_t k = h; k < 2 * h; ++k) d.b.value[k] = 1.0;
}

// Concatenates frames (2t, 2t+1); an odd final frame is paired with zeros.
inline Tensor pair_frames(const Tensor& x) {
  if (x.rows() == 0) throw ShapeError("pair_frames: empty input");
  const std::size_t T = x.rows();
  const std::size_t d = x.cols();
  const std::size_t Tp = (T + 1) / 2;
  Tensor out = Tensor::zeros(Tp, 2 * d);
  for (std::size_t t = 0; t < T; ++t) {
    auto src = x.row(t);
    std::copy(src.begin(), src.end(), out.row(t / 2).begin() + static_cast<std::ptrdiff_t>((t % 2) * d));
  }
  return out;
}

struct DirectionTrace {
  RowMatrix gates;  // post-activation i, f, g, o  [T x 4H]
  RowMatrix cell;   // [T x H]
  RowMatrix cell_tanh;
  RowMatrix hidden;
};

struct LayerTrace {
  Tensor input;
  DirectionTrace fwd;
  DirectionTrace bwd;
  // Dropout applied to this layer's output; empty in eval mode.
  Tensor mask;
  double keep = 1.0;
};

namespace detail {

inline void direction_forward(const ConstMatrixMap& x, const DirectionParams& p, bool reverse, DirectionTrace& tr) {
  const Eigen::Index T = x.rows();
  const Eigen::Index H = static_cast<Eigen::Index>(p.wh.value.rows());
  tr.gates.noalias() = x * p.wx.value.mat();
  tr.gates.rowwise() += p.b.value.mat().row(0);
  tr.cell.resize(T, H);
  tr.cell_tanh.resize(T, H);
  tr.hidden.resize(T, H);
  const auto wh = p.wh.value.mat();
  Eigen::Index prev = -1;
  for (Eigen::Index k = 0; k < T; ++k) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    auto g = tr.gates.row(t);
    if (prev >= 0) g.noalias() += tr.hidden.row(prev) * wh;
    auto ga = g.array();
    ga.head(2 * H) = sigmoid_array(ga.head(2 * H));
    ga.segment(2 * H, H) = tanh_array(ga.segment(2 * H, H));
    ga.tail(H) = sigmoid_array(ga.tail(H));
    auto c = tr.cell.row(t).array();
    if (prev >= 0) {
      c = ga.segment(H, H) * tr.cell.row(prev).array() + ga.head(H) * ga.segment(2 * H, H);
    } else {
      c = ga.head(H) * ga.segment(2 * H, H);
    }
    tr.cell_tanh.row(t).array() = tanh_array(c);
    tr.hidden.row(t).array() = ga.tail(H) * tr.cell_tanh.row(t).array();
    prev = t;
  }
}

// d_hidden: gradient w.r.t. this direction's hidden outputs, [T x H].
// Returns the gradient w.r.t. the direction input.
inline RowMatrix direction_backward(const ConstMatrixMap& x, DirectionParams& p, bool reverse,
                                    const DirectionTrace& tr, const Eigen::Ref<const RowMatrix>& d_hidden) {
  const Eigen::Index T = x.rows();
  const Eigen::Index H = static_cast<Eigen::Index>(p.wh.value.rows());
  RowMatrix d_gates(T, 4 * H);
  RowMatrix h_prev = RowMatrix::Zero(T, H);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H);
  Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(H);
  const auto wh = p.wh.value.mat();
  for (Eigen::Index k = T; k-- > 0;) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    const Eigen::Index prev = k == 0 ? -1 : (reverse ? t + 1 : t - 1);
    const auto g = tr.gates.row(t);
    auto dg = d_gates.row(t);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double i = g(j), f = g(H + j), cand = g(2 * H + j), o = g(3 * H + j);
      const double tc = tr.cell_tanh(t, j);
      const double dh = d_hidden(t, j) + dh_next(j);
      const double dc = dc_next(j) + dh * o * (1.0 - tc * tc);
      const double c_prev = prev >= 0 ? tr.cell(prev, j) : 0.0;
      dg(j) = dc * cand * i * (1.0 - i);
      dg(H + j) = dc * c_prev * f * (1.0 - f);
      dg(2 * H + j) = dc * i * (1.0 - cand * cand);
      dg(3 * H + j) = dh * tc * o * (1.0 - o);
      dc_next(j) = dc * f;
    }
    if (prev >= 0) {
      h_prev.row(t) = tr.hidden.row(prev);
      dh_next.noalias() = dg * wh.transpose();
    }
  }
  p.wx.grad.mat().noalias() += x.transpose() * d_gates;
  p.wh.grad.mat().noalias() += h_prev.transpose() * d_gates;
  p.b.grad.mat().row(0) += d_gates.colwise().sum();
  return d_gates * p.wx.value.mat().transpose();
}

}  // namespace detail

inline void check_layer_input(const Tensor& input, const LstmLayerParams& p) {
  if (input.cols() != p.input_width()) {
    throw ShapeError("bilstm layer expects input width " + std::to_string(p.input_width()) + ", got " +
                     std::to_string(input.cols()));
  }
}

// Output is [T x 2H]: forward-direction states then backward-direction states.
inline Tensor bilstm_layer_forward(const Tensor& input, const LstmLayerParams& p, LayerTrace* trace = nullptr) {
  check_layer_input(input, p);
  LayerTrace local;
  LayerTrace& tr = trace ? *trace : local;
  tr.input = input;
  const auto x = input.mat();
  detail::direction_forward(x, p.fwd, false, tr.fwd);
  detail::direction_forward(x, p.bwd, true, tr.bwd);
  const std::size_t H = p.hidden();
  Tensor out = Tensor::zeros(input.rows(), 2 * H);
  out.mat().leftCols(static_cast<Eigen::Index>(H)) = tr.fwd.hidden;
  out.mat().rightCols(static_cast<Eigen::Index>(H)) = tr.bwd.hidden;
  return out;
}

// d_output is the gradient w.r.t. the layer output before dropout.
// Accumulates parameter gradients and returns the gradient w.r.t. the input.
inline Tensor bilstm_layer_backward(const Tensor& d_output, LstmLayerParams& p, const LayerTrace& tr) {
  const auto H = static_cast<Eigen::Index>(p.hidden());
  if (d_output.rows() != tr.input.rows() || d_output.cols() != static_cast<std::size_t>(2 * H)) {
    throw ShapeError("bilstm layer backward: gradient shape " + shape_string(d_output.shape()) +
                     " does not match layer output");
  }
  const auto x = tr.input.mat();
  const auto d = d_output.mat();
  RowMatrix dx = detail::direction_backward(x, p.fwd, false, tr.fwd, d.leftCols(H));
  dx += detail::direction_backward(x, p.bwd, true, tr.bwd, d.rightCols(H));
  return Tensor::from_matrix(dx);
}

enum class Mode { train, eval };

// Result of one forward pass: taps h^1..h^k plus what backward needs.
struct EncoderPass {
  std::vector<Tensor> taps;
  std::vector<LayerTrace> traces;

  std::size_t frames() const { return taps.empty() ? 0 : taps.front().rows(); }
};

class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(EncoderConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (int l = 1; l <= cfg_.num_layers; ++l) {
      const std::size_t in = l == 1 ? cfg_.paired_dim() : cfg_.tap_width();
      layers_.push_back(make_layer(l, in, cfg_.hidden));
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  int num_layers() const { return cfg_.num_layers; }
  std::vector<LstmLayerParams>& layers() { return layers_; }
  const std::vector<LstmLayerParams>& layers() const { return layers_; }

  void init(std::mt19937_64& rng) {
    for (auto& l : layers_) {
      init_direction(l.fwd, rng);
      init_direction(l.bwd, rng);
    }
  }

  ParameterRefs parameters() {
    ParameterRefs out;
    for (auto& l : layers_) {
      auto p = l.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  // Runs layers 1..depth (all layers when depth is 0). In train mode with a
  // nonzero dropout rate, a fresh Bernoulli mask is drawn per layer from
  // `rng`, unless `replay_masks` supplies them.
  EncoderPass forward(const Tensor& features, Mode mode, std::mt19937_64* rng = nullptr, int depth = 0,
                      const std::vector<Tensor>* replay_masks = nullptr) const {
    if (features.cols() != static_cast<std::size_t>(cfg_.input_dim)) {
      throw ShapeError("encoder expects " + std::to_string(cfg_.input_dim) + "-dim features, got " +
                       std::to_string(features.cols()));
    }
    if (depth <= 0) depth = cfg_.num_layers;
    if (depth > cfg_.num_layers) throw std::out_of_range("encoder depth exceeds layer count");
    const bool drop = mode == Mode::train && cfg_.dropout > 0.0;
    if (drop && !rng && !replay_masks) throw std::invalid_argument("train-mode dropout needs a random generator");
    EncoderPass pass;
    pass.taps.reserve(static_cast<std::size_t>(depth));
    pass.traces.resize(static_cast<std::size_t>(depth));
    Tensor input = pair_frames(features);
    for (int l = 0; l < depth; ++l) {
      LayerTrace& tr = pass.traces[static_cast<std::size_t>(l)];
      Tensor out = bilstm_layer_forward(input, layers_[static_cast<std::size_t>(l)], &tr);
      if (drop) {
        tr.keep = 1.0 - cfg_.dropout;
        if (replay_masks) {
          tr.mask = replay_masks->at(static_cast<std::size_t>(l));
        } else {
          tr.mask = Tensor(out.shape());
          std::bernoulli_distribution keep(tr.keep);
          for (auto& m : tr.mask.values()) m = keep(*rng) ? 1.0 : 0.0;
        }
        out = dropout_apply(out, tr.mask, tr.keep);
      }
      input = out;
      pass.taps.push_back(std::move(out));
    }
    return pass;
  }

  // upstream[l] is the gradient w.r.t. tap l+1; an empty tensor means the
  // tap has no consumer. Gradients flow through time and depth into the
  // parameter grad slots.
  void backward(const EncoderPass& pass, std::span<const Tensor> upstream) {
    if (upstream.size() > pass.taps.size()) throw ShapeError("more upstream gradients than taps");
    std::size_t top = upstream.size();
    while (top > 0 && upstream[top - 1].empty()) --top;
    Tensor carry;
    for (std::size_t l = top; l-- > 0;) {
      Tensor d = upstream[l].empty() ? Tensor(pass.taps[l].shape()) : upstream[l];
      require_same_shape(d, pass.taps[l], "encoder tap gradient");
      if (!carry.empty()) {
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += carry[k];
      }
      const LayerTrace& tr = pass.traces[l];
      if (!tr.mask.empty()) d = dropout_apply(d, tr.mask, tr.keep);
      Tensor dx = bilstm_layer_backward(d, layers_[l], tr);
      if (l > 0) carry = std::move(dx);
    }
  }

 private:
  EncoderConfig cfg_;
  std::vector<LstmLayerParams> layers_;
};

}  // namespace hmctc::encoder
