#pragma once

// Small feed-forward networks with an explicit tape for reverse-mode
// differentiation. Parameters live in a flat float64 vector that may be owned
// by the caller, so a network can be embedded in a larger parameter block.
//
// Batches are column-major: each column of an input matrix is one sample.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cgsur/errors.hpp"
#include "cgsur/rng.hpp"

namespace cgsur::nn {

enum class Activation { Identity, Tanh, Relu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "identity";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw input_error("unknown activation '" + s + "'");
}

/// One stage of a network. Dense maps in -> out. Conv2d reads `in_channels`
/// images of side `side` (channel-major, each image row-major), applies a
/// `kernel` x `kernel` filter bank with zero "same" padding and stride 1.
struct LayerSpec {
  enum class Kind { Dense, Conv2d } kind = Kind::Dense;
  int in = 0;
  int out = 0;
  Activation act = Activation::Identity;
  // conv only
  int side = 0;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;

  static LayerSpec dense(int in, int out, Activation act) {
    LayerSpec s;
    s.kind = Kind::Dense;
    s.in = in;
    s.out = out;
    s.act = act;
    return s;
  }
  static LayerSpec conv2d(int side, int in_channels, int out_channels, int kernel, Activation act) {
    if (kernel % 2 == 0) throw input_error("conv2d: kernel size must be odd");
    LayerSpec s;
    s.kind = Kind::Conv2d;
    s.side = side;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.in = in_channels * side * side;
    s.out = out_channels * side * side;
    s.act = act;
    return s;
  }

  int num_weights() const {
    return kind == Kind::Dense ? in * out : out_channels * in_channels * kernel * kernel;
  }
  int num_biases() const { return kind == Kind::Dense ? out : out_channels; }
  int num_params() const { return num_weights() + num_biases(); }
};

struct Architecture {
  std::vector<LayerSpec> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out; }
  int num_params() const {
    int n = 0;
    for (const auto& l : layers) n += l.num_params();
    return n;
  }
  void validate() const {
    if (layers.empty()) throw InvalidSize("architecture has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].in < 1 || layers[i].out < 1) throw InvalidSize("layer with empty dimension");
      if (i > 0 && layers[i - 1].out != layers[i].in)
        throw DimensionMismatch("layer " + std::to_string(i) + " input does not match previous output");
    }
  }

  /// Dense tanh MLP with an identity output layer.
  static Architecture mlp(int in, const std::vector<int>& hidden, int out,
                          Activation act = Activation::Tanh) {
    Architecture a;
    int prev = in;
    for (int h : hidden) {
      a.layers.push_back(LayerSpec::dense(prev, h, act));
      prev = h;
    }
    a.layers.push_back(LayerSpec::dense(prev, out, Activation::Identity));
    return a;
  }
};

/// Primal values recorded by a forward pass. A tape may be replayed backward
/// exactly once.
struct Tape {
  std::vector<Eigen::MatrixXd> inputs;       // input to each layer
  std::vector<Eigen::MatrixXd> activations;  // output of each layer (after activation)
  bool consumed = false;

  const Eigen::MatrixXd& output() const { return activations.back(); }
};

struct Gradients {
  Eigen::VectorXd params;
  Eigen::MatrixXd input;
};

namespace detail {

inline void activate(Activation a, Eigen::MatrixXd& m) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::Tanh: m = m.array().tanh().matrix(); break;
    case Activation::Relu: m = m.cwiseMax(0.0); break;
  }
}

// Multiplies the cotangent in place by the activation derivative, expressed
// through the activated output.
inline void activation_backward(Activation a, const Eigen::MatrixXd& out, Eigen::MatrixXd& cot) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::Tanh: cot.array() *= 1.0 - out.array().square(); break;
    case Activation::Relu: cot.array() *= (out.array() > 0.0).cast<double>(); break;
  }
}

inline void conv_forward(const LayerSpec& l, const double* w, const double* b,
                         const Eigen::MatrixXd& in, Eigen::MatrixXd& out) {
  const int s = l.side, k = l.kernel, r = k / 2, area = s * s;
  out.resize(l.out, in.cols());
  for (Eigen::Index n = 0; n < in.cols(); ++n) {
    const double* x = in.col(n).data();
    double* y = out.col(n).data();
    for (int co = 0; co < l.out_channels; ++co) {
      double* yc = y + co * area;
      std::fill(yc, yc + area, b[co]);
      for (int ci = 0; ci < l.in_channels; ++ci) {
        const double* xc = x + ci * area;
        const double* wk = w + (co * l.in_channels + ci) * k * k;
        for (int row = 0; row < s; ++row)
          for (int col = 0; col < s; ++col) {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
              const int rr = row + dy;
              if (rr < 0 || rr >= s) continue;
              for (int dx = -r; dx <= r; ++dx) {
                const int cc = col + dx;
                if (cc < 0 || cc >= s) continue;
                acc += wk[(dy + r) * k + (dx + r)] * xc[rr * s + cc];
              }
            }
            yc[row * s + col] += acc;
          }
      }
    }
  }
}

inline void conv_backward(const LayerSpec& l, const double* w, const Eigen::MatrixXd& in,
                          const Eigen::MatrixXd& cot, double* gw, double* gb, Eigen::MatrixXd& gin) {
  const int s = l.side, k = l.kernel, r = k / 2, area = s * s;
  gin.setZero(l.in, in.cols());
  for (Eigen::Index n = 0; n < in.cols(); ++n) {
    const double* x = in.col(n).data();
    const double* g = cot.col(n).data();
    double* gx = gin.col(n).data();
    for (int co = 0; co < l.out_channels; ++co) {
      const double* gc = g + co * area;
      for (int p = 0; p < area; ++p) gb[co] += gc[p];
      for (int ci = 0; ci < l.in_channels; ++ci) {
        const double* xc = x + ci * area;
        double* gxc = gx + ci * area;
        const int off = (co * l.in_channels + ci) * k * k;
        for (int row = 0; row < s; ++row)
          for (int col = 0; col < s; ++col) {
            const double go = gc[row * s + col];
            if (go == 0.0) continue;
            for (int dy = -r; dy <= r; ++dy) {
              const int rr = row + dy;
              if (rr < 0 || rr >= s) continue;
              for (int dx = -r; dx <= r; ++dx) {
                const int cc = col + dx;
                if (cc < 0 || cc >= s) continue;
                const int wi = off + (dy + r) * k + (dx + r);
                gw[wi] += go * xc[rr * s + cc];
                gxc[rr * s + cc] += go * w[wi];
              }
            }
          }
      }
    }
  }
}

}  // namespace detail

/// Stateless evaluator of an architecture over an externally owned parameter
/// vector.
class Network {
 public:
  Network() = default;
  explicit Network(Architecture arch) : arch_(std::move(arch)) { arch_.validate(); }

  const Architecture& architecture() const { return arch_; }
  int input_dim() const { return arch_.input_dim(); }
  int output_dim() const { return arch_.output_dim(); }
  int num_params() const { return arch_.num_params(); }

  /// Glorot-uniform weights, zero biases.
  void initialize(Eigen::Ref<Eigen::VectorXd> params, Rng& rng) const {
    check_params(params.size());
    int off = 0;
    for (const auto& l : arch_.layers) {
      double fan_in, fan_out;
      if (l.kind == LayerSpec::Kind::Dense) {
        fan_in = l.in;
        fan_out = l.out;
      } else {
        fan_in = l.in_channels * l.kernel * l.kernel;
        fan_out = l.out_channels * l.kernel * l.kernel;
      }
      const double lim = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (int i = 0; i < l.num_weights(); ++i) params[off + i] = u(rng);
      off += l.num_weights();
      for (int i = 0; i < l.num_biases(); ++i) params[off + i] = 0.0;
      off += l.num_biases();
    }
  }

  Tape forward(const Eigen::Ref<const Eigen::VectorXd>& params, const Eigen::MatrixXd& input) const {
    check_params(params.size());
    if (input.rows() != input_dim())
      throw DimensionMismatch("forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                              std::to_string(input_dim()));
    Tape t;
    t.inputs.reserve(arch_.layers.size());
    t.activations.reserve(arch_.layers.size());
    const double* p = params.data();
    const Eigen::MatrixXd* cur = &input;
    for (const auto& l : arch_.layers) {
      t.inputs.push_back(*cur);
      Eigen::MatrixXd out;
      if (l.kind == LayerSpec::Kind::Dense) {
        Eigen::Map<const Eigen::MatrixXd> w(p, l.out, l.in);
        Eigen::Map<const Eigen::VectorXd> b(p + l.num_weights(), l.out);
        out.noalias() = w * (*cur);
        out.colwise() += b;
      } else {
        detail::conv_forward(l, p, p + l.num_weights(), *cur, out);
      }
      detail::activate(l.act, out);
      t.activations.push_back(std::move(out));
      cur = &t.activations.back();
      p += l.num_params();
    }
    return t;
  }

  Eigen::MatrixXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& params, const Eigen::MatrixXd& input) const {
    return forward(params, input).output();
  }

  /// Accumulates parameter gradients of sum(cotangent .* output) into
  /// `param_grad` and returns the input gradient.
  Eigen::MatrixXd backward(const Eigen::Ref<const Eigen::VectorXd>& params, Tape& tape,
                           const Eigen::MatrixXd& cotangent, Eigen::Ref<Eigen::VectorXd> param_grad) const {
    if (tape.consumed) throw TapeConsumed("backward: tape already consumed");
    if (tape.activations.size() != arch_.layers.size()) throw DimensionMismatch("backward: tape from another network");
    if (cotangent.rows() != output_dim() || cotangent.cols() != tape.output().cols())
      throw DimensionMismatch("backward: cotangent shape");
    check_params(param_grad.size());
    tape.consumed = true;
    std::vector<int> offsets;
    int off = 0;
    for (const auto& l : arch_.layers) {
      offsets.push_back(off);
      off += l.num_params();
    }
    Eigen::MatrixXd g = cotangent;
    for (int li = static_cast<int>(arch_.layers.size()) - 1; li >= 0; --li) {
      const auto& l = arch_.layers[li];
      detail::activation_backward(l.act, tape.activations[li], g);
      const Eigen::MatrixXd& in = tape.inputs[li];
      const double* p = params.data() + offsets[li];
      double* gp = param_grad.data() + offsets[li];
      Eigen::MatrixXd gin;
      if (l.kind == LayerSpec::Kind::Dense) {
        Eigen::Map<const Eigen::MatrixXd> w(p, l.out, l.in);
        Eigen::Map<Eigen::MatrixXd> gw(gp, l.out, l.in);
        Eigen::Map<Eigen::VectorXd> gb(gp + l.num_weights(), l.out);
        gw.noalias() += g * in.transpose();
        gb += g.rowwise().sum();
        gin.noalias() = w.transpose() * g;
      } else {
        detail::conv_backward(l, p, in, g, gp, gp + l.num_weights(), gin);
      }
      g = std::move(gin);
    }
    return g;
  }

 private:
  void check_params(Eigen::Index n) const {
    if (n != num_params())
      throw DimensionMismatch("parameter vector has " + std::to_string(n) + " entries, expected " +
                              std::to_string(num_params()));
  }

  Architecture arch_;
};

/// A network bundled with its own parameter vector.
class Approximator {
 public:
  Approximator() = default;
  explicit Approximator(Architecture arch) : net_(std::move(arch)), params_(Eigen::VectorXd::Zero(net_.num_params())) {}
  Approximator(Architecture arch, Rng& rng) : Approximator(std::move(arch)) { net_.initialize(params_, rng); }

  const Network& network() const { return net_; }
  const Architecture& architecture() const { return net_.architecture(); }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  int input_dim() const { return net_.input_dim(); }
  int output_dim() const { return net_.output_dim(); }

  Tape forward(const Eigen::MatrixXd& input) const { return net_.forward(params_, input); }

  Gradients backward(Tape& tape, const Eigen::MatrixXd& cotangent) const {
    Gradients g;
    g.params = Eigen::VectorXd::Zero(params_.size());
    g.input = net_.backward(params_, tape, cotangent, g.params);
    return g;
  }

 private:
  Network net_;
  Eigen::VectorXd params_;
};

/// exp, and its inverse log, used to keep variances and conductivities positive.
inline Eigen::VectorXd positive(const Eigen::Ref<const Eigen::VectorXd>& raw) { return raw.array().exp().matrix(); }

inline Eigen::VectorXd positive_inverse(const Eigen::Ref<const Eigen::VectorXd>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(v[i] > 0.0)) throw NonPositiveInput("positive_inverse: entries must be > 0");
  return v.array().log().matrix();
}

}  // namespace cgsur::nn
