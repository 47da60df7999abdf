#pragma once

// A small differentiable-network kernel: an LSTM or dense trunk over an input
// sequence, an optional side input concatenated after the trunk, and a stack
// of dense layers. Parameters live in one flat vector so optimizers, target
// tracking and serialization work on a single buffer.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "otafl/errors.hpp"

namespace otafl::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class Activation { identity, relu, tanh };
enum class TrunkKind { recurrent, dense };
enum class BlockKind { dense_weight, dense_bias, lstm_input_weight, lstm_recurrent_weight, lstm_bias };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::dense_weight: return "dense_weight";
    case BlockKind::dense_bias: return "dense_bias";
    case BlockKind::lstm_input_weight: return "lstm_input_weight";
    case BlockKind::lstm_recurrent_weight: return "lstm_recurrent_weight";
    case BlockKind::lstm_bias: return "lstm_bias";
  }
  return "?";
}

struct LayerSpec {
  Index units = 0;
  Activation activation = Activation::identity;
};

struct NetworkSpec {
  Index input_dim = 0;  // per sequence element
  Index side_dim = 0;   // appended to the trunk output (critic action input)
  TrunkKind trunk = TrunkKind::recurrent;
  Index trunk_units = 64;
  Activation trunk_activation = Activation::relu;  // dense trunk only
  std::vector<LayerSpec> head;

  Index output_dim() const { return head.empty() ? trunk_units + side_dim : head.back().units; }
};

struct ParamBlock {
  std::string name;
  BlockKind kind;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;
  Index size() const { return rows * cols; }
};

namespace detail {

inline double apply(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::identity: break;
  }
  return z;
}

// Derivative expressed through the activation's output.
inline double derivative_from_output(Activation a, double y) {
  switch (a) {
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::identity: break;
  }
  return 1.0;
}

inline VectorXd sigmoid(const VectorXd& z) {
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

}  // namespace detail

/// Weights and biases of one network, stored contiguously.
class NetworkParams {
 public:
  NetworkParams() = default;

  /// Uniform(+-1/sqrt(fan_in)) initialization, LSTM forget-gate bias 1.
  static NetworkParams create(const NetworkSpec& spec, Rng& rng) {
    NetworkParams p(spec);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t b = 0; b < p.blocks_.size(); ++b) {
      const auto& blk = p.blocks_[b];
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in_[b]));
      for (Index i = 0; i < blk.size(); ++i) p.values_[blk.offset + i] = bound * unit(rng);
    }
    if (spec.trunk == TrunkKind::recurrent) {
      auto bias = p.block(2);
      bias.middleRows(spec.trunk_units, spec.trunk_units).setOnes();
    }
    return p;
  }

  /// All-zero parameters with the layout of `spec`.
  static NetworkParams zeros(const NetworkSpec& spec) { return NetworkParams(spec); }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  Index size() const { return values_.size(); }
  const VectorXd& values() const { return values_; }
  std::uint64_t revision() const { return revision_; }

  /// Mutable access invalidates outstanding forward traces.
  VectorXd& values_mut() {
    ++revision_;
    return values_;
  }

  Eigen::Map<const MatrixXd> block(std::size_t i) const {
    const auto& b = blocks_.at(i);
    return {values_.data() + b.offset, b.rows, b.cols};
  }
  Eigen::Map<MatrixXd> block(std::size_t i) {
    ++revision_;
    const auto& b = blocks_.at(i);
    return {values_.data() + b.offset, b.rows, b.cols};
  }

  /// View of block `i` inside any buffer that shares this layout (gradients, moments).
  Eigen::Map<MatrixXd> view(VectorXd& flat, std::size_t i) const {
    const auto& b = blocks_.at(i);
    return {flat.data() + b.offset, b.rows, b.cols};
  }

  std::size_t trunk_blocks() const { return spec_.trunk == TrunkKind::recurrent ? 3 : 2; }

  bool same_layout(const NetworkParams& other) const {
    if (blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (blocks_[i].rows != other.blocks_[i].rows || blocks_[i].cols != other.blocks_[i].cols ||
          blocks_[i].kind != other.blocks_[i].kind) {
        return false;
      }
    }
    return true;
  }

 private:
  explicit NetworkParams(const NetworkSpec& spec) : spec_(spec) {
    detail_require_spec();
    const Index h = spec.trunk_units;
    if (spec.trunk == TrunkKind::recurrent) {
      add("lstm.input_weight", BlockKind::lstm_input_weight, 4 * h, spec.input_dim,
          spec.input_dim + h);
      add("lstm.recurrent_weight", BlockKind::lstm_recurrent_weight, 4 * h, h, spec.input_dim + h);
      add("lstm.bias", BlockKind::lstm_bias, 4 * h, 1, spec.input_dim + h);
    } else {
      add("trunk.weight", BlockKind::dense_weight, h, spec.input_dim, spec.input_dim);
      add("trunk.bias", BlockKind::dense_bias, h, 1, spec.input_dim);
    }
    Index in = h + spec.side_dim;
    for (std::size_t l = 0; l < spec.head.size(); ++l) {
      const auto& layer = spec.head[l];
      add("head" + std::to_string(l) + ".weight", BlockKind::dense_weight, layer.units, in, in);
      add("head" + std::to_string(l) + ".bias", BlockKind::dense_bias, layer.units, 1, in);
      in = layer.units;
    }
    values_ = VectorXd::Zero(total_);
  }

  void detail_require_spec() const {
    otafl::detail::require<InvalidArgument>(
        spec_.input_dim >= 1 && spec_.trunk_units >= 1 && spec_.side_dim >= 0,
        "network: input_dim and trunk_units must be >= 1");
    for (const auto& l : spec_.head) {
      otafl::detail::require<InvalidArgument>(l.units >= 1, "network: layer units must be >= 1");
    }
  }

  void add(std::string name, BlockKind kind, Index rows, Index cols, Index fan_in) {
    blocks_.push_back({std::move(name), kind, rows, cols, total_});
    fan_in_.push_back(std::max<Index>(fan_in, 1));
    total_ += rows * cols;
  }

  NetworkSpec spec_;
  std::vector<ParamBlock> blocks_;
  std::vector<Index> fan_in_;
  Index total_ = 0;
  VectorXd values_;
  std::uint64_t revision_ = 0;
};

struct LstmStep {
  VectorXd x, h_prev, c_prev, i, f, g, o, c, tanh_c;
};

struct DenseStep {
  VectorXd input;
  VectorXd output;  // post-activation
};

/// Everything backward() needs from a forward pass.
struct ForwardTrace {
  const NetworkParams* owner = nullptr;
  std::uint64_t revision = 0;
  std::vector<LstmStep> lstm;
  DenseStep trunk;
  std::vector<DenseStep> head;
  VectorXd output;
};

struct Gradients {
  VectorXd params;
  VectorXd side;  // d output-loss / d side input
};

inline ForwardTrace forward(const NetworkParams& params, const std::vector<VectorXd>& sequence,
                            const VectorXd& side = VectorXd()) {
  const auto& spec = params.spec();
  otafl::detail::require<InvalidArgument>(!sequence.empty(), "forward: empty input sequence");
  otafl::detail::require<InvalidArgument>(side.size() == spec.side_dim,
                                          "forward: side input has wrong length");
  for (const auto& x : sequence) {
    otafl::detail::require<InvalidArgument>(x.size() == spec.input_dim,
                                            "forward: sequence element has wrong length");
  }
  ForwardTrace tr;
  tr.owner = &params;
  tr.revision = params.revision();
  const Index h = spec.trunk_units;

  VectorXd trunk_out;
  if (spec.trunk == TrunkKind::recurrent) {
    const auto wx = params.block(0);
    const auto wh = params.block(1);
    const auto b = params.block(2);
    VectorXd hs = VectorXd::Zero(h);
    VectorXd cs = VectorXd::Zero(h);
    tr.lstm.reserve(sequence.size());
    for (const auto& x : sequence) {
      LstmStep st;
      st.x = x;
      st.h_prev = hs;
      st.c_prev = cs;
      const VectorXd z = wx * x + wh * hs + b.col(0);
      st.i = detail::sigmoid(z.segment(0, h));
      st.f = detail::sigmoid(z.segment(h, h));
      st.g = z.segment(2 * h, h).array().tanh();
      st.o = detail::sigmoid(z.segment(3 * h, h));
      st.c = st.f.cwiseProduct(cs) + st.i.cwiseProduct(st.g);
      st.tanh_c = st.c.array().tanh();
      hs = st.o.cwiseProduct(st.tanh_c);
      cs = st.c;
      tr.lstm.push_back(std::move(st));
    }
    trunk_out = hs;
  } else {
    tr.trunk.input = sequence.back();
    const VectorXd z = params.block(0) * tr.trunk.input + params.block(1).col(0);
    const auto act = spec.trunk_activation;
    tr.trunk.output = z.unaryExpr([act](double v) { return detail::apply(act, v); });
    trunk_out = tr.trunk.output;
  }

  VectorXd a(trunk_out.size() + side.size());
  a << trunk_out, side;
  std::size_t blk = params.trunk_blocks();
  tr.head.reserve(spec.head.size());
  for (const auto& layer : spec.head) {
    DenseStep st;
    st.input = std::move(a);
    const VectorXd z = params.block(blk) * st.input + params.block(blk + 1).col(0);
    const auto act = layer.activation;
    st.output = z.unaryExpr([act](double v) { return detail::apply(act, v); });
    a = st.output;
    tr.head.push_back(std::move(st));
    blk += 2;
  }
  tr.output = a;
  return tr;
}

/// Reverse-mode pass for loss gradient `output_gradient` at the traced output.
/// With `param_grads == false` only the side-input gradient is produced and
/// the trunk is not differentiated.
inline Gradients backward(const NetworkParams& params, const ForwardTrace& trace,
                          const VectorXd& output_gradient, bool param_grads = true) {
  otafl::detail::require<InvalidArgument>(
      trace.owner == &params && trace.revision == params.revision(),
      "backward: trace does not belong to the current parameters");
  const auto& spec = params.spec();
  otafl::detail::require<InvalidArgument>(output_gradient.size() == trace.output.size(),
                                          "backward: output gradient has wrong length");
  Gradients out;
  out.params = VectorXd::Zero(param_grads ? params.size() : 0);
  const Index h = spec.trunk_units;

  VectorXd d = output_gradient;
  std::size_t blk = params.trunk_blocks() + 2 * spec.head.size();
  for (std::size_t l = spec.head.size(); l-- > 0;) {
    blk -= 2;
    const auto& st = trace.head[l];
    const auto act = spec.head[l].activation;
    VectorXd dz(d.size());
    for (Index i = 0; i < d.size(); ++i) {
      dz[i] = d[i] * detail::derivative_from_output(act, st.output[i]);
    }
    if (param_grads) {
      params.view(out.params, blk).noalias() += dz * st.input.transpose();
      params.view(out.params, blk + 1).col(0) += dz;
    }
    d = params.block(blk).transpose() * dz;
  }
  out.side = d.tail(spec.side_dim);
  if (!param_grads) return out;

  VectorXd dh = d.head(h);
  if (spec.trunk == TrunkKind::recurrent) {
    auto gwx = params.view(out.params, 0);
    auto gwh = params.view(out.params, 1);
    auto gb = params.view(out.params, 2);
    const auto wh = params.block(1);
    VectorXd dc = VectorXd::Zero(h);
    VectorXd dz(4 * h);
    for (std::size_t t = trace.lstm.size(); t-- > 0;) {
      const auto& st = trace.lstm[t];
      const VectorXd d_o = dh.cwiseProduct(st.tanh_c);
      dc += dh.cwiseProduct(st.o).cwiseProduct((1.0 - st.tanh_c.array().square()).matrix());
      const VectorXd d_i = dc.cwiseProduct(st.g);
      const VectorXd d_g = dc.cwiseProduct(st.i);
      const VectorXd d_f = dc.cwiseProduct(st.c_prev);
      dz.segment(0, h) = d_i.array() * st.i.array() * (1.0 - st.i.array());
      dz.segment(h, h) = d_f.array() * st.f.array() * (1.0 - st.f.array());
      dz.segment(2 * h, h) = d_g.array() * (1.0 - st.g.array().square());
      dz.segment(3 * h, h) = d_o.array() * st.o.array() * (1.0 - st.o.array());
      gwx.noalias() += dz * st.x.transpose();
      gwh.noalias() += dz * st.h_prev.transpose();
      gb.col(0) += dz;
      dh = wh.transpose() * dz;
      dc = dc.cwiseProduct(st.f);
    }
  } else {
    const auto act = spec.trunk_activation;
    VectorXd dz(h);
    for (Index i = 0; i < h; ++i) {
      dz[i] = dh[i] * detail::derivative_from_output(act, trace.trunk.output[i]);
    }
    params.view(out.params, 0).noalias() += dz * trace.trunk.input.transpose();
    params.view(out.params, 1).col(0) += dz;
  }
  return out;
}

/// Convenience: network output only.
inline VectorXd evaluate(const NetworkParams& params, const std::vector<VectorXd>& sequence,
                         const VectorXd& side = VectorXd()) {
  return forward(params, sequence, side).output;
}

struct AdamState {
  double step_size = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  VectorXd first_moment;
  VectorXd second_moment;

  static AdamState for_params(const NetworkParams& params, double step_size,
                              double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState s;
    s.step_size = step_size;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.first_moment = VectorXd::Zero(params.size());
    s.second_moment = VectorXd::Zero(params.size());
    return s;
  }
};

/// Bias-corrected Adam descent step on `gradients`.
inline void adam_step(NetworkParams& params, const VectorXd& gradients, AdamState& state) {
  otafl::detail::require<InvalidArgument>(
      gradients.size() == params.size() && state.first_moment.size() == params.size() &&
          state.second_moment.size() == params.size(),
      "adam_step: shape mismatch");
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradients;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * gradients.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto& w = params.values_mut();
  w.array() -= state.step_size * (state.first_moment.array() / c1) /
               ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

/// target <- tau * online + (1 - tau) * target
inline void soft_update(NetworkParams& target, const NetworkParams& online, double tau) {
  otafl::detail::require<InvalidArgument>(target.same_layout(online),
                                          "soft_update: network layouts differ");
  otafl::detail::require<InvalidArgument>(tau >= 0.0 && tau <= 1.0,
                                          "soft_update: tau must be in [0, 1]");
  auto& t = target.values_mut();
  t = tau * online.values() + (1.0 - tau) * t;
}

/// Called on the analytic gradient before comparison; used for fault injection.
using GradientTamper = std::function<void(VectorXd&)>;

/// Largest relative difference between backward() and central differences
/// for the loss 0.5 * ||output||^2. Entries where both gradients are below
/// 1e-6 in magnitude are compared against that floor instead.
inline double grad_check(const NetworkParams& params, const std::vector<VectorXd>& sequence,
                         const VectorXd& side, double epsilon,
                         const GradientTamper& tamper = {}) {
  const auto trace = forward(params, sequence, side);
  VectorXd analytic = backward(params, trace, trace.output).params;
  if (tamper) tamper(analytic);

  NetworkParams probe = params;
  auto loss = [&](const NetworkParams& p) {
    return 0.5 * evaluate(p, sequence, side).squaredNorm();
  };
  double worst = 0.0;
  for (Index i = 0; i < params.size(); ++i) {
    const double keep = probe.values()[i];
    probe.values_mut()[i] = keep + epsilon;
    const double up = loss(probe);
    probe.values_mut()[i] = keep - epsilon;
    const double down = loss(probe);
    probe.values_mut()[i] = keep;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

// ---- Serialization --------------------------------------------------------
//
// Text container, one token group per line:
//
//   otafl-network v1
//   input_dim <n>  side_dim <n>
//   trunk <recurrent|dense> <units> <activation>
//   head <L>
//   layer <units> <activation>        (L lines)
//   blocks <B>
//   block <name> <kind> <rows> <cols> (B lines, column-major storage)
//   values <P>
//   <hex float>                       (P lines, printf %a)
//
// Hex floats make the round trip bit-exact.

namespace detail {

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  otafl::detail::require<InvalidArgument>(end != s.c_str() && *end == '\0',
                                          "network load: bad number '" + s + "'");
  return v;
}

inline void expect(std::istream& in, const std::string& token) {
  std::string got;
  in >> got;
  otafl::detail::require<InvalidArgument>(got == token, "network load: expected '" + token +
                                                            "' got '" + got + "'");
}

}  // namespace detail

inline void write_vector(std::ostream& out, const std::string& tag, const VectorXd& v) {
  out << tag << ' ' << v.size() << '\n';
  for (Index i = 0; i < v.size(); ++i) out << detail::hex(v[i]) << '\n';
}

inline VectorXd read_vector(std::istream& in, const std::string& tag) {
  detail::expect(in, tag);
  Index n = 0;
  in >> n;
  otafl::detail::require<InvalidArgument>(in && n >= 0, "network load: bad vector length");
  VectorXd v(n);
  std::string tok;
  for (Index i = 0; i < n; ++i) {
    in >> tok;
    v[i] = detail::parse_hex(tok);
  }
  return v;
}

inline void save(std::ostream& out, const NetworkParams& params) {
  const auto& s = params.spec();
  out << "otafl-network v1\n";
  out << "input_dim " << s.input_dim << " side_dim " << s.side_dim << '\n';
  out << "trunk " << (s.trunk == TrunkKind::recurrent ? "recurrent" : "dense") << ' '
      << s.trunk_units << ' ' << to_string(s.trunk_activation) << '\n';
  out << "head " << s.head.size() << '\n';
  for (const auto& l : s.head) out << "layer " << l.units << ' ' << to_string(l.activation) << '\n';
  out << "blocks " << params.blocks().size() << '\n';
  for (const auto& b : params.blocks()) {
    out << "block " << b.name << ' ' << to_string(b.kind) << ' ' << b.rows << ' ' << b.cols << '\n';
  }
  write_vector(out, "values", params.values());
}

inline NetworkParams load(std::istream& in) {
  detail::expect(in, "otafl-network");
  detail::expect(in, "v1");
  NetworkSpec s;
  std::string word;
  detail::expect(in, "input_dim");
  in >> s.input_dim;
  detail::expect(in, "side_dim");
  in >> s.side_dim;
  detail::expect(in, "trunk");
  in >> word;
  otafl::detail::require<InvalidArgument>(word == "recurrent" || word == "dense",
                                          "network load: bad trunk kind");
  s.trunk = word == "recurrent" ? TrunkKind::recurrent : TrunkKind::dense;
  in >> s.trunk_units >> word;
  s.trunk_activation = activation_from_string(word);
  std::size_t layers = 0;
  detail::expect(in, "head");
  in >> layers;
  for (std::size_t l = 0; l < layers; ++l) {
    LayerSpec ls;
    detail::expect(in, "layer");
    in >> ls.units >> word;
    ls.activation = activation_from_string(word);
    s.head.push_back(ls);
  }
  otafl::detail::require<InvalidArgument>(static_cast<bool>(in), "network load: truncated header");
  NetworkParams p = NetworkParams::zeros(s);
  std::size_t blocks = 0;
  detail::expect(in, "blocks");
  in >> blocks;
  otafl::detail::require<InvalidArgument>(blocks == p.blocks().size(),
                                          "network load: block count mismatch");
  for (const auto& b : p.blocks()) {
    std::string name, kind;
    Index rows = 0, cols = 0;
    detail::expect(in, "block");
    in >> name >> kind >> rows >> cols;
    otafl::detail::require<InvalidArgument>(
        name == b.name && kind == to_string(b.kind) && rows == b.rows && cols == b.cols,
        "network load: manifest does not match the declared architecture");
  }
  VectorXd values = read_vector(in, "values");
  otafl::detail::require<InvalidArgument>(values.size() == p.size(),
                                          "network load: value count mismatch");
  p.values_mut() = values;
  return p;
}

inline void save(std::ostream& out, const AdamState& s) {
  out << "otafl-adam v1\n";
  out << "hyper " << detail::hex(s.step_size) << ' ' << detail::hex(s.beta1) << ' '
      << detail::hex(s.beta2) << ' ' << detail::hex(s.epsilon) << " step " << s.step << '\n';
  write_vector(out, "first_moment", s.first_moment);
  write_vector(out, "second_moment", s.second_moment);
}

inline AdamState load_adam(std::istream& in) {
  detail::expect(in, "otafl-adam");
  detail::expect(in, "v1");
  AdamState s;
  std::string a, b, c, d;
  detail::expect(in, "hyper");
  in >> a >> b >> c >> d;
  s.step_size = detail::parse_hex(a);
  s.beta1 = detail::parse_hex(b);
  s.beta2 = detail::parse_hex(c);
  s.epsilon = detail::parse_hex(d);
  detail::expect(in, "step");
  in >> s.step;
  s.first_moment = read_vector(in, "first_moment");
  s.second_moment = read_vector(in, "second_moment");
  return s;
}

}  // namespace otafl::nn
