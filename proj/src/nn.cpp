#include "hcp/nn.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace hcp::nn {

using tensor::Init;

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng, bool with_bias) {
  Linear l;
  l.weight = &store.create(name + ".weight", in, out, Init::kGlorotUniform, rng);
  if (with_bias) l.bias = &store.create(name + ".bias", 1, out, Init::kZeros, rng);
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  Var y = tensor::matmul(x, tape.param(*weight));
  if (bias) y = tensor::add_row(y, tape.param(*bias));
  return y;
}

Var mlp_forward(Tape& tape, Var x, std::span<const Linear> layers, Activation activation,
                bool activate_last) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (x.cols() != layers[i].in_dim()) {
      throw std::invalid_argument("mlp_forward: layer " + std::to_string(i) + " expects " +
                                  std::to_string(layers[i].in_dim()) + " inputs, got " +
                                  std::to_string(x.cols()));
    }
    x = layers[i](tape, x);
    const bool last = i + 1 == layers.size();
    if (activation == Activation::kRelu && (!last || activate_last)) x = tensor::relu(x);
  }
  return x;
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& dims,
                std::mt19937_64& rng, bool activate_last) {
  Mlp m;
  m.activate_last = activate_last;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    m.layers.push_back(Linear::create(store, name + "." + std::to_string(i), dims[i], dims[i + 1], rng));
  }
  return m;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim,
                            std::mt19937_64& rng) {
  LayerNorm ln;
  ln.gain = &store.create(name + ".gain", 1, dim, Init::kOnes, rng);
  ln.bias = &store.create(name + ".bias", 1, dim, Init::kZeros, rng);
  return ln;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return tensor::layer_norm(x, tape.param(*gain), tape.param(*bias), eps);
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                 std::mt19937_64& rng) {
  FeedForward f;
  f.expand = Linear::create(store, name + ".expand", dim, kFfnExpansion * dim, rng);
  f.contract = Linear::create(store, name + ".contract", kFfnExpansion * dim, dim, rng);
  return f;
}

Var FeedForward::operator()(Tape& tape, Var x) const {
  return contract(tape, tensor::relu(expand(tape, x)));
}

Var attention(Var q, Var k, Var v, std::size_t scale_dim) {
  if (q.cols() != scale_dim || k.cols() != scale_dim) {
    throw std::invalid_argument("attention: query/key width must equal scale_dim");
  }
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: key/value row mismatch");
  Var scores = tensor::scale(tensor::matmul_transposed(q, k), 1.0 / std::sqrt(double(scale_dim)));
  return tensor::matmul(tensor::softmax_rows(scores), v);
}

void sgd_step(std::span<Parameter* const> params, double learning_rate) {
  for (Parameter* p : params) {
    if (p->grad.empty() || !p->grad.same_shape(p->value)) {
      throw std::logic_error("sgd_step: missing gradient for " + p->name);
    }
  }
  for (Parameter* p : params) {
    p->value.add_scaled(p->grad, -learning_rate);
    p->grad.fill(0.0);
  }
}

Adam::Adam(std::span<Parameter* const> params, double learning_rate, double beta1, double beta2,
           double eps)
    : params_(params.begin(), params.end()), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (p->grad.empty() || !p->grad.same_shape(p->value)) {
      throw std::logic_error("Adam::step: missing gradient for " + p->name);
    }
    auto& m = m_[i].values();
    auto& v = v_[i].values();
    auto& w = p->value.values();
    auto& g = p->grad.values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      g[j] = 0.0;
    }
  }
}

namespace {
constexpr char kCheckpointMagic[4] = {'H', 'C', 'P', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store) {
  std::string out(kCheckpointMagic, 4);
  detail::append_le<std::uint16_t>(out, kCheckpointVersion);
  detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.count()));
  for (const Parameter* p : store.all()) {
    detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rows()));
    detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.cols()));
    for (double v : p->value.values()) detail::append_le<double>(out, v);
  }
  detail::write_file(path, out);
}

void load_checkpoint(const std::string& path, ParameterStore& store) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader in(bytes);
  if (in.read_bytes(4, "magic") != std::string_view(kCheckpointMagic, 4)) {
    throw IoError(IoErrorCode::kBadMagic, path + ": not a checkpoint");
  }
  if (in.read<std::uint16_t>("version") != kCheckpointVersion) {
    throw IoError(IoErrorCode::kVersionMismatch, path + ": unsupported checkpoint version");
  }
  const std::uint32_t count = in.read<std::uint32_t>("count");
  if (count != store.count()) {
    throw IoError(IoErrorCode::kSchemaMismatch, path + ": parameter count " + std::to_string(count) +
                                                    " != model's " + std::to_string(store.count()));
  }
  std::vector<std::pair<Parameter*, tensor::Matrix>> staged;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = in.read<std::uint32_t>("name length");
    const std::string name(in.read_bytes(len, "name"));
    if (!store.contains(name)) throw IoError(IoErrorCode::kSchemaMismatch, "unknown parameter " + name);
    Parameter& p = store.get(name);
    const std::uint32_t rows = in.read<std::uint32_t>("rows");
    const std::uint32_t cols = in.read<std::uint32_t>("cols");
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw IoError(IoErrorCode::kSchemaMismatch, "shape mismatch for " + name);
    }
    tensor::Matrix m(rows, cols);
    for (double& v : m.values()) {
      v = in.read<double>("value");
      if (!std::isfinite(v)) throw IoError(IoErrorCode::kInvalidValue, "non-finite value in " + name);
    }
    staged.emplace_back(&p, std::move(m));
  }
  if (in.remaining() != 0) throw IoError(IoErrorCode::kTrailingBytes, path + ": trailing bytes");
  for (auto& [p, m] : staged) p->value = std::move(m);
}

}  // namespace hcp::nn
