#include "hcp/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hcp::tensor {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

MapC view(const Matrix& m) { return MapC(m.data(), m.rows(), m.cols()); }
Map view(Matrix& m) { return Map(m.data(), m.rows(), m.cols()); }

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()));
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) throw std::invalid_argument("Matrix: value count != rows*cols");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::add_scaled(const Matrix& other, double scale) {
  if (!same_shape(other)) shape_error("add_scaled", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) shape_error("max_abs_diff", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// --- ParameterStore ----------------------------------------------------------

Parameter& ParameterStore::create(const std::string& name, std::size_t rows, std::size_t cols,
                                  Init init, std::mt19937_64& rng) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix(rows, cols);
  p->grad = Matrix(rows, cols);
  switch (init) {
    case Init::kGlorotUniform: {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : p->value.values()) v = dist(rng);
      break;
    }
    case Init::kZeros:
      break;
    case Init::kOnes:
      p->value.fill(1.0);
      break;
  }
  index_[name] = owned_.size();
  order_.push_back(p.get());
  owned_.push_back(std::move(p));
  return *order_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *owned_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *owned_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const Parameter* p : order_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (Parameter* p : order_) p->grad.fill(0.0);
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (Parameter* p : order_) {
    const Parameter& src = other.get(p->name);
    if (!src.value.same_shape(p->value)) shape_error(p->name.c_str(), src.value, p->value);
    p->value = src.value;
  }
}

// --- Tape ----------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(*this); }

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.external ? *n.external : n.value;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& param) {
  auto it = param_nodes_.find(&param);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &param.value;
  n.param = &param;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  param_nodes_[&param] = nodes_.size() - 1;
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Matrix value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(const char* op, Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw std::domain_error(std::string(op) + ": produced a non-finite value");
  }
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument(std::string(op) + ": input from another tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty() && !value(v).empty()) {
    const Matrix& val = value(v);
    n.grad = Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var scalar_loss) {
  const Matrix& loss = value(scalar_loss);
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be 1x1");
  }
  if (!nodes_[scalar_loss.id()].requires_grad) return;
  grad_buffer(scalar_loss)(0, 0) += 1.0;
  for (std::size_t id = scalar_loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may grow other nodes' buffers but never this node's.
    Matrix g = std::move(n.grad);
    n.backward(*this, g);
    nodes_[id].grad = std::move(g);
  }
  for (Node& n : nodes_) {
    if (n.param && !n.grad.empty()) {
      if (n.param->grad.empty()) n.param->grad = Matrix(n.param->value.rows(), n.param->value.cols());
      n.param->grad.add_scaled(n.grad);
    }
  }
}

// --- ops -----------------------------------------------------------------------

namespace {

bool needs(Var v) { return v.tape().requires_grad(v); }

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out(av.rows(), bv.cols());
  if (!out.empty() && av.cols() > 0) view(out).noalias() = view(av) * view(bv);
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (needs(a)) view(t.grad_buffer(a)).noalias() += view(g) * view(b.value()).transpose();
    if (needs(b)) view(t.grad_buffer(b)).noalias() += view(a.value()).transpose() * view(g);
  });
}

Var matmul_transposed(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_transposed", av, bv);
  Matrix out(av.rows(), bv.rows());
  if (!out.empty() && av.cols() > 0) view(out).noalias() = view(av) * view(bv).transpose();
  return a.tape().record("matmul_transposed", std::move(out), {a, b},
                         [a, b](Tape& t, const Matrix& g) {
                           if (needs(a)) view(t.grad_buffer(a)).noalias() += view(g) * view(b.value());
                           if (needs(b))
                             view(t.grad_buffer(b)).noalias() += view(g).transpose() * view(a.value());
                         });
}

Var transpose(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.cols(), av.rows());
  view(out) = view(av).transpose();
  return a.tape().record("transpose", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    view(t.grad_buffer(a)) += view(g).transpose();
  });
}

Var add(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("add", a.value(), b.value());
  Matrix out = a.value();
  out.add_scaled(b.value());
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (needs(a)) t.grad_buffer(a).add_scaled(g);
    if (needs(b)) t.grad_buffer(b).add_scaled(g);
  });
}

Var sub(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("sub", a.value(), b.value());
  Matrix out = a.value();
  out.add_scaled(b.value(), -1.0);
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (needs(a)) t.grad_buffer(a).add_scaled(g);
    if (needs(b)) t.grad_buffer(b).add_scaled(g, -1.0);
  });
}

Var hadamard(Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error("hadamard", a.value(), b.value());
  Matrix out = a.value();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] *= bv[i];
  return a.tape().record("hadamard", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const auto& av = a.value().values();
    const auto& bv2 = b.value().values();
    if (needs(a)) {
      auto& ga = t.grad_buffer(a).values();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g.values()[i] * bv2[i];
    }
    if (needs(b)) {
      auto& gb = t.grad_buffer(b).values();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g.values()[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= s;
  return a.tape().record("scale", std::move(out), {a},
                         [a, s](Tape& t, const Matrix& g) { t.grad_buffer(a).add_scaled(g, s); });
}

Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_row", av, rv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv(0, j);
  }
  return a.tape().record("add_row", std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    if (needs(a)) t.grad_buffer(a).add_scaled(g);
    if (needs(row)) {
      Matrix& gr = t.grad_buffer(row);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      }
    }
  });
}

Var broadcast_rows(Var row, std::size_t n) {
  const Matrix& rv = row.value();
  if (rv.rows() != 1) throw std::invalid_argument("broadcast_rows: expected a 1xC row");
  Matrix out(n, rv.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy(rv.values().begin(), rv.values().end(), out.row(i).begin());
  return row.tape().record("broadcast_rows", std::move(out), {row}, [row](Tape& t, const Matrix& g) {
    Matrix& gr = t.grad_buffer(row);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
    }
  });
}

Var relu(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.tape().record("relu", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const auto& av = a.value().values();
    auto& ga = t.grad_buffer(a).values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g.values()[i];
    }
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  Matrix y = out;
  return a.tape().record("sigmoid", std::move(out), {a}, [a, y](Tape& t, const Matrix& g) {
    auto& ga = t.grad_buffer(a).values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double s = y.values()[i];
      ga[i] += g.values()[i] * s * (1.0 - s);
    }
  });
}

Var log_clamped(Var a, double floor) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::log(std::max(v, floor));
  return a.tape().record("log", std::move(out), {a}, [a, floor](Tape& t, const Matrix& g) {
    const auto& av = a.value().values();
    auto& ga = t.grad_buffer(a).values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (av[i] > floor) ga[i] += g.values()[i] / av[i];
    }
  });
}

Var abs(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::abs(v);
  return a.tape().record("abs", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const auto& av = a.value().values();
    auto& ga = t.grad_buffer(a).values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g.values()[i];
      else if (av[i] < 0.0) ga[i] -= g.values()[i];
    }
  });
}

Var softmax_rows(Var a) {
  const Matrix& av = a.value();
  if (av.empty()) throw std::invalid_argument("softmax_rows: empty input");
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto in = av.row(i);
    auto o = out.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  Matrix y = out;
  return a.tape().record("softmax_rows", std::move(out), {a}, [a, y](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto yr = y.row(i);
      auto gr = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto out_row = ga.row(i);
      for (std::size_t j = 0; j < yr.size(); ++j) out_row[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const std::size_t d = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != d) shape_error("layer_norm", xv, gain.value());
  if (bias.value().rows() != 1 || bias.value().cols() != d) shape_error("layer_norm", xv, bias.value());
  Matrix xhat(xv.rows(), d);
  std::vector<double> inv_std(xv.rows());
  Matrix out(xv.rows(), d);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto r = xv.row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (r[j] - mu) * inv_std[i];
      out(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
    }
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, d](Tape& t, const Matrix& g) {
        const Matrix& gv2 = gain.value();
        if (needs(x)) {
          Matrix& gx = t.grad_buffer(x);
          std::vector<double> dxhat(d);
          for (std::size_t i = 0; i < xhat.rows(); ++i) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = g(i, j) * gv2(0, j);
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat(i, j);
            }
            mean_d /= static_cast<double>(d);
            mean_dx /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
            }
          }
        }
        if (needs(gain)) {
          Matrix& gg = t.grad_buffer(gain);
          for (std::size_t i = 0; i < xhat.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) gg(0, j) += g(i, j) * xhat(i, j);
          }
        }
        if (needs(bias)) {
          Matrix& gb = t.grad_buffer(bias);
          for (std::size_t i = 0; i < xhat.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) gb(0, j) += g(i, j);
          }
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> starts;
  std::size_t off = 0;
  for (const Var& p : parts) {
    starts.push_back(off);
    const Matrix& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(pv.row(i).begin(), pv.row(i).end(), out.row(i).begin() + static_cast<long>(off));
    }
    off += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record("concat_cols", std::move(out), parts,
                                [inputs, starts](Tape& t, const Matrix& g) {
                                  for (std::size_t k = 0; k < inputs.size(); ++k) {
                                    if (!needs(inputs[k])) continue;
                                    Matrix& gp = t.grad_buffer(inputs[k]);
                                    for (std::size_t i = 0; i < gp.rows(); ++i) {
                                      for (std::size_t j = 0; j < gp.cols(); ++j) {
                                        gp(i, j) += g(i, starts[k] + j);
                                      }
                                    }
                                  }
                                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> starts;
  std::size_t off = 0;
  for (const Var& p : parts) {
    starts.push_back(off);
    std::copy(p.value().values().begin(), p.value().values().end(),
              out.values().begin() + static_cast<long>(off * cols));
    off += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record("concat_rows", std::move(out), parts,
                                [inputs, starts, cols](Tape& t, const Matrix& g) {
                                  for (std::size_t k = 0; k < inputs.size(); ++k) {
                                    if (!needs(inputs[k])) continue;
                                    auto& gp = t.grad_buffer(inputs[k]).values();
                                    const std::size_t base = starts[k] * cols;
                                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g.values()[base + i];
                                  }
                                });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Matrix& av = a.value();
  if (begin > end || end > av.cols()) throw std::invalid_argument("slice_cols: bad range");
  Matrix out(av.rows(), end - begin);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = av(i, j);
  }
  return a.tape().record("slice_cols", std::move(out), {a}, [a, begin](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) += g(i, j);
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  const Matrix& av = a.value();
  Matrix out(indices.size(), av.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.rows()) throw std::out_of_range("gather_rows: index out of range");
    std::copy(av.row(indices[i]).begin(), av.row(indices[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape().record("gather_rows", std::move(out), {a}, [a, idx](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = g.row(i);
      auto dst = ga.row(idx[i]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var segment_max(Var a, std::span<const std::size_t> offsets) {
  const Matrix& av = a.value();
  if (offsets.size() < 2 || offsets.back() != av.rows()) {
    throw std::invalid_argument("segment_max: offsets do not cover the input rows");
  }
  const std::size_t groups = offsets.size() - 1;
  const std::size_t cols = av.cols();
  Matrix out(groups, cols);
  std::vector<std::size_t> argmax(groups * cols);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    if (offsets[gi + 1] <= offsets[gi]) throw std::invalid_argument("segment_max: empty group");
    for (std::size_t j = 0; j < cols; ++j) {
      std::size_t best = offsets[gi];
      double bv = av(best, j);
      for (std::size_t r = offsets[gi] + 1; r < offsets[gi + 1]; ++r) {
        if (av(r, j) > bv) {
          bv = av(r, j);
          best = r;
        }
      }
      out(gi, j) = bv;
      argmax[gi * cols + j] = best;
    }
  }
  return a.tape().record("segment_max", std::move(out), {a},
                         [a, argmax, cols](Tape& t, const Matrix& g) {
                           Matrix& ga = t.grad_buffer(a);
                           for (std::size_t gi = 0; gi < g.rows(); ++gi) {
                             for (std::size_t j = 0; j < cols; ++j) {
                               ga(argmax[gi * cols + j], j) += g(gi, j);
                             }
                           }
                         });
}

Var max_rows(Var a) {
  const std::size_t offsets[2] = {0, a.rows()};
  return segment_max(a, offsets);
}

Var mean_rows(Var a) {
  const Matrix& av = a.value();
  if (av.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
  }
  const double inv = 1.0 / static_cast<double>(av.rows());
  for (double& v : out.values()) v *= inv;
  return a.tape().record("mean_rows", std::move(out), {a}, [a, inv](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.rows(); ++i) {
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(0, j) * inv;
    }
  });
}

Var sparse_mix(Var a, const std::vector<std::size_t>& indices, const Matrix& weights) {
  const Matrix& av = a.value();
  const std::size_t n = weights.rows();
  const std::size_t k = weights.cols();
  if (indices.size() != n * k) throw std::invalid_argument("sparse_mix: indices/weights mismatch");
  Matrix out(n, av.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = indices[i * k + j];
      if (src >= av.rows()) throw std::out_of_range("sparse_mix: index out of range");
      const double w = weights(i, j);
      auto s = av.row(src);
      for (std::size_t c = 0; c < o.size(); ++c) o[c] += w * s[c];
    }
  }
  return a.tape().record("sparse_mix", std::move(out), {a},
                         [a, indices, weights](Tape& t, const Matrix& g) {
                           Matrix& ga = t.grad_buffer(a);
                           const std::size_t kk = weights.cols();
                           for (std::size_t i = 0; i < weights.rows(); ++i) {
                             auto gr = g.row(i);
                             for (std::size_t j = 0; j < kk; ++j) {
                               const double w = weights(i, j);
                               auto dst = ga.row(indices[i * kk + j]);
                               for (std::size_t c = 0; c < gr.size(); ++c) dst[c] += w * gr[c];
                             }
                           }
                         });
}

Var pick(Var a, std::span<const std::size_t> columns) {
  const Matrix& av = a.value();
  if (columns.size() != av.rows()) throw std::invalid_argument("pick: one column per row required");
  Matrix out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    if (columns[i] >= av.cols()) throw std::out_of_range("pick: column out of range");
    out(i, 0) = av(i, columns[i]);
  }
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  return a.tape().record("pick", std::move(out), {a}, [a, cols](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < cols.size(); ++i) ga(i, cols[i]) += g(i, 0);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record("sum", Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix& g) {
    for (double& v : t.grad_buffer(a).values()) v += g(0, 0);
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

}  // namespace hcp::tensor
