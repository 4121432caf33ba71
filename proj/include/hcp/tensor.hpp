#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hcp::tensor {

// Dense row-major fp64 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool all_finite() const;
  void fill(double v);
  // this += scale * other
  void add_scaled(const Matrix& other, double scale = 1.0);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double max_abs_diff(const Matrix& a, const Matrix& b);

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

enum class Init { kGlorotUniform, kZeros, kOnes };

// Owns every trainable matrix of a model under a unique name. Addresses are
// stable for the lifetime of the store, so layers keep raw pointers.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& create(const std::string& name, std::size_t rows, std::size_t cols, Init init,
                    std::mt19937_64& rng);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::span<Parameter* const> all() const { return order_; }
  std::size_t count() const { return order_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  // Copies values (not gradients) from a store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::unique_ptr<Parameter>> owned_;
  std::vector<Parameter*> order_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording of one forward pass. Each op appends a node holding
// its output and a closure that pushes the output gradient to its inputs.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf whose gradient can be read back with grad() after backward().
  Var variable(Matrix value);
  // Leaf bound to a parameter; backward() accumulates into param.grad.
  Var param(Parameter& param);

  const Matrix& value(Var v) const;
  // Gradient of a node after backward(); empty if the node received none.
  const Matrix& grad(Var v) const { return nodes_[v.id()].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var scalar_loss);

  // Op plumbing. Throws std::domain_error if `value` holds NaN/Inf.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(const char* op, Matrix value, std::span<const Var> inputs, BackwardFn backward);
  // Gradient buffer of an input node, allocated on first use.
  Matrix& grad_buffer(Var v);

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Parameter* param = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// --- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_transposed(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
// Adds a 1xC row to every row of a.
Var add_row(Var a, Var row);
// Repeats a 1xC row n times.
Var broadcast_rows(Var row, std::size_t n);
Var relu(Var a);
Var sigmoid(Var a);
// log(max(a, floor)); gradient is zero where the floor is active.
Var log_clamped(Var a, double floor);
Var abs(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> indices);
// Column-wise max over consecutive row groups; offsets has groups+1 entries.
Var segment_max(Var a, std::span<const std::size_t> offsets);
Var max_rows(Var a);
Var mean_rows(Var a);
// out[i] = sum_j weights(i, j) * a[indices(i, j)]; indices/weights are n x k.
Var sparse_mix(Var a, const std::vector<std::size_t>& indices, const Matrix& weights);
// out[i] = a(i, columns[i]) as an n x 1 column.
Var pick(Var a, std::span<const std::size_t> columns);
Var sum(Var a);
Var mean(Var a);

}  // namespace hcp::tensor
