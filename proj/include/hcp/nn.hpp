#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hcp/tensor.hpp"

namespace hcp::nn {

using tensor::Matrix;
using tensor::Parameter;
using tensor::ParameterStore;
using tensor::Tape;
using tensor::Var;

enum class Activation { kRelu, kNone };

// y = x W + b with W: in x out and b: 1 x out.
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng, bool with_bias = true);
  std::size_t in_dim() const { return weight->value.rows(); }
  std::size_t out_dim() const { return weight->value.cols(); }
  Var operator()(Tape& tape, Var x) const;
};

// Affine + activation per layer. The final layer stays linear unless
// activate_last is set (set-abstraction MLPs activate every layer).
Var mlp_forward(Tape& tape, Var x, std::span<const Linear> layers, Activation activation,
                bool activate_last = false);

struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::kRelu;
  bool activate_last = false;

  // dims = {in, hidden..., out}
  static Mlp create(ParameterStore& store, const std::string& name,
                    const std::vector<std::size_t>& dims, std::mt19937_64& rng,
                    bool activate_last = false);
  std::size_t out_dim(std::size_t in) const { return layers.empty() ? in : layers.back().out_dim(); }
  Var operator()(Tape& tape, Var x) const {
    return mlp_forward(tape, x, layers, activation, activate_last);
  }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
  double eps = 1e-5;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim,
                          std::mt19937_64& rng);
  Var operator()(Tape& tape, Var x) const;
};

inline constexpr std::size_t kFfnExpansion = 4;

// Two-layer ReLU network with hidden width kFfnExpansion * dim.
struct FeedForward {
  Linear expand;
  Linear contract;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t dim,
                            std::mt19937_64& rng);
  Var operator()(Tape& tape, Var x) const;
};

// softmax(q k^T / sqrt(scale_dim)) v
Var attention(Var q, Var k, Var v, std::size_t scale_dim);

// p <- p - lr * grad, then zero the gradient. Throws if a gradient is missing
// or mis-shaped.
void sgd_step(std::span<Parameter* const> params, double learning_rate);

// Adam with bias correction; state lives alongside the parameter list it was
// built for.
class Adam {
 public:
  Adam(std::span<Parameter* const> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step();
  double learning_rate() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

// Checkpoint: "HCPK", u16 version, u32 count, then per parameter
// (u32 name length, name bytes, u32 rows, u32 cols, rows*cols little-endian f64).
void save_checkpoint(const std::string& path, const ParameterStore& store);
// Loads values into an existing store; names and shapes must match exactly.
void load_checkpoint(const std::string& path, ParameterStore& store);

}  // namespace hcp::nn
