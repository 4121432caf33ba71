#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hcp/tensor.hpp"

namespace hcp::gradcheck {

using tensor::Parameter;
using tensor::Tape;
using tensor::Var;

struct Options {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor: below it the error is effectively absolute. fp64
  // roundoff at step 1e-5 is ~1e-10 for O(10) losses.
  double floor = 1e-5;
  // Entries probed per parameter; 0 probes all of them.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

struct Result {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_parameter;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

using LossFn = std::function<Var(Tape&)>;

// Compares the tape gradient of loss_fn with central finite differences for the
// listed parameters. loss_fn must read every parameter through tape.param().
Result check(const std::string& name, std::span<Parameter* const> params, const LossFn& loss_fn,
             const Options& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace hcp::gradcheck
