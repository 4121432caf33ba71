#include "hcp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hcp::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

Result check(const std::string& name, std::span<Parameter* const> params, const LossFn& loss_fn,
             const Options& options) {
  Result result;
  result.name = name;
  for (Parameter* p : params) p->grad = tensor::Matrix(p->value.rows(), p->value.cols());
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  std::mt19937_64 rng(options.seed);
  auto eval = [&]() {
    Tape tape;
    return loss_fn(tape).scalar();
  };
  for (Parameter* p : params) {
    std::vector<std::size_t> entries(p->value.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries > 0 && entries.size() > options.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t e : entries) {
      double& slot = p->value.values()[e];
      const double original = slot;
      slot = original + options.step;
      const double up = eval();
      slot = original - options.step;
      const double down = eval();
      slot = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p->grad.values()[e];
      const double err = relative_error(analytic, numeric, options.floor);
      if (err > result.max_rel_error || result.entries_checked == 0) {
        result.max_rel_error = err;
        result.worst_parameter = p->name;
        result.worst_entry = e;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
      ++result.entries_checked;
    }
  }
  for (Parameter* p : params) p->grad.fill(0.0);
  result.passed = result.max_rel_error <= options.tolerance;
  return result;
}

}  // namespace hcp::gradcheck
