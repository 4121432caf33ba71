#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hcp/gradcheck.hpp"

// Registry of finite-difference checks covering every differentiable block.
namespace hcp::gradcheck {

inline constexpr std::uint64_t kSuiteSeeds[] = {1, 2, 3};

// Block names in run order.
std::vector<std::string> suite_blocks();

// Runs one block on one seed; the seed also draws the block's shapes.
Result run_block(const std::string& block, std::uint64_t seed, const Options& options = {});

// Every block on every suite seed. Result names read "<block>/seed=<s>".
std::vector<Result> run_suite(const Options& options = {},
                              const std::function<void(const Result&)>& on_result = {});

}  // namespace hcp::gradcheck
