#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace w2bary {

using Rng = std::mt19937_64;

/// Derives an independent generator for a named role.
///
/// Streams are keyed by (seed, role, index), e.g. ("potential", 2) for the
/// third solver pair, so that adding a consumer never shifts the draws seen
/// by another one.
Rng make_stream(std::uint64_t seed, std::string_view role, std::uint64_t index = 0);

/// Splits a child generator off a running one.
Rng split(Rng& parent);

Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);
Eigen::MatrixXd uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi);

}  // namespace w2bary
