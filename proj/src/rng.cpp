#include "w2bary/rng.hpp"

namespace w2bary {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng make_stream(std::uint64_t seed, std::string_view role, std::uint64_t index) {
  const std::uint64_t tag = fnv1a(role);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

Rng split(Rng& parent) {
  std::seed_seq seq{static_cast<std::uint32_t>(parent()), static_cast<std::uint32_t>(parent()),
                    static_cast<std::uint32_t>(parent()), static_cast<std::uint32_t>(parent())};
  return Rng(seq);
}

Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  // Row-major fill order so a batch of B rows is a prefix of a batch of B' > B rows.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = normal(rng);
  return out;
}

Eigen::MatrixXd uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = u(rng);
  return out;
}

}  // namespace w2bary
