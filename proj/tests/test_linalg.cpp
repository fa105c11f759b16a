#include <gtest/gtest.h>

#include "w2bary/errors.hpp"
#include "w2bary/linalg.hpp"

using namespace w2bary;

namespace {

Eigen::MatrixXd random_spd_matrix(Eigen::Index d, double cond, std::uint64_t seed) {
  Rng rng = make_stream(seed, "test_spd", static_cast<std::uint64_t>(d));
  return random_spd<double>(d, cond, rng);
}

double rel_fro(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(SpdSqrt, IdentityAndDiagonal) {
  EXPECT_TRUE(spd_sqrt(Eigen::MatrixXd(Eigen::MatrixXd::Identity(3, 3))).isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-15));
  Eigen::MatrixXd d = Eigen::Vector2d(4.0, 9.0).asDiagonal();
  EXPECT_TRUE(spd_sqrt(d).isApprox(Eigen::MatrixXd(Eigen::Vector2d(2.0, 3.0).asDiagonal()), 1e-14));
}

TEST(SpdSqrt, SquaresBackForRandomMatrices) {
  for (Eigen::Index d : {1, 2, 5, 16, 64}) {
    for (double cond : {1.0, 1e3, 1e6}) {
      const auto a = random_spd_matrix(d, cond, 3);
      const auto r = spd_sqrt(a);
      EXPECT_LT(rel_fro(r * r, a), 1e-10) << "d=" << d << " cond=" << cond;
      EXPECT_TRUE(is_symmetric(r));
    }
  }
}

TEST(SpdSqrt, ClampsTinyNegativeEigenvalues) {
  Eigen::MatrixXd a = Eigen::Vector3d(1.0, 0.5, -1e-14).asDiagonal();
  const auto r = spd_sqrt(a);
  EXPECT_EQ(r(2, 2), 0.0);
  EXPECT_NEAR(r(0, 0), 1.0, 1e-15);
}

TEST(SpdSqrt, RejectsIndefiniteAndAsymmetric) {
  Eigen::MatrixXd neg = Eigen::Vector2d(1.0, -1e-3).asDiagonal();
  EXPECT_THROW(spd_sqrt(neg), NotPsdError);
  try {
    spd_sqrt(neg);
  } catch (const NotPsdError& e) {
    EXPECT_NEAR(e.eigenvalue(), -1e-3, 1e-15);
  }
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  EXPECT_THROW(spd_sqrt(asym), ValidationError);
}

TEST(SpdInvSqrt, KnownValues) {
  EXPECT_TRUE(spd_inv_sqrt(Eigen::MatrixXd(Eigen::MatrixXd::Identity(2, 2))).isApprox(Eigen::MatrixXd::Identity(2, 2)));
  EXPECT_NEAR(spd_inv_sqrt(Eigen::MatrixXd(Eigen::MatrixXd::Constant(1, 1, 4.0)))(0, 0), 0.5, 1e-15);
}

TEST(SpdInvSqrt, WhitensRandomMatrices) {
  for (Eigen::Index d : {2, 8, 32}) {
    const auto a = random_spd_matrix(d, 1e3, 5);
    const auto r = spd_inv_sqrt(a);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    EXPECT_LT(rel_fro(r * a * r, eye), 1e-9);
    EXPECT_LT(rel_fro(r * spd_sqrt(a), eye), 1e-9);
  }
}

TEST(SpdInvSqrt, NearSingularNamesEigenvalue) {
  Eigen::MatrixXd a = Eigen::Vector2d(1.0, 1e-14).asDiagonal();
  try {
    spd_inv_sqrt(a);
    FAIL() << "expected ConditioningError";
  } catch (const ConditioningError& e) {
    EXPECT_DOUBLE_EQ(e.eigenvalue(), 1e-14);
  }
}

TEST(RandomRotation, OrthogonalWithUnitDeterminant) {
  for (Eigen::Index d = 1; d <= 128; d += (d < 8 ? 1 : 20)) {
    const auto q = random_rotation<double>(d, 42);
    EXPECT_LT((q.transpose() * q - Eigen::MatrixXd::Identity(d, d)).norm(), 1e-12) << d;
    EXPECT_NEAR(q.determinant(), 1.0, 1e-10) << d;
  }
  EXPECT_EQ(random_rotation<double>(1, 7), Eigen::MatrixXd::Constant(1, 1, 1.0));
}

TEST(RandomRotation, DeterministicPerSeed) {
  EXPECT_EQ(random_rotation<double>(6, 9), random_rotation<double>(6, 9));
  EXPECT_NE(random_rotation<double>(6, 9), random_rotation<double>(6, 10));
  EXPECT_THROW(random_rotation<double>(0, 1), ValidationError);
}

TEST(RandomRotation, FloatScalar) {
  const auto q = random_rotation<float>(5, 3);
  EXPECT_LT((q.transpose() * q - Eigen::MatrixXf::Identity(5, 5)).norm(), 1e-5f);
}
