#include "doppio/manifold.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

namespace doppio {
namespace {

using test::random_rotation;
using test::random_state;
using test::random_vec;

TEST(SO3, ExpLogRoundTrip) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> angle(1e-9, M_PI * 0.999);
  for (int i = 0; i < 1000; ++i) {
    Vec3 axis = random_vec(rng);
    while (axis.norm() < 1e-6) axis = random_vec(rng);
    Vec3 phi = axis.normalized() * angle(rng);
    Vec3 back = SO3::exp(phi).log();
    EXPECT_LT((back - phi).norm(), 1e-9) << "phi " << phi.transpose();
  }
}

TEST(SO3, SmallAngleSeries) {
  for (double mag : {0.0, 1e-12, 1e-9, 1e-8, 5e-8, 1e-6}) {
    Vec3 phi = Vec3(1, -2, 0.5).normalized() * mag;
    SO3 r = SO3::exp(phi);
    EXPECT_LT((r.log() - phi).norm(), 1e-14 + mag * 1e-9);
    EXPECT_LT((r.matrix() - so3_exp_matrix(phi)).norm(), 1e-12);
  }
}

TEST(SO3, MatrixExpMatchesQuaternionExp) {
  std::mt19937 rng(11);
  for (int i = 0; i < 100; ++i) {
    Vec3 phi = random_vec(rng, 3.0);
    Mat3 m = so3_exp_matrix(phi);
    EXPECT_LT((m - SO3::exp(phi).matrix()).norm(), 1e-12);
    EXPECT_LT((m * m.transpose() - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(m.determinant(), 1.0, 1e-12);
    EXPECT_LT((so3_log_matrix(m) - SO3::exp(phi).log()).norm(), 1e-9);
  }
}

TEST(SO3, CompositionStaysOrthonormal) {
  std::mt19937 rng(13);
  SO3 r;
  for (int i = 0; i < 100000; ++i) r = r * SO3::exp(random_vec(rng, 0.01));
  EXPECT_NEAR(r.quat().norm(), 1.0, 1e-12);
  Mat3 m = r.matrix();
  EXPECT_LT((m * m.transpose() - Mat3::Identity()).norm(), 1e-9);
}

TEST(SO3, InverseAndInvRotate) {
  std::mt19937 rng(17);
  for (int i = 0; i < 50; ++i) {
    SO3 r = random_rotation(rng);
    Vec3 v = random_vec(rng, 10.0);
    EXPECT_LT((r.inverse() * (r * v) - v).norm(), 1e-12);
    EXPECT_LT((r.inv_rotate(v) - r.inverse() * v).norm(), 1e-12);
  }
}

TEST(SO3, RightJacobianFiniteDifference) {
  std::mt19937 rng(19);
  const double h = 1e-6;
  for (int i = 0; i < 50; ++i) {
    Vec3 phi = random_vec(rng, 2.5);
    Mat3 jr = so3_right_jacobian(phi);
    for (int k = 0; k < 3; ++k) {
      Vec3 d = Vec3::Zero();
      d[k] = h;
      // Exp(phi + d) ~ Exp(phi) * Exp(Jr(phi) d)
      Vec3 fd = (SO3::exp(phi).inverse() * SO3::exp(phi + d)).log() / h;
      EXPECT_LT((fd - jr.col(k)).norm(), 1e-6) << "phi " << phi.transpose();
    }
  }
}

TEST(SO3, RightJacobianInverseConsistent) {
  std::mt19937 rng(23);
  for (int i = 0; i < 50; ++i) {
    Vec3 phi = random_vec(rng, 3.0);
    Mat3 prod = so3_right_jacobian(phi) * so3_right_jacobian_inv(phi);
    EXPECT_LT((prod - Mat3::Identity()).norm(), 1e-9);
  }
  // series branch
  Vec3 tiny = Vec3(1e-9, -2e-9, 3e-10);
  Mat3 prod = so3_right_jacobian(tiny) * so3_right_jacobian_inv(tiny);
  EXPECT_LT((prod - Mat3::Identity()).norm(), 1e-12);
}

TEST(Skew, MatchesCrossProduct) {
  std::mt19937 rng(29);
  for (int i = 0; i < 20; ++i) {
    Vec3 a = random_vec(rng, 5.0);
    Vec3 b = random_vec(rng, 5.0);
    EXPECT_LT((skew(a) * b - a.cross(b)).norm(), 1e-12);
    EXPECT_LT((skew(a) + skew(a).transpose()).norm(), 1e-15);
  }
}

TEST(SE3, ComposeApplyInverse) {
  std::mt19937 rng(31);
  for (int i = 0; i < 50; ++i) {
    SE3 a(random_rotation(rng), random_vec(rng, 5.0));
    SE3 b(random_rotation(rng), random_vec(rng, 5.0));
    Vec3 p = random_vec(rng, 10.0);
    EXPECT_LT(((a * b) * p - a * (b * p)).norm(), 1e-10);
    SE3 ai = a.inverse();
    EXPECT_LT((ai * (a * p) - p).norm(), 1e-10);
    EXPECT_LT(((a * ai).trans).norm(), 1e-12);
  }
}

TEST(NavState, BoxplusBoxminusInverse) {
  std::mt19937 rng(37);
  for (int i = 0; i < 200; ++i) {
    NavState x = random_state(rng);
    StateDelta d;
    for (int k = 0; k < blk::kDim; ++k) {
      d[k] = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
    StateDelta back = boxminus(boxplus(x, d), x);
    EXPECT_LT((back - d).norm(), 1e-9);
  }
}

TEST(NavState, BoxminusBoxplusInverse) {
  std::mt19937 rng(41);
  for (int i = 0; i < 200; ++i) {
    NavState x = random_state(rng);
    NavState y = random_state(rng);
    NavState z = boxplus(x, boxminus(y, x));
    EXPECT_LT(boxminus(z, y).norm(), 1e-9);
  }
}

TEST(NavState, BoxplusZeroIsIdentity) {
  std::mt19937 rng(43);
  NavState x = random_state(rng);
  EXPECT_LT(boxminus(boxplus(x, StateDelta::Zero()), x).norm(), 1e-12);
}

TEST(NavState, RightPerturbationConvention) {
  std::mt19937 rng(47);
  NavState x = random_state(rng);
  StateDelta d = StateDelta::Zero();
  Vec3 dtheta(0.01, -0.02, 0.03);
  d.segment<3>(blk::kRot) = dtheta;
  NavState y = boxplus(x, d);
  EXPECT_LT((y.rot.matrix() - x.rot.matrix() * so3_exp_matrix(dtheta)).norm(),
            1e-12);
  EXPECT_LT((y.pos - x.pos).norm(), 1e-15);
}

TEST(NavState, BoxplusRejectsNonFinite) {
  std::mt19937 rng(53);
  NavState x = random_state(rng);
  StateDelta d = StateDelta::Zero();
  d[blk::kVel] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(boxplus(x, d), std::invalid_argument);
  NavState bad = x;
  bad.pos.x() = std::numeric_limits<double>::infinity();
  EXPECT_THROW(boxplus(bad, StateDelta::Zero()), std::invalid_argument);
}

TEST(NavState, SensorToWorldComposition) {
  std::mt19937 rng(59);
  for (int i = 0; i < 20; ++i) {
    NavState x = random_state(rng);
    Vec3 p = random_vec(rng, 10.0);
    Vec3 direct = x.sensor_to_world() * p;
    Vec3 chained = x.body_to_world() * (x.sensor_to_body() * p);
    EXPECT_LT((direct - chained).norm(), 1e-10);
  }
}

}  // namespace
}  // namespace doppio
