#include <doctest.h>

#include "support.hpp"

using namespace vcor;
using vcor::test::cube;

TEST_SUITE("voxelgrid") {

TEST_CASE("sampling at a node returns the stored value") {
  const Volume3 v = test::random_volume(cube(8), 1);
  CHECK(trilinear_sample(v, Vec3(2, 3, 4)) == v(2, 3, 4));
}

TEST_CASE("midpoint between 0 and 1 samples to 0.5") {
  Volume3 v(cube(4));
  v(1, 1, 1) = 0.0;
  v(2, 1, 1) = 1.0;
  CHECK(trilinear_sample(v, Vec3(1.5, 1, 1)) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("random points agree with the eight-corner oracle") {
  const Volume3 v = test::random_volume(cube(8), 2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 8.0);  // includes clamped points
  for (int n = 0; n < 100; ++n) {
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK(trilinear_sample(v, p) == doctest::Approx(test::oracle_sample(v, p)).epsilon(1e-12));
  }
}

TEST_CASE("sampling is bounded by its corners") {
  const Volume3 v = test::random_volume(cube(6), 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int n = 0; n < 200; ++n) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const int i = std::min(int(p[0]), 4), j = std::min(int(p[1]), 4), k = std::min(int(p[2]), 4);
    double lo = 1e9, hi = -1e9;
    for (int c = 0; c < 8; ++c) {
      const double x = v(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2));
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    const double s = trilinear_sample(v, p);
    CHECK(s >= lo - 1e-12);
    CHECK(s <= hi + 1e-12);
  }
}

TEST_CASE("non-finite sample point is an input error") {
  const Volume3 v(cube(4));
  CHECK_THROWS_AS(trilinear_sample(v, Vec3(std::nan(""), 0, 0)), InputError);
  CHECK_THROWS_AS(sample_displacement(DisplacementField(cube(4)), Vec3(INFINITY, 0, 0)), InputError);
  DisplacementField bad(cube(4));
  bad(1, 2, 3)[1] = std::nan("");
  CHECK_THROWS_AS(warp(v, bad), InputError);
  CHECK_THROWS_AS(warp_displacement_adjoint(v, bad, Volume3(cube(4), 1.0)), InputError);
}

TEST_CASE("zero field warp is exactly the identity") {
  const Volume3 v = test::random_volume(cube(7), 6);
  const Volume3 w = warp(v, DisplacementField(cube(7)));
  CHECK(w.values == v.values);
}

TEST_CASE("unit translation shifts a ramp by one step") {
  Volume3 v(cube(6));
  for (int k = 0; k < 6; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 6; ++i) v(i, j, k) = i;
  DisplacementField u(cube(6));
  u.vectors.row(0).setConstant(1.0);
  const Volume3 w = warp(v, u);
  for (int k = 0; k < 6; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 5; ++i) CHECK(w(i, j, k) == v(i + 1, j, k));
}

TEST_CASE("warp equals a per-voxel sampling loop") {
  const Grid3 g = cube(12);
  const Volume3 v = test::random_volume(g, 7);
  const DisplacementField u = test::smooth_field(g, 8, 2.5);
  const Volume3 w = warp(v, u);
  double worst = 0.0;
  for (int k = 0; k < 12; ++k)
    for (int j = 0; j < 12; ++j)
      for (int i = 0; i < 12; ++i) {
        const Vec3 p = Vec3(i, j, k) + u(i, j, k);
        worst = std::max(worst, std::abs(w(i, j, k) - test::oracle_sample(v, p)));
      }
  CHECK(worst < 1e-12);
}

TEST_CASE("warp is linear in the volume") {
  const Grid3 g = cube(9);
  const Volume3 a = test::random_volume(g, 9), b = test::random_volume(g, 10);
  const DisplacementField u = test::smooth_field(g, 11, 1.7);
  Volume3 mix(g);
  mix.values = 0.7 * a.values - 1.3 * b.values;
  const Eigen::VectorXd lhs = warp(mix, u).values;
  const Eigen::VectorXd rhs = 0.7 * warp(a, u).values - 1.3 * warp(b, u).values;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-6 * rhs.cwiseAbs().maxCoeff());
}

TEST_CASE("warp rejects mismatched grids") {
  CHECK_THROWS_AS(warp(Volume3(cube(4)), DisplacementField(cube(5))), ShapeError);
}

TEST_CASE("displacement sampling") {
  DisplacementField c(cube(5));
  c.vectors.colwise() = Vec3(0.3, -1.2, 2.0);
  CHECK((sample_displacement(c, Vec3(1.3, 2.7, 0.1)) - Vec3(0.3, -1.2, 2.0)).norm() < 1e-14);

  const DisplacementField f = test::random_field(cube(6), 12, 2.0);
  CHECK(sample_displacement(f, Vec3(1, 4, 2)) == Vec3(f(1, 4, 2)));
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int n = 0; n < 100; ++n) {
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK((sample_displacement(f, p) - test::oracle_displacement(f, p)).norm() < 1e-12);
  }
}

TEST_CASE("jacobian of the identity, a dilation and a fold") {
  const Grid3 g = cube(8);
  const Volume3 one = jacobian_map(DisplacementField(g));
  CHECK(one.values.isOnes(0.0));
  CHECK(percent_negative_jacobian(one) == 0.0);

  DisplacementField dil(g);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) dil(i, j, k) = 0.1 * (Vec3(i, j, k) - Vec3(3.5, 3.5, 3.5));
  const Volume3 jd = jacobian_map(dil);
  for (int k = 1; k < 7; ++k)
    for (int j = 1; j < 7; ++j)
      for (int i = 1; i < 7; ++i) CHECK(jd(i, j, k) == doctest::Approx(1.331).epsilon(1e-9));

  // u_x = -2 (x - 4) near x = 4: det(I + grad u) = 1 - 2 < 0 there.
  DisplacementField fold(g);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 3; i <= 5; ++i) fold(i, j, k)[0] = -2.0 * (i - 4);
  const Volume3 jf = jacobian_map(fold);
  CHECK(jf(4, 4, 4) == doctest::Approx(-1.0));
  CHECK(percent_negative_jacobian(jf) > 0.0);
}

TEST_CASE("affine fields have det(I + A) in the interior") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (int trial = 0; trial < 10; ++trial) {
    Mat3 a;
    for (int r = 0; r < 9; ++r) a.data()[r] = u(rng);
    const Vec3 b(u(rng), u(rng), u(rng));
    const Grid3 g = cube(6);
    DisplacementField f(g);
    for (int k = 0; k < 6; ++k)
      for (int j = 0; j < 6; ++j)
        for (int i = 0; i < 6; ++i) f(i, j, k) = a * Vec3(i, j, k) + b;
    const double expected = (Mat3::Identity() + a).determinant();
    const Volume3 jac = jacobian_map(f);
    for (int k = 1; k < 5; ++k)
      for (int j = 1; j < 5; ++j)
        for (int i = 1; i < 5; ++i) CHECK(std::abs(jac(i, j, k) - expected) < 1e-6);
  }
}

TEST_CASE("contractive displacement gradients never fold") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // |d/dx of 0.3 sin(0.31 x) ...| stays well below 1/3 per entry, so the
    // largest singular value of grad u is < 1.
    const DisplacementField f = test::smooth_field(cube(10), 100 + seed, 0.3);
    CHECK(percent_negative_jacobian(jacobian_map(f)) == 0.0);
  }
}

TEST_CASE("percent negative jacobian stays in [0, 1]") {
  Volume3 neg(cube(4), -1.0);
  CHECK(percent_negative_jacobian(neg) == 1.0);
  const Volume3 r = test::random_volume(cube(5), 15, -1.0, 1.0);
  const double p = percent_negative_jacobian(r);
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("jacobian needs three voxels per axis") {
  CHECK_THROWS_AS(jacobian_map(DisplacementField(Grid3{{2, 4, 4}})), InputError);
}

TEST_CASE("upsampling") {
  const DisplacementField same = test::random_field(cube(4), 16, 1.0);
  CHECK(upsample_displacement(same, cube(4)).vectors == same.vectors);

  DisplacementField c(cube(4));
  c.vectors.row(0).setOnes();
  const DisplacementField up = upsample_displacement(c, cube(8));
  for (Index v = 0; v < up.grid.size(); ++v) CHECK((up.vectors.col(v) - Vec3(2, 0, 0)).norm() < 1e-14);

  // Oracle: sample the low field at the cell-centre-aligned position, then x2.
  const DisplacementField low = test::random_field(cube(4), 17, 1.0);
  const DisplacementField hi = upsample_displacement(low, cube(8));
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 8; ++i) {
        const Vec3 p = (Vec3(i, j, k).array() + 0.5) / 2.0 - 0.5;
        CHECK((Vec3(hi(i, j, k)) - 2.0 * test::oracle_displacement(low, p)).norm() < 1e-12);
      }

  CHECK_THROWS_AS(upsample_displacement(low, cube(3)), InputError);
  CHECK_THROWS_AS(upsample_displacement(low, Grid3{{8, 8, 8}, {1, 0, 1}}), InputError);
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS((Grid3{{1, 4, 4}}).validate(), InputError);
  CHECK_THROWS_AS((Grid3{{4, 4, 4}, {1, -1, 1}}).validate(), InputError);
  CHECK_NOTHROW(cube(2).validate());
}

}
