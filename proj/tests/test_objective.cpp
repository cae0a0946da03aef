#include <doctest.h>

#include "support.hpp"
#include "vcor/objective.hpp"

using namespace vcor;
using vcor::test::cube;

namespace {

HopTrace trace_of(const std::vector<std::pair<DisplacementField, Volume3>>& hops) {
  HopTrace t;
  int k = 1;
  for (const auto& [f, w] : hops) {
    HopEntry e;
    e.hop = k++;
    e.field = f;
    e.warped = w;
    t.hops.push_back(std::move(e));
  }
  return t;
}

Volume3 affine(const Volume3& v, double gain, double offset) {
  Volume3 out = v;
  out.values = (gain * v.values.array() + offset).matrix();
  return out;
}

// Derivative of f along one coordinate by central differences.
template <typename F>
double central(F&& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double up = f();
  x = x0 - h;
  const double down = f();
  x = x0;
  return (up - down) / (2 * h);
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("ncc of a volume with itself is zero and with its negative is two") {
  const Volume3 a = test::random_volume(cube(10), 1);
  CHECK(std::abs(ncc_loss(a, a, 5)) < 1e-5);
  CHECK(std::abs(ncc_loss(a, affine(a, -1.0, 1.0), 5) - 2.0) < 1e-5);
}

TEST_CASE("ncc of a constant volume uses the variance floor") {
  const Volume3 a(cube(8), 0.3);
  const Volume3 b = test::random_volume(cube(8), 2);
  const double loss = ncc_loss(a, b, 5);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ncc_loss(a, a, 5) == doctest::Approx(1.0));
}

TEST_CASE("ncc matches a window-by-window oracle") {
  const Volume3 a = test::random_volume(cube(9), 3), b = test::random_volume(cube(9), 4);
  for (int window : {3, 5, 7}) CHECK(std::abs(ncc_loss(a, b, window) - test::oracle_ncc_loss(a, b, window)) < 1e-12);
  Volume3 flat = a;
  for (int k = 0; k < 9; ++k)
    for (int j = 0; j < 9; ++j)
      for (int i = 0; i < 4; ++i) flat(i, j, k) = 0.5;
  CHECK(std::abs(ncc_loss(flat, b, 5) - test::oracle_ncc_loss(flat, b, 5)) < 1e-12);
}

TEST_CASE("ncc is invariant to positive affine intensity maps") {
  const Volume3 a = test::random_volume(cube(10), 5), b = test::random_volume(cube(10), 6);
  const double base = ncc_loss(a, b, 5);
  for (auto [gain, offset] : {std::pair{2.0, 0.5}, {0.5, -3.0}, {7.0, 1.0}}) {
    CHECK(std::abs(ncc_loss(affine(a, gain, offset), b, 5) - base) < 1e-4);
    CHECK(std::abs(ncc_loss(a, affine(b, gain, offset), 5) - base) < 1e-4);
  }
}

TEST_CASE("ncc range and errors") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const double l = ncc_loss(test::random_volume(cube(6), s), test::random_volume(cube(6), s + 10), 3);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
  }
  CHECK_THROWS_AS(ncc_loss(Volume3(cube(6)), Volume3(cube(7)), 5), ShapeError);
  CHECK_THROWS_AS(ncc_loss(Volume3(cube(6)), Volume3(cube(6)), 4), ConfigError);
}

TEST_CASE("mse identities") {
  const Volume3 a = test::random_volume(cube(6), 7);
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(a, affine(a, 1.0, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(mse_loss(a, Volume3(cube(5))), ShapeError);
}

TEST_CASE("smoothness identities") {
  DisplacementField f(cube(6));
  f.vectors.row(0).setConstant(1.5);
  f.vectors.row(2).setConstant(-0.25);
  CHECK(smoothness_loss(f) == 0.0);

  DisplacementField ramp(cube(6));
  for (int k = 0; k < 6; ++k)
    for (int j = 0; j < 6; ++j)
      for (int i = 0; i < 6; ++i) ramp(i, j, k)[0] = i;
  // Unit forward difference on every voxel but the last x-slab.
  CHECK(smoothness_loss(ramp) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));

  const DisplacementField r = test::random_field(Grid3{{5, 6, 7}, {1, 1, 1}}, 8, 2.0);
  CHECK(std::abs(smoothness_loss(r) - test::oracle_smoothness(r)) < 1e-9);
  DisplacementField shifted = r;
  shifted.vectors.colwise() += Vec3(0.3, -1.0, 2.0);
  CHECK(std::abs(smoothness_loss(shifted) - smoothness_loss(r)) < 1e-12);
  CHECK_THROWS_AS(smoothness_loss(DisplacementField(Grid3{{2, 6, 6}, {1, 1, 1}})), InputError);
}

TEST_CASE("loss gradients match central differences") {
  const Volume3 a = test::random_volume(cube(6), 9);
  Volume3 b = test::random_volume(cube(6), 10);
  const Volume3 gn = ncc_loss_gradient(a, b, 3), gm = mse_loss_gradient(a, b);
  DisplacementField f = test::random_field(cube(6), 11, 1.0);
  const DisplacementField gs = smoothness_loss_gradient(f);
  for (Index v : {Index(0), Index(17), Index(100), Index(215)}) {
    CHECK(central([&] { return ncc_loss(a, b, 3); }, b.values[v], 1e-5) == doctest::Approx(gn.values[v]).epsilon(1e-6));
    CHECK(central([&] { return mse_loss(a, b); }, b.values[v], 1e-5) == doctest::Approx(gm.values[v]).epsilon(1e-6));
    CHECK(central([&] { return smoothness_loss(f); }, f.vectors(1, v), 1e-5) ==
          doctest::Approx(gs.vectors(1, v)).epsilon(1e-6));
  }
}

TEST_CASE("total loss of the identity trace is zero") {
  const Volume3 r = test::random_volume(cube(8), 12);
  const HopTrace t = trace_of({{DisplacementField(r.grid), r}, {DisplacementField(r.grid), r}});
  const LossBreakdown l = total_loss(r, t, LossWeights{});
  CHECK(std::abs(l.total) < 1e-5);
  CHECK(l.reg == 0.0);
  CHECK(l.mse == 0.0);
}

TEST_CASE("total loss recomposes from its terms and only the final hop counts by default") {
  const Volume3 r = test::random_volume(cube(7), 13);
  const DisplacementField f1 = test::random_field(r.grid, 14, 1.0), f2 = test::random_field(r.grid, 15, 1.0);
  const Volume3 w1 = test::random_volume(r.grid, 16), w2 = test::random_volume(r.grid, 17);
  const HopTrace t = trace_of({{f1, w1}, {f2, w2}});
  LossWeights w;
  const LossBreakdown l = total_loss(r, t, w);
  const double by_hand = ncc_loss(r, w2, 5) + 0.5 * mse_loss(r, w2) + 0.01 * smoothness_loss(f2);
  CHECK(l.total == doctest::Approx(by_hand).epsilon(1e-14));

  w.per_hop_supervision = true;
  w.hop_weights = {0.25, 2.0};
  const double both = 0.25 * (ncc_loss(r, w1, 5) + 0.5 * mse_loss(r, w1) + 0.01 * smoothness_loss(f1)) + 2.0 * by_hand;
  CHECK(total_loss(r, t, w).total == doctest::Approx(both).epsilon(1e-14));
}

TEST_CASE("doubling lambda changes only the regulariser") {
  const Volume3 r = test::random_volume(cube(6), 18);
  const HopTrace t = trace_of({{test::random_field(r.grid, 19, 1.0), test::random_volume(r.grid, 20)}});
  LossWeights w;
  const LossBreakdown a = total_loss(r, t, w);
  w.lambda *= 2;
  const LossBreakdown b = total_loss(r, t, w);
  CHECK(a.similarity == b.similarity);
  CHECK(a.reg == b.reg);
  CHECK(b.regularization == 2 * a.regularization);
}

TEST_CASE("total loss is nonnegative for unit-range images") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Volume3 r = test::random_volume(cube(5), 100 + s);
    const HopTrace t = trace_of({{test::random_field(r.grid, 200 + s, 2.0), test::random_volume(r.grid, 300 + s)}});
    CHECK(total_loss(r, t, LossWeights{}).total >= 0.0);
  }
}

TEST_CASE("loss configuration errors") {
  LossWeights w;
  w.beta = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.per_hop_supervision = true;
  w.hop_weights = {1.0};
  CHECK_THROWS_AS(w.weights_for(2), ConfigError);
  CHECK_THROWS_AS(total_loss(Volume3(cube(4)), HopTrace{}, LossWeights{}), InputError);
}

}
