#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "loopflow/errors.hpp"
#include "loopflow/flow.hpp"

using namespace loopflow;
using testing::max_abs_diff;

namespace {

std::vector<Frame> random_frames(Rng& rng, std::size_t n, double max_angle = 2.5) {
  std::vector<Frame> out;
  for (std::size_t i = 0; i < n; ++i) {
    Frame f = testing::random_frame(rng);
    f.r = testing::random_rotation_below(rng, max_angle);
    out.push_back(f);
  }
  return out;
}

HeavyAtoms on_x_axis(double a, double b, double c) {
  return HeavyAtoms{Vec3(a, 0, 0), Vec3(b, 0, 0), Vec3(c, 0, 0)};
}

}  // namespace

TEST_CASE("interpolate endpoints and midpoint") {
  Rng rng(1);
  const auto x0 = random_frames(rng, 5);
  const auto x1 = random_frames(rng, 5);
  const FlowState s0 = interpolate(x0, x1, 0.0);
  const FlowState s1 = interpolate(x0, x1, 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(s0.frames[i].x == x0[i].x);
    CHECK(s1.frames[i].x == x1[i].x);
    CHECK(max_abs_diff(s0.frames[i].r.matrix(), x0[i].r.matrix()) <= 1e-12);
    CHECK(max_abs_diff(s1.frames[i].r.matrix(), x1[i].r.matrix()) <= 1e-12);
  }

  const std::vector<Frame> a = {Frame{Vec3::Zero(), Rotation()}};
  const std::vector<Frame> b = {Frame{Vec3(2, 0, 0), Rotation()}};
  CHECK(max_abs_diff(interpolate(a, b, 0.25).frames[0].x, Vec3(0.5, 0, 0)) < 1e-15);
  CHECK_THROWS_AS(interpolate(a, x0, 0.5), LengthMismatch);
}

TEST_CASE("noisy interpolant") {
  Rng rng(2);
  const auto x0 = random_frames(rng, 3);
  const auto x1 = random_frames(rng, 3);
  Rng a(5), b(5);
  const FlowState clean = interpolate(x0, x1, 0.3);
  const FlowState quiet = noisy_interpolate(x0, x1, 0.3, 0.0, 0.0, a);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(quiet.frames[i].x == clean.frames[i].x);
    CHECK(quiet.frames[i].r.matrix() == clean.frames[i].r.matrix());
  }
  for (double t : {0.0, 1.0}) {
    const FlowState edge = noisy_interpolate(x0, x1, t, 2.0, 0.5, b);
    const FlowState ref = interpolate(x0, x1, t);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(edge.frames[i].x == ref.frames[i].x);
      CHECK(max_abs_diff(edge.frames[i].r.matrix(), ref.frames[i].r.matrix()) < 1e-12);
    }
  }

  // Monte-Carlo against the closed-form variance gamma^2 t (1-t) = 0.25.
  const std::vector<Frame> p = {Frame{}};
  const std::vector<Frame> q = {Frame{Vec3(4, -2, 1), Rotation()}};
  const Vec3 mean = interpolate(p, q, 0.5).frames[0].x;
  Rng mc(11);
  const int draws = 100000;
  Vec3 sum_sq = Vec3::Zero();
  for (int k = 0; k < draws; ++k) {
    const Vec3 d = noisy_interpolate(p, q, 0.5, 1.0, 0.0, mc).frames[0].x - mean;
    sum_sq += d.cwiseProduct(d);
  }
  for (int c = 0; c < 3; ++c) CHECK(sum_sq[c] / draws == doctest::Approx(0.25).epsilon(0.03));
}

TEST_CASE("conditional field") {
  Rng rng(3);
  const auto x0 = random_frames(rng, 4);
  const auto x1 = random_frames(rng, 4);
  const VectorFieldSample a = conditional_vf(interpolate(x0, x1, 0.1), x1);
  const VectorFieldSample b = conditional_vf(interpolate(x0, x1, 0.8), x1);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(max_abs_diff(a.v_x[i], Vec3(x1[i].x - x0[i].x)) < 1e-9);
    CHECK(max_abs_diff(a.v_x[i], b.v_x[i]) < 1e-9);
    // Rotations also move at constant body speed along the geodesic.
    CHECK(max_abs_diff(a.v_r[i], b.v_r[i]) < 1e-9);
  }

  FlowState at_target = interpolate(x0, x1, 0.5);
  at_target.frames = x1;
  for (const Vec3& v : conditional_vf(at_target, x1).v_x) CHECK(v.isZero());

  Rng noise(4);
  const FlowState noisy = noisy_interpolate(x0, x1, 0.4, 1.0, 0.0, noise);
  const FlowState clean = interpolate(x0, x1, 0.4);
  const VectorFieldSample vn = conditional_vf(noisy, x1);
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec3 expected = (x1[i].x - x0[i].x) - (noisy.frames[i].x - clean.frames[i].x) / 0.6;
    CHECK(max_abs_diff(vn.v_x[i], expected) < 1e-9);
  }

  CHECK_THROWS_AS(conditional_vf(interpolate(x0, x1, 0.995), x1), TimeTooClose);
  CHECK_THROWS_AS(conditional_vf(interpolate(x0, x1, 0.5), std::span(x1).first(2)), LengthMismatch);
}

TEST_CASE("fm_loss") {
  VectorFieldSample a{{Vec3(1, 2, 3)}, {Vec3(0.1, 0, 0)}};
  CHECK(fm_loss(a, a).loss_r3 == 0.0);
  CHECK(fm_loss(a, a).loss_so3 == 0.0);
  VectorFieldSample b = a;
  b.v_x[0] += Vec3(1, 0, 0);
  CHECK(fm_loss(a, b).loss_r3 == doctest::Approx(1.0));
  b.v_r[0] = Vec3(-0.3, 0.2, 0.5);
  CHECK(fm_loss(a, b).loss_r3 == fm_loss(b, a).loss_r3);
  CHECK(fm_loss(a, b).loss_so3 == fm_loss(b, a).loss_so3);
  CHECK(fm_loss(a, b).loss_so3 ==
        doctest::Approx(std::pow(rotation_metric_norm(Vec3(0.4, -0.2, -0.5)), 2)));
  VectorFieldSample empty;
  CHECK(fm_loss(empty, empty).loss_r3 == 0.0);
  CHECK_THROWS_AS(fm_loss(a, empty), LengthMismatch);
}

TEST_CASE("aux_2d_loss on a hand-checkable toy") {
  // Three close pairs along x (0-3, 50-53, 100-103), everything else far.
  const std::vector<HeavyAtoms> truth = {on_x_axis(0, 3, 50), on_x_axis(53, 100, 103)};
  CHECK(aux_2d_loss(truth, truth) == 0.0);
  std::vector<HeavyAtoms> pred = truth;
  pred[1][2] = Vec3(104, 0, 0);
  // One masked pair off by 1 A; mask count 3, two residues.
  CHECK(aux_2d_loss(pred, truth) == doctest::Approx(1.0).epsilon(1e-12));

  // Far pairs do not count.
  std::vector<HeavyAtoms> far = truth;
  far[0][2] = Vec3(50, 0, 7);
  far[1][0] = Vec3(53, 0, 7);
  CHECK(aux_2d_loss(far, truth) == 0.0);

  const std::vector<HeavyAtoms> sparse = {on_x_axis(0, 3, 50), on_x_axis(100, 150, 200)};
  CHECK_THROWS_AS(aux_2d_loss(sparse, sparse), MaskDegenerate);
}

TEST_CASE("aux_2d_loss gradient and rigid invariance") {
  Rng rng(5);
  const Structure target = random_helix_loop(6, rng);
  const auto truth = heavy_atoms(target);
  auto pred = heavy_atoms(synth_prior(target, testing::iota(6), NoiseSpec{0.4, 0.1, 0}, rng));
  for (AuxLossMode mode : {AuxLossMode::AllPairs, AuxLossMode::AdjacentCa}) {
    const Aux2dGradient g = aux_2d_loss_grad(pred, truth, mode);
    CHECK(g.loss == doctest::Approx(aux_2d_loss(pred, truth, mode)));
    const double h = 1e-6;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      for (int a = 0; a < 3; ++a) {
        for (int c = 0; c < 3; ++c) {
          auto plus = pred, minus = pred;
          plus[i][a][c] += h;
          minus[i][a][c] -= h;
          const double fd = (aux_2d_loss(plus, truth, mode) - aux_2d_loss(minus, truth, mode)) / (2 * h);
          CHECK(std::abs(fd - g.grad[i][a][c]) < 1e-7);
        }
      }
    }

    const Rotation rot = random_rotation(rng);
    const Vec3 t(3, -7, 11);
    auto rigid = [&](std::vector<HeavyAtoms> atoms) {
      for (auto& res : atoms) {
        for (Vec3& p : res) p = rot * p + t;
      }
      return atoms;
    };
    CHECK(std::abs(aux_2d_loss(rigid(pred), rigid(truth), mode) - g.loss) < 1e-9);
  }
}

TEST_CASE("adjacent C-alpha variant") {
  const std::vector<HeavyAtoms> truth = {on_x_axis(0, 1, 2), on_x_axis(3, 4, 5), on_x_axis(6, 7, 8)};
  std::vector<HeavyAtoms> pred = truth;
  pred[2][1] = Vec3(7, 2, 0);
  // One displacement off by (0,2,0); two consecutive pairs.
  CHECK(aux_2d_loss(pred, truth, AuxLossMode::AdjacentCa) == doctest::Approx(1.0));
  CHECK_THROWS_AS(aux_2d_loss(std::span(pred).first(1), std::span(truth).first(1), AuxLossMode::AdjacentCa),
                  MaskDegenerate);
}

TEST_CASE("full_loss gating") {
  const std::vector<HeavyAtoms> truth = {on_x_axis(0, 3, 50), on_x_axis(53, 100, 103)};
  std::vector<HeavyAtoms> pred = truth;
  pred[1][2] = Vec3(103.5, 0, 0);  // loss_2d = 0.5
  VectorFieldSample v{{Vec3::Zero(), Vec3::Zero()}, {Vec3::Zero(), Vec3::Zero()}};
  const LossBreakdown late = full_loss(v, v, pred, truth, 0.6, 10.0);
  CHECK(late.loss_2d == doctest::Approx(0.5));
  CHECK(late.total == doctest::Approx(5.0));
  const LossBreakdown early = full_loss(v, v, pred, truth, 0.4, 1.0);
  CHECK(early.loss_2d == doctest::Approx(0.5));
  CHECK(early.total == 0.0);

  VectorFieldSample w = v;
  w.v_x[1] = Vec3(0, 3, 4);
  const LossBreakdown no_aux = full_loss(w, v, pred, truth, 0.9, 0.0);
  CHECK(no_aux.total == doctest::Approx(no_aux.loss_r3 + no_aux.loss_so3));
  CHECK(no_aux.loss_r3 == doctest::Approx(12.5));
  CHECK(full_loss(v, v, truth, truth, 0.9, 3.0).total == 0.0);
}

TEST_CASE("regression losses") {
  const std::vector<Vec3> x = {Vec3(1, 2, 3), Vec3::Zero()};
  const std::vector<Rotation> r = {Rotation(), Rotation()};
  RegressionLoss same = regression_losses(x, r, x, r);
  CHECK(same.loss_x == 0.0);
  CHECK(same.loss_r == doctest::Approx(0.0).epsilon(1e-15));

  const std::vector<Vec3> shifted = {Vec3(1, 2, 3), Vec3(3, 4, 0)};
  const std::vector<Rotation> flipped = {Rotation(), exp_rotvec(Vec3(0, 0, M_PI - 1e-12))};
  const RegressionLoss l = regression_losses(shifted, flipped, x, r);
  CHECK(l.loss_x == doctest::Approx(2.5));
  CHECK(l.loss_r == doctest::Approx(2.0 / 3.0));  // (0 + 4/3) / 2
  CHECK(l.combined() == doctest::Approx(2.5 + 1.0 / 3.0));

  Rng rng(6);
  for (int k = 0; k < 200; ++k) {
    const std::vector<Rotation> a = {random_rotation(rng)};
    const std::vector<Rotation> b = {random_rotation(rng)};
    const std::vector<Vec3> z = {Vec3::Zero()};
    const double lr = regression_losses(z, a, z, b).loss_r;
    CHECK(lr >= 0.0);
    CHECK(lr <= 2.0);
  }
}

TEST_CASE("Euler integration of the conditional field reaches the target") {
  Rng rng(7);
  const auto x0 = random_frames(rng, 20);
  const auto x1 = random_frames(rng, 20);
  const int steps = 1000;
  const double dt = 1.0 / steps;
  FlowState state = interpolate(x0, x1, 0.0);
  for (int s = 0; s < steps; ++s) {
    state.t = s * dt;
    const VectorFieldSample v = conditional_vf(state, x1, 1e-9);
    for (std::size_t i = 0; i < x1.size(); ++i) {
      state.frames[i].x += v.v_x[i] * dt;
      state.frames[i].r = state.frames[i].r * exp_rotvec(v.v_r[i] * dt);
    }
  }
  for (std::size_t i = 0; i < x1.size(); ++i) {
    CHECK((state.frames[i].x - x1[i].x).norm() < 1e-3);
    CHECK(rotation_angle(Rotation::unchecked(state.frames[i].r.matrix().transpose() * x1[i].r.matrix())) < 1e-3);
  }
}
