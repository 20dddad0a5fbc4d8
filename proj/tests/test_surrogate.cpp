#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "diffcal/random.hpp"
#include "diffcal/surrogate.hpp"

using namespace diffcal;

namespace {

Scene quick_scene(std::uint64_t seed, int points = 300, double sigma = 0.0,
                  double outliers = 0.0) {
  SceneConfig cfg;
  cfg.point_count = points;
  cfg.pixel_noise_sigma = sigma;
  cfg.outlier_fraction = outliers;
  RngStream rng(seed);
  return generate_scene(cfg, rng);
}

Twist small_twist(RngStream& rng, double rot, double trans) {
  Twist xi;
  for (int i = 0; i < 3; ++i) xi.rho[i] = rng.uniform(-trans, trans);
  for (int i = 0; i < 3; ++i) xi.phi[i] = rng.uniform(-rot, rot);
  return xi;
}

}  // namespace

TEST_CASE("oracle surrogate is exact at the truth and for offsets") {
  Scene scene = quick_scene(41);
  SurrogateSpec spec;  // defaults to Oracle
  SurrogateContext ctx = prepare(scene, spec);
  RngStream rng(1);

  DenoiseResult at_truth = denoise(ctx, scene.gt_extrinsic, rng);
  REQUIRE(!at_truth.degenerate);
  REQUIRE(at_truth.delta.norm() < 1e-10);

  // From a displaced extrinsic the correction is exactly the displacement.
  RngStream trng(2);
  for (int i = 0; i < 50; ++i) {
    Twist d = small_twist(trng, 0.4, 0.3);
    RigidTransform current = compose(exp_map(d), scene.gt_extrinsic);
    DenoiseResult r = denoise(ctx, current, rng);
    REQUIRE((r.delta.to_vector() + d.to_vector()).cwiseAbs().maxCoeff() < 1e-9);
  }

  // The oracle consumes no randomness.
  RngStream a(7), b(7);
  denoise(ctx, scene.gt_extrinsic, a);
  REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("clean-state prediction is independent of the diffusion state") {
  Scene scene = quick_scene(42);
  SurrogateSpec spec;
  SurrogateContext ctx = prepare(scene, spec);

  RngStream prng(3);
  Twist pert = small_twist(prng, 0.2, 0.1);
  RigidTransform t0 = compose(exp_map(pert), scene.gt_extrinsic);
  Twist expected = log_map(compose(scene.gt_extrinsic, inverse(t0)));

  RngStream rng(4), xrng(5);
  for (int i = 0; i < 100; ++i) {
    Twist x_t = small_twist(xrng, 0.6, 0.5);
    SurrogateX0 out = surrogate_x0(ctx, x_t, t0, rng);
    REQUIRE(!out.degenerate);
    REQUIRE((out.x0_hat.to_vector() - expected.to_vector()).cwiseAbs().maxCoeff()
            < 1e-10);
  }

  // x_t equal to the true correction is just a special case of the above.
  SurrogateX0 fixed = surrogate_x0(ctx, expected, t0, rng);
  REQUIRE((fixed.x0_hat.to_vector() - expected.to_vector()).cwiseAbs().maxCoeff()
          < 1e-10);
}

TEST_CASE("contraction surrogate halves a pure translation offset") {
  Scene scene = quick_scene(43);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::Contraction;
  spec.gain = 0.5;
  spec.noise_sigma = 0.0;
  SurrogateContext ctx = prepare(scene, spec);

  Twist minus_d = Twist::zero();
  minus_d.rho = Eigen::Vector3d(0.0, 0.0, -0.1);
  RigidTransform current = compose(exp_map(minus_d), scene.gt_extrinsic);

  RngStream rng(6);
  DenoiseResult r = denoise(ctx, current, rng);
  Vector6d expected;
  expected << 0.0, 0.0, 0.05, 0.0, 0.0, 0.0;
  REQUIRE((r.delta.to_vector() - expected).cwiseAbs().maxCoeff() < 1e-12);

  // Noise is drawn even when sigma is zero, exactly six normals.
  RngStream ref(6);
  for (int i = 0; i < 6; ++i) ref.normal();
  REQUIRE(rng.next_u64() == ref.next_u64());
}

TEST_CASE("zero-gain contraction returns the state unchanged") {
  Scene scene = quick_scene(44);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::Contraction;
  spec.gain = 0.0;
  spec.noise_sigma = 0.0;
  SurrogateContext ctx = prepare(scene, spec);
  RngStream rng(7);

  RngStream xrng(8);
  Twist x_t = small_twist(xrng, 0.5, 0.4);
  REQUIRE(denoise(ctx, scene.gt_extrinsic, rng).delta.norm() == 0.0);
  SurrogateX0 out = surrogate_x0(ctx, x_t, scene.gt_extrinsic, rng);
  REQUIRE((out.x0_hat.to_vector() - x_t.to_vector()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("range-dependent gain decays with the error norm") {
  Scene scene = quick_scene(45);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::RangeDependent;
  spec.gain = 0.9;
  spec.range_decay = 2.0;
  spec.noise_sigma = 0.0;
  SurrogateContext ctx = prepare(scene, spec);

  RngStream trng(9), rng(10);
  for (int i = 0; i < 30; ++i) {
    Twist d = small_twist(trng, 0.5, 0.4);
    RigidTransform current = compose(exp_map(d), scene.gt_extrinsic);
    Twist truth = log_map(compose(scene.gt_extrinsic, inverse(current)));
    double g = 0.9 * std::exp(-2.0 * truth.norm());
    DenoiseResult r = denoise(ctx, current, rng);
    REQUIRE((r.delta.to_vector() - g * truth.to_vector()).cwiseAbs().maxCoeff()
            < 1e-12);
  }

  // With noise the deviation from the deterministic part replays the stream
  // scaled by sigma * (1 + error_norm).
  spec.noise_sigma = 0.25;
  SurrogateContext noisy = prepare(scene, spec);
  Twist d = small_twist(trng, 0.3, 0.3);
  RigidTransform current = compose(exp_map(d), scene.gt_extrinsic);
  Twist truth = log_map(compose(scene.gt_extrinsic, inverse(current)));
  RngStream na(11), ref(11);
  DenoiseResult r = denoise(noisy, current, na);
  Vector6d eta;
  for (int c = 0; c < 6; ++c) eta[c] = ref.normal();
  Vector6d expect = 0.9 * std::exp(-2.0 * truth.norm()) * truth.to_vector() +
                    0.25 * (1.0 + truth.norm()) * eta;
  REQUIRE((r.delta.to_vector() - expect).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("reprojection solver is a fixed point on clean data") {
  Scene scene = quick_scene(46, 400, 0.0, 0.0);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::Reprojection;
  SurrogateContext ctx = prepare(scene, spec);
  REQUIRE(ctx.correspondences.size() == 400);
  for (const Correspondence& c : ctx.correspondences) {
    REQUIRE(c.weight > 0.0);
    REQUIRE(c.weight <= 1.0);
  }

  RngStream rng(12);
  DenoiseResult r = denoise(ctx, scene.gt_extrinsic, rng);
  REQUIRE(!r.degenerate);
  REQUIRE(r.delta.norm() < 1e-9);
}

TEST_CASE("reprojection solver pulls a displaced extrinsic toward the truth") {
  Scene scene = quick_scene(47, 400, 0.0, 0.0);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::Reprojection;
  SurrogateContext ctx = prepare(scene, spec);
  RngStream rng(13);

  Twist d;
  d.rho = Eigen::Vector3d(0.03, -0.02, 0.04);
  d.phi = Eigen::Vector3d(0.01, 0.02, -0.015);
  RigidTransform current = compose(exp_map(d), scene.gt_extrinsic);
  double before = log_map(compose(scene.gt_extrinsic, inverse(current))).norm();

  DenoiseResult r = denoise(ctx, current, rng);
  REQUIRE(!r.degenerate);
  RigidTransform updated = compose(exp_map(r.delta), current);
  double after = log_map(compose(scene.gt_extrinsic, inverse(updated))).norm();
  REQUIRE(after < 1e-6);
  REQUIRE(after < 1e-3 * before);
}

TEST_CASE("reprojection with no usable observations degenerates cleanly") {
  Scene scene = quick_scene(48, 50, 0.0, 0.0);
  scene.observations.clear();
  scene.scene_id = scene_content_hash(scene);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::Reprojection;
  SurrogateContext ctx = prepare(scene, spec);
  REQUIRE(ctx.correspondences.empty());

  RngStream rng(14);
  DenoiseResult r = denoise(ctx, scene.gt_extrinsic, rng);
  REQUIRE(r.degenerate);
  REQUIRE(r.delta.norm() == 0.0);

  SurrogateX0 out = surrogate_x0(ctx, Twist::zero(), scene.gt_extrinsic, rng);
  REQUIRE(out.degenerate);
}

TEST_CASE("prepare counter tracks invocations") {
  Scene scene = quick_scene(49, 20);
  SurrogateSpec spec;
  reset_prepare_invocations();
  REQUIRE(prepare_invocations() == 0);
  prepare(scene, spec);
  prepare(scene, spec);
  prepare(scene, spec);
  REQUIRE(prepare_invocations() == 3);
  reset_prepare_invocations();
}

TEST_CASE("context checking catches scene mismatches") {
  Scene a = quick_scene(50, 20);
  Scene b = quick_scene(51, 20);
  SurrogateSpec spec;
  SurrogateContext ctx = prepare(a, spec);
  REQUIRE_NOTHROW(check_context(ctx, a));
  REQUIRE_THROWS_AS(check_context(ctx, b), ContractError);
  REQUIRE_THROWS_AS(ContextProvider(b, ctx, true), ContractError);
  REQUIRE_NOTHROW(ContextProvider(a, ctx, true));
}

TEST_CASE("provider buffering changes prepare count, not results") {
  Scene scene = quick_scene(52, 200, 0.0, 0.0);
  SurrogateSpec spec;
  spec.kind = SurrogateKind::Reprojection;

  reset_prepare_invocations();
  ContextProvider buffered(scene, spec, true);
  buffered.context();
  buffered.context();
  buffered.context();
  REQUIRE(prepare_invocations() == 1);

  reset_prepare_invocations();
  ContextProvider unbuffered(scene, spec, false);
  unbuffered.context();
  unbuffered.context();
  unbuffered.context();
  REQUIRE(prepare_invocations() == 3);
  reset_prepare_invocations();

  // Two independent prepares drive the solver to bitwise-identical output.
  Twist d;
  d.rho = Eigen::Vector3d(0.01, 0.0, -0.02);
  d.phi = Eigen::Vector3d(0.0, 0.01, 0.0);
  RigidTransform current = compose(exp_map(d), scene.gt_extrinsic);
  RngStream r1(15), r2(15);
  DenoiseResult out1 = denoise(buffered.context(), current, r1);
  DenoiseResult out2 = denoise(unbuffered.context(), current, r2);
  REQUIRE(out1.delta.to_vector() == out2.delta.to_vector());
}

TEST_CASE("training targets follow the forward shrink") {
  Scene scene = quick_scene(53, 20);
  NoiseSchedule sched = build_cosine_schedule(6, 0.008);
  RngStream prng(16);
  Twist pert = small_twist(prng, 0.2, 0.1);
  RigidTransform t0 = compose(exp_map(pert), scene.gt_extrinsic);
  Twist x0 = log_map(compose(scene.gt_extrinsic, inverse(t0)));

  RngStream rng(17);
  std::set<int> seen;
  for (int i = 0; i < 200; ++i) {
    TrainingTargets tt = training_targets(scene, t0, sched, rng);
    REQUIRE(tt.t >= 1);
    REQUIRE(tt.t <= 6);
    seen.insert(tt.t);
    REQUIRE(tt.x0.to_vector() == x0.to_vector());
    Twist expected = std::sqrt(sched.alpha_bar_at(tt.t)) * x0;
    REQUIRE(tt.x_t.to_vector() == expected.to_vector());
  }
  REQUIRE(seen.size() == 6);

  TrainingTargets tt = training_targets(scene, t0, sched, rng);
  REQUIRE(l1_loss(tt.x0, tt.x0) == 0.0);
  Twist off = tt.x0 + Twist::from_vector(Vector6d::Constant(0.5));
  REQUIRE(l1_loss(off, tt.x0) == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("surrogate spec validation") {
  SurrogateSpec spec;
  spec.gain = -0.1;
  REQUIRE_THROWS_AS(validate_surrogate_spec(spec), std::invalid_argument);
  spec = SurrogateSpec{};
  spec.gain = 2.5;
  REQUIRE_THROWS_AS(validate_surrogate_spec(spec), std::invalid_argument);
  spec = SurrogateSpec{};
  spec.noise_sigma = -1.0;
  REQUIRE_THROWS_AS(validate_surrogate_spec(spec), std::invalid_argument);
  spec = SurrogateSpec{};
  spec.max_gn_iters = 0;
  REQUIRE_THROWS_AS(validate_surrogate_spec(spec), std::invalid_argument);
  spec = SurrogateSpec{};
  spec.huber_delta_px = 0.0;
  REQUIRE_THROWS_AS(validate_surrogate_spec(spec), std::invalid_argument);

  REQUIRE(surrogate_kind_from_label("oracle") == SurrogateKind::Oracle);
  REQUIRE(surrogate_kind_from_label("range_dependent") ==
          SurrogateKind::RangeDependent);
  REQUIRE(!surrogate_kind_from_label("nonsense").has_value());
  REQUIRE(std::string(surrogate_kind_label(SurrogateKind::Reprojection)) ==
          "reprojection");
}
