#include <doctest.h>

#include <cmath>
#include <string>

#include "tactsim/policy.hpp"

using namespace tactsim;

namespace {

PolicyConfig tinyConfig() {
  PolicyConfig c;
  c.width = 8;
  c.heads = 2;
  c.tactile_layers = 1;
  c.fusion_layers = 1;
  c.pooled_tokens = 2;
  c.cond_dim = 16;
  c.vision_tokens = 2;
  c.vision_channels = {2, 2, 2, 2};
  c.denoiser_widths = {8, 12, 12};
  c.diffusion_steps = 10;
  c.inference_steps = 4;
  c.beta_start = 0.01;
  c.beta_end = 0.4;
  c.batch_size = 4;
  return c;
}

ObservationBundle randomBundle(std::uint64_t seed) {
  Rng rng(seed);
  ObservationBundle b;
  for (int s = 0; s < 2; ++s) {
    b.steps[s].vision = 0.5 * ad::Mat::Ones(64, 64);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) b.steps[s].vision(8 * r, 8 * c) = rng.uniform01();
    for (int r = 0; r < kWindowRows; ++r)
      for (int c = 0; c < 6; ++c) {
        b.steps[s].left(r, c) = 0.1 * rng.gaussian();
        b.steps[s].right(r, c) = 0.1 * rng.gaussian();
      }
    b.steps[s].proprio.position = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
    b.steps[s].proprio.rotation = 0.01 * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
    for (int i = 0; i < 6; ++i) b.steps[s].wrench[i] = rng.gaussian();
  }
  return b;
}

ChunkMatrix randomChunk(std::uint64_t seed, double scale) {
  Rng rng(seed);
  ChunkMatrix m;
  for (int r = 0; r < kChunkSteps; ++r)
    for (int c = 0; c < kActionDims; ++c) m(r, c) = scale * rng.gaussian();
  return m;
}

}  // namespace

TEST_CASE("noise schedule is monotone and mixes to near-standard-normal") {
  const auto s = NoiseSchedule::linear(100, 1e-3, 0.2);
  CHECK(s.alphaBarAt(0) == 1.0);
  for (int k = 1; k <= 100; ++k) CHECK(s.alphaBarAt(k) < s.alphaBarAt(k - 1));
  CHECK(s.alphaBarAt(100) < 1e-3);

  // Correlation between the clean chunk and its fully noised version.
  Rng rng(4);
  const double ab = s.alphaBarAt(100);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double a = rng.gaussian();
    const double y = std::sqrt(ab) * a + std::sqrt(1.0 - ab) * rng.gaussian();
    sxy += a * y;
    sxx += a * a;
    syy += y * y;
  }
  CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.1);

  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.5, 0.4), PolicyError);
}

TEST_CASE("forward shapes: tokens, conditioning, chunks") {
  const auto cfg = tinyConfig();
  PolicyNet net(cfg, PolicyVariant::kVisionTactile, 1);
  const auto bundle = randomBundle(2);

  ad::Graph g;
  nn::ParamBinder p(g, net.store());
  const int tok = net.encodeTactile(g, p, bundle.steps[0].left);
  CHECK(g.val(tok).rows() == cfg.pooled_tokens);
  CHECK(g.val(tok).cols() == cfg.width);

  const int vis = net.encodeVision(g, p, bundle.steps[0].vision);
  CHECK(g.val(vis).rows() == cfg.vision_tokens);
  CHECK(g.val(vis).cols() == cfg.width);

  const int cond = net.fuse(g, p, bundle);
  CHECK(g.val(cond).rows() == 1);
  CHECK(g.val(cond).cols() == cfg.cond_dim + 12);

  const auto chunk = net.sampleNormalized(bundle, 7);
  CHECK(chunk.rows() == kChunkSteps);
  CHECK(chunk.cols() == kActionDims);
  CHECK(chunk.allFinite());
}

TEST_CASE("left and right tactile windows share one encoder") {
  const auto cfg = tinyConfig();
  PolicyNet net(cfg, PolicyVariant::kTactileOnly, 3);
  const auto bundle = randomBundle(4);
  const std::size_t params_before = net.store().parameterCount();

  ad::Graph g;
  nn::ParamBinder p(g, net.store());
  const int ta = net.encodeTactile(g, p, bundle.steps[0].left);
  const int tb = net.encodeTactile(g, p, bundle.steps[0].right);
  CHECK(net.store().parameterCount() == params_before);

  // Swapping inputs swaps outputs exactly: same weights on both paths.
  ad::Graph g2;
  nn::ParamBinder p2(g2, net.store());
  const int sa = net.encodeTactile(g2, p2, bundle.steps[0].right);
  const int sb = net.encodeTactile(g2, p2, bundle.steps[0].left);
  CHECK(g.val(ta).isApprox(g2.val(sb), 1e-12));
  CHECK(g.val(tb).isApprox(g2.val(sa), 1e-12));
}

TEST_CASE("variant masks select the advertised modalities") {
  const auto cfg = tinyConfig();
  const auto bundle = randomBundle(5);

  // Vision-only conditioning ignores tactile streams entirely.
  PolicyNet vo(cfg, PolicyVariant::kVisionOnly, 11);
  auto perturbed = bundle;
  perturbed.steps[0].left.setRandom();
  perturbed.steps[1].right.setRandom();
  {
    ad::Graph g;
    nn::ParamBinder p(g, vo.store());
    const int a = vo.fuse(g, p, bundle);
    ad::Graph g2;
    nn::ParamBinder p2(g2, vo.store());
    const int b = vo.fuse(g2, p2, perturbed);
    CHECK(g.val(a).isApprox(g2.val(b), 1e-12));
  }

  // Tactile-only ignores vision; tactile perturbations are live.
  PolicyNet to(cfg, PolicyVariant::kTactileOnly, 11);
  auto vis_perturbed = bundle;
  vis_perturbed.steps[0].vision.setZero();
  auto tac_perturbed = bundle;
  tac_perturbed.steps[0].left.array() += 0.5;
  {
    ad::Graph g;
    nn::ParamBinder p(g, to.store());
    const int a = to.fuse(g, p, bundle);
    ad::Graph g2;
    nn::ParamBinder p2(g2, to.store());
    const int b = to.fuse(g2, p2, vis_perturbed);
    CHECK(g.val(a).isApprox(g2.val(b), 1e-12));
    ad::Graph g3;
    nn::ParamBinder p3(g3, to.store());
    const int c = to.fuse(g3, p3, tac_perturbed);
    CHECK(!g.val(a).isApprox(g3.val(c), 1e-9));
  }

  // Vision+force consumes the wrench and no tactile windows.
  PolicyNet vf(cfg, PolicyVariant::kVisionForce, 11);
  auto wrench_perturbed = bundle;
  wrench_perturbed.steps[1].wrench[2] += 1.0;
  {
    ad::Graph g;
    nn::ParamBinder p(g, vf.store());
    const int a = vf.fuse(g, p, bundle);
    ad::Graph g2;
    nn::ParamBinder p2(g2, vf.store());
    const int b = vf.fuse(g2, p2, perturbed);  // tactile perturbation: inert
    CHECK(g.val(a).isApprox(g2.val(b), 1e-12));
    ad::Graph g3;
    nn::ParamBinder p3(g3, vf.store());
    const int c = vf.fuse(g3, p3, wrench_perturbed);
    CHECK(!g.val(a).isApprox(g3.val(c), 1e-9));
  }
}

TEST_CASE("ddpm loss arithmetic: wiring, perfect and zero denoisers") {
  const auto cfg = tinyConfig();
  PolicyNet net(cfg, PolicyVariant::kVisionTactile, 21);
  const auto bundle = randomBundle(22);
  const auto a0 = randomChunk(23, 0.3);
  const auto eps = randomChunk(24, 1.0);
  const int k = 3;

  CHECK_THROWS_AS(net.ddpmLoss(bundle, a0, 0, eps), PolicyError);
  CHECK_THROWS_AS(net.ddpmLoss(bundle, a0, cfg.diffusion_steps + 1, eps), PolicyError);

  // Loss equals || eps - eps_theta(noised) ||^2 recomputed by hand.
  const double loss = net.ddpmLoss(bundle, a0, k, eps);
  {
    const double ab = net.schedule().alphaBarAt(k);
    const ChunkMatrix noised = std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * eps;
    ad::Graph g;
    nn::ParamBinder p(g, net.store());
    const int cond = net.fuse(g, p, bundle);
    const int pred = net.denoise(g, p, ad::constant(g, ad::Mat(noised)), k, cond);
    const ChunkMatrix eps_hat = g.val(pred);
    CHECK(loss == doctest::Approx((eps - eps_hat).squaredNorm()).epsilon(1e-12));
    // A denoiser whose output equals the drawn noise scores exactly zero.
    CHECK((eps_hat - eps_hat).squaredNorm() == 0.0);
  }

  // Zeroed output head: prediction is identically zero, so the loss is
  // ||eps||^2 with mean 96 over unit-normal draws.
  net.store().mutableAll().at("den.out.w").setZero();
  net.store().mutableAll().at("den.out.b").setZero();
  Rng rng(77);
  double mean = 0.0;
  const int draws = 400;
  for (int i = 0; i < draws; ++i) {
    ChunkMatrix e;
    for (int r = 0; r < kChunkSteps; ++r)
      for (int c = 0; c < kActionDims; ++c) e(r, c) = rng.gaussian();
    const double l = net.ddpmLoss(bundle, a0, 1 + (i % cfg.diffusion_steps), e);
    CHECK(l == doctest::Approx(e.squaredNorm()).epsilon(1e-12));
    mean += l / draws;
  }
  CHECK(mean == doctest::Approx(96.0).epsilon(0.05));
}

TEST_CASE("analytic gradients match central finite differences") {
  auto cfg = tinyConfig();
  PolicyNet net(cfg, PolicyVariant::kVisionTactile, 31);
  const auto bundle = randomBundle(32);
  const auto a0 = randomChunk(33, 0.3);
  const auto eps = randomChunk(34, 1.0);
  const int k = 4;

  std::map<std::string, ad::Mat> grads;
  {
    ad::Graph g;
    nn::ParamBinder p(g, net.store());
    const int loss = net.ddpmLossNode(g, p, bundle, a0, k, eps);
    g.backward(loss);
    grads = p.grads();
  }

  Rng pick(35);
  int checked = 0;
  double max_rel = 0.0;
  for (auto& [name, grad] : grads) {
    ad::Mat& theta = net.store().mutableAll().at(name);
    const int n_entries = std::min<int>(3, static_cast<int>(theta.size()));
    for (int e = 0; e < n_entries; ++e) {
      const int idx = pick.uniformInt(0, static_cast<int>(theta.size()) - 1);
      const double saved = theta.data()[idx];
      const double h = 1e-5 * std::max(1.0, std::abs(saved));
      theta.data()[idx] = saved + h;
      const double lp = net.ddpmLoss(bundle, a0, k, eps);
      theta.data()[idx] = saved - h;
      const double lm = net.ddpmLoss(bundle, a0, k, eps);
      theta.data()[idx] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = grad.data()[idx];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      CAPTURE(name);
      CHECK(rel <= 1e-4);
      max_rel = std::max(max_rel, rel);
      ++checked;
    }
  }
  CHECK(checked > 50);
  CAPTURE(max_rel);
}

TEST_CASE("sampling is seed-deterministic with 16x6 output") {
  const auto cfg = tinyConfig();
  PolicyNet net(cfg, PolicyVariant::kTactileOnly, 41);
  const auto bundle = randomBundle(42);
  const auto a = net.sampleNormalized(bundle, 9);
  const auto b = net.sampleNormalized(bundle, 9);
  const auto c = net.sampleNormalized(bundle, 10);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);

  const auto strided = net.stridedSteps();
  CHECK(strided.front() == cfg.diffusion_steps);
  CHECK(strided.back() == 1);
  for (std::size_t i = 1; i < strided.size(); ++i) CHECK(strided[i] < strided[i - 1]);
}

TEST_CASE("training memorizes a single demonstration pair") {
  auto cfg = tinyConfig();
  cfg.train_steps = 4500;
  cfg.learning_rate = 3e-3;
  cfg.inference_steps = cfg.diffusion_steps;  // full ancestral chain
  PolicyNet net(cfg, PolicyVariant::kTactileOnly, 51);
  const auto bundle = randomBundle(52);
  const auto a0 = randomChunk(53, 0.2);

  const auto res = trainPolicy(net, {{bundle, a0}}, 54);
  CHECK(res.final_mean < 10.0);
  CHECK(res.final_mean < 0.1 * res.epoch1_mean);

  const auto sampled = net.sampleNormalized(bundle, 55);
  // 1 mm position / 0.015 rad rotation tolerance in normalized units.
  for (int r = 0; r < kChunkSteps; ++r) {
    CHECK((sampled.row(r).head<3>() - a0.row(r).head<3>()).norm() <
          1.0 / cfg.pos_scale_mm);
    CHECK((sampled.row(r).tail<3>() - a0.row(r).tail<3>()).norm() <
          0.015 / cfg.rot_scale_rad);
  }
}

TEST_CASE("training is deterministic given the seed") {
  auto cfg = tinyConfig();
  cfg.train_steps = 6;
  auto run = [&] {
    PolicyNet net(cfg, PolicyVariant::kTactileOnly, 61);
    const auto res =
        trainPolicy(net, {{randomBundle(62), randomChunk(63, 0.3)},
                          {randomBundle(64), randomChunk(65, 0.3)}},
                    66);
    return res.loss_curve;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("temporal ensemble matches the hand-computed average") {
  ActionChunk zero, one;
  one.poses.setOnes();
  // Chunk emitted at tick 0 covers ticks 1..16; at tick 2 the age-2
  // entry of the first chunk meets the age-1 entry of the second.
  std::vector<std::pair<long, ActionChunk>> hist = {{0, zero}, {1, one}};
  const auto pose = temporalEnsemble(hist, 2, 0.1);
  const double expect = (std::exp(-0.1) * 0.0 + std::exp(0.0) * 1.0) /
                        (std::exp(-0.1) + std::exp(0.0));
  CHECK(pose.position.x() == doctest::Approx(expect).epsilon(1e-12));

  // Single covering chunk passes through unchanged.
  ActionChunk ramp;
  for (int i = 0; i < kChunkSteps; ++i) ramp.poses(i, 0) = i;
  const auto p1 = temporalEnsemble({{10, ramp}}, 13, 0.1);
  CHECK(p1.position.x() == doctest::Approx(2.0));

  // Identical covering entries average to themselves.
  const auto p2 = temporalEnsemble({{0, one}, {5, one}}, 8, 0.1);
  CHECK(p2.position.x() == doctest::Approx(1.0).epsilon(1e-12));

  // Uniform time translation leaves the output unchanged.
  const auto shifted = temporalEnsemble({{100, zero}, {101, one}}, 102, 0.1);
  CHECK(shifted.position.x() == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(temporalEnsemble({{0, zero}}, 40, 0.1), PolicyError);
}

TEST_CASE("action chunk speed bound is enforced") {
  ActionChunk ok;
  for (int i = 0; i < kChunkSteps; ++i) ok.poses(i, 0) = 0.2 * i;
  CHECK_NOTHROW(ok.validate());
  ActionChunk bad = ok;
  bad.poses(8, 0) += 20.0;
  CHECK_THROWS_AS(bad.validate(), PolicyError);
}

TEST_CASE("checkpoints round-trip parameters and variant") {
  const auto cfg = tinyConfig();
  PolicyNet net(cfg, PolicyVariant::kVisionForce, 71);
  const auto bundle = randomBundle(72);
  const std::string path = "/tmp/tactsim_test_ckpt.bin";
  net.save(path, 0xdeadbeefULL);

  std::uint64_t hash = 0;
  auto loaded = PolicyNet::load(path, &hash);
  CHECK(hash == 0xdeadbeefULL);
  CHECK(std::string(toString(loaded.variant())) == "vision+force");
  CHECK(loaded.store().parameterCount() == net.store().parameterCount());
  const auto a = net.sampleNormalized(bundle, 5);
  const auto b = loaded.sampleNormalized(bundle, 5);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}
