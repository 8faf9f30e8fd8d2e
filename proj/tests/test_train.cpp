#include <doctest.h>

#include <cmath>

#include "sagate/experiments.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace sagate;
using sagate::testing::gradcheck;

namespace {

SceneRecipe tiny_recipe() {
  SceneRecipe r;
  r.height = 24;
  r.width = 24;
  r.num_classes = 3;
  r.class_visibility = {Visibility::RgbOnly, Visibility::Both};
  r.objects_min = 2;
  r.objects_max = 3;
  r.seed = 5;
  return r;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.encoder.stage_channels = {4, 6};
  mc.encoder.gate_mask = {true, true};
  mc.decoder.num_classes = 3;
  mc.decoder.mid_channels = 8;
  return mc;
}

}  // namespace

TEST_CASE("poly_lr endpoints and midpoint") {
  TrainConfig cfg;
  cfg.base_lr = 0.02;
  cfg.max_iter = 1000;
  cfg.poly_power = 0.9;
  CHECK(poly_lr(0, cfg) == 0.02);
  CHECK(poly_lr(1000, cfg) == 0.0);
  const double expect = 0.02 * std::pow(0.5, 0.9);
  CHECK(std::abs(poly_lr(500, cfg) - expect) < 1e-12);
  CHECK(poly_lr(500, cfg) == doctest::Approx(0.010718).epsilon(1e-4));
}

TEST_CASE("cross_entropy: uniform logits give log K") {
  auto logits = Tensor<double>::zeros({1, 4, 3, 3});
  LabelMap labels = LabelMap::filled(1, 3, 3, 2);
  auto loss = cross_entropy(logits, labels);
  CHECK(loss.value()[0] == doctest::Approx(std::log(4.0)));
}

TEST_CASE("cross_entropy: all pixels ignored is an error") {
  auto logits = Tensor<double>::zeros({1, 2, 2, 2});
  LabelMap labels = LabelMap::filled(1, 2, 2, kIgnoreLabel);
  CHECK_THROWS_AS(cross_entropy(logits, labels), AllIgnored);
  LabelMap bad = LabelMap::filled(1, 2, 2, 7);
  CHECK_THROWS_AS(cross_entropy(logits, bad), Error);
}

TEST_CASE("cross_entropy matches the straight-line oracle on a 2x2, K=3 fixture") {
  SplitMix64 rng(3);
  auto logits = Tensor<double>::uniform({1, 3, 2, 2}, rng, -2, 2);
  LabelMap labels = LabelMap::filled(1, 2, 2, 0);
  labels.v = {0, 2, kIgnoreLabel, 1};
  auto loss = cross_entropy(logits, labels);
  const double ref = oracle::cross_entropy(logits.value(), 1, 3, 4, labels.v);
  CHECK(loss.value()[0] == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("cross_entropy gradient check, ignore pixels included") {
  SplitMix64 rng(7);
  auto logits = Tensor<double>::uniform({1, 3, 3, 3}, rng, -1.5, 1.5);
  LabelMap labels = LabelMap::filled(1, 3, 3, 0);
  for (size_t i = 0; i < labels.v.size(); ++i) labels.v[i] = static_cast<int32_t>(rng.below(3));
  labels.v[4] = kIgnoreLabel;
  CHECK(gradcheck<double>({logits}, [&] { return cross_entropy(logits, labels); }) < 1e-6);
}

TEST_CASE("ohem: keep_fraction = 1 equals plain cross entropy") {
  SplitMix64 rng(11);
  auto logits = Tensor<double>::uniform({1, 3, 4, 4}, rng, -2, 2);
  LabelMap labels = LabelMap::filled(1, 4, 4, 0);
  for (auto& v : labels.v) v = static_cast<int32_t>(rng.below(3));
  CHECK(ohem_loss(logits, labels, 1.0).value()[0] ==
        doctest::Approx(cross_entropy(logits, labels).value()[0]).epsilon(1e-12));
}

TEST_CASE("ohem: one dominating pixel at a small keep fraction") {
  auto logits = Tensor<double>::zeros({1, 2, 2, 2});
  // Pixel 0 has a confidently wrong prediction -> huge loss.
  auto& v = logits.mutable_value();
  v[0] = -20.0;  // class-0 logit at pixel 0
  v[4] = 20.0;   // class-1 logit at pixel 0
  LabelMap labels = LabelMap::filled(1, 2, 2, 0);
  auto loss = ohem_loss(logits, labels, 0.01);  // ceil(0.01*4) = 1 pixel kept
  CHECK(loss.value()[0] == doctest::Approx(40.0).epsilon(1e-6));
}

TEST_CASE("ohem equals the sort-and-slice brute force on random 8x8 fixtures") {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = Tensor<double>::uniform({1, 3, 8, 8}, rng, -3, 3);
    LabelMap labels = LabelMap::filled(1, 8, 8, 0);
    for (auto& v : labels.v) v = rng.below(4) == 0 ? kIgnoreLabel : static_cast<int32_t>(rng.below(3));
    if (std::all_of(labels.v.begin(), labels.v.end(),
                    [](int32_t l) { return l == kIgnoreLabel; }))
      labels.v[0] = 1;
    const double kf = 0.1 + 0.8 * rng.uniform();

    // Brute force: per-pixel CE via the oracle, sort desc, slice, average.
    std::vector<double> losses;
    for (int64_t p = 0; p < 64; ++p) {
      if (labels.v[static_cast<size_t>(p)] == kIgnoreLabel) continue;
      std::vector<int32_t> single(64, kIgnoreLabel);
      single[static_cast<size_t>(p)] = labels.v[static_cast<size_t>(p)];
      losses.push_back(oracle::cross_entropy(logits.value(), 1, 3, 64, single));
    }
    std::sort(losses.begin(), losses.end(), std::greater<>());
    const size_t keep = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(kf * static_cast<double>(losses.size()))));
    double ref = 0;
    for (size_t i = 0; i < keep; ++i) ref += losses[i];
    ref /= static_cast<double>(keep);

    CHECK(ohem_loss(logits, labels, kf).value()[0] == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("ohem gradient check away from selection boundaries") {
  SplitMix64 rng(17);
  auto logits = Tensor<double>::uniform({1, 3, 3, 3}, rng, -2, 2);
  LabelMap labels = LabelMap::filled(1, 3, 3, 0);
  for (auto& v : labels.v) v = static_cast<int32_t>(rng.below(3));
  // Verify the kept-set is stable under the FD step by requiring a loss gap.
  CHECK(gradcheck<double>({logits}, [&] { return ohem_loss(logits, labels, 0.5); }) < 1e-5);
}

TEST_CASE("sgd: zero gradients and zero weight decay leave parameters unchanged") {
  ParamMap<double> pm;
  pm.add("w", Tensor<double>::from_data({2}, {1.0, -2.0}));
  auto st = SgdState<double>::create(pm);
  TrainConfig cfg;
  cfg.weight_decay = 0;
  sgd_step(pm, st, cfg, 0);
  CHECK(pm.get("w").value() == std::vector<double>{1.0, -2.0});
}

TEST_CASE("sgd: two hand-computed steps of a single scalar") {
  ParamMap<double> pm;
  pm.add("w", Tensor<double>::from_data({1}, {1.0}));
  auto st = SgdState<double>::create(pm);
  TrainConfig cfg;
  cfg.base_lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0005;
  cfg.poly_power = 0.0;  // constant lr for hand arithmetic
  cfg.max_iter = 10;

  Tensor<double> w = pm.get("w");
  // Step 1: grad 0.5. v = 0.5 + 0.0005*1 = 0.5005; w = 1 - 0.1*0.5005 = 0.94995
  w.zero_grad();
  w.node()->ensure_grad();
  w.node()->grad[0] = 0.5;
  sgd_step(pm, st, cfg, 0);
  CHECK(w.value()[0] == doctest::Approx(0.94995).epsilon(1e-12));
  // Step 2: grad 0.2. v = 0.9*0.5005 + 0.2 + 0.0005*0.94995 = 0.65092...
  w.zero_grad();
  w.node()->ensure_grad();
  w.node()->grad[0] = 0.2;
  sgd_step(pm, st, cfg, 1);
  const double v2 = 0.9 * 0.5005 + 0.2 + 0.0005 * 0.94995;
  CHECK(w.value()[0] == doctest::Approx(0.94995 - 0.1 * v2).epsilon(1e-12));
}

TEST_CASE("sgd: momentum trajectory matches the closed form on a constant gradient") {
  ParamMap<double> pm;
  pm.add("w", Tensor<double>::from_data({1}, {0.0}));
  auto st = SgdState<double>::create(pm);
  TrainConfig cfg;
  cfg.base_lr = 0.01;
  cfg.momentum = 0.8;
  cfg.weight_decay = 0;
  cfg.poly_power = 0.0;
  cfg.max_iter = 100;

  Tensor<double> w = pm.get("w");
  const double g = 1.0;
  double expect_w = 0.0;
  for (int64_t t = 1; t <= 20; ++t) {
    w.zero_grad();
    w.node()->ensure_grad();
    w.node()->grad[0] = g;
    sgd_step(pm, st, cfg, t - 1);
    // v_t = g (1 - m^t) / (1 - m)
    const double v_t = g * (1.0 - std::pow(0.8, static_cast<double>(t))) / 0.2;
    expect_w -= 0.01 * v_t;
    CHECK(w.value()[0] == doctest::Approx(expect_w).epsilon(1e-10));
  }
}

TEST_CASE("total loss is main + aux_weight * aux to machine precision") {
  SplitMix64 rng(23);
  ForwardResult<double> fwd;
  fwd.logits = Tensor<double>::uniform({1, 3, 4, 4}, rng, -1, 1);
  fwd.aux_logits = Tensor<double>::uniform({1, 3, 4, 4}, rng, -1, 1);
  LabelMap labels = LabelMap::filled(1, 4, 4, 1);
  TrainConfig cfg;
  cfg.aux_weight = 0.2;
  const double main_v = cross_entropy(fwd.logits, labels).value()[0];
  const double aux_v = cross_entropy(fwd.aux_logits, labels).value()[0];
  CHECK(std::abs(total_loss(fwd, labels, cfg).value()[0] - (main_v + 0.2 * aux_v)) < 1e-12);
}

TEST_CASE("smoke: loss strictly decreases on a fixed batch for 50 steps (3 seeds)") {
  // Stable lr range for this toy task is documented as [1e-3, 2e-2].
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    SceneRecipe r = tiny_recipe();
    r.seed = 100 + seed;
    auto data = generate(r, 4);
    ModelConfig mc = tiny_model();
    auto model = SegModel<float>::create(mc, seed);

    TrainConfig cfg;
    cfg.base_lr = 0.01;
    cfg.momentum = 0.9;
    cfg.max_iter = 50;
    cfg.batch_size = 4;
    cfg.seed = seed;
    cfg.aug_flip = false;  // fixed batch

    auto st = SgdState<float>::create(model.params());
    std::vector<float> rgb, hha;
    LabelMap labels = LabelMap::filled(4, r.height, r.width, 0);
    for (int64_t i = 0; i < 4; ++i) {
      rgb.insert(rgb.end(), data[i].rgb.value().begin(), data[i].rgb.value().end());
      hha.insert(hha.end(), data[i].hha.value().begin(), data[i].hha.value().end());
      std::copy(data[i].labels.v.begin(), data[i].labels.v.end(),
                labels.v.begin() + i * r.height * r.width);
    }
    auto brgb = Tensor<float>::from_data({4, 3, r.height, r.width}, rgb);
    auto bhha = Tensor<float>::from_data({4, 3, r.height, r.width}, hha);

    double prev = 1e300;
    for (int64_t it = 0; it < 50; ++it) {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      auto fwd = model.forward(brgb, bhha);
      auto loss = total_loss(fwd, labels, cfg);
      const double lv = loss.value()[0];
      CHECK(lv < prev);
      prev = lv;
      model.params().zero_grads();
      tape.backward(loss);
      sgd_step(model.params(), st, cfg, it);
    }
  }
}

TEST_CASE("train_model is bitwise reproducible for identical config and seed") {
  SceneRecipe r = tiny_recipe();
  auto data = generate(r, 8);
  TrainConfig cfg;
  cfg.base_lr = 0.01;
  cfg.max_iter = 12;
  cfg.batch_size = 4;
  cfg.seed = 3;

  auto run = [&] {
    auto model = SegModel<float>::create(tiny_model(), 3);
    TrainResult res = train_model(model, data, nullptr, cfg);
    std::pair<std::string, std::vector<float>> out{history_to_csv(res, "0xdeadbeef"), {}};
    for (const auto& [_, t] : model.params().items())
      out.second.insert(out.second.end(), t.value().begin(), t.value().end());
    return out;
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("divergence is detected and reported") {
  SceneRecipe r = tiny_recipe();
  auto data = generate(r, 4);
  auto model = SegModel<float>::create(tiny_model(), 5);
  TrainConfig cfg;
  cfg.base_lr = 1e18;  // guaranteed blow-up
  cfg.max_iter = 30;
  cfg.batch_size = 4;
  cfg.seed = 5;
  const bool was = nancheck_enabled();
  set_nancheck(false);  // let the loop's own divergence tripwire fire
  CHECK_THROWS_AS(train_model(model, data, nullptr, cfg), Divergence);
  set_nancheck(was);
}

TEST_CASE("augmentation: flip mirrors all modalities consistently") {
  SceneRecipe r = tiny_recipe();
  Sample s = generate_sample(r, 0);
  TrainConfig cfg;
  cfg.aug_flip = true;

  bool saw_flip = false, saw_identity = false;
  for (uint64_t seed = 0; seed < 16 && !(saw_flip && saw_identity); ++seed) {
    SplitMix64 rng(seed);
    AugmentedSample a = augment_sample(s, cfg, rng);
    const int64_t h = r.height, w = r.width;
    bool is_identity = a.rgb.value() == s.rgb.value();
    if (is_identity) {
      saw_identity = true;
      CHECK(a.labels.v == s.labels.v);
      continue;
    }
    saw_flip = true;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        CHECK(a.labels.at(0, y, x) == s.labels.at(0, y, w - 1 - x));
        for (int64_t c = 0; c < 3; ++c) {
          CHECK(a.rgb.value()[static_cast<size_t>((c * h + y) * w + x)] ==
                s.rgb.value()[static_cast<size_t>((c * h + y) * w + w - 1 - x)]);
          CHECK(a.hha.value()[static_cast<size_t>((c * h + y) * w + x)] ==
                s.hha.value()[static_cast<size_t>((c * h + y) * w + w - 1 - x)]);
        }
      }
  }
  CHECK(saw_flip);
  CHECK(saw_identity);
}

TEST_CASE("augmentation: random scaling keeps extents and pads labels with ignore") {
  SceneRecipe r = tiny_recipe();
  Sample s = generate_sample(r, 1);
  TrainConfig cfg;
  cfg.aug_flip = false;
  cfg.aug_scale = true;

  bool saw_pad = false;
  for (uint64_t seed = 0; seed < 24; ++seed) {
    SplitMix64 rng(seed);
    AugmentedSample a = augment_sample(s, cfg, rng);
    CHECK(a.rgb.shape() == Shape{3, r.height, r.width});
    CHECK(a.labels.h == r.height);
    for (int32_t l : a.labels.v) {
      const bool ok = l == kIgnoreLabel || (l >= 0 && l < r.num_classes);
      CHECK(ok);
      if (l == kIgnoreLabel) saw_pad = true;
    }
  }
  CHECK(saw_pad);  // downscale branch must have occurred
}

TEST_CASE("augmentation: train-time HHA noise stays in range and perturbs the map") {
  SceneRecipe r = tiny_recipe();
  Sample s = generate_sample(r, 2);
  TrainConfig cfg;
  cfg.aug_flip = false;
  cfg.hha_noise_std = 20.0;
  SplitMix64 rng(9);
  AugmentedSample a = augment_sample(s, cfg, rng);
  CHECK(a.hha.value() != s.hha.value());
  CHECK(a.rgb.value() == s.rgb.value());
  for (float v : a.hha.value()) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}
