#include <doctest.h>

#include <filesystem>

#include "sagate/model.hpp"
#include "sagate/train.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace sagate;
using sagate::testing::gradcheck;
using sagate::testing::max_abs_diff;

namespace {

ModelConfig toy_config(FusionKind kind = FusionKind::Proposed) {
  ModelConfig mc;
  mc.encoder.stage_channels = {4, 6};
  mc.encoder.gate_mask = {true, true};
  mc.encoder.fusion = kind;
  mc.decoder.num_classes = 3;
  mc.decoder.mid_channels = 8;
  return mc;
}

// Copies every rgb-stream parameter value onto its hha-stream twin.
template <typename S>
void tie_streams(SegModel<S>& m) {
  for (const auto& [name, t] : m.params().items()) {
    if (name.rfind("enc.rgb.", 0) != 0) continue;
    Tensor<S> dst = m.params().get("enc.hha." + name.substr(8));
    dst.mutable_value() = t.value();
  }
}

}  // namespace

TEST_CASE("encoder with all gates disabled degenerates to two independent streams") {
  EncoderConfig cfg;
  cfg.stage_channels = {4, 6};
  cfg.gate_mask = {false, false};
  ParamMap<float> pm;
  SplitMix64 rng(3);
  auto params = EncoderParams<float>::create(cfg, pm, rng);

  SplitMix64 drng(5);
  auto rgb = Tensor<float>::uniform({1, 3, 8, 8}, drng, 0, 1);
  auto hha = Tensor<float>::uniform({1, 3, 8, 8}, drng, 0, 1);
  auto out = encode(rgb, hha, cfg, params);

  // Manual independent forwards through the same stage parameters.
  Tensor<float> r = rgb, h = hha;
  for (int l = 0; l < 2; ++l) {
    r = stage_forward(r, params.rgb_stages[static_cast<size_t>(l)]);
    h = stage_forward(h, params.hha_stages[static_cast<size_t>(l)]);
  }
  CHECK(max_abs_diff(out.rgb_high, r) == 0.0);
  CHECK(max_abs_diff(out.hha_high, h) == 0.0);
  CHECK_FALSE(out.fused_low.defined());
  for (const auto& tr : out.stages) CHECK_FALSE(tr.fusion.has_value());
}

TEST_CASE("tied streams on identical inputs collapse: rgb_out == hha_out == M at every gate") {
  ModelConfig mc = toy_config();
  mc.encoder.stage_channels = {4, 5, 6, 7};
  mc.encoder.gate_mask = {true, true, true, true};
  auto model = SegModel<double>::create(mc, 17);
  tie_streams(model);

  SplitMix64 rng(19);
  auto x = Tensor<double>::uniform({1, 3, 16, 16}, rng, 0, 1);
  auto out = encode(x, x.detached(), mc.encoder, model.encoder_params());
  for (const auto& tr : out.stages) {
    REQUIRE(tr.fusion.has_value());
    CHECK(max_abs_diff(tr.rgb_out, tr.hha_out) == 0.0);  // identical code path, bitwise equal
    CHECK(max_abs_diff(tr.rgb_out, tr.fusion->merged) < 1e-12);
    CHECK(max_abs_diff(tr.fusion->merged, tr.rgb_raw) < 1e-12);  // fixed point
  }
}

TEST_CASE("one-stage encoder equals the hand-composed straight-line pipeline") {
  EncoderConfig cfg;
  cfg.stage_channels = {4};
  cfg.gate_mask = {true};
  ParamMap<double> pm;
  SplitMix64 rng(23);
  auto params = EncoderParams<double>::create(cfg, pm, rng);
  // Randomize the zero-initialised fusion parameters so the check is not trivial.
  uint64_t pidx = 0;
  for (const auto& [name, t] : pm.items()) {
    ++pidx;
    if (name.find("gate0") == std::string::npos) continue;
    Tensor<double> h = t;
    SplitMix64 r2(1000 + pidx);
    for (auto& v : h.mutable_value()) v = r2.uniform(-0.5, 0.5);
  }

  SplitMix64 drng(29);
  auto rgb = Tensor<double>::uniform({1, 3, 10, 10}, drng, 0, 1);
  auto hha = Tensor<double>::uniform({1, 3, 10, 10}, drng, 0, 1);
  auto out = encode(rgb, hha, cfg, params);

  // Straight-line: conv -> norm -> relu -> conv -> norm -> relu per stream,
  // then the separation/aggregation oracle, then the BMP average.
  auto stream = [&](const Tensor<double>& x, const StageParams<double>& st) {
    int64_t ho, wo;
    auto c1 = oracle::conv2d(x.value(), 1, 3, 10, 10, st.entry.weight.value(),
                             st.entry.bias.value(), 4, 3, 2, 1, ho, wo);
    auto n1 = oracle::channel_norm(c1, 1, 4, ho * wo, st.gamma1.value(), st.beta1.value());
    for (auto& v : n1) v = std::max(0.0, v);
    int64_t h2, w2;
    auto c2 = oracle::conv2d(n1, 1, 4, ho, wo, st.conv2.weight.value(), st.conv2.bias.value(), 4,
                             3, 1, 1, h2, w2);
    auto n2 = oracle::channel_norm(c2, 1, 4, h2 * w2, st.gamma2.value(), st.beta2.value());
    for (auto& v : n2) v = std::max(0.0, v);
    return n2;
  };
  auto r_raw = stream(rgb, params.rgb_stages[0]);
  auto h_raw = stream(hha, params.hha_stages[0]);
  const auto& gp = params.gates[0];
  auto sep = oracle::feature_separation(r_raw, h_raw, 1, 4, 25, gp.mlp.w1.value(),
                                        gp.mlp.b1.value(), gp.mlp.w1.dim(0), gp.mlp.w2.value(),
                                        gp.mlp.b2.value());
  auto merged = oracle::feature_aggregation(r_raw, h_raw, sep.rgb_rec, sep.hha_rec, 1, 4, 25,
                                            gp.gate_rgb.weight.value(), gp.gate_hha.weight.value());
  double worst = 0;
  for (size_t i = 0; i < merged.size(); ++i) {
    const double want_rgb = (r_raw[i] + merged[i]) / 2;
    const double want_hha = (h_raw[i] + merged[i]) / 2;
    worst = std::max(worst, std::abs(want_rgb - out.rgb_high.value()[i]));
    worst = std::max(worst, std::abs(want_hha - out.hha_high.value()[i]));
    worst = std::max(worst, std::abs(merged[i] - out.fused_high.value()[i]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("BMP scale preservation: stream output sup-norm bounded by inputs") {
  ModelConfig mc = toy_config();
  auto model = SegModel<float>::create(mc, 37);
  SplitMix64 rng(41);
  auto rgb = Tensor<float>::uniform({2, 3, 12, 12}, rng, 0, 1);
  auto hha = Tensor<float>::uniform({2, 3, 12, 12}, rng, 0, 1);
  auto out = encode(rgb, hha, mc.encoder, model.encoder_params());
  for (const auto& tr : out.stages) {
    if (!tr.fusion) continue;
    auto sup = [](const Tensor<float>& t) {
      float m = 0;
      for (float v : t.value()) m = std::max(m, std::abs(v));
      return m;
    };
    CHECK(sup(tr.rgb_out) <= std::max(sup(tr.rgb_raw), sup(tr.fusion->merged)) + 1e-6f);
    CHECK(sup(tr.hha_out) <= std::max(sup(tr.hha_raw), sup(tr.fusion->merged)) + 1e-6f);
  }
}

TEST_CASE("gradients reach both streams whenever at least one gate is enabled") {
  ModelConfig mc = toy_config();
  mc.encoder.gate_mask = {false, true};
  auto model = SegModel<double>::create(mc, 43);
  SplitMix64 rng(47);
  auto rgb = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto hha = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0, 1);

  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto out = encode(rgb, hha, mc.encoder, model.encoder_params());
  tape.backward(sum_all(mul(out.fused_high, out.fused_high)));

  auto max_grad_of = [&](const std::string& name) {
    Tensor<double> t = model.params().get(name);
    REQUIRE(t.has_grad());
    double m = 0;
    for (double g : t.grad()) m = std::max(m, std::abs(g));
    return m;
  };
  CHECK(max_grad_of("enc.rgb.stage0.entry.weight") > 0.0);
  CHECK(max_grad_of("enc.hha.stage0.entry.weight") > 0.0);
}

TEST_CASE("NoGateEnabled when the fused head is requested without gates") {
  ModelConfig mc = toy_config();
  mc.encoder.gate_mask = {false, false};
  mc.head = HeadMode::Fused;
  CHECK_THROWS_AS(SegModel<float>::create(mc, 3), NoGateEnabled);
}

TEST_CASE("decoder: output matches the input extent, odd sizes included") {
  for (int64_t hw : {16, 15, 13}) {
    ModelConfig mc = toy_config();
    auto model = SegModel<float>::create(mc, 53);
    SplitMix64 rng(59);
    auto rgb = Tensor<float>::uniform({2, 3, hw, hw + 2}, rng, 0, 1);
    auto hha = Tensor<float>::uniform({2, 3, hw, hw + 2}, rng, 0, 1);
    auto fwd = model.forward(rgb, hha);
    CHECK(fwd.logits.shape() == Shape{2, 3, hw, hw + 2});
    REQUIRE(fwd.aux_logits.defined());
    CHECK(fwd.aux_logits.shape() == Shape{2, 3, hw, hw + 2});
  }
}

TEST_CASE("zero-initialised heads give uniform class logits") {
  ModelConfig mc = toy_config();
  auto model = SegModel<float>::create(mc, 61);
  SplitMix64 rng(67);
  auto rgb = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto hha = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto fwd = model.forward(rgb, hha);
  for (float v : fwd.logits.value()) CHECK(v == 0.f);  // => softmax = 1/K everywhere
  for (float v : fwd.aux_logits.value()) CHECK(v == 0.f);
}

TEST_CASE("single-modality models consume only their stream") {
  ModelConfig mc = toy_config();
  mc.encoder.modality = Modality::RgbOnly;
  auto model = SegModel<float>::create(mc, 71);
  SplitMix64 rng(73);
  auto rgb = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto hha1 = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto hha2 = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto f1 = model.forward(rgb, hha1);
  auto f2 = model.forward(rgb, hha2);
  CHECK(max_abs_diff(f1.logits, f2.logits) == 0.0);
  // No hha parameters exist at all.
  for (const auto& [name, _] : model.params().items())
    CHECK(name.rfind("enc.hha.", 0) != 0);
}

TEST_CASE("avg-head model decodes both streams with the shared decoder") {
  ModelConfig mc = toy_config();
  mc.encoder.gate_mask = {false, false};
  auto model = SegModel<double>::create(mc, 79);
  SplitMix64 rng(83);
  auto rgb = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto hha = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto fwd = model.forward(rgb, hha);  // auto -> avg streams
  CHECK(fwd.logits.shape() == Shape{1, 3, 8, 8});
  // Feeding the same image to both streams with tied params must equal the
  // single-stream decode (average of two identical predictions).
  tie_streams(model);
  auto fa = model.forward(rgb, rgb.detached());
  auto fb = model.forward(rgb, rgb.detached());
  CHECK(max_abs_diff(fa.logits, fb.logits) == 0.0);
}

TEST_CASE("decode gradient check through cross entropy") {
  ModelConfig mc = toy_config();
  auto model = SegModel<double>::create(mc, 89);
  SplitMix64 rng(97);
  auto rgb = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.05, 0.95);
  auto hha = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.05, 0.95);
  LabelMap labels = LabelMap::filled(1, 8, 8, 0);
  for (auto& v : labels.v) v = static_cast<int32_t>(rng.below(3));

  std::vector<Tensor<double>> leaves{model.params().get("dec.refine.weight"),
                                     model.params().get("dec.head.weight"),
                                     model.params().get("dec.aux_head.weight"),
                                     model.params().get("dec.norm.gamma")};
  TrainConfig tc;
  CHECK(gradcheck<double>(leaves, [&] {
          auto fwd = model.forward(rgb, hha);
          return total_loss(fwd, labels, tc);
        }) < 1e-4);
}

TEST_CASE("checkpoint container round-trips every parameter") {
  namespace fs = std::filesystem;
  fs::create_directories("test_tmp");
  ModelConfig mc = toy_config();
  auto a = SegModel<float>::create(mc, 101);
  a.save_checkpoint("test_tmp/ckpt.stnc");

  auto b = SegModel<float>::create(mc, 202);  // different init
  SplitMix64 rng(103);
  auto rgb = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0, 1);
  auto hha = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0, 1);
  CHECK(max_abs_diff(a.forward(rgb, hha).encoder.fused_high,
                     b.forward(rgb, hha).encoder.fused_high) > 0.0);
  b.load_checkpoint("test_tmp/ckpt.stnc");
  CHECK(max_abs_diff(a.forward(rgb, hha).logits, b.forward(rgb, hha).logits) == 0.0);
  CHECK(max_abs_diff(a.forward(rgb, hha).encoder.fused_high,
                     b.forward(rgb, hha).encoder.fused_high) == 0.0);

  // Mismatched architecture is rejected by shape.
  ModelConfig other = toy_config();
  other.encoder.stage_channels = {4, 8};
  auto c = SegModel<float>::create(other, 1);
  CHECK_THROWS_AS(c.load_checkpoint("test_tmp/ckpt.stnc"), ShapeMismatch);
}

TEST_CASE("encoder rejects inconsistent inputs and configs") {
  EncoderConfig cfg;
  cfg.stage_channels = {4};
  cfg.gate_mask = {true, true};  // wrong length
  ParamMap<float> pm;
  SplitMix64 rng(1);
  CHECK_THROWS_AS(EncoderParams<float>::create(cfg, pm, rng), ConfigError);

  ModelConfig mc = toy_config();
  auto model = SegModel<float>::create(mc, 3);
  auto ok = Tensor<float>::ones({1, 3, 8, 8});
  CHECK_THROWS_AS(model.forward(ok, Tensor<float>::ones({1, 3, 8, 9})), ShapeMismatch);
  CHECK_THROWS_AS(model.forward(Tensor<float>::ones({1, 4, 8, 8}), ok), ShapeMismatch);
}
